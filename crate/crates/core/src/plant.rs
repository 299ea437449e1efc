//! Quasi-static model of the flexible magnetic tip.
//!
//! The distal segment is a constant-curvature arc whose tip axis relaxes
//! toward the field direction with a first-order time constant. Gravity
//! tilts the equilibrium away from the field by an angle that scales with
//! `g_sag / |b|`. Bending is limited to `bend_max`; the limit is enforced
//! along the rotation path so the tip never hops across the antipode.
//!
//! The servo layer never sees this module: it only observes rendered frames.

use crate::magnetics::FieldState;
use nalgebra::{Isometry3, Rotation3, Translation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("insertion depth {requested:.2} mm outside [0, {max:.2}] mm")]
    DepthLimit { requested: f64, max: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantParams {
    /// Dipole moment of the tip magnets, A·m².
    pub dipole_moment: f64,
    /// First-order alignment time constant, seconds.
    pub tau_align: f64,
    /// Gravity sag coefficient, radians per (m/s² / mT).
    pub g_sag: f64,
    /// Base of the flexible segment at zero insertion depth; local z is the insertion axis.
    pub base_pose: Isometry3<f64>,
    /// Camera pose in the tip frame.
    pub camera_offset: Isometry3<f64>,
    pub bend_max: f64,
    /// Arc length of the flexible segment, mm.
    pub segment_length: f64,
    pub depth_max: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            dipole_moment: 0.05,
            tau_align: 0.08,
            g_sag: 0.16,
            base_pose: horizontal_base(Vector3::new(0.0, 0.0, 145.0)),
            camera_offset: Isometry3::translation(0.0, 0.0, -2.0),
            bend_max: 173f64.to_radians(),
            segment_length: 20.0,
            depth_max: 100.0,
        }
    }
}

/// Base pose with the insertion axis along S's +x, image-down along S's −z.
pub fn horizontal_base(origin: Vector3<f64>) -> Isometry3<f64> {
    let x = Vector3::new(0.0, -1.0, 0.0);
    let y = Vector3::new(0.0, 0.0, -1.0);
    let z = Vector3::new(1.0, 0.0, 0.0);
    let rot = Rotation3::from_basis_unchecked(&[x, y, z]);
    Isometry3::from_parts(Translation3::from(origin), UnitQuaternion::from_rotation_matrix(&rot))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TipState {
    /// Tip axis in the base frame.
    pub direction: Unit<Vector3<f64>>,
    /// Angle between the tip axis and the insertion axis, radians.
    pub bend: f64,
    /// Azimuth of the bending plane about the insertion axis, radians.
    pub azimuth: f64,
    pub tip_pose: Isometry3<f64>,
    pub camera_pose: Isometry3<f64>,
    pub insertion_depth: f64,
}

impl TipState {
    /// Straight tip at the given insertion depth.
    pub fn rest(params: &PlantParams, insertion_depth: f64) -> Self {
        Self::from_direction(params, Vector3::z_axis(), insertion_depth)
    }

    pub fn from_direction(
        params: &PlantParams,
        direction: Unit<Vector3<f64>>,
        insertion_depth: f64,
    ) -> Self {
        let (bend, azimuth) = bend_azimuth(&direction);
        let local = local_tip_pose(params.segment_length, &direction);
        let tip_pose = params.base_pose * Isometry3::translation(0.0, 0.0, insertion_depth) * local;
        Self {
            direction,
            bend,
            azimuth,
            tip_pose,
            camera_pose: tip_pose * params.camera_offset,
            insertion_depth,
        }
    }

    /// Tip axis in S.
    pub fn world_direction(&self) -> Vector3<f64> {
        self.tip_pose.rotation * Vector3::z()
    }
}

fn bend_azimuth(d: &Vector3<f64>) -> (f64, f64) {
    let bend = d.z.clamp(-1.0, 1.0).acos();
    let lateral = (d.x * d.x + d.y * d.y).sqrt();
    // atan2 keeps precision near the straight configuration
    let bend = if bend < 1e-4 { lateral.atan2(d.z) } else { bend };
    let azimuth = if lateral > 0.0 { d.y.atan2(d.x) } else { 0.0 };
    (bend, azimuth)
}

/// Pose of the tip relative to the segment base for a constant-curvature arc
/// ending along `direction`.
pub fn local_tip_pose(length: f64, direction: &Unit<Vector3<f64>>) -> Isometry3<f64> {
    let d = direction.as_ref();
    let lateral = Vector3::new(d.x, d.y, 0.0);
    let s = lateral.norm();
    let bend = s.atan2(d.z);
    let position = if bend < 1e-9 {
        Vector3::new(0.0, 0.0, length)
    } else {
        let u = lateral / s;
        (u * (1.0 - bend.cos()) + Vector3::z() * bend.sin()) * (length / bend)
    };
    let rotation = if s < 1e-15 {
        if d.z >= 0.0 {
            UnitQuaternion::identity()
        } else {
            UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI)
        }
    } else {
        let axis = Unit::new_normalize(Vector3::z().cross(d));
        UnitQuaternion::from_axis_angle(&axis, bend)
    };
    Isometry3::from_parts(Translation3::from(position), rotation)
}

/// Equilibrium tip direction (base frame) for a field direction, including gravity sag.
pub fn equilibrium_direction(
    params: &PlantParams,
    field_dir_local: &Vector3<f64>,
    magnitude: f64,
    gravity_local: &Vector3<f64>,
) -> Vector3<f64> {
    let b = field_dir_local.normalize();
    if params.g_sag == 0.0 {
        return b;
    }
    let k = params.g_sag * GRAVITY / magnitude;
    let rotvec = b.cross(gravity_local) * k;
    Rotation3::new(rotvec) * b
}

fn rotate_toward(
    from: &Vector3<f64>,
    axis: &Unit<Vector3<f64>>,
    angle: f64,
) -> Vector3<f64> {
    Rotation3::from_axis_angle(axis, angle) * from
}

/// One quasi-static integration step of the tip under field `f`.
pub fn step_plant(
    state: &TipState,
    params: &PlantParams,
    f: &FieldState,
    gravity_dir: &Vector3<f64>,
    dt: f64,
) -> TipState {
    let to_local = params.base_pose.rotation.inverse();
    let field_local = to_local * f.direction();
    let gravity_local = to_local * gravity_dir;
    let target = equilibrium_direction(params, &field_local, f.magnitude, &gravity_local);

    let d = state.direction.into_inner();
    let cross = d.cross(&target);
    let sin = cross.norm();
    let cos = d.dot(&target);
    let angle = sin.atan2(cos);
    if angle < 1e-15 || sin < 1e-15 {
        return state.clone();
    }
    let axis = Unit::new_unchecked(cross / sin);
    let step = angle * (1.0 - (-dt / params.tau_align).exp());

    let mut next = rotate_toward(&d, &axis, step);
    if next.z.clamp(-1.0, 1.0).acos() > params.bend_max {
        next = limit_along_path(&d, &axis, step, params.bend_max);
    }
    TipState::from_direction(params, Unit::new_normalize(next), state.insertion_depth)
}

/// Furthest point along the rotation path from `d` that respects `bend_max`.
fn limit_along_path(d: &Vector3<f64>, axis: &Unit<Vector3<f64>>, step: f64, bend_max: f64) -> Vector3<f64> {
    let bend = |a: f64| rotate_toward(d, axis, a).z.clamp(-1.0, 1.0).acos();
    if bend(0.0) >= bend_max {
        // already at the limit: project back onto the limit cone in the current plane
        let (_, az) = bend_azimuth(d);
        return Vector3::new(bend_max.sin() * az.cos(), bend_max.sin() * az.sin(), bend_max.cos());
    }
    // first exceedance along the path, then bisect
    const SAMPLES: usize = 64;
    let mut lo = 0.0;
    let mut hi = step;
    for i in 1..=SAMPLES {
        let a = step * i as f64 / SAMPLES as f64;
        if bend(a) > bend_max {
            hi = a;
            break;
        }
        lo = a;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if bend(mid) > bend_max {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    rotate_toward(d, axis, lo)
}

/// Moves the base along the insertion axis.
pub fn advance(state: &TipState, params: &PlantParams, delta_depth: f64) -> Result<TipState, PlantError> {
    let requested = state.insertion_depth + delta_depth;
    if !(0.0..=params.depth_max).contains(&requested) {
        return Err(PlantError::DepthLimit {
            requested,
            max: params.depth_max,
        });
    }
    if delta_depth == 0.0 {
        return Ok(state.clone());
    }
    Ok(TipState::from_direction(params, state.direction, requested))
}

/// Field directions swept during workspace characterization, in the base
/// frame: `polar` from the insertion axis, `azimuth` about it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldDirectionGrid {
    pub polar: Vec<f64>,
    pub azimuth: Vec<f64>,
}

impl FieldDirectionGrid {
    pub fn regular(polar_max: f64, polar_steps: usize, azimuth_steps: usize) -> Self {
        let polar = (0..=polar_steps)
            .map(|i| polar_max * i as f64 / polar_steps as f64)
            .collect();
        let azimuth = (0..azimuth_steps)
            .map(|i| std::f64::consts::TAU * i as f64 / azimuth_steps as f64)
            .collect();
        Self { polar, azimuth }
    }

    pub fn is_empty(&self) -> bool {
        self.polar.is_empty() || self.azimuth.is_empty()
    }
}

pub fn spherical(polar: f64, azimuth: f64) -> Vector3<f64> {
    Vector3::new(polar.sin() * azimuth.cos(), polar.sin() * azimuth.sin(), polar.cos())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    /// Integration step, seconds.
    pub dt: f64,
    /// Field rotation rate while moving between grid nodes, rad/s.
    pub sweep_rate: f64,
    /// Hold time at each node, in multiples of `tau_align`.
    pub settle_taus: f64,
    /// Tip angular acceleration above which a transition is unstable, rad/s².
    pub accel_threshold: f64,
    pub insertion_depth: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            dt: 0.005,
            sweep_rate: 0.2,
            settle_taus: 12.0,
            accel_threshold: 10.0,
            insertion_depth: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceEntry {
    pub polar_index: usize,
    pub azimuth_index: usize,
    /// Field direction in the base frame.
    pub field_direction: Vector3<f64>,
    /// Converged tip pose relative to the segment base at zero depth.
    pub tip_local: Isometry3<f64>,
    pub bend: f64,
    pub peak_acceleration: f64,
    pub stable: bool,
}

/// Result of a field-direction sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceTable {
    pub grid: FieldDirectionGrid,
    pub magnitude: f64,
    /// Row-major over (polar, azimuth); unstable entries are kept but flagged.
    pub entries: Vec<WorkspaceEntry>,
}

impl WorkspaceTable {
    pub fn stable_entries(&self) -> impl Iterator<Item = &WorkspaceEntry> {
        self.entries.iter().filter(|e| e.stable)
    }

    pub fn entry(&self, polar_index: usize, azimuth_index: usize) -> &WorkspaceEntry {
        &self.entries[polar_index * self.grid.azimuth.len() + azimuth_index]
    }

    pub fn max_stable_bend(&self) -> Option<f64> {
        self.stable_entries().map(|e| e.bend).reduce(f64::max)
    }
}

/// Sweeps the field over the grid at fixed magnitude. Each azimuth column
/// starts from the straight configuration and walks the polar list in order,
/// rotating the field at `sweep_rate` and holding at each node until settled.
/// Transitions whose peak tip angular acceleration exceeds the threshold mark
/// the node unstable.
pub fn sweep_workspace(
    params: &PlantParams,
    magnitude: f64,
    grid: &FieldDirectionGrid,
    gravity_dir: &Vector3<f64>,
    options: &SweepOptions,
) -> WorkspaceTable {
    let n_pol = grid.polar.len();
    let n_az = grid.azimuth.len();
    let mut entries: Vec<Option<WorkspaceEntry>> = vec![None; n_pol * n_az];
    let base_rot = params.base_pose.rotation;
    let settle_steps = (options.settle_taus * params.tau_align / options.dt).ceil() as usize;

    for (ai, &az) in grid.azimuth.iter().enumerate() {
        let mut state = TipState::rest(params, options.insertion_depth);
        // settle at the straight field direction before measuring transitions
        let start_field = FieldState::along(&(base_rot * Vector3::z()), magnitude).expect("positive magnitude");
        for _ in 0..settle_steps {
            state = step_plant(&state, params, &start_field, gravity_dir, options.dt);
        }
        let mut history: [Vector3<f64>; 2] = [state.direction.into_inner(); 2];
        let mut current_polar = 0.0;

        for (pi, &polar) in grid.polar.iter().enumerate() {
            let mut peak: f64 = 0.0;
            let travel = (polar - current_polar).abs();
            let moving = (travel / (options.sweep_rate * options.dt)).ceil() as usize;
            let total = moving + settle_steps;
            for k in 1..=total {
                let p = if k >= moving {
                    polar
                } else {
                    current_polar + (polar - current_polar) * k as f64 / moving as f64
                };
                let dir = base_rot * spherical(p, az);
                let field = FieldState::along(&dir, magnitude).expect("positive magnitude");
                state = step_plant(&state, params, &field, gravity_dir, options.dt);
                let d = state.direction.into_inner();
                let accel = (d - 2.0 * history[1] + history[0]).norm() / (options.dt * options.dt);
                peak = peak.max(accel);
                history = [history[1], d];
            }
            current_polar = polar;
            let base0 = params.base_pose * Isometry3::translation(0.0, 0.0, state.insertion_depth);
            entries[pi * n_az + ai] = Some(WorkspaceEntry {
                polar_index: pi,
                azimuth_index: ai,
                field_direction: spherical(polar, az),
                tip_local: base0.inverse() * state.tip_pose,
                bend: state.bend,
                peak_acceleration: peak,
                stable: peak <= options.accel_threshold,
            });
        }
    }

    WorkspaceTable {
        grid: grid.clone(),
        magnitude,
        entries: entries.into_iter().map(|e| e.expect("every node visited")).collect(),
    }
}
