//! Electromagnetic navigation system model.
//!
//! The steering field is represented by its magnitude and an attached
//! B-frame whose x-axis points along the field. Field steering happens
//! through intrinsic rotations of that frame: first about `y^B` by `dβ`,
//! then about the rotated `z^B` by `dα`.

use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Condition number above which the actuation matrix is treated as singular.
pub const DEFAULT_CONDITION_LIMIT: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MagneticsError {
    #[error("actuation matrix is singular (condition number {condition:.3e})")]
    SingularActuation { condition: f64 },
    #[error("current {current:.3} A exceeds limit {limit:.3} A; scale field by {scale:.4}")]
    CurrentLimit {
        current: f64,
        limit: f64,
        /// Factor the requested field must be multiplied by to stay within limits.
        scale: f64,
    },
    #[error("position ({x:.1}, {y:.1}, {z:.1}) mm is outside the workspace box")]
    OutOfWorkspace { x: f64, y: f64, z: f64 },
    #[error("field magnitude must be positive, got {0}")]
    InvalidMagnitude(f64),
    #[error("actuation map has no grid entries")]
    EmptyActuationMap,
}

/// Magnetic field with its attached B-frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldState {
    /// Orientation of the B-frame in the system frame S.
    pub frame: Rotation3<f64>,
    /// Field magnitude in millitesla.
    pub magnitude: f64,
    /// Accumulated intrinsic rotation about `z^B` (radians).
    pub alpha: f64,
    /// Accumulated intrinsic rotation about `y^B` (radians).
    pub beta: f64,
}

impl FieldState {
    /// Field whose B-frame coincides with `frame`, with zeroed rotation counters.
    pub fn new(frame: Rotation3<f64>, magnitude: f64) -> Result<Self, MagneticsError> {
        if !(magnitude > 0.0 && magnitude.is_finite()) {
            return Err(MagneticsError::InvalidMagnitude(magnitude));
        }
        Ok(Self {
            frame,
            magnitude,
            alpha: 0.0,
            beta: 0.0,
        })
    }

    /// Field pointing along `direction` (need not be normalized). The B-frame
    /// is the minimal rotation taking S's x-axis onto the direction.
    pub fn along(direction: &Vector3<f64>, magnitude: f64) -> Result<Self, MagneticsError> {
        let frame = Rotation3::rotation_between(&Vector3::x(), direction).unwrap_or_else(|| {
            // antiparallel to x: half-turn about z
            Rotation3::from_axis_angle(&Vector3::z_axis(), std::f64::consts::PI)
        });
        Self::new(frame, magnitude)
    }

    /// Field vector `b` in S, millitesla.
    pub fn b(&self) -> Vector3<f64> {
        self.frame * Vector3::new(self.magnitude, 0.0, 0.0)
    }

    pub fn direction(&self) -> Vector3<f64> {
        self.frame * Vector3::x()
    }

    /// Rotation counters as `q = [α, β]`.
    pub fn q(&self) -> Vector2<f64> {
        Vector2::new(self.alpha, self.beta)
    }
}

/// Intrinsic field rotation by `dq = (dα, dβ)`: about `y^B` by `dβ`, then
/// about the new `z^B` by `dα`. Magnitude is unchanged.
pub fn rotate_field(f: &FieldState, dq: Vector2<f64>) -> FieldState {
    let ry = Rotation3::from_axis_angle(&Vector3::y_axis(), dq.y);
    let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), dq.x);
    FieldState {
        frame: renormalize(f.frame * ry * rz),
        magnitude: f.magnitude,
        alpha: f.alpha + dq.x,
        beta: f.beta + dq.y,
    }
}

/// Inverse of [`rotate_field`]: rotates about `z^B` by `−dα` first, then about
/// `y^B` by `−dβ`.
pub fn unrotate_field(f: &FieldState, dq: Vector2<f64>) -> FieldState {
    let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), -dq.x);
    let ry = Rotation3::from_axis_angle(&Vector3::y_axis(), -dq.y);
    FieldState {
        frame: renormalize(f.frame * rz * ry),
        magnitude: f.magnitude,
        alpha: f.alpha - dq.x,
        beta: f.beta - dq.y,
    }
}

fn renormalize(r: Rotation3<f64>) -> Rotation3<f64> {
    let mut r = r;
    r.renormalize();
    r
}

/// Actuation matrix at one position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuationModel {
    /// mT per ampere.
    pub a: Matrix3<f64>,
    /// mm, in S.
    pub position: Vector3<f64>,
    /// Per-coil current limit in amperes.
    pub i_max: f64,
}

impl ActuationModel {
    pub fn condition_number(&self) -> f64 {
        condition_number(&self.a)
    }
}

/// 2-norm condition number from singular values; infinite for rank-deficient input.
pub fn condition_number(a: &Matrix3<f64>) -> f64 {
    let sv = a.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Coil currents reproducing `b_des` through the Moore–Penrose pseudoinverse of `A`.
pub fn solve_currents(
    model: &ActuationModel,
    b_des: &Vector3<f64>,
) -> Result<Vector3<f64>, MagneticsError> {
    solve_currents_with_limit(model, b_des, DEFAULT_CONDITION_LIMIT)
}

pub fn solve_currents_with_limit(
    model: &ActuationModel,
    b_des: &Vector3<f64>,
    condition_limit: f64,
) -> Result<Vector3<f64>, MagneticsError> {
    let condition = model.condition_number();
    if !(condition <= condition_limit) {
        return Err(MagneticsError::SingularActuation { condition });
    }
    let pinv = model
        .a
        .pseudo_inverse(0.0)
        .map_err(|_| MagneticsError::SingularActuation { condition })?;
    let mut currents = pinv * b_des;
    // one Newton refinement step; keeps A·i within round-off of b for moderate conditioning
    let residual = b_des - model.a * currents;
    currents += pinv * residual;

    let peak = currents.amax();
    if peak > model.i_max {
        return Err(MagneticsError::CurrentLimit {
            current: peak,
            limit: model.i_max,
            scale: model.i_max / peak,
        });
    }
    Ok(currents)
}

/// One calibrated grid node of an actuation map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActuationGridEntry {
    pub position: [f64; 3],
    pub rows: [[f64; 3]; 3],
}

/// Position-dependent actuation matrix, loaded from a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActuationMap {
    pub i_max: f64,
    pub grid: Vec<ActuationGridEntry>,
}

impl ActuationMap {
    /// Synthetic map: a fixed coil mixing matrix scaled by `(100 mm / r)^3`
    /// with `r` the distance from the coil face centre, sampled on a coarse grid.
    pub fn synthetic() -> Self {
        let base = Matrix3::new(4.0, 0.6, -0.4, 0.5, 3.6, 0.7, -0.3, 0.8, 3.2);
        let mut grid = Vec::new();
        for &x in &[-100.0, 0.0, 100.0] {
            for &y in &[-100.0, 0.0, 100.0] {
                for z in (100..=250).step_by(25) {
                    let p = Vector3::new(x, y, z as f64);
                    let a = base * (100.0 / p.norm()).powi(3);
                    grid.push(ActuationGridEntry {
                        position: [p.x, p.y, p.z],
                        rows: [
                            [a[(0, 0)], a[(0, 1)], a[(0, 2)]],
                            [a[(1, 0)], a[(1, 1)], a[(1, 2)]],
                            [a[(2, 0)], a[(2, 1)], a[(2, 2)]],
                        ],
                    });
                }
            }
        }
        Self { i_max: 35.0, grid }
    }

    /// Inverse-distance-squared blend of grid matrices; exact at grid nodes.
    pub fn model_at(&self, position: &Vector3<f64>) -> Result<ActuationModel, MagneticsError> {
        if self.grid.is_empty() {
            return Err(MagneticsError::EmptyActuationMap);
        }
        let mut acc = Matrix3::zeros();
        let mut wsum = 0.0;
        for entry in &self.grid {
            let node = Vector3::from(entry.position);
            let a = Matrix3::from_fn(|r, c| entry.rows[r][c]);
            let d2 = (node - position).norm_squared();
            if d2 < 1e-18 {
                return Ok(ActuationModel {
                    a,
                    position: *position,
                    i_max: self.i_max,
                });
            }
            let w = 1.0 / d2;
            acc += a * w;
            wsum += w;
        }
        Ok(ActuationModel {
            a: acc / wsum,
            position: *position,
            i_max: self.i_max,
        })
    }
}

/// Axis-aligned workspace box in S, millimeters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl WorkspaceBox {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

impl Default for WorkspaceBox {
    fn default() -> Self {
        Self {
            min: [-150.0, -150.0, 0.0],
            max: [150.0, 150.0, 300.0],
        }
    }
}

/// Piecewise-linear field magnitude cap versus distance from the coil face centre.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldCapMap {
    /// `(distance mm, cap mT)` knots, sorted by distance.
    pub knots: Vec<(f64, f64)>,
    pub workspace: WorkspaceBox,
}

impl Default for FieldCapMap {
    fn default() -> Self {
        Self {
            knots: vec![(100.0, 30.0), (150.0, 26.0), (200.0, 17.0), (250.0, 10.0)],
            workspace: WorkspaceBox::default(),
        }
    }
}

impl FieldCapMap {
    /// Cap at a distance; flat extrapolation outside the knot range.
    pub fn cap_at_distance(&self, distance: f64) -> f64 {
        let k = &self.knots;
        match k.len() {
            0 => 0.0,
            1 => k[0].1,
            _ => {
                if distance <= k[0].0 {
                    return k[0].1;
                }
                for w in k.windows(2) {
                    let (d0, c0) = w[0];
                    let (d1, c1) = w[1];
                    if distance <= d1 {
                        let t = (distance - d0) / (d1 - d0);
                        return c0 + t * (c1 - c0);
                    }
                }
                k[k.len() - 1].1
            }
        }
    }

    pub fn check_field_feasible(
        &self,
        position: &Vector3<f64>,
        magnitude: f64,
    ) -> Result<bool, MagneticsError> {
        if !self.workspace.contains(position) {
            return Err(MagneticsError::OutOfWorkspace {
                x: position.x,
                y: position.y,
                z: position.z,
            });
        }
        Ok(magnitude <= self.cap_at_distance(position.norm()))
    }
}

/// Feasibility under the default cap map.
pub fn check_field_feasible(position: &Vector3<f64>, magnitude: f64) -> Result<bool, MagneticsError> {
    FieldCapMap::default().check_field_feasible(position, magnitude)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::FRAC_PI_2;

    fn model(a: Matrix3<f64>) -> ActuationModel {
        ActuationModel {
            a,
            position: Vector3::new(0.0, 0.0, 145.0),
            i_max: 1e6,
        }
    }

    #[test]
    fn identity_actuation() {
        let i = solve_currents(&model(Matrix3::identity()), &Vector3::new(15.0, 0.0, 0.0)).unwrap();
        assert_relative_eq!(i, Vector3::new(15.0, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn scalar_actuation() {
        let i = solve_currents(&model(Matrix3::identity() * 2.0), &Vector3::new(10.0, 0.0, 0.0))
            .unwrap();
        assert_relative_eq!(i, Vector3::new(5.0, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn random_full_rank_reproduces_field() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let b = Vector3::new(10.0, 5.0, -3.0);
        for _ in 0..200 {
            let a = Matrix3::from_fn(|_, _| rng.gen_range(-3.0..3.0));
            if condition_number(&a) > 1e4 {
                continue;
            }
            let i = solve_currents(&model(a), &b).unwrap();
            // oracle: direct matrix-vector product
            let back = a * i;
            assert!((back - b).norm() / b.norm() < 1e-9, "{back} vs {b}");
        }
    }

    #[test]
    fn singular_actuation_rejected() {
        let a = Matrix3::new(1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 0.0, 0.0, 1.0);
        let err = solve_currents(&model(a), &Vector3::x()).unwrap_err();
        assert!(matches!(err, MagneticsError::SingularActuation { .. }));
    }

    #[test]
    fn current_limit_reports_scale() {
        let mut m = model(Matrix3::identity());
        m.i_max = 10.0; // 20 mT needs 20 A
        match solve_currents(&m, &Vector3::new(20.0, 0.0, 0.0)) {
            Err(MagneticsError::CurrentLimit { scale, .. }) => assert_relative_eq!(scale, 0.5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_rotation_is_identity() {
        let f = FieldState::along(&Vector3::new(1.0, 2.0, 3.0), 15.0).unwrap();
        let g = rotate_field(&f, Vector2::zeros());
        assert_relative_eq!(g.b(), f.b(), epsilon = 1e-12);
    }

    #[test]
    fn quarter_turn_about_z() {
        let f = FieldState::new(Rotation3::identity(), 15.0).unwrap();
        let g = rotate_field(&f, Vector2::new(FRAC_PI_2, 0.0));
        assert_relative_eq!(g.b(), Vector3::new(0.0, 15.0, 0.0), epsilon = 1e-12);
        assert_relative_eq!(g.alpha, FRAC_PI_2);
    }

    #[test]
    fn beta_rotates_about_y_first() {
        // y by +90° takes x to −z; the following z-rotation then spins about the new z (old x).
        let f = FieldState::new(Rotation3::identity(), 1.0).unwrap();
        let g = rotate_field(&f, Vector2::new(0.3, FRAC_PI_2));
        assert_relative_eq!(g.direction(), Vector3::new(0.0, 0.3f64.sin(), -(0.3f64.cos())), epsilon = 1e-12);
    }

    #[test]
    fn feasibility_examples() {
        assert!(check_field_feasible(&Vector3::new(0.0, 0.0, 145.0), 15.0).unwrap());
        assert!(check_field_feasible(&Vector3::new(0.0, 0.0, 150.0), 25.0).unwrap());
        assert!(!check_field_feasible(&Vector3::new(0.0, 0.0, 150.0), 500.0).unwrap());
        assert!(!check_field_feasible(&Vector3::new(0.0, 0.0, 250.0), 500.0).unwrap());
        assert!(matches!(
            check_field_feasible(&Vector3::new(0.0, 0.0, 1000.0), 1.0),
            Err(MagneticsError::OutOfWorkspace { .. })
        ));
    }

    #[test]
    fn synthetic_map_exact_at_nodes_and_solvable() {
        let map = ActuationMap::synthetic();
        let node = &map.grid[3];
        let p = Vector3::from(node.position);
        let m = map.model_at(&p).unwrap();
        assert_eq!(m.a[(0, 1)], node.rows[0][1]);
        let m = map.model_at(&Vector3::new(0.0, 0.0, 150.0)).unwrap();
        let i = solve_currents(&m, &Vector3::new(25.0, 0.0, 0.0)).unwrap();
        assert!((m.a * i - Vector3::new(25.0, 0.0, 0.0)).norm() < 1e-9);
    }

    proptest! {
        #[test]
        fn rotation_preserves_norm(a in -7.0..7.0f64, b in -7.0..7.0f64,
                                   x in -1.0..1.0f64, y in -1.0..1.0f64, z in 0.1..1.0f64) {
            let f = FieldState::along(&Vector3::new(x, y, z), 12.5).unwrap();
            let g = rotate_field(&f, Vector2::new(a, b));
            prop_assert!((g.b().norm() - f.b().norm()).abs() < 1e-12);
        }

        #[test]
        fn reversed_composition_inverts(a in -3.0..3.0f64, b in -3.0..3.0f64,
                                        x in -1.0..1.0f64, y in -1.0..1.0f64, z in 0.1..1.0f64) {
            let f = FieldState::along(&Vector3::new(x, y, z), 15.0).unwrap();
            let dq = Vector2::new(a, b);
            let g = unrotate_field(&rotate_field(&f, dq), dq);
            prop_assert!((g.b() - f.b()).norm() < 1e-9);
            prop_assert!((g.frame.matrix() - f.frame.matrix()).norm() < 1e-9);
        }

        #[test]
        fn currents_round_trip(i0 in -5.0..5.0f64, i1 in -5.0..5.0f64, i2 in -5.0..5.0f64) {
            let m = ActuationMap::synthetic().model_at(&Vector3::new(10.0, -20.0, 160.0)).unwrap();
            let i = Vector3::new(i0, i1, i2);
            let solved = solve_currents(&m, &(m.a * i)).unwrap();
            prop_assert!((solved - i).norm() <= 1e-9 * i.norm().max(1.0));
        }
    }
}
