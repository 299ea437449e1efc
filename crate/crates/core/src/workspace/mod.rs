//! Accessible-location study: reachable tip poses for a rigid curved scope
//! and the flexible tip, laser rays cast against a surface mesh, best
//! ablation angle per triangle and area coverage above angle thresholds.
//!
//! The ablation angle here is the ray's elevation above the local surface
//! plane, unrelated to the field-rotation counters.

mod mesh;
mod raycast;

pub use mesh::{parse_obj, parse_stl, TriMesh, MIN_AREA};
pub use raycast::{cast_brute, inside, intersect, Grid, Hit, Ray, T_MIN};

use crate::plant::{sweep_workspace, FieldDirectionGrid, PlantParams, SweepOptions, WorkspaceTable};
use nalgebra::{Isometry3, Point3, Rotation3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, TAU};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorkspaceError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("mesh has no triangles")]
    EmptyMesh,
    #[error("triangle {triangle} references a missing vertex")]
    IndexOutOfRange { triangle: usize },
    #[error("triangle {triangle} is degenerate")]
    DegenerateTriangle { triangle: usize },
    #[error("mesh has a non-finite vertex")]
    NonFiniteVertex,
    #[error("workspace table has no stable entries")]
    EmptyWorkspaceTable,
    #[error("region selects no triangles")]
    EmptyRegion,
    #[error("region mask has {got} entries for {expected} triangles")]
    RegionMismatch { expected: usize, got: usize },
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
    #[error("curvature radius must be positive")]
    InvalidRadius,
    #[error("distance range [{min}, {max}] is invalid")]
    InvalidRange { min: f64, max: f64 },
}

/// Inclusive sampled interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRange {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl SweepRange {
    pub fn new(min: f64, max: f64, step: f64) -> Self {
        Self { min, max, step }
    }

    fn validate(&self, name: &str) -> Result<(), WorkspaceError> {
        let ok = self.min.is_finite() && self.max.is_finite() && self.step.is_finite();
        if !ok || self.step <= 0.0 || self.min > self.max {
            return Err(WorkspaceError::InvalidSweep(format!("{name}: {self:?}")));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        let n = ((self.max - self.min) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|i| self.min + i as f64 * self.step).collect()
    }
}

/// Insertion angles (radians) and depths (mm) to sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InsertionSweep {
    /// Yaw of the shaft away from the nominal axis toward the site's `y`.
    pub psi: SweepRange,
    /// Elevation of the shaft toward the site's `z`.
    pub phi: SweepRange,
    pub depth: SweepRange,
}

impl Default for InsertionSweep {
    fn default() -> Self {
        let deg2 = 2f64.to_radians();
        Self {
            psi: SweepRange::new(0.0, FRAC_PI_2, deg2),
            phi: SweepRange::new(0.0, FRAC_PI_2, deg2),
            depth: SweepRange::new(0.0, 100.0, 2.0),
        }
    }
}

impl InsertionSweep {
    pub fn validate(&self) -> Result<(), WorkspaceError> {
        self.psi.validate("psi")?;
        self.phi.validate("phi")?;
        self.depth.validate("depth")?;
        let quarter = FRAC_PI_2 + 1e-12;
        for (name, r) in [("psi", &self.psi), ("phi", &self.phi)] {
            if r.min < 0.0 || r.max > quarter {
                return Err(WorkspaceError::InvalidSweep(format!("{name} outside [0, 90°]")));
            }
        }
        if self.depth.min < 0.0 {
            return Err(WorkspaceError::InvalidSweep("negative depth".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.psi.values().len() * self.phi.values().len() * self.depth.values().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Trocar location. The shaft leaves along `x` at zero angles; `z` is the
/// anterior direction toward which the rigid scope curves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InsertionSite {
    pub point: Point3<f64>,
    pub frame: Rotation3<f64>,
}

impl InsertionSite {
    /// Shaft frame at the trocar: local `z` along the shaft, local `−y`
    /// toward the curvature side.
    pub fn shaft_frame(&self, psi: f64, phi: f64) -> Isometry3<f64> {
        let t = self.frame * Vector3::new(phi.cos() * psi.cos(), phi.cos() * psi.sin(), phi.sin());
        let n = self.frame * Vector3::new(-phi.sin() * psi.cos(), -phi.sin() * psi.sin(), phi.cos());
        let y = -n;
        let x = y.cross(&t);
        let rot = Rotation3::from_basis_unchecked(&[x, y, t]);
        Isometry3::from_parts(Translation3::from(self.point.coords), UnitQuaternion::from_rotation_matrix(&rot))
    }
}

/// Tip of a constant-curvature arc of length `l` bending toward the shaft
/// frame's `−y`, relative to that frame.
pub fn arc_tip(radius: f64, l: f64) -> Isometry3<f64> {
    let th = l / radius;
    Isometry3::from_parts(
        Translation3::new(0.0, -radius * (1.0 - th.cos()), radius * th.sin()),
        UnitQuaternion::from_axis_angle(&Vector3::x_axis(), th),
    )
}

/// Tip poses as the product of shaft frames and frame-relative tip poses,
/// generated on demand. Pose `i` is `bases[i / locals.len()] * locals[i % locals.len()]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSet {
    pub bases: Vec<Isometry3<f64>>,
    pub locals: Vec<Isometry3<f64>>,
}

impl PoseSet {
    pub fn len(&self) -> usize {
        self.bases.len() * self.locals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> Isometry3<f64> {
        let n = self.locals.len();
        self.bases[i / n] * self.locals[i % n]
    }

    pub fn iter(&self) -> impl Iterator<Item = Isometry3<f64>> + '_ {
        self.bases.iter().flat_map(move |b| self.locals.iter().map(move |l| b * l))
    }
}

impl From<Vec<Isometry3<f64>>> for PoseSet {
    fn from(poses: Vec<Isometry3<f64>>) -> Self {
        Self {
            bases: vec![Isometry3::identity()],
            locals: poses,
        }
    }
}

fn shaft_frames(site: &InsertionSite, sweep: &InsertionSweep) -> Vec<Isometry3<f64>> {
    let phis = sweep.phi.values();
    sweep
        .psi
        .values()
        .into_iter()
        .flat_map(|psi| phis.iter().map(move |&phi| site.shaft_frame(psi, phi)))
        .collect()
}

/// Rigid curved scope: the whole inserted length follows an arc of `radius`.
pub fn constant_curvature_poses(radius: f64, site: &InsertionSite, sweep: &InsertionSweep) -> Result<PoseSet, WorkspaceError> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(WorkspaceError::InvalidRadius);
    }
    sweep.validate()?;
    Ok(PoseSet {
        bases: shaft_frames(site, sweep),
        locals: sweep.depth.values().into_iter().map(|l| arc_tip(radius, l)).collect(),
    })
}

fn blend(a: &Isometry3<f64>, b: &Isometry3<f64>, w: f64) -> Isometry3<f64> {
    if w <= 0.0 {
        return *a;
    }
    if w >= 1.0 {
        return *b;
    }
    let t = a.translation.vector * (1.0 - w) + b.translation.vector * w;
    let r = a.rotation.try_slerp(&b.rotation, w, 1e-12).unwrap_or(if w < 0.5 { a.rotation } else { b.rotation });
    Isometry3::from_parts(Translation3::from(t), r)
}

/// Tip pose relative to the segment base for a field direction between
/// table nodes, blended bilinearly over (polar, azimuth). `None` outside the
/// table or when a contributing node is unstable.
pub fn interpolate_tip(table: &WorkspaceTable, polar: f64, azimuth: f64) -> Option<Isometry3<f64>> {
    let pol = &table.grid.polar;
    let az = &table.grid.azimuth;
    if pol.is_empty() || az.is_empty() || !polar.is_finite() || !azimuth.is_finite() {
        return None;
    }
    let tol = 1e-12;
    if polar < pol[0] - tol || polar > pol[pol.len() - 1] + tol {
        return None;
    }
    let pi = pol.windows(2).position(|w| polar <= w[1] + tol).unwrap_or(0);
    let (p0, p1) = if pol.len() == 1 { (0, 0) } else { (pi, pi + 1) };
    let wp = if p0 == p1 || pol[p1] == pol[p0] {
        0.0
    } else {
        ((polar - pol[p0]) / (pol[p1] - pol[p0])).clamp(0.0, 1.0)
    };
    let a = azimuth.rem_euclid(TAU);
    let n = az.len();
    let (mut a0, mut wa) = (n - 1, 0.0);
    for j in 0..n {
        let lo = az[j];
        let hi = if j + 1 < n { az[j + 1] } else { az[0] + TAU };
        if a >= lo - tol && a < hi - tol {
            a0 = j;
            wa = ((a - lo) / (hi - lo)).clamp(0.0, 1.0);
            break;
        }
    }
    let a1 = (a0 + 1) % n;
    let node = |i: usize, j: usize, w: f64| -> Option<Isometry3<f64>> {
        if w == 0.0 {
            return Some(Isometry3::identity());
        }
        let e = table.entry(i, j);
        e.stable.then_some(e.tip_local)
    };
    let row = |i: usize, wrow: f64| -> Option<Isometry3<f64>> {
        let x0 = node(i, a0, wrow * (1.0 - wa))?;
        let x1 = node(i, a1, wrow * wa)?;
        Some(blend(&x0, &x1, wa))
    };
    let r0 = row(p0, 1.0 - wp)?;
    let r1 = row(p1, wp)?;
    Some(blend(&r0, &r1, wp))
}

/// Flexible scope: straight shaft to depth `l`, then the interpolated
/// bend. Each table cell is subdivided `subdivisions` times per axis.
pub fn flexible_tip_poses(
    site: &InsertionSite,
    sweep: &InsertionSweep,
    table: &WorkspaceTable,
    subdivisions: usize,
) -> Result<PoseSet, WorkspaceError> {
    sweep.validate()?;
    if table.stable_entries().next().is_none() {
        return Err(WorkspaceError::EmptyWorkspaceTable);
    }
    let s = subdivisions.max(1);
    let pol = &table.grid.polar;
    let az = &table.grid.azimuth;
    let mut locals = Vec::new();
    for i in 0..pol.len() {
        let substeps = if i + 1 < pol.len() { s } else { 1 };
        for k in 0..substeps {
            let p = pol[i] + if i + 1 < pol.len() { (pol[i + 1] - pol[i]) * k as f64 / s as f64 } else { 0.0 };
            for j in 0..az.len() {
                let next = if j + 1 < az.len() { az[j + 1] } else { az[0] + TAU };
                for m in 0..s {
                    let a = az[j] + (next - az[j]) * m as f64 / s as f64;
                    if p == 0.0 && (j > 0 || m > 0) {
                        continue;
                    }
                    if let Some(t) = interpolate_tip(table, p, a) {
                        locals.push(t);
                    }
                }
            }
        }
    }
    let depths = sweep.depth.values();
    Ok(PoseSet {
        bases: shaft_frames(site, sweep),
        locals: depths
            .iter()
            .flat_map(|&l| locals.iter().map(move |t| Translation3::new(0.0, 0.0, l) * t))
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleHit {
    /// Ray elevation above the surface plane, radians in `(0, π/2]`.
    pub alpha: f64,
    /// Tip-to-surface distance along the ray, mm.
    pub d: f64,
}

impl AngleHit {
    /// Larger angle wins; equal angles prefer the shorter distance.
    fn beats(&self, other: &AngleHit) -> bool {
        self.alpha > other.alpha || (self.alpha == other.alpha && self.d < other.d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AngleMapConfig {
    pub d_min: f64,
    pub d_max: f64,
    /// Skip tips outside a closed mesh.
    pub require_inside: bool,
    /// Worker threads; 0 uses the available parallelism.
    pub threads: usize,
}

impl Default for AngleMapConfig {
    fn default() -> Self {
        Self {
            d_min: 3.0,
            d_max: 10.0,
            require_inside: false,
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleMap {
    /// Best hit per triangle; `None` when no valid ray reached it.
    pub best: Vec<Option<AngleHit>>,
    pub d_min: f64,
    pub d_max: f64,
}

impl AngleMap {
    pub fn reached(&self) -> usize {
        self.best.iter().filter(|b| b.is_some()).count()
    }

    fn merge(&mut self, other: &[Option<AngleHit>]) {
        for (a, b) in self.best.iter_mut().zip(other) {
            if let Some(b) = b {
                if a.is_none_or(|a| b.beats(&a)) {
                    *a = Some(*b);
                }
            }
        }
    }
}

fn cast_poses(
    mesh: &TriMesh,
    grid: &Grid,
    poses: &PoseSet,
    range: std::ops::Range<usize>,
    cfg: &AngleMapConfig,
) -> Vec<Option<AngleHit>> {
    let mut best: Vec<Option<AngleHit>> = vec![None; mesh.len()];
    for i in range {
        let pose = poses.get(i);
        let origin = Point3::from(pose.translation.vector);
        let dir = pose.rotation * Vector3::z();
        if cfg.require_inside && !inside(mesh, grid, &origin) {
            continue;
        }
        let Some(hit) = grid.cast(mesh, &Ray { origin, dir }, cfg.d_max) else { continue };
        if hit.t < cfg.d_min {
            continue;
        }
        let alpha = dir.dot(&mesh.normals[hit.triangle]).abs().min(1.0).asin();
        if !(alpha > 0.0) {
            continue;
        }
        let h = AngleHit { alpha, d: hit.t };
        let slot = &mut best[hit.triangle];
        if slot.is_none_or(|s| h.beats(&s)) {
            *slot = Some(h);
        }
    }
    best
}

/// Casts one ray per pose along its local `z` and keeps, per triangle, the
/// largest angle among nearest hits within `[d_min, d_max]`.
pub fn ablation_angle_map(
    poses: &PoseSet,
    mesh: &TriMesh,
    cfg: &AngleMapConfig,
) -> Result<AngleMap, WorkspaceError> {
    if mesh.is_empty() {
        return Err(WorkspaceError::EmptyMesh);
    }
    if !(cfg.d_min >= 0.0 && cfg.d_min <= cfg.d_max && cfg.d_max.is_finite()) {
        return Err(WorkspaceError::InvalidRange {
            min: cfg.d_min,
            max: cfg.d_max,
        });
    }
    let grid = Grid::new(mesh);
    let threads = match cfg.threads {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    }
    .max(1);
    let mut map = AngleMap {
        best: vec![None; mesh.len()],
        d_min: cfg.d_min,
        d_max: cfg.d_max,
    };
    if threads == 1 || poses.len() < 2 * threads {
        map.merge(&cast_poses(mesh, &grid, poses, 0..poses.len(), cfg));
        return Ok(map);
    }
    let chunk = poses.len().div_ceil(threads);
    let parts: Vec<Vec<Option<AngleHit>>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..poses.len())
            .step_by(chunk)
            .map(|start| {
                let grid = &grid;
                let end = (start + chunk).min(poses.len());
                s.spawn(move || cast_poses(mesh, grid, poses, start..end, cfg))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("ray worker panicked")).collect()
    });
    for p in &parts {
        map.merge(p);
    }
    Ok(map)
}

/// One pass of area-weighted averaging over reached vertex neighbors.
/// Unreached triangles stay unreached.
pub fn smooth_angle_map(map: &AngleMap, mesh: &TriMesh) -> AngleMap {
    let neighbors = mesh.vertex_neighbors();
    let best = map
        .best
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let b = (*b)?;
            let (mut sa, mut sw) = (b.alpha * mesh.areas[i], mesh.areas[i]);
            for &j in &neighbors[i] {
                if let Some(n) = map.best[j] {
                    sa += n.alpha * mesh.areas[j];
                    sw += mesh.areas[j];
                }
            }
            Some(AngleHit { alpha: sa / sw, d: b.d })
        })
        .collect();
    AngleMap {
        best,
        d_min: map.d_min,
        d_max: map.d_max,
    }
}

/// Percentage of the region's area whose best angle is at least each threshold.
pub fn coverage_stats(
    map: &AngleMap,
    mesh: &TriMesh,
    region: &[bool],
    thresholds: &[f64],
) -> Result<Vec<f64>, WorkspaceError> {
    if region.len() != mesh.len() || map.best.len() != mesh.len() {
        return Err(WorkspaceError::RegionMismatch {
            expected: mesh.len(),
            got: region.len(),
        });
    }
    let total = (0..mesh.len()).filter(|&i| region[i]).fold(0.0, |s, i| s + mesh.areas[i]);
    if !region.iter().any(|&r| r) || !(total > 0.0) {
        return Err(WorkspaceError::EmptyRegion);
    }
    Ok(thresholds
        .iter()
        .map(|&th| {
            let covered = (0..mesh.len())
                .filter(|&i| region[i] && map.best[i].is_some_and(|b| b.alpha >= th - 1e-12))
                .fold(0.0, |s, i| s + mesh.areas[i]);
            100.0 * covered / total
        })
        .collect())
}

/// Triangles whose centroid lies at or above `z_min` and that do not face
/// straight down.
pub fn region_above(mesh: &TriMesh, z_min: f64) -> Vec<bool> {
    (0..mesh.len())
        .map(|i| mesh.centroid(i).z >= z_min && mesh.normals[i].z > -0.999)
        .collect()
}

/// Rigid-versus-flexible comparison on the bundled dome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    /// Dome semi-axes `a`, `b` (floor) and `c` (height), mm.
    pub dome: [f64; 3],
    pub dome_azimuth_steps: usize,
    pub dome_elevation_steps: usize,
    /// Elevation (radians) of the trocar on the dome wall at `−x`.
    pub site_elevation: f64,
    /// Inset of the trocar from the wall, mm.
    pub site_inset: f64,
    pub sweep: InsertionSweep,
    pub rigid_radius: f64,
    pub field_magnitude: f64,
    pub table_polar_max: f64,
    pub table_polar_steps: usize,
    pub table_azimuth_steps: usize,
    pub subdivisions: usize,
    pub angles: AngleMapConfig,
    /// Anterior region: centroids above this fraction of the dome height.
    pub anterior_fraction: f64,
    pub thresholds: Vec<f64>,
    pub smooth: bool,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            dome: [90.0, 70.0, 60.0],
            dome_azimuth_steps: 48,
            dome_elevation_steps: 16,
            site_elevation: 10f64.to_radians(),
            site_inset: 1.0,
            sweep: InsertionSweep::default(),
            rigid_radius: 210.0,
            field_magnitude: 25.0,
            table_polar_max: 165f64.to_radians(),
            table_polar_steps: 11,
            table_azimuth_steps: 12,
            subdivisions: 1,
            angles: AngleMapConfig {
                require_inside: true,
                ..AngleMapConfig::default()
            },
            anterior_fraction: 0.5,
            thresholds: vec![45f64.to_radians(), 70f64.to_radians()],
            smooth: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub rigid: AngleMap,
    pub flexible: AngleMap,
    /// Percentages per threshold.
    pub rigid_coverage: Vec<f64>,
    pub flexible_coverage: Vec<f64>,
    pub rigid_poses: usize,
    pub flexible_poses: usize,
}

impl StudyConfig {
    pub fn mesh(&self) -> Result<TriMesh, WorkspaceError> {
        let [a, b, c] = self.dome;
        TriMesh::dome(a, b, c, self.dome_azimuth_steps, self.dome_elevation_steps)
    }

    pub fn site(&self) -> InsertionSite {
        let [a, _, c] = self.dome;
        let e = self.site_elevation;
        let wall = Point3::new(-a * e.cos(), 0.0, c * e.sin());
        let inward = Vector3::new(e.cos() / a, 0.0, -e.sin() / c).normalize();
        InsertionSite {
            point: wall + inward * self.site_inset,
            frame: Rotation3::identity(),
        }
    }

    pub fn table(&self) -> WorkspaceTable {
        let grid = FieldDirectionGrid::regular(self.table_polar_max, self.table_polar_steps, self.table_azimuth_steps);
        sweep_workspace(
            &PlantParams::default(),
            self.field_magnitude,
            &grid,
            &Vector3::new(0.0, 0.0, -1.0),
            &SweepOptions::default(),
        )
    }
}

pub fn run_study(cfg: &StudyConfig) -> Result<StudyResult, WorkspaceError> {
    run_study_on(&cfg.mesh()?, &cfg.site(), cfg.anterior_fraction * cfg.dome[2], cfg)
}

/// Same comparison on an arbitrary mesh; coverage counts triangles whose
/// centroid lies above `region_z_min`.
pub fn run_study_on(
    mesh: &TriMesh,
    site: &InsertionSite,
    region_z_min: f64,
    cfg: &StudyConfig,
) -> Result<StudyResult, WorkspaceError> {
    let rigid_poses = constant_curvature_poses(cfg.rigid_radius, site, &cfg.sweep)?;
    let flexible_poses = flexible_tip_poses(site, &cfg.sweep, &cfg.table(), cfg.subdivisions)?;
    let mut rigid = ablation_angle_map(&rigid_poses, mesh, &cfg.angles)?;
    let mut flexible = ablation_angle_map(&flexible_poses, mesh, &cfg.angles)?;
    if cfg.smooth {
        rigid = smooth_angle_map(&rigid, mesh);
        flexible = smooth_angle_map(&flexible, mesh);
    }
    let region = region_above(mesh, region_z_min);
    Ok(StudyResult {
        rigid_coverage: coverage_stats(&rigid, mesh, &region, &cfg.thresholds)?,
        flexible_coverage: coverage_stats(&flexible, mesh, &region, &cfg.thresholds)?,
        rigid,
        flexible,
        rigid_poses: rigid_poses.len(),
        flexible_poses: flexible_poses.len(),
    })
}
