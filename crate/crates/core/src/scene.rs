//! Synthetic endoscopic scene: a procedurally textured surface seen through a
//! pinhole camera, plus analytic plane-induced homographies used as oracles.

use crate::geometry::normalize_homography;
use nalgebra::{Isometry3, Matrix3, Point3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("only {coverage:.1}% of pixels see the surface")]
    LowCoverage { coverage: f64 },
    #[error("ground-truth homography requires a planar surface")]
    NonPlanarSurface,
    #[error("camera pose does not see the surface plane")]
    DegenerateView,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self {
            fx: 300.0,
            fy: 300.0,
            cx: 199.5,
            cy: 199.5,
            width: 400,
            height: 400,
        }
    }
}

impl CameraIntrinsics {
    pub fn k(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn k_inv(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Geometric centre of the pixel grid (pixel centres sit on integer coordinates).
    pub fn center(&self) -> Vector2<f64> {
        Vector2::new((self.width as f64 - 1.0) / 2.0, (self.height as f64 - 1.0) / 2.0)
    }

    pub fn is_valid(&self) -> bool {
        self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cy >= 0.0
            && self.cx <= self.width as f64
            && self.cy <= self.height as f64
    }
}

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
    pub timestamp: f64,
    pub frame_id: u64,
}

impl Frame {
    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width * height],
            timestamp: 0.0,
            frame_id: 0,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }
}

/// Pinhole projection of a world point. `None` if the point is behind the camera.
pub fn project(
    intrinsics: &CameraIntrinsics,
    camera_pose: &Isometry3<f64>,
    p_w: &Point3<f64>,
) -> Option<Vector2<f64>> {
    let pc = camera_pose.inverse_transform_point(p_w);
    if pc.z <= 1e-12 {
        return None;
    }
    let q = intrinsics.k() * pc.coords;
    Some(Vector2::new(q.x / q.z, q.y / q.z))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SurfaceKind {
    Plane,
    /// Concave spherical cap; the sphere centre sits at local `(0, 0, radius)`.
    SphereCap { radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VesselParams {
    pub count: usize,
    /// Trunk width, mm.
    pub width_mm: f64,
    /// Fractional darkening at the vessel centreline, 0..1.
    pub contrast: f64,
}

impl Default for VesselParams {
    fn default() -> Self {
        Self {
            count: 24,
            width_mm: 0.8,
            contrast: 0.55,
        }
    }
}

/// Saturated reflection fixed in image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Highlight {
    pub center: [f64; 2],
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Surface {
    pub kind: SurfaceKind,
    /// Local z is the surface normal at the origin; local x/y are texture axes.
    pub pose: Isometry3<f64>,
    pub texture_seed: u64,
    pub vessels: VesselParams,
    /// Half side of the textured square, mm.
    pub half_extent_mm: f64,
    pub texel_mm: f64,
    pub highlights: Vec<Highlight>,
    /// Standard deviation of per-pixel sensor noise, gray levels.
    pub noise_sigma: f64,
}

impl Surface {
    pub fn plane(pose: Isometry3<f64>, texture_seed: u64) -> Self {
        Self {
            kind: SurfaceKind::Plane,
            pose,
            texture_seed,
            vessels: VesselParams::default(),
            half_extent_mm: 40.0,
            texel_mm: 0.04,
            highlights: Vec::new(),
            noise_sigma: 0.0,
        }
    }

    /// World-space normal at the surface origin.
    pub fn normal(&self) -> Vector3<f64> {
        self.pose.rotation * Vector3::z()
    }
}

/// Texture raster in surface-local millimetres.
#[derive(Debug, Clone)]
struct Texture {
    size: usize,
    texel: f64,
    half_extent: f64,
    data: Vec<f32>,
}

impl Texture {
    fn generate(surface: &Surface) -> Self {
        let size = ((2.0 * surface.half_extent_mm / surface.texel_mm).ceil() as usize).max(2);
        let texel = surface.texel_mm;
        let mut rng = ChaCha8Rng::seed_from_u64(surface.texture_seed);
        let octaves: [(f64, f32); 4] = [(2.4, 1.0), (1.1, 0.55), (0.5, 0.35), (0.25, 0.2)];
        let salts: Vec<u64> = octaves.iter().map(|_| rng.gen()).collect();
        let norm: f32 = octaves.iter().map(|o| o.1).sum();

        let mut data = vec![0f32; size * size];
        for j in 0..size {
            let y = j as f64 * texel;
            for i in 0..size {
                let x = i as f64 * texel;
                let mut v = 0f32;
                for (o, salt) in octaves.iter().zip(&salts) {
                    v += o.1 * value_noise(x / o.0, y / o.0, *salt);
                }
                let v = v / norm; // ~[0, 1]
                data[j * size + i] = 128.0 + 230.0 * (v - 0.5);
            }
        }

        let mut tex = Self {
            size,
            texel,
            half_extent: surface.half_extent_mm,
            data,
        };
        tex.paint_vessels(&surface.vessels, &mut rng);
        for v in tex.data.iter_mut() {
            *v = v.clamp(22.0, 228.0);
        }
        tex
    }

    fn paint_vessels(&mut self, params: &VesselParams, rng: &mut ChaCha8Rng) {
        let extent = 2.0 * self.half_extent;
        let mut stack: Vec<(f64, f64, f64, f64, f64)> = Vec::new();
        for _ in 0..params.count {
            let x = rng.gen_range(0.0..extent);
            let y = rng.gen_range(0.0..extent);
            let heading = rng.gen_range(0.0..std::f64::consts::TAU);
            let length = rng.gen_range(0.25..0.7) * extent;
            stack.push((x, y, heading, params.width_mm, length));
        }
        let step = 0.15;
        while let Some((mut x, mut y, mut heading, width, length)) = stack.pop() {
            let mut curvature = 0.0;
            let steps = (length / step) as usize;
            for s in 0..steps {
                curvature = 0.9 * curvature + rng.gen_range(-0.12..0.12);
                heading += curvature * step;
                x += heading.cos() * step;
                y += heading.sin() * step;
                let w = width * (1.0 - 0.5 * s as f64 / steps as f64);
                self.darken_disc(x, y, 0.5 * w, params.contrast as f32);
                if width > 0.25 && rng.gen_bool(0.006) {
                    let branch = heading + rng.gen_range(0.5..1.1) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                    stack.push((x, y, branch, 0.55 * w, 0.4 * (steps - s) as f64 * step));
                }
            }
        }
    }

    fn darken_disc(&mut self, cx: f64, cy: f64, radius: f64, contrast: f32) {
        let r_tex = radius / self.texel;
        let ci = cx / self.texel;
        let cj = cy / self.texel;
        let reach = r_tex + 1.5;
        let i0 = (ci - reach).floor().max(0.0) as usize;
        let j0 = (cj - reach).floor().max(0.0) as usize;
        let i1 = ((ci + reach).ceil() as usize).min(self.size.saturating_sub(1));
        let j1 = ((cj + reach).ceil() as usize).min(self.size.saturating_sub(1));
        if ci + reach < 0.0 || cj + reach < 0.0 {
            return;
        }
        for j in j0..=j1 {
            for i in i0..=i1 {
                let d = ((i as f64 - ci).powi(2) + (j as f64 - cj).powi(2)).sqrt();
                // smooth profile: 1 on the centreline, 0 past the edge
                let t = ((d - r_tex) / 1.5 + 0.5).clamp(0.0, 1.0);
                let depth = contrast * (1.0 - (d / (r_tex + 1.0)).min(1.0).powi(2) as f32 * 0.4) * (1.0 - t as f32);
                let idx = j * self.size + i;
                let target = 45.0 + (self.data[idx] - 45.0) * (1.0 - depth);
                if target < self.data[idx] {
                    self.data[idx] = target;
                }
            }
        }
    }

    /// Bilinear sample at surface-local `(x, y)` mm; `None` outside the textured square.
    #[inline]
    fn sample(&self, x: f64, y: f64) -> Option<f32> {
        let fx = (x + self.half_extent) / self.texel;
        let fy = (y + self.half_extent) / self.texel;
        if !(fx >= 0.0 && fy >= 0.0) {
            return None;
        }
        let i = fx as usize;
        let j = fy as usize;
        if i + 1 >= self.size || j + 1 >= self.size {
            return None;
        }
        let ax = (fx - i as f64) as f32;
        let ay = (fy - j as f64) as f32;
        let row = j * self.size;
        let p00 = self.data[row + i];
        let p10 = self.data[row + i + 1];
        let p01 = self.data[row + self.size + i];
        let p11 = self.data[row + self.size + i + 1];
        let top = p00 + ax * (p10 - p00);
        let bot = p01 + ax * (p11 - p01);
        Some(top + ay * (bot - top))
    }
}

fn hash2(ix: i64, iy: i64, salt: u64) -> f32 {
    let mut h = (ix as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (iy as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ salt;
    h ^= h >> 31;
    h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h ^= h >> 29;
    h = h.wrapping_mul(0x94D0_49BB_1331_11EB);
    h ^= h >> 32;
    (h >> 40) as f32 / (1u64 << 24) as f32
}

fn value_noise(x: f64, y: f64, salt: u64) -> f32 {
    let x0 = x.floor();
    let y0 = y.floor();
    let tx = (x - x0) as f32;
    let ty = (y - y0) as f32;
    let sx = tx * tx * (3.0 - 2.0 * tx);
    let sy = ty * ty * (3.0 - 2.0 * ty);
    let (ix, iy) = (x0 as i64, y0 as i64);
    let a = hash2(ix, iy, salt);
    let b = hash2(ix + 1, iy, salt);
    let c = hash2(ix, iy + 1, salt);
    let d = hash2(ix + 1, iy + 1, salt);
    let top = a + sx * (b - a);
    let bot = c + sx * (d - c);
    top + sy * (bot - top)
}

/// A surface with its generated texture, ready to render.
#[derive(Debug, Clone)]
pub struct Scene {
    pub surface: Surface,
    texture: Texture,
}

/// Fraction of pixels that must see the textured surface.
pub const MIN_COVERAGE: f64 = 0.5;

impl Scene {
    pub fn new(surface: Surface) -> Self {
        let texture = Texture::generate(&surface);
        Self { surface, texture }
    }

    /// Renders the surface from `camera_pose` (camera-to-world; camera looks along +z).
    pub fn render(
        &self,
        intrinsics: &CameraIntrinsics,
        camera_pose: &Isometry3<f64>,
        timestamp: f64,
        frame_id: u64,
    ) -> Result<Frame, SceneError> {
        let (w, h) = (intrinsics.width, intrinsics.height);
        let mut pixels = vec![0u8; w * h];
        // camera -> surface-local
        let rel = self.surface.pose.inverse() * camera_pose;
        let m = rel.rotation.to_rotation_matrix().into_inner() * intrinsics.k_inv();
        let t = rel.translation.vector;
        let mut hits = 0usize;

        let noise_salt = self.surface.texture_seed ^ frame_id.wrapping_mul(0x2545_F491_4F6C_DD1D);
        let sigma = self.surface.noise_sigma as f32;

        for v in 0..h {
            let vf = v as f64;
            for u in 0..w {
                let uf = u as f64;
                let d = Vector3::new(
                    m[(0, 0)] * uf + m[(0, 1)] * vf + m[(0, 2)],
                    m[(1, 0)] * uf + m[(1, 1)] * vf + m[(1, 2)],
                    m[(2, 0)] * uf + m[(2, 1)] * vf + m[(2, 2)],
                );
                let hit = match self.surface.kind {
                    SurfaceKind::Plane => {
                        if d.z.abs() < 1e-15 {
                            None
                        } else {
                            let lambda = -t.z / d.z;
                            (lambda > 0.0).then(|| (t.x + lambda * d.x, t.y + lambda * d.y))
                        }
                    }
                    SurfaceKind::SphereCap { radius } => sphere_hit(&t, &d, radius),
                };
                let Some((x, y)) = hit else { continue };
                let Some(mut value) = self.texture.sample(x, y) else { continue };
                hits += 1;
                if sigma > 0.0 {
                    let n = hash2(u as i64, v as i64, noise_salt)
                        + hash2(u as i64, v as i64, noise_salt ^ 0xA5A5)
                        + hash2(u as i64, v as i64, noise_salt ^ 0x5A5A)
                        - 1.5;
                    value += n * 2.0 * sigma;
                }
                pixels[v * w + u] = value.round().clamp(0.0, 255.0) as u8;
            }
        }

        let coverage = hits as f64 / (w * h) as f64;
        if coverage < MIN_COVERAGE {
            return Err(SceneError::LowCoverage {
                coverage: coverage * 100.0,
            });
        }

        let mut frame = Frame {
            width: w,
            height: h,
            pixels,
            timestamp,
            frame_id,
        };
        for hl in &self.surface.highlights {
            paint_highlight(&mut frame, hl);
        }
        Ok(frame)
    }

    /// World point seen at `pixel`, if the ray hits the surface plane in front of the camera.
    pub fn back_project(
        &self,
        intrinsics: &CameraIntrinsics,
        camera_pose: &Isometry3<f64>,
        pixel: &Vector2<f64>,
    ) -> Option<Point3<f64>> {
        let dir_c = intrinsics.k_inv() * Vector3::new(pixel.x, pixel.y, 1.0);
        let origin = camera_pose.translation.vector;
        let dir = camera_pose.rotation * dir_c;
        let rel = self.surface.pose.inverse();
        let o_l = rel * Point3::from(origin);
        let d_l = rel.rotation * dir;
        match self.surface.kind {
            SurfaceKind::Plane => {
                if d_l.z.abs() < 1e-15 {
                    return None;
                }
                let lambda = -o_l.z / d_l.z;
                (lambda > 0.0).then(|| Point3::from(origin + dir * lambda))
            }
            SurfaceKind::SphereCap { radius } => {
                let (x, y) = sphere_hit(&o_l.coords, &d_l, radius)?;
                // recover the 3D point from the cap's local x/y
                let z = radius - (radius * radius - x * x - y * y).max(0.0).sqrt();
                Some(self.surface.pose * Point3::new(x, y, z))
            }
        }
    }
}

/// Local `(x, y)` of the cap intersection for a ray `o + λd`, `λ > 0`.
fn sphere_hit(o: &Vector3<f64>, d: &Vector3<f64>, radius: f64) -> Option<(f64, f64)> {
    let c = Vector3::new(0.0, 0.0, radius);
    let oc = o - c;
    let a = d.norm_squared();
    let b = 2.0 * oc.dot(d);
    let cc = oc.norm_squared() - radius * radius;
    let disc = b * b - 4.0 * a * cc;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    for lambda in [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)] {
        if lambda > 0.0 {
            let p = o + d * lambda;
            if p.z < radius {
                return Some((p.x, p.y));
            }
        }
    }
    None
}

fn paint_highlight(frame: &mut Frame, hl: &Highlight) {
    let r = hl.radius;
    let x0 = (hl.center[0] - r).floor().max(0.0) as usize;
    let y0 = (hl.center[1] - r).floor().max(0.0) as usize;
    let x1 = ((hl.center[0] + r).ceil() as usize).min(frame.width.saturating_sub(1));
    let y1 = ((hl.center[1] + r).ceil() as usize).min(frame.height.saturating_sub(1));
    for y in y0..=y1 {
        for x in x0..=x1 {
            let dx = x as f64 - hl.center[0];
            let dy = y as f64 - hl.center[1];
            if dx * dx + dy * dy <= r * r {
                frame.set(x, y, 255);
            }
        }
    }
}

/// Homography mapping pixels of a view from `pose_a` onto the view from `pose_b`
/// for a planar surface, normalized so `H[2][2] = 1`.
pub fn ground_truth_homography(
    intrinsics: &CameraIntrinsics,
    pose_a: &Isometry3<f64>,
    pose_b: &Isometry3<f64>,
    surface: &Surface,
) -> Result<Matrix3<f64>, SceneError> {
    if surface.kind != SurfaceKind::Plane {
        return Err(SceneError::NonPlanarSurface);
    }
    let a_from_w = pose_a.inverse();
    let n_a = a_from_w.rotation * surface.normal();
    let p0_a = a_from_w * Point3::from(surface.pose.translation.vector);
    let d_a = n_a.dot(&p0_a.coords);
    if d_a.abs() < 1e-12 {
        return Err(SceneError::DegenerateView);
    }
    let b_from_a = pose_b.inverse() * pose_a;
    let r = b_from_a.rotation.to_rotation_matrix().into_inner();
    let t = b_from_a.translation.vector;
    let euclidean = r + t * n_a.transpose() / d_a;
    let h = intrinsics.k() * euclidean * intrinsics.k_inv();
    normalize_homography(&h).ok_or(SceneError::DegenerateView)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::apply_homography;
    use approx::assert_relative_eq;
    use nalgebra::{Translation3, UnitQuaternion};

    /// Camera at the origin looking down +z; plane at z = `depth` facing the camera.
    fn fronto(depth: f64) -> (Scene, Isometry3<f64>) {
        let pose = Isometry3::from_parts(
            Translation3::new(0.0, 0.0, depth),
            UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI),
        );
        let mut s = Surface::plane(pose, 11);
        s.half_extent_mm = 25.0;
        (Scene::new(s), Isometry3::identity())
    }

    #[test]
    fn axial_point_projects_to_principal_point() {
        let k = CameraIntrinsics::default();
        let (scene, cam) = fronto(10.0);
        let p = project(&k, &cam, &Point3::from(scene.surface.pose.translation.vector)).unwrap();
        assert_relative_eq!(p, Vector2::new(k.cx, k.cy), epsilon = 1e-12);
    }

    #[test]
    fn corner_markers_follow_pinhole_oracle() {
        let k = CameraIntrinsics::default();
        let cam = Isometry3::from_parts(
            Translation3::new(1.0, -2.0, 0.5),
            UnitQuaternion::from_euler_angles(0.1, -0.05, 0.2),
        );
        let markers = [(3.0, 3.0, 12.0), (-3.0, 3.0, 12.0), (-3.0, -3.0, 12.0), (3.0, -3.0, 12.0)];
        for (x, y, z) in markers {
            // hand-rolled λ[p;1] = K[R t][p_w;1]
            let r = cam.rotation.inverse().to_rotation_matrix().into_inner();
            let t = -(r * cam.translation.vector);
            let pc = r * Vector3::new(x, y, z) + t;
            let q = k.k() * pc;
            let expected = Vector2::new(q.x / q.z, q.y / q.z);
            let got = project(&k, &cam, &Point3::new(x, y, z)).unwrap();
            assert_relative_eq!(got, expected, epsilon = 1e-9);
        }
    }

    #[test]
    fn render_is_deterministic() {
        let k = CameraIntrinsics::default();
        let (scene, cam) = fronto(10.0);
        let a = scene.render(&k, &cam, 0.0, 1).unwrap();
        let b = scene.render(&k, &cam, 0.0, 1).unwrap();
        assert_eq!(a.pixels, b.pixels);
        let spread = a.pixels.iter().map(|&p| p as i32).max().unwrap()
            - a.pixels.iter().map(|&p| p as i32).min().unwrap();
        assert!(spread > 100, "texture too flat: {spread}");
    }

    #[test]
    fn looking_away_is_low_coverage() {
        let k = CameraIntrinsics::default();
        let (scene, _) = fronto(10.0);
        let away = Isometry3::rotation(Vector3::y() * std::f64::consts::PI);
        assert!(matches!(
            scene.render(&k, &away, 0.0, 0),
            Err(SceneError::LowCoverage { .. })
        ));
    }

    #[test]
    fn homography_identity_for_equal_poses() {
        let k = CameraIntrinsics::default();
        let (scene, cam) = fronto(20.0);
        let h = ground_truth_homography(&k, &cam, &cam, &scene.surface).unwrap();
        assert_relative_eq!(h, Matrix3::identity(), epsilon = 1e-12);
    }

    #[test]
    fn lateral_translation_similar_triangles() {
        let k = CameraIntrinsics::default();
        let (scene, cam) = fronto(20.0);
        let moved = Isometry3::translation(1.0, 0.0, 0.0);
        let h = ground_truth_homography(&k, &cam, &moved, &scene.surface).unwrap();
        // similar triangles: shift = f · Δx / depth, and content moves opposite to the camera
        let expected = 300.0 * 1.0 / 20.0;
        assert_relative_eq!(expected, 15.0);
        let p = apply_homography(&h, &Vector2::new(100.0, 50.0)).unwrap();
        assert_relative_eq!(p, Vector2::new(100.0 - expected, 50.0), epsilon = 1e-9);
    }

    #[test]
    fn homographies_compose() {
        let k = CameraIntrinsics::default();
        let (scene, a) = fronto(15.0);
        let b = Isometry3::from_parts(Translation3::new(0.5, 0.2, 1.0), UnitQuaternion::from_euler_angles(0.05, 0.1, -0.02));
        let c = Isometry3::from_parts(Translation3::new(-0.4, 0.8, 0.3), UnitQuaternion::from_euler_angles(-0.1, 0.02, 0.3));
        let hab = ground_truth_homography(&k, &a, &b, &scene.surface).unwrap();
        let hbc = ground_truth_homography(&k, &b, &c, &scene.surface).unwrap();
        let hac = ground_truth_homography(&k, &a, &c, &scene.surface).unwrap();
        let composed = normalize_homography(&(hbc * hab)).unwrap();
        assert_relative_eq!(composed, hac, epsilon = 1e-9);
    }

    #[test]
    fn sphere_cap_is_non_planar() {
        let k = CameraIntrinsics::default();
        let (mut scene, cam) = fronto(15.0);
        scene.surface.kind = SurfaceKind::SphereCap { radius: 40.0 };
        assert_eq!(
            ground_truth_homography(&k, &cam, &cam, &scene.surface),
            Err(SceneError::NonPlanarSurface)
        );
    }

    #[test]
    fn sphere_cap_renders() {
        let k = CameraIntrinsics::default();
        let (mut surface_scene, cam) = fronto(15.0);
        surface_scene.surface.kind = SurfaceKind::SphereCap { radius: 60.0 };
        let scene = Scene::new(surface_scene.surface.clone());
        let frame = scene.render(&k, &cam, 0.0, 0).unwrap();
        assert_eq!(frame.pixels.len(), 400 * 400);
        let p = scene.back_project(&k, &cam, &k.center()).unwrap();
        assert_relative_eq!(p.z, 15.0, epsilon = 1e-9);
    }

    #[test]
    fn project_back_project_round_trip() {
        let k = CameraIntrinsics::default();
        let (scene, _) = fronto(12.0);
        let cam = Isometry3::from_parts(Translation3::new(0.3, -0.2, 0.0), UnitQuaternion::from_euler_angles(0.2, -0.1, 0.4));
        for &(u, v) in &[(0.0, 0.0), (199.5, 199.5), (37.25, 311.0), (399.0, 12.5)] {
            let px = Vector2::new(u, v);
            let pw = scene.back_project(&k, &cam, &px).unwrap();
            let back = project(&k, &cam, &pw).unwrap();
            assert!((back - px).norm() < 1e-6);
        }
    }

    #[test]
    fn highlights_saturate() {
        let k = CameraIntrinsics::default();
        let (mut scene, cam) = fronto(10.0);
        scene.surface.highlights.push(Highlight { center: [100.0, 100.0], radius: 10.0 });
        let f = scene.render(&k, &cam, 0.0, 0).unwrap();
        assert_eq!(f.get(100, 100), 255);
        assert_eq!(f.get(105, 104), 255);
    }
}
