//! Small planar-geometry helpers shared by the vision and mosaic layers.

use nalgebra::{Matrix3, Vector2, Vector3};

/// Applies a homography to a pixel. Returns `None` when the point maps to infinity.
pub fn apply_homography(h: &Matrix3<f64>, p: &Vector2<f64>) -> Option<Vector2<f64>> {
    let q = h * Vector3::new(p.x, p.y, 1.0);
    if q.z.abs() < 1e-12 || !q.z.is_finite() {
        return None;
    }
    let out = Vector2::new(q.x / q.z, q.y / q.z);
    if out.x.is_finite() && out.y.is_finite() {
        Some(out)
    } else {
        None
    }
}

/// Scales a homography so that `H[2][2] = 1`; returns `None` if that entry vanishes.
pub fn normalize_homography(h: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let s = h[(2, 2)];
    if s.abs() < 1e-12 || !s.is_finite() {
        return None;
    }
    let out = h / s;
    if out.iter().all(|v| v.is_finite()) {
        Some(out)
    } else {
        None
    }
}

pub fn translation_homography(tx: f64, ty: f64) -> Matrix3<f64> {
    Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0)
}

/// Angle of `v` in radians, measured in image coordinates (x right, y down).
pub fn heading(v: &Vector2<f64>) -> f64 {
    v.y.atan2(v.x)
}

/// Absolute difference between two headings, folded into `[0, π]`.
pub fn angle_between(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    let cross = a.x * b.y - a.y * b.x;
    let dot = a.dot(b);
    cross.atan2(dot).abs()
}

/// Wraps an angle into `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let t = std::f64::consts::TAU;
    let mut x = a % t;
    if x <= -std::f64::consts::PI {
        x += t;
    } else if x > std::f64::consts::PI {
        x -= t;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn translation_moves_point() {
        let h = translation_homography(3.0, -4.0);
        let p = apply_homography(&h, &Vector2::new(10.0, 10.0)).unwrap();
        assert_relative_eq!(p, Vector2::new(13.0, 6.0));
    }

    #[test]
    fn point_at_infinity() {
        let h = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, -5.0);
        assert!(apply_homography(&h, &Vector2::new(5.0, 1.0)).is_none());
    }

    #[test]
    fn angles() {
        assert_relative_eq!(angle_between(&Vector2::x(), &Vector2::y()), std::f64::consts::FRAC_PI_2);
        assert_relative_eq!(wrap_angle(3.0 * std::f64::consts::PI), std::f64::consts::PI);
        assert_relative_eq!(wrap_angle(-0.5), -0.5);
    }
}
