//! Homography fitting: normalized DLT and a deterministic RANSAC wrapper.

use crate::geometry::normalize_homography;
use nalgebra::{DMatrix, Matrix3, SMatrix, SVector, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Similarity transform moving the centroid to the origin with mean distance √2.
fn normalizer(points: &[Vector2<f64>]) -> Matrix3<f64> {
    let n = points.len() as f64;
    let c = points.iter().fold(Vector2::zeros(), |a, p| a + p) / n;
    let mean = points.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
    let s = if mean > 1e-12 { std::f64::consts::SQRT_2 / mean } else { 1.0 };
    Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0)
}

fn transform(t: &Matrix3<f64>, p: &Vector2<f64>) -> Vector2<f64> {
    let q = t * Vector3::new(p.x, p.y, 1.0);
    Vector2::new(q.x / q.z, q.y / q.z)
}

/// Least-squares homography `dst ~ H src` over all correspondences.
pub(crate) fn dlt(src: &[Vector2<f64>], dst: &[Vector2<f64>]) -> Option<Matrix3<f64>> {
    if src.len() < 4 || src.len() != dst.len() {
        return None;
    }
    let ts = normalizer(src);
    let td = normalizer(dst);
    let mut ata = SMatrix::<f64, 9, 9>::zeros();
    for (s, d) in src.iter().zip(dst) {
        let s = transform(&ts, s);
        let d = transform(&td, d);
        let r1 = SVector::<f64, 9>::from_column_slice(&[-s.x, -s.y, -1.0, 0.0, 0.0, 0.0, d.x * s.x, d.x * s.y, d.x]);
        let r2 = SVector::<f64, 9>::from_column_slice(&[0.0, 0.0, 0.0, -s.x, -s.y, -1.0, d.y * s.x, d.y * s.y, d.y]);
        ata += r1 * r1.transpose() + r2 * r2.transpose();
    }
    let eig = ata.symmetric_eigen();
    let (idx, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    let h = eig.eigenvectors.column(idx);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let td_inv = td.try_inverse()?;
    normalize_homography(&(td_inv * hn * ts))
}

/// Exact homography through four correspondences (`h33 = 1`).
fn four_point(src: &[Vector2<f64>; 4], dst: &[Vector2<f64>; 4]) -> Option<Matrix3<f64>> {
    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut b = SVector::<f64, 8>::zeros();
    for i in 0..4 {
        let (x, y) = (src[i].x, src[i].y);
        let (u, v) = (dst[i].x, dst[i].y);
        let r = 2 * i;
        a.row_mut(r).copy_from_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]);
        a.row_mut(r + 1).copy_from_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]);
        b[r] = u;
        b[r + 1] = v;
    }
    let sol = a.lu().solve(&b)?;
    let h = Matrix3::new(sol[0], sol[1], sol[2], sol[3], sol[4], sol[5], sol[6], sol[7], 1.0);
    h.iter().all(|v| v.is_finite()).then_some(h)
}

pub(crate) fn transfer_error(h: &Matrix3<f64>, s: &Vector2<f64>, d: &Vector2<f64>) -> f64 {
    let q = h * Vector3::new(s.x, s.y, 1.0);
    if q.z.abs() < 1e-12 {
        return f64::INFINITY;
    }
    ((q.x / q.z - d.x).powi(2) + (q.y / q.z - d.y).powi(2)).sqrt()
}

pub(crate) struct RansacResult {
    pub h: Matrix3<f64>,
    pub inliers: Vec<bool>,
}

fn count_inliers(h: &Matrix3<f64>, src: &[Vector2<f64>], dst: &[Vector2<f64>], thresh: f64) -> Vec<bool> {
    src.iter().zip(dst).map(|(s, d)| transfer_error(h, s, d) < thresh).collect()
}

fn collinear(p: &[Vector2<f64>; 4]) -> bool {
    for i in 0..4 {
        for j in (i + 1)..4 {
            for k in (j + 1)..4 {
                let a = p[j] - p[i];
                let b = p[k] - p[i];
                if (a.x * b.y - a.y * b.x).abs() < 1.0 {
                    return true;
                }
            }
        }
    }
    false
}

/// Adaptive RANSAC over 4-point samples, then two rounds of inlier refits.
pub(crate) fn ransac(
    src: &[Vector2<f64>],
    dst: &[Vector2<f64>],
    thresh: f64,
    max_iters: usize,
    seed: u64,
) -> Option<RansacResult> {
    let n = src.len();
    if n < 4 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(usize, Matrix3<f64>)> = None;
    let mut needed = max_iters;
    let mut it = 0;
    while it < needed.min(max_iters) {
        it += 1;
        let mut idx = [0usize; 4];
        let mut k = 0;
        while k < 4 {
            let c = rng.gen_range(0..n);
            if !idx[..k].contains(&c) {
                idx[k] = c;
                k += 1;
            }
        }
        let s = idx.map(|i| src[i]);
        let d = idx.map(|i| dst[i]);
        if collinear(&s) || collinear(&d) {
            continue;
        }
        let Some(h) = four_point(&s, &d) else { continue };
        let count = src
            .iter()
            .zip(dst)
            .filter(|(a, b)| transfer_error(&h, a, b) < thresh)
            .count();
        if best.as_ref().map_or(true, |(c, _)| count > *c) {
            best = Some((count, h));
            let w = count as f64 / n as f64;
            let p_good = w.powi(4);
            needed = if p_good >= 1.0 - 1e-12 {
                20
            } else {
                ((1.0f64 - 0.999).ln() / (1.0 - p_good).ln()).ceil().max(20.0) as usize
            };
        }
    }
    let (_, mut h) = best?;
    let mut inliers = count_inliers(&h, src, dst, thresh);
    for _ in 0..2 {
        let (s, d): (Vec<_>, Vec<_>) = src
            .iter()
            .zip(dst)
            .zip(&inliers)
            .filter(|(_, &ok)| ok)
            .map(|((s, d), _)| (*s, *d))
            .unzip();
        let Some(refit) = dlt(&s, &d) else { break };
        let refit_inliers = count_inliers(&refit, src, dst, thresh);
        if refit_inliers.iter().filter(|&&b| b).count() < inliers.iter().filter(|&&b| b).count() {
            break;
        }
        h = refit;
        inliers = refit_inliers;
    }
    Some(RansacResult { h, inliers })
}

/// Sanity check: dynamic-size DLT agrees with the fixed-size path (used in tests).
#[allow(dead_code)]
pub(crate) fn dlt_svd(src: &[Vector2<f64>], dst: &[Vector2<f64>]) -> Option<Matrix3<f64>> {
    let mut a = DMatrix::<f64>::zeros(2 * src.len(), 9);
    for (i, (s, d)) in src.iter().zip(dst).enumerate() {
        a.row_mut(2 * i).copy_from_slice(&[-s.x, -s.y, -1.0, 0.0, 0.0, 0.0, d.x * s.x, d.x * s.y, d.x]);
        a.row_mut(2 * i + 1).copy_from_slice(&[0.0, 0.0, 0.0, -s.x, -s.y, -1.0, d.y * s.x, d.y * s.y, d.y]);
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t?;
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    let h = v_t.row(idx);
    normalize_homography(&Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::apply_homography;
    use approx::assert_relative_eq;

    fn truth() -> Matrix3<f64> {
        Matrix3::new(1.02, 0.03, 4.0, -0.02, 0.98, -3.0, 1e-5, -2e-5, 1.0)
    }

    fn grid() -> Vec<Vector2<f64>> {
        let mut v = Vec::new();
        for i in 0..7 {
            for j in 0..7 {
                v.push(Vector2::new(20.0 + 55.0 * i as f64, 15.0 + 60.0 * j as f64));
            }
        }
        v
    }

    #[test]
    fn dlt_recovers_exact_homography() {
        let h = truth();
        let src = grid();
        let dst: Vec<_> = src.iter().map(|p| apply_homography(&h, p).unwrap()).collect();
        assert_relative_eq!(dlt(&src, &dst).unwrap(), h, epsilon = 1e-9);
        assert_relative_eq!(dlt_svd(&src, &dst).unwrap(), h, epsilon = 1e-6);
    }

    #[test]
    fn ransac_rejects_outliers() {
        let h = truth();
        let src = grid();
        let mut dst: Vec<_> = src.iter().map(|p| apply_homography(&h, p).unwrap()).collect();
        for i in (0..dst.len()).step_by(4) {
            dst[i] += Vector2::new(17.0, -9.0);
        }
        let r = ransac(&src, &dst, 1.0, 500, 3).unwrap();
        assert_relative_eq!(r.h, h, epsilon = 1e-8);
        let outliers = r.inliers.iter().filter(|&&b| !b).count();
        assert_eq!(outliers, src.len().div_ceil(4));
    }
}
