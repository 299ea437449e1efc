//! Inter-frame homography estimation and image-center motion.
//!
//! Sparse corners are tracked with pyramidal Lucas-Kanade and fitted with a
//! seeded RANSAC homography. Frames with too few corners fall back to a dense
//! translational alignment. Pixels outside the mask band never contribute.

mod fit;
mod klt;
mod pyramid;

pub use pyramid::PreparedFrame;

use crate::geometry::{apply_homography, normalize_homography, translation_homography};
use crate::scene::Frame;
use klt::KltParams;
use nalgebra::{Matrix2, Matrix3, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VisionError {
    #[error("frame dimensions differ: {a:?} vs {b:?}")]
    DimensionMismatch { a: (usize, usize), b: (usize, usize) },
    #[error("homography estimate is not valid")]
    InvalidHomography,
    #[error("target projects to ({x:.1}, {y:.1}), outside the frame")]
    TargetLost { x: f64, y: f64 },
    #[error("mask thresholds must satisfy low < high (got {low}, {high})")]
    InvalidMask { low: u8, high: u8 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskParams {
    pub low_thresh: u8,
    pub high_thresh: u8,
}

impl MaskParams {
    pub fn new(low_thresh: u8, high_thresh: u8) -> Result<Self, VisionError> {
        if low_thresh >= high_thresh {
            return Err(VisionError::InvalidMask {
                low: low_thresh,
                high: high_thresh,
            });
        }
        Ok(Self {
            low_thresh,
            high_thresh,
        })
    }
}

impl Default for MaskParams {
    fn default() -> Self {
        Self {
            low_thresh: 15,
            high_thresh: 235,
        }
    }
}

/// `true` where the pixel lies in `[low, high]`.
pub fn mask_frame(frame: &Frame, params: &MaskParams) -> Vec<bool> {
    frame
        .pixels
        .iter()
        .map(|&p| p >= params.low_thresh && p <= params.high_thresh)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateMethod {
    Sparse,
    Dense,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomographyEstimate {
    /// Maps pixels of the previous frame onto the current one; `H[2][2] = 1`.
    pub h: Matrix3<f64>,
    pub inlier_fraction: f64,
    pub inliers: usize,
    pub valid: bool,
    pub method: EstimateMethod,
}

impl HomographyEstimate {
    pub fn invalid() -> Self {
        Self {
            h: Matrix3::identity(),
            inlier_fraction: 0.0,
            inliers: 0,
            valid: false,
            method: EstimateMethod::None,
        }
    }

    /// A trusted estimate, e.g. from ground truth.
    pub fn exact(h: Matrix3<f64>) -> Self {
        match normalize_homography(&h) {
            Some(h) => Self {
                h,
                inlier_fraction: 1.0,
                inliers: usize::MAX,
                valid: true,
                method: EstimateMethod::None,
            },
            None => Self::invalid(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VisionConfig {
    pub mask: MaskParams,
    pub min_inlier_fraction: f64,
    pub min_inliers: usize,
    /// Below this many corners the dense fallback is used.
    pub min_features: usize,
    /// RANSAC transfer-error threshold, px.
    pub inlier_threshold: f64,
    pub pyramid_levels: usize,
    pub ransac_iters: usize,
    pub seed: u64,
}

impl Default for VisionConfig {
    fn default() -> Self {
        Self {
            mask: MaskParams::default(),
            min_inlier_fraction: 0.4,
            min_inliers: 12,
            min_features: 20,
            inlier_threshold: 1.0,
            pyramid_levels: 4,
            ransac_iters: 400,
            seed: 0x5eed,
        }
    }
}

/// Builds the pyramid and mask once so a frame can be reused across pairs.
pub fn prepare(frame: &Frame, config: &VisionConfig) -> PreparedFrame {
    let mask = mask_frame(frame, &config.mask);
    PreparedFrame::new(frame, &mask, config.pyramid_levels.max(1))
}

pub fn estimate_homography(prev: &Frame, cur: &Frame, mask_params: &MaskParams) -> Result<HomographyEstimate, VisionError> {
    let config = VisionConfig {
        mask: *mask_params,
        ..VisionConfig::default()
    };
    check_dims(prev.width, prev.height, cur.width, cur.height)?;
    let a = prepare(prev, &config);
    let b = prepare(cur, &config);
    estimate_prepared(&a, &b, &config, None)
}

fn check_dims(aw: usize, ah: usize, bw: usize, bh: usize) -> Result<(), VisionError> {
    if (aw, ah) != (bw, bh) {
        return Err(VisionError::DimensionMismatch {
            a: (aw, ah),
            b: (bw, bh),
        });
    }
    Ok(())
}

/// Local affine part of `h` at `p`.
fn local_jacobian(h: &Matrix3<f64>, p: &Vector2<f64>) -> Option<Matrix2<f64>> {
    let w = h[(2, 0)] * p.x + h[(2, 1)] * p.y + h[(2, 2)];
    if w.abs() < 1e-12 {
        return None;
    }
    let q = apply_homography(h, p)?;
    Some(Matrix2::new(
        (h[(0, 0)] - q.x * h[(2, 0)]) / w,
        (h[(0, 1)] - q.x * h[(2, 1)]) / w,
        (h[(1, 0)] - q.y * h[(2, 0)]) / w,
        (h[(1, 1)] - q.y * h[(2, 1)]) / w,
    ))
}

/// Estimates `H` between prepared frames. `prior` seeds the tracker for
/// large displacements (e.g. a homography composed through a mosaic).
pub fn estimate_prepared(
    prev: &PreparedFrame,
    cur: &PreparedFrame,
    config: &VisionConfig,
    prior: Option<&Matrix3<f64>>,
) -> Result<HomographyEstimate, VisionError> {
    check_dims(prev.width, prev.height, cur.width, cur.height)?;
    let params = KltParams::default();
    let features = klt::detect(prev, &params);
    if features.len() < config.min_features {
        return Ok(dense(prev, cur, config, prior));
    }
    let mut src = Vec::with_capacity(features.len());
    let mut dst = Vec::with_capacity(features.len());
    for p in &features {
        let (guess, a) = match prior {
            Some(h) => match (apply_homography(h, p), local_jacobian(h, p)) {
                (Some(g), Some(a)) => (g, a),
                _ => continue,
            },
            None => (*p, Matrix2::identity()),
        };
        if let Some(q) = klt::track(prev, cur, *p, guess, a, &params) {
            src.push(*p);
            dst.push(q);
        }
    }
    let Some(fit) = fit::ransac(&src, &dst, config.inlier_threshold, config.ransac_iters, config.seed) else {
        return Ok(HomographyEstimate {
            method: EstimateMethod::Sparse,
            ..HomographyEstimate::invalid()
        });
    };
    let inliers = fit.inliers.iter().filter(|&&b| b).count();
    let inlier_fraction = inliers as f64 / features.len() as f64;
    let Some(h) = normalize_homography(&fit.h) else {
        return Ok(HomographyEstimate::invalid());
    };
    let valid = inlier_fraction >= config.min_inlier_fraction && inliers >= config.min_inliers;
    Ok(HomographyEstimate {
        h,
        inlier_fraction,
        inliers,
        valid,
        method: EstimateMethod::Sparse,
    })
}

fn dense(prev: &PreparedFrame, cur: &PreparedFrame, config: &VisionConfig, prior: Option<&Matrix3<f64>>) -> HomographyEstimate {
    let center = Vector2::new((prev.width as f64 - 1.0) / 2.0, (prev.height as f64 - 1.0) / 2.0);
    let guess = prior
        .and_then(|h| apply_homography(h, &center))
        .map(|q| q - center)
        .unwrap_or_else(Vector2::zeros);
    match klt::dense_translation(prev, cur, guess, 10.0) {
        Some((d, agree, textured)) if textured > 0 => {
            let inlier_fraction = agree as f64 / textured as f64;
            HomographyEstimate {
                h: translation_homography(d.x, d.y),
                inlier_fraction,
                inliers: agree,
                valid: inlier_fraction >= config.min_inlier_fraction && agree >= config.min_inliers.max(200),
                method: EstimateMethod::Dense,
            }
        }
        _ => HomographyEstimate {
            method: EstimateMethod::Dense,
            ..HomographyEstimate::invalid()
        },
    }
}

/// Image-center motion `Δŝ = center − H(center)`.
pub fn center_motion(est: &HomographyEstimate, center: &Vector2<f64>) -> Result<Vector2<f64>, VisionError> {
    if !est.valid {
        return Err(VisionError::InvalidHomography);
    }
    let q = apply_homography(&est.h, center).ok_or(VisionError::InvalidHomography)?;
    Ok(center - q)
}

/// Projects a tracked point from the previous frame into the current one.
pub fn track_target(
    prev_target: &Vector2<f64>,
    est: &HomographyEstimate,
    width: usize,
    height: usize,
    margin: f64,
) -> Result<Vector2<f64>, VisionError> {
    if !est.valid {
        return Err(VisionError::InvalidHomography);
    }
    let q = apply_homography(&est.h, prev_target).ok_or(VisionError::InvalidHomography)?;
    let inside = q.x >= -margin && q.y >= -margin && q.x <= width as f64 - 1.0 + margin && q.y <= height as f64 - 1.0 + margin;
    if inside {
        Ok(q)
    } else {
        Err(VisionError::TargetLost { x: q.x, y: q.y })
    }
}
