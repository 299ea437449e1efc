//! Robust statistics over recorded runs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("error never fell to 10% of its initial value")]
    NoConvergence,
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("reference path is empty")]
    EmptyReference,
    #[error("times and errors differ in length ({times} vs {errors})")]
    LengthMismatch { times: usize, errors: usize },
}

/// Median of `values`; the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Median absolute deviation from the median.
pub fn mad(values: &[f64]) -> Option<f64> {
    let m = median(values)?;
    let dev: Vec<f64> = values.iter().map(|v| (v - m).abs()).collect();
    median(&dev)
}

/// Smallest value whose cumulative weight (over all values not above it)
/// reaches half the total weight. `None` when empty or all weights are zero.
pub fn weighted_median(values: &[f64], weights: &[f64]) -> Option<f64> {
    let total: f64 = weights.iter().fold(0.0, |a, w| a + w);
    if values.is_empty() || values.len() != weights.len() || !(total > 0.0) {
        return None;
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut cum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let v = values[order[i]];
        // equal values enter the cumulative sum together
        while i < order.len() && values[order[i]] == v {
            cum += weights[order[i]];
            i += 1;
        }
        if 2.0 * cum >= total {
            return Some(v);
        }
    }
    values.iter().copied().max_by(f64::total_cmp)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct DirectionStats {
    /// Degrees.
    pub median: Option<f64>,
    pub mad: Option<f64>,
    pub peak: Option<f64>,
    pub count: usize,
}

fn angle_between(a: [f64; 2], b: [f64; 2]) -> Option<f64> {
    let na = a[0].hypot(a[1]);
    let nb = b[0].hypot(b[1]);
    if !(na > 0.0 && nb > 0.0) {
        return None;
    }
    let cross = a[0] * b[1] - a[1] * b[0];
    let dot = a[0] * b[0] + a[1] * b[1];
    Some(cross.atan2(dot).abs().to_degrees())
}

/// Per-tick angle (degrees) between the motion requested at tick `k − 1`
/// and the motion measured at tick `k`. Entries are `None` when either is
/// missing or the measured motion is shorter than `min_motion` px.
pub fn direction_errors(desired: &[Option<[f64; 2]>], realized: &[Option<[f64; 2]>], min_motion: f64) -> Vec<Option<f64>> {
    let n = desired.len().min(realized.len());
    (0..n)
        .map(|k| {
            let d = desired.get(k.checked_sub(1)?).copied().flatten()?;
            let r = realized[k]?;
            if r[0].hypot(r[1]) < min_motion {
                return None;
            }
            angle_between(d, r)
        })
        .collect()
}

pub fn direction_error_stats(errors: &[f64]) -> DirectionStats {
    DirectionStats {
        median: median(errors),
        mad: mad(errors),
        peak: errors.iter().copied().max_by(f64::total_cmp),
        count: errors.len(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    /// Seconds from command until the error first falls to 90% of its start.
    pub delay: f64,
    /// Seconds between the 90% and 10% crossings.
    pub fall_time: f64,
    /// Initial error, px.
    pub travel: f64,
}

/// Response timing of an error trace that starts at command issue.
/// Crossings are taken at sample instants.
pub fn step_response_stats(times: &[f64], errors: &[f64]) -> Result<StepStats, MetricsError> {
    if times.len() != errors.len() {
        return Err(MetricsError::LengthMismatch {
            times: times.len(),
            errors: errors.len(),
        });
    }
    let (Some(&t0), Some(&e0)) = (times.first(), errors.first()) else {
        return Err(MetricsError::TooFewSamples { needed: 1, got: 0 });
    };
    let crossing = |level: f64| times.iter().zip(errors).find(|(_, &e)| e <= level).map(|(&t, _)| t - t0);
    let t90 = crossing(0.9 * e0).ok_or(MetricsError::NoConvergence)?;
    let t10 = crossing(0.1 * e0).ok_or(MetricsError::NoConvergence)?;
    Ok(StepStats {
        delay: t90,
        fall_time: t10 - t90,
        travel: e0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStats {
    /// Weighted median of the pairwise mean path error, px.
    pub accuracy: f64,
    /// Weighted median absolute deviation from `accuracy`, px.
    pub precision: f64,
    /// All weights were zero and unweighted statistics were used.
    pub degenerate_weights: bool,
}

/// Distance from `p` to the nearest point of the polyline `path`.
pub fn distance_to_path(p: [f64; 2], path: &[[f64; 2]]) -> Option<f64> {
    let seg = |a: [f64; 2], b: [f64; 2]| {
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let l2 = dx * dx + dy * dy;
        let (px, py) = (p[0] - a[0], p[1] - a[1]);
        let t = if l2 > 0.0 { (px * dx + py * dy) / l2 } else { 0.0 };
        if t <= 0.0 {
            px.hypot(py)
        } else if t >= 1.0 {
            (p[0] - b[0]).hypot(p[1] - b[1])
        } else {
            // perpendicular distance, without rebuilding the foot point
            (px * dy - py * dx).abs() / l2.sqrt()
        }
    };
    match path {
        [] => None,
        [a] => Some(seg(*a, *a)),
        _ => path.windows(2).map(|w| seg(w[0], w[1])).min_by(f64::total_cmp),
    }
}

/// Path-following accuracy and precision of `samples` against `reference`.
///
/// Consecutive errors are paired: `ē = (e[n−1] + e[n]) / 2` weighted by
/// `|e[n] − e[n−1]|`.
pub fn trajectory_error_stats(samples: &[[f64; 2]], reference: &[[f64; 2]]) -> Result<TrajectoryStats, MetricsError> {
    if samples.len() < 2 {
        return Err(MetricsError::TooFewSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    let e: Vec<f64> = samples
        .iter()
        .map(|&p| distance_to_path(p, reference).ok_or(MetricsError::EmptyReference))
        .collect::<Result<_, _>>()?;
    let means: Vec<f64> = e.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let weights: Vec<f64> = e.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    Ok(match weighted_median(&means, &weights) {
        Some(accuracy) => {
            let dev: Vec<f64> = means.iter().map(|m| (m - accuracy).abs()).collect();
            TrajectoryStats {
                accuracy,
                precision: weighted_median(&dev, &weights).unwrap_or(0.0),
                degenerate_weights: false,
            }
        }
        None => TrajectoryStats {
            accuracy: median(&means).unwrap_or(0.0),
            precision: mad(&means).unwrap_or(0.0),
            degenerate_weights: true,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_and_mad() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(mad(&[1.0, 1.0, 2.0, 2.0, 4.0, 6.0, 9.0]), Some(1.0));
    }

    #[test]
    fn direction_identity_and_rotation() {
        let dirs: Vec<Option<[f64; 2]>> = (0..50).map(|k| Some([(k as f64 * 0.1).cos(), (k as f64 * 0.1).sin()])).collect();
        let same: Vec<Option<[f64; 2]>> = std::iter::once(None).chain(dirs[..49].iter().copied()).collect();
        let errs: Vec<f64> = direction_errors(&dirs, &same, 0.5).into_iter().flatten().collect();
        assert_eq!(errs.len(), 49);
        let s = direction_error_stats(&errs);
        assert!(s.median.unwrap() < 1e-9 && s.peak.unwrap() < 1e-9);

        let r = 10f64.to_radians();
        let rotated: Vec<Option<[f64; 2]>> = same
            .iter()
            .map(|d| d.map(|[x, y]| [x * r.cos() - y * r.sin(), x * r.sin() + y * r.cos()]))
            .collect();
        let errs: Vec<f64> = direction_errors(&dirs, &rotated, 0.5).into_iter().flatten().collect();
        let s = direction_error_stats(&errs);
        assert!((s.median.unwrap() - 10.0).abs() < 1e-9);
        assert!(s.mad.unwrap() < 1e-9);
    }

    #[test]
    fn direction_spike_sets_peak_only() {
        let mut errs = vec![2.0; 41];
        errs[20] = 30.0;
        let s = direction_error_stats(&errs);
        assert_eq!(s.peak, Some(30.0));
        assert_eq!(s.median, Some(2.0));
    }

    #[test]
    fn slow_motion_is_gated() {
        let d = vec![Some([1.0, 0.0]); 3];
        let r = vec![None, Some([0.1, 0.1]), Some([0.0, 2.0])];
        assert_eq!(direction_errors(&d, &r, 0.32), vec![None, None, Some(90.0)]);
    }

    #[test]
    fn step_examples() {
        let times: Vec<f64> = (0..=10).map(|k| k as f64 * 0.1).collect();
        let drop: Vec<f64> = times.iter().map(|&t| if t < 0.15 { 100.0 } else { 0.0 }).collect();
        let s = step_response_stats(&times, &drop).unwrap();
        assert!((s.delay - 0.2).abs() < 1e-12 && s.fall_time.abs() < 1e-12 && s.travel == 100.0);

        let times: Vec<f64> = (0..=100).map(|k| k as f64 / 100.0).collect();
        let ramp: Vec<f64> = (0..=100).map(|k| 100.0 - k as f64).collect();
        let s = step_response_stats(&times, &ramp).unwrap();
        assert!((s.fall_time - 0.8).abs() < 1e-12, "{s:?}");

        let plateau = vec![100.0, 70.0, 50.0, 50.0, 50.0];
        assert_eq!(step_response_stats(&times[..5], &plateau), Err(MetricsError::NoConvergence));
    }

    #[test]
    fn on_path_and_constant_offset() {
        let path = [[0.0, 0.0], [100.0, 0.0]];
        let on: Vec<[f64; 2]> = (0..10).map(|k| [k as f64 * 10.0, 0.0]).collect();
        let s = trajectory_error_stats(&on, &path).unwrap();
        assert_eq!((s.accuracy, s.precision), (0.0, 0.0));
        let off: Vec<[f64; 2]> = (0..10).map(|k| [k as f64 * 10.0, 5.0]).collect();
        let s = trajectory_error_stats(&off, &path).unwrap();
        assert_eq!((s.accuracy, s.precision, s.degenerate_weights), (5.0, 0.0, true));
        assert!(trajectory_error_stats(&off[..1], &path).is_err());
        assert_eq!(trajectory_error_stats(&off, &[]), Err(MetricsError::EmptyReference));
    }

    #[test]
    fn six_sample_trace_by_hand() {
        // errors 0, 4, 2, 2, 8, 5 against the x axis
        let path = [[-10.0, 0.0], [100.0, 0.0]];
        let samples = [[0.0, 0.0], [1.0, 4.0], [2.0, -2.0], [3.0, 2.0], [4.0, 8.0], [5.0, -5.0]];
        // means 2, 3, 2, 5, 6.5 with weights 4, 2, 0, 6, 3 (total 15)
        // sorted: 2 (w 4), 3 (w 2) -> 6, 5 (w 6) -> 12 >= 7.5
        let s = trajectory_error_stats(&samples, &path).unwrap();
        assert_eq!(s.accuracy, 5.0);
        // deviations 3, 2, 3, 0, 1.5: 0 (w 6), 1.5 (w 3) -> 9 >= 7.5
        assert_eq!(s.precision, 1.5);
        assert!(!s.degenerate_weights);
    }
}
