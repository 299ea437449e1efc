use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "pattern", rename_all = "snake_case")]
pub enum ExplorePattern {
    /// Archimedean spiral with `pitch` px between turns, traversed at `speed` px/s.
    Spiral { pitch: f64, speed: f64, max_radius: f64 },
    /// Serpentine rows `pitch` px apart joined by half-circle turns, covering
    /// `(width − pitch) × height` px from the start point to the right and down
    /// within half a pitch.
    Raster { width: f64, height: f64, pitch: f64, speed: f64 },
}

impl ExplorePattern {
    /// Time after which the pattern is complete.
    pub fn duration(&self) -> f64 {
        match *self {
            ExplorePattern::Spiral { pitch, speed, max_radius } => {
                let b = pitch / TAU;
                spiral_length(b, max_radius / b) / speed
            }
            ExplorePattern::Raster { .. } => raster_length(self) / self.speed(),
        }
    }

    fn speed(&self) -> f64 {
        match *self {
            ExplorePattern::Spiral { speed, .. } | ExplorePattern::Raster { speed, .. } => speed,
        }
    }
}

/// Arc length of `r = bθ` from 0 to `theta`.
fn spiral_length(b: f64, theta: f64) -> f64 {
    0.5 * b * (theta * (1.0 + theta * theta).sqrt() + theta.asinh())
}

fn raster_rows(height: f64, pitch: f64) -> usize {
    (height / pitch).ceil().max(0.0) as usize + 1
}

fn raster_length(p: &ExplorePattern) -> f64 {
    let ExplorePattern::Raster { width, height, pitch, .. } = *p else { return 0.0 };
    let rows = raster_rows(height, pitch);
    let straight = (width - pitch).max(0.0);
    rows as f64 * straight + (rows - 1) as f64 * PI * pitch / 2.0
}

/// Desired center position at time `t`, as an offset from the start center.
pub fn explore_trajectory(pattern: &ExplorePattern, t: f64) -> Vector2<f64> {
    let t = t.max(0.0).min(pattern.duration());
    match *pattern {
        ExplorePattern::Spiral { pitch, speed, .. } => {
            let b = pitch / TAU;
            let s = speed * t;
            if s <= 0.0 || b <= 0.0 {
                return Vector2::zeros();
            }
            // invert the arc length by Newton steps from the asymptotic guess
            let mut th = (2.0 * s / b).sqrt();
            for _ in 0..30 {
                let f = spiral_length(b, th) - s;
                let df = b * (1.0 + th * th).sqrt();
                let next = (th - f / df).max(0.0);
                if (next - th).abs() < 1e-13 {
                    th = next;
                    break;
                }
                th = next;
            }
            let r = b * th;
            Vector2::new(r * th.cos(), r * th.sin())
        }
        ExplorePattern::Raster { width, height, pitch, speed } => {
            let r = pitch / 2.0;
            let straight = (width - pitch).max(0.0);
            let rows = raster_rows(height, pitch);
            let mut s = speed * t;
            for row in 0..rows {
                let y = row as f64 * pitch;
                let rightward = row % 2 == 0;
                if s <= straight || row + 1 == rows {
                    let x = if rightward { s.min(straight) } else { straight - s.min(straight) };
                    return Vector2::new(x, y);
                }
                s -= straight;
                let arc = PI * r;
                if s <= arc {
                    let phi = s / r;
                    let (cx, cy) = (if rightward { straight } else { 0.0 }, y + r);
                    let sign = if rightward { 1.0 } else { -1.0 };
                    return Vector2::new(cx + sign * r * phi.sin(), cy - r * phi.cos());
                }
                s -= arc;
            }
            Vector2::new(0.0, (rows - 1) as f64 * pitch)
        }
    }
}
