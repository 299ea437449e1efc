use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Componentwise bound on the integral, px·s.
    pub integral_clamp: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        Self {
            kp: 0.4,
            ki: 0.05,
            kd: 0.1,
            integral_clamp: 50.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidState {
    pub gains: PidGains,
    pub integral: Vector2<f64>,
    pub prev_error: Option<Vector2<f64>>,
}

impl PidState {
    pub fn new(gains: PidGains) -> Self {
        Self {
            gains,
            integral: Vector2::zeros(),
            prev_error: None,
        }
    }

    pub fn reset(&mut self) {
        self.integral = Vector2::zeros();
        self.prev_error = None;
    }
}

/// Desired image displacement for this tick (px):
/// `Kp·e + Ki·∫e dt + Kd·(e − e_prev)`. The derivative term is omitted on
/// the first call after a reset.
pub fn pid_step(pid: &mut PidState, e: Vector2<f64>, dt: f64) -> Vector2<f64> {
    let g = pid.gains;
    let c = g.integral_clamp.abs();
    pid.integral = (pid.integral + e * dt).map(|v| v.clamp(-c, c));
    let derivative = pid.prev_error.map_or(Vector2::zeros(), |p| e - p);
    pid.prev_error = Some(e);
    e * g.kp + pid.integral * g.ki + derivative * g.kd
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_error_zero_output() {
        let mut pid = PidState::new(PidGains::default());
        assert_eq!(pid_step(&mut pid, Vector2::zeros(), 0.04), Vector2::zeros());
    }

    #[test]
    fn pure_proportional() {
        let mut pid = PidState::new(PidGains {
            kp: 0.5,
            ki: 0.0,
            kd: 0.0,
            integral_clamp: 50.0,
        });
        assert_relative_eq!(pid_step(&mut pid, Vector2::new(10.0, -4.0), 0.04), Vector2::new(5.0, -2.0));
    }

    #[test]
    fn integral_saturates() {
        let gains = PidGains {
            kp: 0.0,
            ki: 0.2,
            kd: 0.0,
            integral_clamp: 50.0,
        };
        let mut pid = PidState::new(gains);
        let mut out = Vector2::zeros();
        for _ in 0..10_000 {
            out = pid_step(&mut pid, Vector2::new(30.0, -30.0), 0.04);
            assert!(pid.integral.x.abs() <= 50.0 && pid.integral.y.abs() <= 50.0);
        }
        assert_relative_eq!(pid.integral, Vector2::new(50.0, -50.0));
        assert_relative_eq!(out, Vector2::new(10.0, -10.0));
    }

    #[test]
    fn derivative_uses_previous_error() {
        let mut pid = PidState::new(PidGains {
            kp: 0.0,
            ki: 0.0,
            kd: 1.0,
            integral_clamp: 50.0,
        });
        assert_eq!(pid_step(&mut pid, Vector2::new(4.0, 0.0), 0.04), Vector2::zeros());
        assert_relative_eq!(pid_step(&mut pid, Vector2::new(1.0, 2.0), 0.04), Vector2::new(-3.0, 2.0));
    }
}
