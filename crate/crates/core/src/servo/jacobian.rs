use super::ServoError;
use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

/// Image Jacobian mapping field-rotation increments (rad) to image-center
/// motion (px).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JacobianEstimate {
    pub j: Matrix2<f64>,
    /// Simulation time of the last accepted update, seconds.
    pub last_update: f64,
    /// Broyden update rate in `[0, 1]`.
    pub beta: f64,
    /// Minimum measured speed (px/s) for an update to be accepted.
    pub motion_gate: f64,
    pub updates: u64,
}

impl JacobianEstimate {
    pub fn new(j: Matrix2<f64>) -> Self {
        Self {
            j,
            last_update: 0.0,
            beta: 0.3,
            motion_gate: 8.0,
            updates: 0,
        }
    }

    pub fn condition_number(&self) -> f64 {
        condition_number(&self.j)
    }
}

pub fn condition_number(j: &Matrix2<f64>) -> f64 {
    if !j.iter().all(|v| v.is_finite()) {
        return f64::INFINITY;
    }
    let sv = j.singular_values();
    let (hi, lo) = (sv.max(), sv.min());
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// `Ĵ = [s₁ s₂]·[q₁ q₂]⁻¹` from two probe increments and their mean responses.
pub fn jacobian_from_responses(
    q1: Vector2<f64>,
    q2: Vector2<f64>,
    s1: Vector2<f64>,
    s2: Vector2<f64>,
) -> Result<Matrix2<f64>, ServoError> {
    let s = Matrix2::from_columns(&[s1, s2]);
    let q = Matrix2::from_columns(&[q1, q2]);
    let scale = s1.norm() * s2.norm();
    if !(scale > 0.0) || s.determinant().abs() <= 1e-9 * scale || !s.iter().all(|v| v.is_finite()) {
        return Err(ServoError::SingularCalibration);
    }
    let q_inv = q.try_inverse().ok_or(ServoError::SingularCalibration)?;
    Ok(s * q_inv)
}

/// Identifies `Ĵ` from `samples` pairs of orthogonal probes of size `dq_mag`.
/// `probe` applies a field increment and returns the measured `Δŝ`.
pub fn calibrate_jacobian<F>(mut probe: F, dq_mag: f64, samples: usize) -> Result<JacobianEstimate, ServoError>
where
    F: FnMut(Vector2<f64>) -> Result<Vector2<f64>, ServoError>,
{
    let n = samples.max(1);
    let q1 = Vector2::new(dq_mag, 0.0);
    let q2 = Vector2::new(0.0, dq_mag);
    let mut s1 = Vector2::zeros();
    let mut s2 = Vector2::zeros();
    for _ in 0..n {
        s1 += probe(q1)?;
        s2 += probe(q2)?;
    }
    let j = jacobian_from_responses(q1, q2, s1 / n as f64, s2 / n as f64)?;
    Ok(JacobianEstimate::new(j))
}

/// Gated rank-one Broyden correction.
///
/// The step is normalized by `ΔqᵀΔq` so that with `β = 1` the updated
/// estimate reproduces the observed pair exactly.
pub fn broyden_update(est: &JacobianEstimate, dq: Vector2<f64>, ds_hat: Vector2<f64>, dt: f64) -> JacobianEstimate {
    let mut out = *est;
    let norm2 = dq.norm_squared();
    if !(norm2 > 0.0) || !(dt > 0.0) || ds_hat.norm() / dt < est.motion_gate {
        return out;
    }
    let residual = ds_hat - est.j * dq;
    out.j = est.j + est.beta * residual * dq.transpose() / norm2;
    out.updates += 1;
    out
}

/// Field increment producing image motion `joystick_dir · speed · dt`.
pub fn manual_step(
    est: &JacobianEstimate,
    joystick_dir: Vector2<f64>,
    speed: f64,
    dt: f64,
    condition_limit: f64,
) -> Result<Vector2<f64>, ServoError> {
    if joystick_dir == Vector2::zeros() || speed == 0.0 {
        return Ok(Vector2::zeros());
    }
    solve(est, joystick_dir * speed * dt, condition_limit)
}

/// `Ĵ⁻¹ · ds`, refusing ill-conditioned estimates.
pub fn solve(est: &JacobianEstimate, ds: Vector2<f64>, condition_limit: f64) -> Result<Vector2<f64>, ServoError> {
    let condition = est.condition_number();
    if !(condition <= condition_limit) {
        return Err(ServoError::IllConditionedJacobian { condition });
    }
    let inv = est
        .j
        .try_inverse()
        .ok_or(ServoError::IllConditionedJacobian { condition })?;
    Ok(inv * ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr_free::normal;

    mod rand_distr_free {
        use rand::Rng;
        /// Box-Muller draw with standard deviation `sigma`.
        pub fn normal<R: Rng>(rng: &mut R, sigma: f64) -> f64 {
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen();
            sigma * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        }
    }

    fn truth() -> Matrix2<f64> {
        Matrix2::new(120.0, 0.0, 0.0, 80.0)
    }

    #[test]
    fn noiseless_linear_plant() {
        let j = truth();
        let est = calibrate_jacobian(|dq| Ok(j * dq), 2f64.to_radians(), 1).unwrap();
        assert_relative_eq!(est.j, j, epsilon = 1e-9);
    }

    #[test]
    fn noisy_probes_average_out() {
        let j = truth();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let dq = 2f64.to_radians();
        let est = calibrate_jacobian(
            |q| {
                let n = Vector2::new(normal(&mut rng, 0.3), normal(&mut rng, 0.3));
                Ok(j * q + n)
            },
            dq,
            20,
        )
        .unwrap();
        // off-diagonal truth is zero: compare against the diagonal scale
        for (a, b) in est.j.iter().zip(j.iter()) {
            let tol = 0.05 * j[(0, 0)].min(j[(1, 1)]);
            assert!((a - b).abs() <= tol.max(0.05 * b.abs()), "{}", est.j);
        }
    }

    #[test]
    fn zero_response_is_singular() {
        let r = calibrate_jacobian(|_| Ok(Vector2::zeros()), 0.03, 3);
        assert_eq!(r, Err(ServoError::SingularCalibration));
        let r = calibrate_jacobian(|q| Ok(Vector2::new(q.x + q.y, q.x + q.y)), 0.03, 3);
        assert_eq!(r, Err(ServoError::SingularCalibration));
    }

    #[test]
    fn zero_residual_and_zero_beta_leave_j() {
        let est = JacobianEstimate::new(Matrix2::new(100.0, 5.0, -3.0, 90.0));
        let dq = Vector2::new(0.01, -0.02);
        let same = broyden_update(&est, dq, est.j * dq, 0.04);
        assert_eq!(same.j, est.j);
        let frozen = JacobianEstimate { beta: 0.0, ..est };
        assert_eq!(broyden_update(&frozen, dq, Vector2::new(9.0, 9.0), 0.04).j, est.j);
    }

    #[test]
    fn gate_blocks_slow_motion() {
        let est = JacobianEstimate::new(Matrix2::identity() * 100.0);
        let dq = Vector2::new(0.001, 0.0);
        // 0.2 px over 40 ms is 5 px/s, below the 8 px/s gate
        let out = broyden_update(&est, dq, Vector2::new(0.2, 0.0), 0.04);
        assert_eq!(out, est);
        assert_eq!(broyden_update(&est, Vector2::zeros(), Vector2::new(5.0, 0.0), 0.04), est);
    }

    proptest! {
        #[test]
        fn secant_property(
            j in proptest::array::uniform4(-300.0f64..300.0),
            dq in proptest::array::uniform2(-0.05f64..0.05),
            ds in proptest::array::uniform2(-20.0f64..20.0),
        ) {
            let dq = Vector2::new(dq[0], dq[1]);
            let ds = Vector2::new(ds[0], ds[1]);
            prop_assume!(dq.norm() > 1e-4 && ds.norm() > 1.0);
            let est = JacobianEstimate { beta: 1.0, ..JacobianEstimate::new(Matrix2::new(j[0], j[1], j[2], j[3])) };
            let out = broyden_update(&est, dq, ds, 0.04);
            let err = (out.j * dq - ds).norm();
            prop_assert!(err <= 1e-12 * (1.0 + ds.norm() + (est.j * dq).norm()), "err {}", err);
        }
    }

    #[test]
    fn manual_step_examples() {
        let id = JacobianEstimate::new(Matrix2::identity());
        let dq = manual_step(&id, Vector2::new(1.0, 0.0), 75.0, 0.04, 1e4).unwrap();
        assert_relative_eq!(dq, Vector2::new(3.0, 0.0), epsilon = 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let c: f64 = rng.gen_range(0.1..500.0);
            let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let dir = Vector2::new(a.cos(), a.sin());
            let est = JacobianEstimate::new(Matrix2::identity() * c);
            let dq = manual_step(&est, dir, 40.0, 0.04, 1e4).unwrap();
            let motion = est.j * dq;
            assert_relative_eq!(motion, dir * 1.6, epsilon = 1e-9);
        }
        let bad = JacobianEstimate::new(Matrix2::new(1.0, 0.0, 0.0, 1e-5));
        assert!(matches!(
            manual_step(&bad, Vector2::new(1.0, 0.0), 40.0, 0.04, 1e4),
            Err(ServoError::IllConditionedJacobian { .. })
        ));
        assert_eq!(manual_step(&bad, Vector2::zeros(), 40.0, 0.04, 1e4).unwrap(), Vector2::zeros());
    }
}
