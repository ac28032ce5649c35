//! Robust-CLF control layer: Lyapunov terms for the susceptible/infected
//! tracking error, the closed-form pointwise min-norm law, and assembly of
//! the per-step QP that enforces the relaxed RCLF constraint together with
//! the control box.

use nalgebra::{DMatrix, DVector, Vector2};
use thiserror::Error;

use crate::model::{ModelParams, SeiarState};
use crate::qp::QpProblem;

#[derive(Debug, Error, PartialEq)]
pub enum ControllerError {
    #[error("min-norm direction degenerate: |phi1| = {phi1_norm} below floor for |e| = {e_norm}")]
    DegenerateDirection { phi1_norm: f64, e_norm: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryLaw {
    ConstantZero,
    ExpDecay,
}

/// Desired values for the susceptible and infected populations and their
/// exact time derivative, in closed form.
#[derive(Debug, Clone, PartialEq)]
pub struct DesiredTrajectory {
    pub law: TrajectoryLaw,
    /// Decay rate in 1/day, used by the exponential law.
    pub gamma: f64,
    /// Initial desired value, normally the initial estimates of (S, I).
    pub z0: Vector2<f64>,
}

impl DesiredTrajectory {
    pub fn constant_zero() -> Self {
        DesiredTrajectory { law: TrajectoryLaw::ConstantZero, gamma: 0.0, z0: Vector2::zeros() }
    }

    pub fn exp_decay(z0: Vector2<f64>, gamma: f64) -> Self {
        DesiredTrajectory { law: TrajectoryLaw::ExpDecay, gamma, z0 }
    }

    /// (z_d(t), z_d'(t)).
    pub fn at(&self, t: f64) -> (Vector2<f64>, Vector2<f64>) {
        match self.law {
            TrajectoryLaw::ConstantZero => (Vector2::zeros(), Vector2::zeros()),
            TrajectoryLaw::ExpDecay => {
                let zd = self.z0 * (-self.gamma * t).exp();
                (zd, -zd * self.gamma)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClfConfig {
    /// CLF decrease rate.
    pub lambda: f64,
    /// Robust margin gain.
    pub k_r: f64,
    /// Relaxation penalty weight.
    pub c: f64,
    pub u_min: Vector2<f64>,
    pub u_max: Vector2<f64>,
    /// Guard below which the control map is treated as singular.
    pub z_floor: f64,
}

impl ClfConfig {
    pub fn published(c: f64) -> Self {
        ClfConfig {
            lambda: 1.0,
            k_r: 2.0,
            c,
            u_min: Vector2::zeros(),
            u_max: Vector2::repeat(1.0),
            z_floor: 1e-6,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.lambda > 0.0) {
            return Err("lambda must be > 0".into());
        }
        if !(self.k_r >= 0.0) {
            return Err("k_r must be >= 0".into());
        }
        if !(self.c > 0.0) {
            return Err("c must be > 0".into());
        }
        if !(self.z_floor > 0.0) {
            return Err("z_floor must be > 0".into());
        }
        for i in 0..2 {
            if !(0.0 <= self.u_min[i] && self.u_min[i] <= self.u_max[i] && self.u_max[i] <= 1.0) {
                return Err(format!(
                    "control bounds must satisfy 0 <= u_min <= u_max <= 1 (channel {i})"
                ));
            }
        }
        Ok(())
    }
}

/// Everything the QP assembly and the min-norm law need for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct ClfTerms {
    pub v: f64,
    pub lf_v: f64,
    pub lg_v: Vector2<f64>,
    pub phi0: f64,
    pub phi0_rob: f64,
    pub phi1: Vector2<f64>,
    /// Tracking error of the estimated (S, I) against the desired value.
    pub e: Vector2<f64>,
    pub y_hat: Vector2<f64>,
    pub z_e_hat: Vector2<f64>,
    pub zd_dot: Vector2<f64>,
}

/// Drift of the (S, I) subsystem under the estimated state and parameters:
/// the component of the tracked dynamics not multiplied by the control.
pub fn y_hat(z_hat: &SeiarState, theta_hat: &ModelParams) -> Vector2<f64> {
    let th = theta_hat;
    let y1 = -th.beta * th.epsilon * z_hat.s * z_hat.e
        - th.beta * (1.0 - th.q) * z_hat.s * z_hat.i
        - th.beta * th.delta * z_hat.s * z_hat.a;
    let y2 = th.p * th.kappa * z_hat.e - th.alpha * z_hat.i;
    Vector2::new(y1, y2)
}

/// Evaluate the CLF quantities at the current estimate.
pub fn clf_terms(
    z_hat: &SeiarState,
    theta_hat: &ModelParams,
    traj: &DesiredTrajectory,
    t: f64,
    cfg: &ClfConfig,
) -> ClfTerms {
    let (zd, zd_dot) = traj.at(t);
    let z_e_hat = Vector2::new(z_hat.s, z_hat.i);
    let e = z_e_hat - zd;
    let v = 0.5 * e.dot(&e);
    let yh = y_hat(z_hat, theta_hat);
    let lf_v = e.dot(&(yh - zd_dot));
    // L_g V = -e' Z_e with Z_e = diag(s_hat, i_hat)
    let lg_v = Vector2::new(-e[0] * z_e_hat[0], -e[1] * z_e_hat[1]);
    let phi0 = lf_v + cfg.lambda * v;
    let phi0_rob = phi0 + cfg.k_r * e.norm();
    ClfTerms { v, lf_v, lg_v, phi0, phi0_rob, phi1: lg_v, e, y_hat: yh, z_e_hat, zd_dot }
}

/// Closed-form pointwise min-norm control satisfying the RCLF constraint.
pub fn pwmc(terms: &ClfTerms, z_floor: f64) -> Result<Vector2<f64>, ControllerError> {
    if terms.phi0_rob <= 0.0 {
        return Ok(Vector2::zeros());
    }
    let phi1_norm = terms.phi1.norm();
    let e_norm = terms.e.norm();
    if phi1_norm < z_floor * e_norm {
        return Err(ControllerError::DegenerateDirection { phi1_norm, e_norm });
    }
    Ok(-terms.phi1 * (terms.phi0_rob / (phi1_norm * phi1_norm)))
}

/// Assemble the per-step QP over x = (h, u1, u2): minimize the virtual-input
/// norm plus the penalized relaxation, subject to the relaxed RCLF row and
/// the control box.
pub fn assemble_qp(terms: &ClfTerms, cfg: &ClfConfig) -> QpProblem {
    let s = terms.z_e_hat[0].max(cfg.z_floor);
    let i = terms.z_e_hat[1].max(cfg.z_floor);
    let h =
        DMatrix::from_diagonal(&DVector::from_row_slice(&[2.0 * cfg.c, 2.0 * s * s, 2.0 * i * i]));
    let b = DVector::from_row_slice(&[
        0.0,
        2.0 * s * (terms.zd_dot[0] - terms.y_hat[0]),
        2.0 * i * (terms.zd_dot[1] - terms.y_hat[1]),
    ]);
    let rows = vec![
        // relaxed RCLF constraint: phi1' u - h <= -phi0_rob
        (DVector::from_row_slice(&[-1.0, terms.phi1[0], terms.phi1[1]]), -terms.phi0_rob),
        (DVector::from_row_slice(&[0.0, 1.0, 0.0]), cfg.u_max[0]),
        (DVector::from_row_slice(&[0.0, 0.0, 1.0]), cfg.u_max[1]),
        (DVector::from_row_slice(&[0.0, -1.0, 0.0]), -cfg.u_min[0]),
        (DVector::from_row_slice(&[0.0, 0.0, -1.0]), -cfg.u_min[1]),
    ];
    QpProblem::new(h, b, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn nominal_estimate() -> SeiarState {
        SeiarState::new(11000.0, 800.0, 1000.0, 700.0, 2500.0)
    }

    #[test]
    fn y_hat_vanishes_at_origin() {
        assert_eq!(y_hat(&SeiarState::ZERO, &ModelParams::nominal(4.1e-5)), Vector2::zeros());
    }

    #[test]
    fn y_hat_nominal_structure() {
        // With epsilon = 0, delta = 1, q = 0.5 only the I and A routes remain.
        let th = ModelParams::nominal(4.1e-5);
        let z = nominal_estimate();
        let y = y_hat(&z, &th);
        let expected1 = -th.beta * (0.5 * z.s * z.i + z.s * z.a);
        assert_relative_eq!(y[0], expected1, max_relative = 1e-12);
        // hand arithmetic: 0.667 * 0.526 * 800 - 0.244 * 1000
        assert_abs_diff_eq!(y[1], 36.6736, epsilon = 1e-10);
    }

    // Independent re-evaluation of the CLF formulas, written from the raw
    // definitions rather than through clf_terms.
    fn clf_oracle(
        z_hat: &SeiarState,
        th: &ModelParams,
        zd: Vector2<f64>,
        zd_dot: Vector2<f64>,
        lambda: f64,
        k_r: f64,
    ) -> (f64, f64, Vector2<f64>, f64, f64) {
        let e = Vector2::new(z_hat.s - zd[0], z_hat.i - zd[1]);
        let v = 0.5 * (e[0] * e[0] + e[1] * e[1]);
        let y = y_hat(z_hat, th);
        let lf = e[0] * (y[0] - zd_dot[0]) + e[1] * (y[1] - zd_dot[1]);
        let phi1 = Vector2::new(-e[0] * z_hat.s, -e[1] * z_hat.i);
        let phi0 = lf + lambda * v;
        let phi0_rob = phi0 + k_r * (e[0] * e[0] + e[1] * e[1]).sqrt();
        (v, lf, phi1, phi0, phi0_rob)
    }

    #[test]
    fn clf_terms_match_independent_oracle() {
        let th = ModelParams::nominal(4.1185e-5);
        let cfg = ClfConfig::published(10.0);
        let traj = DesiredTrajectory::constant_zero();
        let terms = clf_terms(&nominal_estimate(), &th, &traj, 0.0, &cfg);
        let (v, lf, phi1, phi0, phi0_rob) =
            clf_oracle(&nominal_estimate(), &th, Vector2::zeros(), Vector2::zeros(), 1.0, 2.0);
        assert_relative_eq!(terms.v, v, max_relative = 1e-12);
        assert_relative_eq!(terms.lf_v, lf, max_relative = 1e-12);
        assert_relative_eq!(terms.phi0, phi0, max_relative = 1e-12);
        assert_relative_eq!(terms.phi0_rob, phi0_rob, max_relative = 1e-12);
        assert!((terms.phi1 - phi1).norm() < 1e-9 * phi1.norm());
        // golden values frozen from the oracle:
        // V = (11000^2 + 1000^2) / 2, phi0 = e.(Y_hat) + V,
        // phi0_rob = phi0 + 2 sqrt(1.22e8)
        assert_relative_eq!(terms.v, 61_000_000.0, max_relative = 1e-12);
        assert_relative_eq!(terms.phi0_rob, 55_078_702.32208539, max_relative = 1e-9);
    }

    #[test]
    fn zero_error_zeroes_all_terms() {
        let th = ModelParams::nominal(4.1e-5);
        let cfg = ClfConfig::published(10.0);
        let z = nominal_estimate();
        let traj = DesiredTrajectory::exp_decay(Vector2::new(z.s, z.i), 0.3);
        let terms = clf_terms(&z, &th, &traj, 0.0, &cfg);
        assert_eq!(terms.e, Vector2::zeros());
        assert_eq!(terms.v, 0.0);
        assert_eq!(terms.phi1, Vector2::zeros());
        assert_eq!(terms.phi0, terms.lf_v);
        assert_eq!(terms.phi0_rob, terms.phi0);
    }

    #[test]
    fn pwmc_branches() {
        let mut terms = ClfTerms {
            v: 0.0,
            lf_v: 0.0,
            lg_v: Vector2::zeros(),
            phi0: 0.0,
            phi0_rob: -1.0,
            phi1: Vector2::new(1.0, 0.0),
            e: Vector2::new(1.0, 0.0),
            y_hat: Vector2::zeros(),
            z_e_hat: Vector2::new(1.0, 1.0),
            zd_dot: Vector2::zeros(),
        };
        assert_eq!(pwmc(&terms, 1e-6).unwrap(), Vector2::zeros());
        terms.phi0_rob = 1.0;
        assert_eq!(pwmc(&terms, 1e-6).unwrap(), Vector2::new(-1.0, 0.0));
        terms.phi1 = Vector2::zeros();
        assert!(matches!(pwmc(&terms, 1e-6), Err(ControllerError::DegenerateDirection { .. })));
    }

    #[test]
    fn pwmc_saturates_rclf_constraint_with_equality() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let th = ModelParams::nominal(4.1e-5);
        let cfg = ClfConfig::published(10.0);
        let traj = DesiredTrajectory::constant_zero();
        for _ in 0..200 {
            let z = SeiarState::new(
                rng.gen_range(1.0..16000.0),
                rng.gen_range(0.0..2000.0),
                rng.gen_range(1.0..2000.0),
                rng.gen_range(0.0..2000.0),
                rng.gen_range(0.0..16000.0),
            );
            let terms = clf_terms(&z, &th, &traj, 0.0, &cfg);
            if terms.phi0_rob <= 0.0 {
                continue;
            }
            let u = pwmc(&terms, cfg.z_floor).unwrap();
            let slack = terms.phi0_rob + terms.phi1.dot(&u);
            assert!(slack.abs() <= 1e-9 * terms.phi0_rob.abs().max(1.0), "slack {slack}");
        }
    }

    #[test]
    fn qp_hessian_follows_published_form() {
        let th = ModelParams::nominal(4.1e-5);
        let cfg = ClfConfig::published(10.0);
        let z = SeiarState::new(1.0, 0.0, 1.0, 0.0, 0.0);
        let terms = clf_terms(&z, &th, &DesiredTrajectory::constant_zero(), 0.0, &cfg);
        let p = assemble_qp(&terms, &cfg);
        assert_eq!(p.h[(0, 0)], 20.0);
        assert_eq!(p.h[(1, 1)], 2.0);
        assert_eq!(p.h[(2, 2)], 2.0);
        // box rows encode (u_max, u_max, -u_min, -u_min)
        assert_eq!(p.rows[1].1, 1.0);
        assert_eq!(p.rows[2].1, 1.0);
        assert_eq!(p.rows[3].1, 0.0);
        assert_eq!(p.rows[4].1, 0.0);
    }

    // The QP cost at x = (0, u) must equal |mu|^2 up to an x-independent
    // constant, with mu the virtual input Y_hat - zd_dot - Z_e u.
    #[test]
    fn qp_cost_equals_virtual_input_norm() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let th = ModelParams::nominal(4.1e-5);
        let cfg = ClfConfig::published(10.0);
        let traj = DesiredTrajectory::exp_decay(Vector2::new(11000.0, 1000.0), 0.3);
        for _ in 0..100 {
            let z = SeiarState::new(
                rng.gen_range(1.0..16000.0),
                rng.gen_range(0.0..2000.0),
                rng.gen_range(1.0..2000.0),
                rng.gen_range(0.0..2000.0),
                rng.gen_range(0.0..16000.0),
            );
            let t = rng.gen_range(0.0..40.0);
            let terms = clf_terms(&z, &th, &traj, t, &cfg);
            let p = assemble_qp(&terms, &cfg);
            let u = Vector2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let x = DVector::from_row_slice(&[0.0, u[0], u[1]]);
            let mu = terms.y_hat
                - terms.zd_dot
                - Vector2::new(terms.z_e_hat[0] * u[0], terms.z_e_hat[1] * u[1]);
            let constant = (terms.y_hat - terms.zd_dot).norm_squared();
            let lhs = p.objective(&x);
            let rhs = mu.norm_squared() - constant;
            assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs.abs()), "cost mismatch {lhs} vs {rhs}");
        }
    }

    proptest! {
        // phi0_rob never decreases in the robust gain.
        #[test]
        fn phi0_rob_monotone_in_robust_gain(
            s in 0.0..16000.0f64, i in 0.0..2000.0f64,
            k_lo in 0.0..5.0f64, dk in 0.0..5.0f64,
        ) {
            let th = ModelParams::nominal(4.1e-5);
            let z = SeiarState::new(s, 100.0, i, 50.0, 0.0);
            let traj = DesiredTrajectory::constant_zero();
            let lo = ClfConfig { k_r: k_lo, ..ClfConfig::published(10.0) };
            let hi = ClfConfig { k_r: k_lo + dk, ..ClfConfig::published(10.0) };
            let a = clf_terms(&z, &th, &traj, 0.0, &lo);
            let b = clf_terms(&z, &th, &traj, 0.0, &hi);
            prop_assert!(b.phi0_rob >= a.phi0_rob - 1e-9);
        }

        // Scaling e with proportional Y_hat leaves the min-norm branch
        // decision invariant (homogeneity of the branch condition).
        #[test]
        fn pwmc_branch_invariant_under_error_scaling(
            e1 in -100.0..100.0f64, e2 in -100.0..100.0f64,
            scale in 0.1..10.0f64,
        ) {
            prop_assume!(e1.abs() + e2.abs() > 1e-6);
            let z_e = Vector2::new(50.0, 40.0);
            let base_e = Vector2::new(e1, e2);
            let make = |s: f64| {
                let e = base_e * s;
                let y = base_e * (0.7 * s); // Y_hat proportional to e
                let v = 0.5 * e.norm_squared();
                let lf = e.dot(&y);
                let phi0 = lf + v;
                ClfTerms {
                    v, lf_v: lf,
                    lg_v: Vector2::new(-e[0]*z_e[0], -e[1]*z_e[1]),
                    phi0,
                    phi0_rob: phi0 + 2.0 * e.norm(),
                    phi1: Vector2::new(-e[0]*z_e[0], -e[1]*z_e[1]),
                    e,
                    y_hat: y,
                    z_e_hat: z_e,
                    zd_dot: Vector2::zeros(),
                }
            };
            let base = make(1.0);
            let scaled = make(scale);
            prop_assert_eq!(base.phi0_rob > 0.0, scaled.phi0_rob > 0.0);
            let base_zero = pwmc(&base, 1e-6).unwrap() == Vector2::zeros();
            let scaled_zero = pwmc(&scaled, 1e-6).unwrap() == Vector2::zeros();
            prop_assert_eq!(base_zero, scaled_zero);
            // V scales by s^2, |e| by s
            prop_assert!((scaled.v - base.v * scale * scale).abs() <= 1e-9 * scaled.v.max(1.0));
        }
    }
}
