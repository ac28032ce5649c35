//! Continuous-time extended Kalman filtering with a correntropy-weighted
//! measurement gain. The weight `nu` in (0, 1] scales the gain by a Gaussian
//! kernel of the weighted innovation, so large (shot-contaminated) residuals
//! are rejected instead of absorbed; with `nu` forced to 1 the filter is an
//! ordinary EKF. The covariance follows the standard Riccati flow, which
//! does not carry `nu`.

use nalgebra::{Matrix2, Matrix5, Matrix5x2, Vector2, Vector5};
use thiserror::Error;

use crate::model::{
    dynamics, measurement, measurement_jacobian, state_jacobian, ControlInput, ModelParams,
    SeiarState,
};

#[derive(Debug, Error, PartialEq)]
pub enum FilterError {
    #[error("measurement covariance R is singular")]
    SingularR,
    #[error("initial covariance must be symmetric positive semidefinite")]
    BadCovariance,
    #[error("filter state became non-finite")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterMode {
    Emckf,
    Ekf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub z_hat: SeiarState,
    pub p: Matrix5<f64>,
    /// Correntropy weight applied during the latest step.
    pub nu: f64,
    /// Kernel bandwidth.
    pub sigma: f64,
}

/// Step-invariant filter configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    pub mode: FilterMode,
    pub sigma: f64,
    /// Process-noise covariance diagonal used in the Riccati term.
    pub q_diag: Vector5<f64>,
    /// Measurement-noise covariance diagonal.
    pub r_diag: Vector2<f64>,
    /// Evaluate the kernel on the squared quadratic form instead of treating
    /// the form as the squared norm (the literal reading of the published
    /// kernel notation).
    pub kernel_literal: bool,
}

impl FilterConfig {
    pub fn r_inverse(&self) -> Result<Matrix2<f64>, FilterError> {
        if self.r_diag.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(FilterError::SingularR);
        }
        Ok(Matrix2::from_diagonal(&Vector2::new(1.0 / self.r_diag[0], 1.0 / self.r_diag[1])))
    }
}

/// Gaussian kernel of the weighted residual norm: exp(-x^2 / (2 sigma^2)).
pub fn kernel(residual_weighted_norm: f64, sigma: f64) -> f64 {
    debug_assert!(sigma > 0.0);
    let x = residual_weighted_norm;
    (-(x * x) / (2.0 * sigma * sigma)).exp()
}

/// Correntropy weight of an innovation: the kernel evaluated on the
/// R-weighted residual, with the quadratic form x' R^-1 x playing the role
/// of the squared norm.
pub fn correntropy_weight(
    y: &Vector2<f64>,
    z_hat: &SeiarState,
    cfg: &FilterConfig,
) -> Result<f64, FilterError> {
    let r_inv = cfg.r_inverse()?;
    let residual = y - measurement_jacobian() * z_hat.to_vector();
    let quad = (residual.transpose() * r_inv * residual)[(0, 0)];
    let nu = if cfg.kernel_literal {
        kernel(quad, cfg.sigma)
    } else {
        kernel(quad.max(0.0).sqrt(), cfg.sigma)
    };
    Ok(nu)
}

/// Filter gain K = P nu C' R^-1.
pub fn gain(p: &Matrix5<f64>, nu: f64, r_inv: &Matrix2<f64>) -> Matrix5x2<f64> {
    p * measurement_jacobian().transpose() * r_inv * nu
}

/// Build the initial filter state, validating the covariance.
pub fn initialize(z_hat0: SeiarState, p0: Matrix5<f64>) -> Result<FilterState, FilterError> {
    let scale = p0.norm().max(1.0);
    if (p0 - p0.transpose()).norm() > 1e-9 * scale {
        return Err(FilterError::BadCovariance);
    }
    let eigs = p0.symmetric_eigenvalues();
    if eigs.min() < -1e-9 * p0.trace().abs().max(1.0) {
        return Err(FilterError::BadCovariance);
    }
    Ok(FilterState { z_hat: z_hat0, p: p0, nu: 1.0, sigma: 1.0 })
}

/// Advance the coupled estimate/Riccati ODEs by one RK4 step with the
/// measurement and the correntropy weight held constant across the step.
pub fn filter_step(
    fs: &FilterState,
    y: &Vector2<f64>,
    u: &ControlInput,
    theta_hat: &ModelParams,
    cfg: &FilterConfig,
    dt: f64,
) -> Result<FilterState, FilterError> {
    let nu = match cfg.mode {
        FilterMode::Ekf => 1.0,
        FilterMode::Emckf => correntropy_weight(y, &fs.z_hat, cfg)?,
    };
    step_with_weight(fs, y, u, theta_hat, cfg, dt, nu)
}

/// Prediction-only step: the same integration with the gain zeroed. Used as
/// the reference when measuring measurement-induced estimate jumps.
pub fn predict_step(
    fs: &FilterState,
    y: &Vector2<f64>,
    u: &ControlInput,
    theta_hat: &ModelParams,
    cfg: &FilterConfig,
    dt: f64,
) -> Result<FilterState, FilterError> {
    step_with_weight(fs, y, u, theta_hat, cfg, dt, 0.0)
}

fn step_with_weight(
    fs: &FilterState,
    y: &Vector2<f64>,
    u: &ControlInput,
    theta_hat: &ModelParams,
    cfg: &FilterConfig,
    dt: f64,
    nu: f64,
) -> Result<FilterState, FilterError> {
    let r_inv = cfg.r_inverse()?;
    let q = Matrix5::from_diagonal(&cfg.q_diag);
    let c = measurement_jacobian();

    let rhs = |z: &Vector5<f64>, p: &Matrix5<f64>| {
        let state = SeiarState::from_vector(z);
        let a = state_jacobian(&state, u, theta_hat);
        let innovation = y - measurement(&state);
        let k = gain(p, nu, &r_inv);
        let dz = dynamics(&state, u, theta_hat) + k * innovation;
        let dp = a * p + p * a.transpose() + q - p * c.transpose() * r_inv * c * p;
        (dz, dp)
    };

    let z0 = fs.z_hat.to_vector();
    let p0 = fs.p;
    let (k1z, k1p) = rhs(&z0, &p0);
    let half = dt / 2.0;
    let (k2z, k2p) = rhs(&(z0 + k1z * half), &(p0 + k1p * half));
    let (k3z, k3p) = rhs(&(z0 + k2z * half), &(p0 + k2p * half));
    let (k4z, k4p) = rhs(&(z0 + k3z * dt), &(p0 + k3p * dt));
    let z_next = z0 + (k1z + k2z * 2.0 + k3z * 2.0 + k4z) * (dt / 6.0);
    let p_next = p0 + (k1p + k2p * 2.0 + k3p * 2.0 + k4p) * (dt / 6.0);

    if z_next.iter().any(|v| !v.is_finite()) || p_next.iter().any(|v| !v.is_finite()) {
        return Err(FilterError::NonFinite);
    }
    let p_sym = (p_next + p_next.transpose()) * 0.5;
    if cfg!(debug_assertions) {
        let min_eig = p_sym.symmetric_eigenvalues().min();
        debug_assert!(
            min_eig >= -1e-9 * p_sym.trace().abs().max(1.0),
            "covariance lost positive semidefiniteness: min eigenvalue {min_eig}"
        );
    }
    Ok(FilterState { z_hat: SeiarState::from_vector(&z_next), p: p_sym, nu, sigma: cfg.sigma })
}
