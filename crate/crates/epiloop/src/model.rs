//! SEIAR compartment dynamics, measurement map, Jacobians, and the
//! fixed-step RK4 integrator used by both the plant and the filter.

use nalgebra::{Matrix2x5, Matrix5, Vector2, Vector5};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("state became non-finite during integration")]
    NonFinite,
}

/// Compartment populations in absolute individuals: susceptible, exposed,
/// infected (symptomatic), asymptomatic, recovered.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeiarState {
    pub s: f64,
    pub e: f64,
    pub i: f64,
    pub a: f64,
    pub r: f64,
}

impl SeiarState {
    pub const ZERO: SeiarState = SeiarState { s: 0.0, e: 0.0, i: 0.0, a: 0.0, r: 0.0 };

    pub fn new(s: f64, e: f64, i: f64, a: f64, r: f64) -> Self {
        SeiarState { s, e, i, a, r }
    }

    pub fn from_vector(v: &Vector5<f64>) -> Self {
        SeiarState { s: v[0], e: v[1], i: v[2], a: v[3], r: v[4] }
    }

    pub fn to_vector(self) -> Vector5<f64> {
        Vector5::new(self.s, self.e, self.i, self.a, self.r)
    }

    /// Total population N.
    pub fn total(&self) -> f64 {
        self.s + self.e + self.i + self.a + self.r
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|x| x.is_finite())
    }
}

/// Epidemiological parameter vector. `beta` is the transmission rate; the
/// remaining eight are the published nominal values (see [`ModelParams::nominal`]).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Transmission rate, 1/(individuals * day).
    pub beta: f64,
    /// Infectivity reduction factor for the exposed.
    pub epsilon: f64,
    /// Contact reduction by isolation.
    pub q: f64,
    /// Infectivity reduction factor for the asymptomatic.
    pub delta: f64,
    /// Transition rate out of the exposed compartment, 1/day.
    pub kappa: f64,
    /// Fraction of exposed who develop symptoms.
    pub p: f64,
    /// Recovery rate for the infected, 1/day.
    pub alpha: f64,
    /// Recovery rate for the asymptomatic, 1/day.
    pub eta: f64,
    /// Survival fraction of recovering infected; `1 - zeta` of recovering
    /// infected die, which is the only source of population loss.
    pub zeta: f64,
}

impl ModelParams {
    /// Nominal parameter set with a caller-supplied transmission rate.
    pub fn nominal(beta: f64) -> Self {
        ModelParams {
            beta,
            epsilon: 0.0,
            q: 0.5,
            delta: 1.0,
            kappa: 0.526,
            p: 0.667,
            alpha: 0.244,
            eta: 0.244,
            zeta: 0.98,
        }
    }

    /// Uniformly scale every parameter by `factor`, clamping the fraction
    /// parameters back into [0, 1]. Used for the +-50 % mismatch scenarios.
    pub fn scaled(&self, factor: f64) -> Self {
        let frac = |x: f64| (x * factor).clamp(0.0, 1.0);
        ModelParams {
            beta: self.beta * factor,
            epsilon: frac(self.epsilon),
            q: frac(self.q),
            delta: frac(self.delta),
            kappa: self.kappa * factor,
            p: frac(self.p),
            alpha: self.alpha * factor,
            eta: self.eta * factor,
            zeta: frac(self.zeta),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let rates =
            [("beta", self.beta), ("kappa", self.kappa), ("alpha", self.alpha), ("eta", self.eta)];
        for (name, v) in rates {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("parameter {name} must be finite and >= 0, got {v}"));
            }
        }
        let fracs = [
            ("epsilon", self.epsilon),
            ("q", self.q),
            ("delta", self.delta),
            ("p", self.p),
            ("zeta", self.zeta),
        ];
        for (name, v) in fracs {
            if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
                return Err(format!("parameter {name} must lie in [0, 1], got {v}"));
            }
        }
        Ok(())
    }
}

/// Normalized vaccination (`u1`, applied to S) and antiviral treatment
/// (`u2`, applied to I) rates, each in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlInput {
    pub u1: f64,
    pub u2: f64,
}

impl ControlInput {
    pub const ZERO: ControlInput = ControlInput { u1: 0.0, u2: 0.0 };

    pub fn new(u1: f64, u2: f64) -> Self {
        ControlInput { u1, u2 }
    }

    pub fn clamped(self, lo: &Vector2<f64>, hi: &Vector2<f64>) -> Self {
        ControlInput { u1: self.u1.clamp(lo[0], hi[0]), u2: self.u2.clamp(lo[1], hi[1]) }
    }

    pub fn to_vector(self) -> Vector2<f64> {
        Vector2::new(self.u1, self.u2)
    }
}

/// Right-hand side of the SEIAR model, individuals/day. The component sum
/// equals `-alpha * (1 - zeta) * i` identically: deaths of recovering
/// infected are the only leak out of the total population.
pub fn dynamics(z: &SeiarState, u: &ControlInput, th: &ModelParams) -> Vector5<f64> {
    let force = th.beta * z.s * (th.epsilon * z.e + (1.0 - th.q) * z.i + th.delta * z.a);
    Vector5::new(
        -force - z.s * u.u1,
        force - th.kappa * z.e,
        th.p * th.kappa * z.e - th.alpha * z.i - u.u2 * z.i,
        (1.0 - th.p) * th.kappa * z.e - th.eta * z.a,
        th.alpha * th.zeta * z.i + z.s * u.u1 + z.i * u.u2 + th.eta * z.a,
    )
}

/// Closed-form Jacobian of [`dynamics`] with respect to the state.
pub fn state_jacobian(z: &SeiarState, u: &ControlInput, th: &ModelParams) -> Matrix5<f64> {
    let b = th.beta;
    let infectivity = th.epsilon * z.e + (1.0 - th.q) * z.i + th.delta * z.a;
    let mut m = Matrix5::zeros();
    // dS'/dz
    m[(0, 0)] = -b * infectivity - u.u1;
    m[(0, 1)] = -b * th.epsilon * z.s;
    m[(0, 2)] = -b * (1.0 - th.q) * z.s;
    m[(0, 3)] = -b * th.delta * z.s;
    // dE'/dz
    m[(1, 0)] = b * infectivity;
    m[(1, 1)] = b * th.epsilon * z.s - th.kappa;
    m[(1, 2)] = b * (1.0 - th.q) * z.s;
    m[(1, 3)] = b * th.delta * z.s;
    // dI'/dz
    m[(2, 1)] = th.p * th.kappa;
    m[(2, 2)] = -th.alpha - u.u2;
    // dA'/dz
    m[(3, 1)] = (1.0 - th.p) * th.kappa;
    m[(3, 3)] = -th.eta;
    // dR'/dz
    m[(4, 0)] = u.u1;
    m[(4, 2)] = th.alpha * th.zeta + u.u2;
    m[(4, 3)] = th.eta;
    m
}

/// Measurement map: only the exposed and infected counts are observable.
pub fn measurement(z: &SeiarState) -> Vector2<f64> {
    Vector2::new(z.e, z.i)
}

/// Constant measurement Jacobian (rows 2 and 3 selector).
pub fn measurement_jacobian() -> Matrix2x5<f64> {
    let mut c = Matrix2x5::zeros();
    c[(0, 1)] = 1.0;
    c[(1, 2)] = 1.0;
    c
}

/// One classical RK4 step of the SEIAR dynamics with an additive process
/// noise vector `w` held constant across the step. The result is clamped
/// componentwise to be nonnegative; the number of clamped components is
/// returned alongside the new state.
pub fn rk4_step(
    z: &SeiarState,
    u: &ControlInput,
    th: &ModelParams,
    w: &Vector5<f64>,
    dt: f64,
) -> Result<(SeiarState, u32), ModelError> {
    let zv = z.to_vector();
    let f = |v: &Vector5<f64>| dynamics(&SeiarState::from_vector(v), u, th) + w;
    let k1 = f(&zv);
    let k2 = f(&(zv + k1 * (dt / 2.0)));
    let k3 = f(&(zv + k2 * (dt / 2.0)));
    let k4 = f(&(zv + k3 * dt));
    let mut next = zv + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    if next.iter().any(|x| !x.is_finite()) {
        return Err(ModelError::NonFinite);
    }
    let mut clamped = 0;
    for x in next.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
            clamped += 1;
        }
    }
    Ok((SeiarState::from_vector(&next), clamped))
}

/// Basic reproduction number of the linearized infection subsystem (E, I, A)
/// at a fully susceptible population of size `n0`, by the next-generation
/// matrix. With one infection route (into E) the matrix has rank one and
/// R0 reduces to the closed form below.
pub fn basic_reproduction_number(th: &ModelParams, n0: f64) -> f64 {
    th.beta
        * n0
        * (th.epsilon / th.kappa
            + th.p * (1.0 - th.q) / th.alpha
            + (1.0 - th.p) * th.delta / th.eta)
}

/// Transmission rate that yields the requested `r0` at population `n0`,
/// inverting [`basic_reproduction_number`].
pub fn calibrated_beta(r0: f64, n0: f64, th: &ModelParams) -> f64 {
    let unit = ModelParams { beta: 1.0, ..*th };
    r0 / basic_reproduction_number(&unit, n0)
}
