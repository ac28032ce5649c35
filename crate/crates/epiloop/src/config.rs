//! Scenario presets and the plain-text configuration format.
//!
//! Config files are flat `key = value` lines with `#` comments. Vector-valued
//! keys take comma-separated floats. Unknown keys, duplicate keys, and
//! malformed values are reported with their line number; untrusted input
//! never panics the parser.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix5, Vector2, Vector5};
use thiserror::Error;

use crate::controller::{ClfConfig, DesiredTrajectory, TrajectoryLaw};
use crate::filter::FilterMode;
use crate::model::{ModelParams, SeiarState};
use crate::noise::NoiseConfig;
use crate::sim::ScenarioConfig;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{0}")]
    Invalid(String),
}

fn parse_err(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError::Parse { line, message: message.into() }
}

/// Built-in scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Matched plant/filter parameters, EMCKF, shot-contaminated measurements.
    Nominal,
    /// Filter and controller use parameters scaled by +50 %.
    PerturbPlus50,
    /// Filter and controller use parameters scaled by -50 %.
    PerturbMinus50,
    /// Nominal scenario estimated by the plain EKF.
    EkfBaseline,
    /// Deterministic run: negligible noise, no shots, exact initial estimate.
    NoiseFree,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::Nominal,
        Preset::PerturbPlus50,
        Preset::PerturbMinus50,
        Preset::EkfBaseline,
        Preset::NoiseFree,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Nominal => "nominal",
            Preset::PerturbPlus50 => "perturb_plus50",
            Preset::PerturbMinus50 => "perturb_minus50",
            Preset::EkfBaseline => "ekf_baseline",
            Preset::NoiseFree => "noise_free",
        }
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown preset '{s}' (expected one of nominal, perturb_plus50, perturb_minus50, ekf_baseline, noise_free)"))
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Default reference decay rate, 1/day.
pub const DEFAULT_GAMMA: f64 = 0.3;

/// Scenario for a preset at the given seed and transmission rate.
///
/// The default reference drives the estimated (S, I) pair from its initial
/// value to zero exponentially at [`DEFAULT_GAMMA`]; the noise-free preset
/// instead regulates straight to zero so its initial error is nonzero.
pub fn preset_config(preset: Preset, seed: u64, beta: f64) -> ScenarioConfig {
    let plant = ModelParams::nominal(beta);
    let horizon = 40.0;
    let mut cfg = ScenarioConfig {
        horizon,
        dt: 0.01,
        plant_params: plant,
        filter_params: plant,
        z0: SeiarState::new(15000.0, 200.0, 500.0, 300.0, 0.0),
        z_hat0: SeiarState::new(11000.0, 800.0, 1000.0, 700.0, 2500.0),
        p0: Matrix5::identity(),
        noise: NoiseConfig {
            q_diag: Vector5::repeat(1.0),
            r_diag: Vector2::repeat(0.01),
            shot_count: 20,
            shot_magnitude: 200.0,
            seed,
            horizon,
            continuous_scaling: false,
        },
        filter_mode: FilterMode::Emckf,
        sigma: 0.01,
        kernel_literal: false,
        clf: ClfConfig::published(10.0),
        traj: DesiredTrajectory::exp_decay(Vector2::new(11000.0, 1000.0), DEFAULT_GAMMA),
        seed,
        record_stride: 10,
        n0: 16000.0,
    };
    match preset {
        Preset::Nominal => {}
        Preset::PerturbPlus50 => cfg.filter_params = plant.scaled(1.5),
        Preset::PerturbMinus50 => cfg.filter_params = plant.scaled(0.5),
        Preset::EkfBaseline => cfg.filter_mode = FilterMode::Ekf,
        Preset::NoiseFree => {
            cfg.z_hat0 = cfg.z0;
            cfg.p0 = Matrix5::zeros();
            cfg.noise.q_diag = Vector5::repeat(1e-18);
            cfg.noise.r_diag = Vector2::repeat(1e-18);
            cfg.noise.shot_count = 0;
            cfg.noise.shot_magnitude = 0.0;
            // regulate to zero so the initial tracking error is nonzero
            cfg.traj = DesiredTrajectory::constant_zero();
        }
    }
    cfg
}

fn parse_f64(line: usize, key: &str, raw: &str) -> Result<f64, ConfigError> {
    raw.parse::<f64>()
        .map_err(|_| parse_err(line, format!("key '{key}': expected a number, got '{raw}'")))
        .and_then(|v| {
            if v.is_finite() {
                Ok(v)
            } else {
                Err(parse_err(line, format!("key '{key}': value must be finite")))
            }
        })
}

fn parse_u64(line: usize, key: &str, raw: &str) -> Result<u64, ConfigError> {
    raw.parse::<u64>().map_err(|_| {
        parse_err(line, format!("key '{key}': expected a nonnegative integer, got '{raw}'"))
    })
}

fn parse_bool(line: usize, key: &str, raw: &str) -> Result<bool, ConfigError> {
    match raw {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(parse_err(line, format!("key '{key}': expected true or false, got '{raw}'"))),
    }
}

fn parse_vec(line: usize, key: &str, raw: &str, len: usize) -> Result<Vec<f64>, ConfigError> {
    let parts: Vec<&str> = raw.split(',').map(str::trim).collect();
    if parts.len() != len {
        return Err(parse_err(
            line,
            format!("key '{key}': expected {len} comma-separated values, got {}", parts.len()),
        ));
    }
    parts.iter().map(|p| parse_f64(line, key, p)).collect()
}

fn vec5(v: &[f64]) -> Vector5<f64> {
    Vector5::from_row_slice(v)
}

fn vec2(v: &[f64]) -> Vector2<f64> {
    Vector2::from_row_slice(v)
}

/// Parse a configuration file body into a scenario.
///
/// Every key is optional except `beta`; unspecified keys take the nominal
/// preset values. `theta_hat_scale` derives the filter/controller parameter
/// guess from the plant parameters after any explicit overrides.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let mut cfg = preset_config(Preset::Nominal, 0, f64::NAN);
    let mut seen = HashSet::new();
    let mut beta: Option<f64> = None;
    let mut theta_hat_scale = 1.0;
    let mut traj_law: Option<TrajectoryLaw> = None;
    let mut traj_z0: Option<Vector2<f64>> = None;
    let mut gamma = DEFAULT_GAMMA;

    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw_line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) = body
            .split_once('=')
            .ok_or_else(|| parse_err(line, format!("expected 'key = value', got '{body}'")))?;
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() {
            return Err(parse_err(line, "empty key"));
        }
        if value.is_empty() {
            return Err(parse_err(line, format!("key '{key}': empty value")));
        }
        if !seen.insert(key.to_string()) {
            return Err(parse_err(line, format!("duplicate key '{key}'")));
        }

        match key {
            "horizon" => {
                cfg.horizon = parse_f64(line, key, value)?;
                cfg.noise.horizon = cfg.horizon;
            }
            "dt" => cfg.dt = parse_f64(line, key, value)?,
            "seed" => {
                cfg.seed = parse_u64(line, key, value)?;
                cfg.noise.seed = cfg.seed;
            }
            "record_stride" => {
                cfg.record_stride = parse_u64(line, key, value)? as usize;
            }
            "n0" => cfg.n0 = parse_f64(line, key, value)?,
            "beta" => beta = Some(parse_f64(line, key, value)?),
            "epsilon" => cfg.plant_params.epsilon = parse_f64(line, key, value)?,
            "q" => cfg.plant_params.q = parse_f64(line, key, value)?,
            "delta" => cfg.plant_params.delta = parse_f64(line, key, value)?,
            "kappa" => cfg.plant_params.kappa = parse_f64(line, key, value)?,
            "p" => cfg.plant_params.p = parse_f64(line, key, value)?,
            "alpha" => cfg.plant_params.alpha = parse_f64(line, key, value)?,
            "eta" => cfg.plant_params.eta = parse_f64(line, key, value)?,
            "zeta" => cfg.plant_params.zeta = parse_f64(line, key, value)?,
            "theta_hat_scale" => theta_hat_scale = parse_f64(line, key, value)?,
            "z0" => cfg.z0 = SeiarState::from_vector(&vec5(&parse_vec(line, key, value, 5)?)),
            "z_hat0" => {
                cfg.z_hat0 = SeiarState::from_vector(&vec5(&parse_vec(line, key, value, 5)?))
            }
            "p0_diag" => cfg.p0 = Matrix5::from_diagonal(&vec5(&parse_vec(line, key, value, 5)?)),
            "q_diag" => cfg.noise.q_diag = vec5(&parse_vec(line, key, value, 5)?),
            "r_diag" => cfg.noise.r_diag = vec2(&parse_vec(line, key, value, 2)?),
            "shot_count" => cfg.noise.shot_count = parse_u64(line, key, value)? as usize,
            "shot_magnitude" => cfg.noise.shot_magnitude = parse_f64(line, key, value)?,
            "continuous_scaling" => cfg.noise.continuous_scaling = parse_bool(line, key, value)?,
            "filter_mode" => {
                cfg.filter_mode = match value {
                    "emckf" => FilterMode::Emckf,
                    "ekf" => FilterMode::Ekf,
                    _ => {
                        return Err(parse_err(
                            line,
                            format!("key 'filter_mode': expected emckf or ekf, got '{value}'"),
                        ))
                    }
                }
            }
            "sigma" => cfg.sigma = parse_f64(line, key, value)?,
            "kernel_literal" => cfg.kernel_literal = parse_bool(line, key, value)?,
            "lambda" => cfg.clf.lambda = parse_f64(line, key, value)?,
            "k_r" => cfg.clf.k_r = parse_f64(line, key, value)?,
            "c" => cfg.clf.c = parse_f64(line, key, value)?,
            "u_min" => cfg.clf.u_min = vec2(&parse_vec(line, key, value, 2)?),
            "u_max" => cfg.clf.u_max = vec2(&parse_vec(line, key, value, 2)?),
            "z_floor" => cfg.clf.z_floor = parse_f64(line, key, value)?,
            "traj_law" => {
                traj_law = Some(match value {
                    "constant_zero" => TrajectoryLaw::ConstantZero,
                    "exp_decay" => TrajectoryLaw::ExpDecay,
                    _ => {
                        return Err(parse_err(
                            line,
                            format!(
                                "key 'traj_law': expected constant_zero or exp_decay, got '{value}'"
                            ),
                        ))
                    }
                })
            }
            "traj_z0" => traj_z0 = Some(vec2(&parse_vec(line, key, value, 2)?)),
            "gamma" => gamma = parse_f64(line, key, value)?,
            _ => return Err(parse_err(line, format!("unknown key '{key}'"))),
        }
    }

    let beta = beta.ok_or_else(|| ConfigError::Invalid("required key 'beta' is missing".into()))?;
    cfg.plant_params.beta = beta;
    cfg.filter_params = cfg.plant_params.scaled(theta_hat_scale);
    cfg.traj = match traj_law.unwrap_or(TrajectoryLaw::ExpDecay) {
        TrajectoryLaw::ExpDecay => {
            // reference starts at the estimated (S, I) unless overridden
            let z0 = traj_z0.unwrap_or_else(|| Vector2::new(cfg.z_hat0.s, cfg.z_hat0.i));
            DesiredTrajectory::exp_decay(z0, gamma)
        }
        TrajectoryLaw::ConstantZero => DesiredTrajectory::constant_zero(),
    };
    cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(cfg)
}
