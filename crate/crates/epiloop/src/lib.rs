//! Closed-loop influenza epidemic simulator: a SEIAR plant under shot-noise
//! contaminated measurements, estimated by a maximum-correntropy extended
//! Kalman filter and steered by a robust control-Lyapunov controller whose
//! input is chosen by a small quadratic program each step.
//!
//! Everything is deterministic in the scenario seed.

// validation code uses `!(x > 0.0)` deliberately so NaN fails the check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod controller;
pub mod filter;
pub mod model;
pub mod noise;
pub mod qp;
pub mod report;
pub mod sim;

pub use config::{parse_config, preset_config, ConfigError, Preset};
pub use controller::{assemble_qp, clf_terms, pwmc, ClfConfig, DesiredTrajectory};
pub use filter::{filter_step, FilterConfig, FilterMode, FilterState};
pub use model::{calibrated_beta, ControlInput, ModelParams, SeiarState};
pub use noise::NoiseConfig;
pub use qp::{solve, QpProblem, QpSolution};
pub use report::{emit_csv, parse_csv, render_metrics, CSV_HEADER};
pub use sim::{compare_filters, run, RunMetrics, ScenarioConfig, SimError, StepRecord};
