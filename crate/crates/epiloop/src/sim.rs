//! Closed-loop orchestration: per step the controller solves its QP from the
//! current estimate, the plant advances under the resulting input and process
//! noise, a contaminated measurement is formed, and the filter consumes it.
//! Runs are pure functions of their configuration.

use nalgebra::{Matrix5, Vector2, Vector5};
use thiserror::Error;

use crate::controller::{assemble_qp, clf_terms, ClfConfig, DesiredTrajectory};
use crate::filter::{
    filter_step, initialize, predict_step, FilterConfig, FilterError, FilterMode, FilterState,
};
use crate::model::{measurement, rk4_step, ControlInput, ModelError, ModelParams, SeiarState};
use crate::noise::{
    build_schedule, sample_measurement_noise, sample_process_noise, NoiseConfig, NoiseStreams,
};
use crate::qp::{solve, QpError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration invalid: {0}")]
    InvalidConfig(String),
    #[error("step {step}: {source}")]
    Model {
        step: usize,
        #[source]
        source: ModelError,
    },
    #[error("step {step}: {source}")]
    Filter {
        step: usize,
        #[source]
        source: FilterError,
    },
    #[error("step {step}: {source}")]
    Qp {
        step: usize,
        #[source]
        source: QpError,
    },
    #[error("window [{0}, {1}] selects no records")]
    EmptyWindow(f64, f64),
}

/// Complete description of one closed-loop experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub horizon: f64,
    pub dt: f64,
    pub plant_params: ModelParams,
    /// Parameter guess used by both the filter and the controller.
    pub filter_params: ModelParams,
    pub z0: SeiarState,
    pub z_hat0: SeiarState,
    pub p0: Matrix5<f64>,
    pub noise: NoiseConfig,
    pub filter_mode: FilterMode,
    pub sigma: f64,
    pub kernel_literal: bool,
    pub clf: ClfConfig,
    pub traj: DesiredTrajectory,
    pub seed: u64,
    pub record_stride: usize,
    /// Declared society population; must match the initial state sum.
    pub n0: f64,
}

impl ScenarioConfig {
    pub fn n_steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |msg: String| Err(SimError::InvalidConfig(msg));
        if !(self.horizon > 0.0) {
            return fail("horizon must be > 0".into());
        }
        if !(self.dt > 0.0) {
            return fail("dt must be > 0".into());
        }
        let ratio = self.horizon / self.dt;
        if !ratio.is_finite() || (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return fail(format!("horizon/dt = {ratio} must be an integer"));
        }
        if self.record_stride == 0 {
            return fail("record_stride must be >= 1".into());
        }
        if !(self.sigma > 0.0) {
            return fail("sigma must be > 0".into());
        }
        let total = self.z0.total();
        if (total - self.n0).abs() > 1e-6 * self.n0.max(1.0) {
            return fail(format!("z0 sums to {total}, declared population is {}", self.n0));
        }
        if self.z0.to_vector().iter().any(|&v| v < 0.0) {
            return fail("z0 must be componentwise nonnegative".into());
        }
        self.plant_params.validate().or_else(|m| fail(format!("plant params: {m}")))?;
        self.filter_params.validate().or_else(|m| fail(format!("filter params: {m}")))?;
        self.noise.validate().or_else(|m| fail(format!("noise: {m}")))?;
        self.clf.validate().or_else(|m| fail(format!("controller: {m}")))?;
        Ok(())
    }

    fn filter_config(&self) -> FilterConfig {
        FilterConfig {
            mode: self.filter_mode,
            sigma: self.sigma,
            q_diag: self.noise.q_diag,
            r_diag: self.noise.r_diag,
            kernel_literal: self.kernel_literal,
        }
    }
}

/// One recorded simulation step: plant and filter state at the step start,
/// the control applied over the step, and the measurement consumed by the
/// filter during it.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub z: Vector5<f64>,
    pub z_hat: Vector5<f64>,
    pub y: Vector2<f64>,
    pub u: Vector2<f64>,
    /// QP relaxation of the RCLF constraint.
    pub h: f64,
    pub nu: f64,
    pub v: f64,
    pub e: Vector2<f64>,
    pub objective: f64,
    /// Cumulative plant clamp events up to this record.
    pub clamp_events: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    /// RMS of the plant tracking error norm, full horizon and t in [25, 40].
    pub rmse_tracking_full: f64,
    pub rmse_tracking_ss: f64,
    /// RMS of the estimation error norm, same split.
    pub rmse_estimation_full: f64,
    pub rmse_estimation_ss: f64,
    pub u_max: Vector2<f64>,
    pub u_rms: f64,
    pub h_max: f64,
    /// First day at which z1 + z3 drops below 1 % of the population.
    pub converge_day: Option<f64>,
    pub clamp_total: u64,
    /// Largest measurement-induced estimate change over steps hit by a shot.
    pub shot_jump_max: f64,
    /// Total variation of the control signal after day 20 (chattering proxy).
    pub u_tv_late: f64,
}

const CONVERGE_FRACTION: f64 = 0.01;
const STEADY_STATE_START: f64 = 25.0;
const LATE_TV_START: f64 = 20.0;

/// Run one closed-loop scenario. Deterministic in the configuration.
pub fn run(cfg: &ScenarioConfig) -> Result<(Vec<StepRecord>, RunMetrics), SimError> {
    cfg.validate()?;
    let n_steps = cfg.n_steps();
    let schedule = build_schedule(&cfg.noise);
    let mut streams = NoiseStreams::from_seed(cfg.seed);
    let fcfg = cfg.filter_config();

    let mut fs: FilterState =
        initialize(cfg.z_hat0, cfg.p0).map_err(|source| SimError::Filter { step: 0, source })?;
    fs.sigma = cfg.sigma;
    let mut z = cfg.z0;
    let mut clamp_total: u64 = 0;

    let mut records = Vec::with_capacity(n_steps / cfg.record_stride + 2);
    let mut acc = MetricsAccumulator::new(cfg);

    // carried into the terminal row: (y, u, h, nu, objective)
    type LastStep = (Vector2<f64>, Vector2<f64>, f64, f64, f64);
    let mut last: Option<LastStep> = None;
    for step in 0..n_steps {
        let t = step as f64 * cfg.dt;
        let terms = clf_terms(&fs.z_hat, &cfg.filter_params, &cfg.traj, t, &cfg.clf);
        let problem = assemble_qp(&terms, &cfg.clf);
        let sol = solve(&problem).map_err(|source| SimError::Qp { step, source })?;
        let u = ControlInput::new(sol.x[1], sol.x[2]).clamped(&cfg.clf.u_min, &cfg.clf.u_max);
        let h = sol.x[0];

        let w = sample_process_noise(
            &mut streams.process,
            &cfg.noise.q_diag,
            cfg.dt,
            cfg.noise.continuous_scaling,
        );
        let (z_next, clamps) = rk4_step(&z, &u, &cfg.plant_params, &w, cfg.dt)
            .map_err(|source| SimError::Model { step, source })?;
        clamp_total += clamps as u64;

        let v_noise = sample_measurement_noise(
            &mut streams.measurement,
            &cfg.noise.r_diag,
            &schedule,
            t,
            cfg.dt,
            cfg.noise.continuous_scaling,
        );
        let y = measurement(&z_next) + v_noise;

        let shot_hit = schedule.any_in_window(t, cfg.dt);
        let fs_next = filter_step(&fs, &y, &u, &cfg.filter_params, &fcfg, cfg.dt)
            .map_err(|source| SimError::Filter { step, source })?;
        if shot_hit {
            let predicted = predict_step(&fs, &y, &u, &cfg.filter_params, &fcfg, cfg.dt)
                .map_err(|source| SimError::Filter { step, source })?;
            let jump = (fs_next.z_hat.to_vector() - predicted.z_hat.to_vector()).norm();
            acc.shot_jump_max = acc.shot_jump_max.max(jump);
        }

        if step % cfg.record_stride == 0 {
            records.push(StepRecord {
                t,
                z: z.to_vector(),
                z_hat: fs.z_hat.to_vector(),
                y,
                u: u.to_vector(),
                h,
                nu: fs_next.nu,
                v: terms.v,
                e: terms.e,
                objective: sol.objective,
                clamp_events: clamp_total,
            });
        }
        acc.step(cfg, t, &z, &fs.z_hat, &u.to_vector(), h);
        last = Some((y, u.to_vector(), h, fs_next.nu, sol.objective));

        z = z_next;
        fs = fs_next;
    }

    // Terminal row: final states with the last applied control.
    let (y, u, h, nu, objective) =
        last.unwrap_or((measurement(&z), Vector2::zeros(), 0.0, 1.0, 0.0));
    let t_end = cfg.horizon;
    let terms_end = clf_terms(&fs.z_hat, &cfg.filter_params, &cfg.traj, t_end, &cfg.clf);
    records.push(StepRecord {
        t: t_end,
        z: z.to_vector(),
        z_hat: fs.z_hat.to_vector(),
        y,
        u,
        h,
        nu,
        v: terms_end.v,
        e: terms_end.e,
        objective,
        clamp_events: clamp_total,
    });
    acc.step(cfg, t_end, &z, &fs.z_hat, &u, h);

    Ok((records, acc.finish(clamp_total)))
}

struct MetricsAccumulator {
    track_sq_full: f64,
    track_n_full: usize,
    track_sq_ss: f64,
    track_n_ss: usize,
    est_sq_full: f64,
    est_sq_ss: f64,
    u_max: Vector2<f64>,
    u_sq: f64,
    h_max: f64,
    converge_day: Option<f64>,
    converge_threshold: f64,
    shot_jump_max: f64,
    u_tv_late: f64,
    prev_u_late: Option<Vector2<f64>>,
}

impl MetricsAccumulator {
    fn new(cfg: &ScenarioConfig) -> Self {
        MetricsAccumulator {
            track_sq_full: 0.0,
            track_n_full: 0,
            track_sq_ss: 0.0,
            track_n_ss: 0,
            est_sq_full: 0.0,
            est_sq_ss: 0.0,
            u_max: Vector2::zeros(),
            u_sq: 0.0,
            h_max: f64::NEG_INFINITY,
            converge_day: None,
            converge_threshold: CONVERGE_FRACTION * cfg.n0,
            shot_jump_max: 0.0,
            u_tv_late: 0.0,
            prev_u_late: None,
        }
    }

    fn step(
        &mut self,
        cfg: &ScenarioConfig,
        t: f64,
        z: &SeiarState,
        z_hat: &SeiarState,
        u: &Vector2<f64>,
        h: f64,
    ) {
        let (zd, _) = cfg.traj.at(t);
        let track = Vector2::new(z.s - zd[0], z.i - zd[1]).norm_squared();
        let est = (z.to_vector() - z_hat.to_vector()).norm_squared();
        self.track_sq_full += track;
        self.est_sq_full += est;
        self.track_n_full += 1;
        if t >= STEADY_STATE_START {
            self.track_sq_ss += track;
            self.est_sq_ss += est;
            self.track_n_ss += 1;
        }
        self.u_max[0] = self.u_max[0].max(u[0]);
        self.u_max[1] = self.u_max[1].max(u[1]);
        self.u_sq += u.norm_squared();
        self.h_max = self.h_max.max(h);
        if self.converge_day.is_none() && z.s + z.i < self.converge_threshold {
            self.converge_day = Some(t);
        }
        if t >= LATE_TV_START {
            if let Some(prev) = self.prev_u_late {
                self.u_tv_late += (u - prev).norm();
            }
            self.prev_u_late = Some(*u);
        }
    }

    fn finish(self, clamp_total: u64) -> RunMetrics {
        let full = self.track_n_full.max(1) as f64;
        let ss = self.track_n_ss.max(1) as f64;
        RunMetrics {
            rmse_tracking_full: (self.track_sq_full / full).sqrt(),
            rmse_tracking_ss: (self.track_sq_ss / ss).sqrt(),
            rmse_estimation_full: (self.est_sq_full / full).sqrt(),
            rmse_estimation_ss: (self.est_sq_ss / ss).sqrt(),
            u_max: self.u_max,
            u_rms: (self.u_sq / full).sqrt(),
            h_max: self.h_max,
            converge_day: self.converge_day,
            clamp_total,
            shot_jump_max: self.shot_jump_max,
            u_tv_late: self.u_tv_late,
        }
    }
}

/// Paired EMCKF/EKF comparison over identical seeds and noise streams.
pub struct FilterComparison {
    pub emckf: (Vec<StepRecord>, RunMetrics),
    pub ekf: (Vec<StepRecord>, RunMetrics),
}

pub fn compare_filters(cfg: &ScenarioConfig) -> Result<FilterComparison, SimError> {
    let emckf_cfg = ScenarioConfig { filter_mode: FilterMode::Emckf, ..cfg.clone() };
    let ekf_cfg = ScenarioConfig { filter_mode: FilterMode::Ekf, ..cfg.clone() };
    Ok(FilterComparison { emckf: run(&emckf_cfg)?, ekf: run(&ekf_cfg)? })
}

/// RMS of a selected scalar channel over records with t inside the window.
pub fn rmse<F>(records: &[StepRecord], window: (f64, f64), select: F) -> Result<f64, SimError>
where
    F: Fn(&StepRecord) -> f64,
{
    let mut sum = 0.0;
    let mut n = 0usize;
    for rec in records {
        if rec.t >= window.0 && rec.t <= window.1 {
            let v = select(rec);
            sum += v * v;
            n += 1;
        }
    }
    if n == 0 {
        return Err(SimError::EmptyWindow(window.0, window.1));
    }
    Ok((sum / n as f64).sqrt())
}
