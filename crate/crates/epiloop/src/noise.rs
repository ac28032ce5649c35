//! Seeded noise generation: Gaussian process and measurement noise plus the
//! shot-noise schedule that models individuals arriving from other societies.
//!
//! All randomness derives from one 64-bit seed through independent ChaCha
//! sub-streams, so a scenario replays bit-identically and the plant noise,
//! measurement noise, and shot schedule stay decoupled.

use nalgebra::{Vector2, Vector5};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

/// Sub-stream indices of the master seed.
const STREAM_PROCESS: u64 = 0;
const STREAM_MEASUREMENT: u64 = 1;
const STREAM_SCHEDULE: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConfig {
    /// Process-noise covariance diagonal (5 entries).
    pub q_diag: Vector5<f64>,
    /// Measurement-noise covariance diagonal (2 entries).
    pub r_diag: Vector2<f64>,
    pub shot_count: usize,
    /// Impulse magnitude in individuals, applied to both channels.
    pub shot_magnitude: f64,
    pub seed: u64,
    pub horizon: f64,
    /// When set, per-step variances are Q/dt and R/dt instead of Q and R.
    pub continuous_scaling: bool,
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.q_diag.iter().any(|&v| !(v > 0.0)) {
            return Err("q_diag must be componentwise > 0".into());
        }
        if self.r_diag.iter().any(|&v| !(v > 0.0)) {
            return Err("r_diag must be componentwise > 0".into());
        }
        if !(self.horizon > 0.0) {
            return Err("horizon must be > 0".into());
        }
        if !(self.shot_magnitude >= 0.0) {
            return Err("shot_magnitude must be >= 0".into());
        }
        Ok(())
    }
}

/// Impulse times (sorted) and the measurement channels each impulse hits.
#[derive(Debug, Clone, PartialEq)]
pub struct ShotSchedule {
    pub times: Vec<f64>,
    pub magnitude: f64,
    /// Channel mask per impulse; both channels by default, matching the
    /// simultaneous arrival of exposed and infected individuals.
    pub channels: Vec<[bool; 2]>,
}

impl ShotSchedule {
    pub fn empty() -> Self {
        ShotSchedule { times: Vec::new(), magnitude: 0.0, channels: Vec::new() }
    }

    /// Total impulse applied to each channel inside the window [t, t + dt).
    pub fn impulse_in_window(&self, t: f64, dt: f64) -> Vector2<f64> {
        let mut out = Vector2::zeros();
        for (time, mask) in self.times.iter().zip(&self.channels) {
            if *time >= t && *time < t + dt {
                if mask[0] {
                    out[0] += self.magnitude;
                }
                if mask[1] {
                    out[1] += self.magnitude;
                }
            }
        }
        out
    }

    pub fn any_in_window(&self, t: f64, dt: f64) -> bool {
        self.times.iter().any(|&s| s >= t && s < t + dt)
    }
}

/// Owned RNG sub-streams for one simulation run.
pub struct NoiseStreams {
    pub process: ChaCha12Rng,
    pub measurement: ChaCha12Rng,
}

impl NoiseStreams {
    pub fn from_seed(seed: u64) -> Self {
        let mut process = ChaCha12Rng::seed_from_u64(seed);
        process.set_stream(STREAM_PROCESS);
        let mut measurement = ChaCha12Rng::seed_from_u64(seed);
        measurement.set_stream(STREAM_MEASUREMENT);
        NoiseStreams { process, measurement }
    }
}

/// Draw the shot schedule: `shot_count` times uniform on [0, horizon), both
/// channels hit by every impulse. Deterministic in the seed.
pub fn build_schedule(cfg: &NoiseConfig) -> ShotSchedule {
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    rng.set_stream(STREAM_SCHEDULE);
    let mut times: Vec<f64> =
        (0..cfg.shot_count).map(|_| rng.gen_range(0.0..cfg.horizon)).collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ShotSchedule { magnitude: cfg.shot_magnitude, channels: vec![[true, true]; times.len()], times }
}

fn per_step_std(variance: f64, dt: f64, continuous_scaling: bool) -> f64 {
    if continuous_scaling {
        (variance / dt).sqrt()
    } else {
        variance.sqrt()
    }
}

/// Zero-mean Gaussian process-noise draw for one step.
pub fn sample_process_noise(
    rng: &mut ChaCha12Rng,
    q_diag: &Vector5<f64>,
    dt: f64,
    continuous_scaling: bool,
) -> Vector5<f64> {
    Vector5::from_fn(|i, _| {
        let std = per_step_std(q_diag[i], dt, continuous_scaling);
        Normal::new(0.0, std).unwrap().sample(rng)
    })
}

/// Gaussian measurement-noise draw plus any scheduled impulses in [t, t + dt).
pub fn sample_measurement_noise(
    rng: &mut ChaCha12Rng,
    r_diag: &Vector2<f64>,
    schedule: &ShotSchedule,
    t: f64,
    dt: f64,
    continuous_scaling: bool,
) -> Vector2<f64> {
    let gauss = Vector2::from_fn(|i, _| {
        let std = per_step_std(r_diag[i], dt, continuous_scaling);
        Normal::new(0.0, std).unwrap().sample(rng)
    });
    gauss + schedule.impulse_in_window(t, dt)
}
