//! Trajectory CSV output and its inverse, plus the flat metrics report.
//!
//! Floats are written with `Display`, which round-trips f64 exactly, so a
//! parsed trajectory is bit-identical to the one written.

use std::fmt::Write as _;

use nalgebra::{Vector2, Vector5};
use thiserror::Error;

use crate::sim::{RunMetrics, StepRecord};

pub const CSV_HEADER: &str =
    "t,z1,z2,z3,z4,z5,zhat1,zhat2,zhat3,zhat4,zhat5,y1,y2,u1,u2,h,nu,V,e1,e2";

const CSV_COLUMNS: usize = 20;

#[derive(Debug, Error, PartialEq)]
pub enum CsvError {
    #[error("empty input")]
    Empty,
    #[error("bad header: expected '{CSV_HEADER}', got '{0}'")]
    BadHeader(String),
    #[error("line {line}: expected {CSV_COLUMNS} fields, got {got}")]
    FieldCount { line: usize, got: usize },
    #[error("line {line}, column {column}: '{value}' is not a number")]
    BadNumber { line: usize, column: usize, value: String },
}

/// Render records as CSV with a fixed 20-column header and `\n` endings.
pub fn emit_csv(records: &[StepRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for rec in records {
        write!(out, "{}", rec.t).unwrap();
        for v in rec.z.iter().chain(rec.z_hat.iter()) {
            write!(out, ",{v}").unwrap();
        }
        for v in [rec.y[0], rec.y[1], rec.u[0], rec.u[1], rec.h, rec.nu, rec.v, rec.e[0], rec.e[1]]
        {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Parse CSV produced by [`emit_csv`]. Fields not present in the file
/// (the QP objective and the clamp counter) come back as zero.
pub fn parse_csv(text: &str) -> Result<Vec<StepRecord>, CsvError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(CsvError::Empty)?;
    if header.trim_end() != CSV_HEADER {
        return Err(CsvError::BadHeader(header.to_string()));
    }
    let mut records = Vec::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != CSV_COLUMNS {
            return Err(CsvError::FieldCount { line, got: fields.len() });
        }
        let mut nums = [0.0f64; CSV_COLUMNS];
        for (column, field) in fields.iter().enumerate() {
            let bad = || CsvError::BadNumber { line, column: column + 1, value: field.to_string() };
            let v: f64 = field.trim().parse().map_err(|_| bad())?;
            // finite only: the emitter never writes nan/inf and NaN would
            // break the round-trip equality guarantee
            if !v.is_finite() {
                return Err(bad());
            }
            nums[column] = v;
        }
        records.push(StepRecord {
            t: nums[0],
            z: Vector5::from_row_slice(&nums[1..6]),
            z_hat: Vector5::from_row_slice(&nums[6..11]),
            y: Vector2::new(nums[11], nums[12]),
            u: Vector2::new(nums[13], nums[14]),
            h: nums[15],
            nu: nums[16],
            v: nums[17],
            e: Vector2::new(nums[18], nums[19]),
            objective: 0.0,
            clamp_events: 0,
        });
    }
    Ok(records)
}

/// Flat `key = value` metrics report, one metric per line.
pub fn render_metrics(prefix: &str, m: &RunMetrics) -> String {
    let p = if prefix.is_empty() { String::new() } else { format!("{prefix}_") };
    let mut out = String::new();
    let mut kv = |k: &str, v: String| {
        out.push_str(&p);
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(&v);
        out.push('\n');
    };
    kv("rmse_tracking_full", m.rmse_tracking_full.to_string());
    kv("rmse_tracking_ss", m.rmse_tracking_ss.to_string());
    kv("rmse_estimation_full", m.rmse_estimation_full.to_string());
    kv("rmse_estimation_ss", m.rmse_estimation_ss.to_string());
    kv("u1_max", m.u_max[0].to_string());
    kv("u2_max", m.u_max[1].to_string());
    kv("u_rms", m.u_rms.to_string());
    kv("h_max", m.h_max.to_string());
    kv("converge_day", m.converge_day.map_or_else(|| "none".to_string(), |d| d.to_string()));
    kv("clamp_total", m.clamp_total.to_string());
    kv("shot_jump_max", m.shot_jump_max.to_string());
    kv("u_tv_late", m.u_tv_late.to_string());
    out
}
