//! Time-indexed simulation records and their CSV/JSON export.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::SystemState;

/// One sampled instant of a continuous run.
#[derive(Debug, Clone, Serialize)]
pub struct TraceRow {
    pub t: f64,
    pub lambda: Vec<f64>,
    pub power: Vec<f64>,
    /// max_{ij} |lambda_i - lambda_j|
    pub consensus_error: f64,
    /// |sum_i P_i - P_tot(t)|
    pub balance_residual: f64,
    /// disagreement Lyapunov value
    pub lyapunov: f64,
}

/// Full record of a continuous run.
#[derive(Debug, Clone, Serialize)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
    /// First time both the consensus error and the consistency residual
    /// were at or below the tolerance.
    pub first_convergence: Option<f64>,
    /// Per load event: first time at or after the event with consensus
    /// error back at or below the tolerance.
    pub consensus_reentry: Vec<Option<f64>>,
    pub event_times: Vec<f64>,
    /// Largest balance residual seen at any step (not just samples).
    pub max_balance_residual: f64,
    pub tol: f64,
    pub final_state: SystemState,
}

impl Trace {
    pub fn new(n: usize, tol: f64, event_times: Vec<f64>) -> Self {
        Trace {
            rows: Vec::new(),
            first_convergence: None,
            consensus_reentry: vec![None; event_times.len()],
            event_times,
            max_balance_residual: 0.0,
            tol,
            final_state: SystemState::new(vec![0.0; n], vec![0.0; n], 0.0),
        }
    }

    pub fn gen_count(&self) -> usize {
        self.final_state.len()
    }
}

/// Formats a float with 12 significant digits, round-trippable to ~1e-10
/// relative.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.11e}")
}

/// Writes the run as CSV with the column contract
/// `t,lambda_0..lambda_{N-1},P_0..P_{N-1},consensus_err,balance_residual,V`.
pub fn write_trace_csv<W: Write>(trace: &Trace, mut out: W) -> std::io::Result<()> {
    let n = trace.gen_count();
    let mut header = String::from("t");
    for i in 0..n {
        header.push_str(&format!(",lambda_{i}"));
    }
    for i in 0..n {
        header.push_str(&format!(",P_{i}"));
    }
    header.push_str(",consensus_err,balance_residual,V");
    writeln!(out, "{header}")?;
    for row in &trace.rows {
        let mut line = fmt_float(row.t);
        for &l in &row.lambda {
            line.push(',');
            line.push_str(&fmt_float(l));
        }
        for &p in &row.power {
            line.push(',');
            line.push_str(&fmt_float(p));
        }
        line.push(',');
        line.push_str(&fmt_float(row.consensus_error));
        line.push(',');
        line.push_str(&fmt_float(row.balance_residual));
        line.push(',');
        line.push_str(&fmt_float(row.lyapunov));
        writeln!(out, "{line}")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceFormat {
    Csv,
    Json,
}

/// Writes a trace to `path` in the chosen format.
pub fn write_trace(trace: &Trace, format: TraceFormat, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source: std::io::Error| Error::Io {
        path: path.display().to_string(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut buf = std::io::BufWriter::new(file);
    match format {
        TraceFormat::Csv => write_trace_csv(trace, &mut buf).map_err(io_err)?,
        TraceFormat::Json => {
            serde_json::to_writer_pretty(&mut buf, trace).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                detail: e.to_string(),
            })?;
            buf.write_all(b"\n").map_err(io_err)?;
        }
    }
    buf.flush().map_err(io_err)
}

/// Per-iteration record of a discrete-time run.
#[derive(Debug, Clone, Serialize)]
pub struct DiscreteTraceRow {
    pub k: usize,
    pub lambda: Vec<f64>,
    pub power: Vec<f64>,
    pub max_z: f64,
    pub consensus_error: f64,
}

/// Writes a discrete run as CSV: `k,lambda_*,P_*,max_z,consensus_err`.
pub fn write_discrete_csv<W: Write>(rows: &[DiscreteTraceRow], mut out: W) -> std::io::Result<()> {
    let n = rows.first().map_or(0, |r| r.lambda.len());
    let mut header = String::from("k");
    for i in 0..n {
        header.push_str(&format!(",lambda_{i}"));
    }
    for i in 0..n {
        header.push_str(&format!(",P_{i}"));
    }
    header.push_str(",max_z,consensus_err");
    writeln!(out, "{header}")?;
    for row in rows {
        let mut line = row.k.to_string();
        for &l in &row.lambda {
            line.push(',');
            line.push_str(&fmt_float(l));
        }
        for &p in &row.power {
            line.push(',');
            line.push_str(&fmt_float(p));
        }
        line.push(',');
        line.push_str(&fmt_float(row.max_z));
        line.push(',');
        line.push_str(&fmt_float(row.consensus_error));
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// End-of-run report the CLI prints and the exit code is derived from.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub scenario: String,
    pub mode: String,
    pub seed: u64,
    /// Protocol parameters the run used.
    pub gains: crate::dynamics::Gains,
    /// First convergence time for continuous modes.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_convergence_time: Option<f64>,
    /// Iterations to convergence for the discrete mode.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    /// Theoretical settling bound T1 + T2, when applicable.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound_t1_plus_t2: Option<f64>,
    pub oracle_lambda: f64,
    pub oracle_power: Vec<f64>,
    /// Total generation cost of the reference dispatch, $.
    pub oracle_cost: f64,
    pub achieved_lambda: f64,
    pub achieved_power: Vec<f64>,
    /// Total generation cost of the achieved dispatch, $.
    pub achieved_cost: f64,
    /// max_i |P_i - P_i^oracle|
    pub max_power_deviation: f64,
    pub lambda_deviation: f64,
    pub converged_within_bound: bool,
    pub deviation_within_tol: bool,
    pub pass: bool,
    /// Per-event consensus re-entry times, continuous runs with load events.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub consensus_reentry: Vec<Option<f64>>,
    /// Optimality-condition violations found by the audit, if any.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub kkt_violations: Vec<String>,
}
