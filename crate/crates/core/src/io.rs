// Copyright 2026 Pentabat Contributors
// SPDX-License-Identifier: Apache-2.0

//! File formats: trajectory and sweep CSV, metrics and summary JSON, and the
//! run manifest every output points back to.
//!
//! Floats are written in Rust's shortest round-trip form, so reading a file
//! back reproduces the in-memory values bit for bit.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::cumulant::{CumulantState, Trajectory, STATE_DIM};
use crate::observables::BatteryMetrics;
use crate::sweep::SweepResult;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const REPORT_FILE: &str = "report.json";

/// Trajectory CSV columns with units.
pub const TRAJECTORY_HEADER: [&str; STATE_DIM + 1] = [
    "t [s]",
    "p1 [1]",
    "p2 [1]",
    "p3 [1]",
    "p4 [1]",
    "p5 [1]",
    "n_ph [1]",
    "re_c35 [1]",
    "im_c35 [1]",
    "re_s_coll [1]",
    "im_s_coll [1]",
    "re_m35 [1]",
    "im_m35 [1]",
    "re_m45 [1]",
    "im_m45 [1]",
    "re_m34 [1]",
    "im_m34 [1]",
    "re_alpha [1]",
    "im_alpha [1]",
];

const METRIC_COLUMNS: [&str; 12] = [
    "e_max [J]",
    "t_max [s]",
    "p_max [W]",
    "tau_max [s]",
    "e_min [J]",
    "t_min [s]",
    "work_w [J]",
    "p_w [W]",
    "eta [1]",
    "tau_s [s]",
    "n_ph_peak [1]",
    "latency [s]",
];

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

impl IoError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn format(path: &Path, message: impl ToString) -> Self {
        IoError::Format {
            path: path.display().to_string(),
            message: message.to_string(),
        }
    }
}

fn fmt(v: f64) -> String {
    format!("{v:e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

/// Provenance record written next to every set of outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// RFC 3339, UTC. The only field that differs between identical runs.
    pub timestamp: String,
    pub config: RunConfig,
    /// Sweep specification or oracle instance, when relevant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extra: Option<serde_json::Value>,
    pub outputs: Vec<String>,
    /// Outputs depend only on `config`, `command` and `extra`: no random
    /// numbers, thread-count independent ordering.
    pub deterministic: bool,
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            config: config.clone(),
            extra: None,
            outputs: Vec::new(),
            deterministic: true,
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| IoError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| IoError::format(path, e))?;
    writeln!(w)
        .and_then(|_| w.flush())
        .map_err(|e| IoError::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IoError> {
    let mut s = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut s))
        .map_err(|e| IoError::io(path, e))?;
    serde_json::from_str(&s).map_err(|e| IoError::format(path, e))
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<(), IoError> {
    write_json(path, manifest)
}

pub fn read_manifest(path: &Path) -> Result<RunManifest, IoError> {
    read_json(path)
}

/// Writes a trajectory. The first line is a comment naming the manifest.
pub fn write_trajectory_csv<W: Write>(
    out: W,
    traj: &Trajectory,
    manifest: &str,
) -> std::io::Result<()> {
    let mut out = out;
    writeln!(out, "# pentabat trajectory; manifest={manifest}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRAJECTORY_HEADER)?;
    for (t, s) in traj.times.iter().zip(&traj.states) {
        let mut row = Vec::with_capacity(STATE_DIM + 1);
        row.push(fmt(*t));
        row.extend(s.to_array().iter().map(|v| fmt(*v)));
        w.write_record(&row)?;
    }
    w.flush()
}

pub fn write_trajectory_file(
    path: &Path,
    traj: &Trajectory,
    manifest: &str,
) -> Result<(), IoError> {
    let w = create(path)?;
    write_trajectory_csv(w, traj, manifest).map_err(|e| IoError::io(path, e))
}

/// Parses a trajectory CSV. Comment lines start with `#`.
pub fn read_trajectory_csv<R: Read>(input: R, origin: &Path) -> Result<Trajectory, IoError> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(input);
    let headers = r.headers().map_err(|e| IoError::format(origin, e))?.clone();
    if headers.iter().ne(TRAJECTORY_HEADER.iter().copied()) {
        return Err(IoError::format(origin, "unexpected trajectory columns"));
    }
    let mut traj = Trajectory::default();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| IoError::format(origin, e))?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| IoError::format(origin, format!("row {}: {e}", line + 1)))?;
        if vals.len() != STATE_DIM + 1 {
            return Err(IoError::format(
                origin,
                format!("row {}: wrong field count", line + 1),
            ));
        }
        traj.times.push(vals[0]);
        traj.states.push(CumulantState::from_slice(&vals[1..]));
    }
    Ok(traj)
}

pub fn read_trajectory_file(path: &Path) -> Result<Trajectory, IoError> {
    let f = File::open(path).map_err(|e| IoError::io(path, e))?;
    read_trajectory_csv(std::io::BufReader::new(f), path)
}

/// Metrics of one run as written to JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub manifest: String,
    pub metrics: Option<BatteryMetrics>,
    /// Present when extraction failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// `E_max / (n_pen * hbar * omega_35)`.
    pub e_max_per_quantum: Option<f64>,
    pub final_state: Option<CumulantState>,
    pub max_population_drift: f64,
    pub min_population: f64,
}

pub fn write_metrics_file(path: &Path, record: &MetricsRecord) -> Result<(), IoError> {
    write_json(path, record)
}

pub fn read_metrics_file(path: &Path) -> Result<MetricsRecord, IoError> {
    read_json(path)
}

/// One row per point: swept value, measured N, every metric and any error.
pub fn write_sweep_csv<W: Write>(
    out: W,
    result: &SweepResult,
    manifest: &str,
) -> std::io::Result<()> {
    let mut out = out;
    writeln!(
        out,
        "# pentabat sweep over {}; manifest={manifest}",
        result.parameter
    )?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![
        "index".to_string(),
        result.parameter.clone(),
        "measured_n [1]".into(),
    ];
    header.extend(METRIC_COLUMNS.iter().map(|s| s.to_string()));
    header.push("error".into());
    w.write_record(&header)?;
    for p in &result.points {
        let mut row = vec![p.index.to_string(), fmt(p.value), fmt_opt(p.measured_n)];
        match &p.metrics {
            Some(m) => row.extend([
                fmt(m.e_max),
                fmt(m.t_max),
                fmt(m.p_max),
                fmt(m.tau_max),
                fmt_opt(m.e_min),
                fmt_opt(m.t_min),
                fmt_opt(m.work_w),
                fmt_opt(m.p_w),
                fmt_opt(m.eta),
                fmt_opt(m.tau_s),
                fmt_opt(m.n_ph_peak),
                fmt_opt(m.latency),
            ]),
            None => {
                row.extend(std::iter::repeat_n(String::new(), METRIC_COLUMNS.len()));
                // The photon peak is known even when E has no maximum.
                row[3 + 10] = fmt_opt(p.n_ph_peak);
            }
        }
        row.push(p.error.clone().unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush()
}

pub fn write_sweep_file(path: &Path, result: &SweepResult, manifest: &str) -> Result<(), IoError> {
    let w = create(path)?;
    write_sweep_csv(w, result, manifest).map_err(|e| IoError::io(path, e))
}

/// Two columns of a sweep CSV, by header name, for rows where both parse.
pub fn read_sweep_columns(path: &Path, x: &str, y: &str) -> Result<(Vec<f64>, Vec<f64>), IoError> {
    let f = File::open(path).map_err(|e| IoError::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(f);
    let headers = r.headers().map_err(|e| IoError::format(path, e))?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name || h.split(" [").next() == Some(name))
            .ok_or_else(|| IoError::format(path, format!("no column `{name}`")))
    };
    let (ix, iy) = (find(x)?, find(y)?);
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec.map_err(|e| IoError::format(path, e))?;
        if let (Ok(a), Ok(b)) = (rec[ix].trim().parse::<f64>(), rec[iy].trim().parse::<f64>()) {
            xs.push(a);
            ys.push(b);
        }
    }
    Ok((xs, ys))
}

pub fn write_summary_file<T: Serialize>(path: &Path, summary: &T) -> Result<(), IoError> {
    write_json(path, summary)
}

/// A JSON document tagged with the manifest that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tagged<T> {
    pub manifest: String,
    #[serde(flatten)]
    pub body: T,
}
