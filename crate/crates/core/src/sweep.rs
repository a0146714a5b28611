// Copyright 2026 Pentabat Contributors
// SPDX-License-Identifier: Apache-2.0

//! Parameter sweeps, log-log power-law fits and maser threshold regions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cumulant::{self, CumulantState, IntegratorConfig, Trajectory};
use crate::model::{validate, ModelError, ModelParams, ValidationErrors};
use crate::observables::{self, BatteryMetrics, MetricsOptions};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SweepError {
    #[error("invalid sweep: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Parameter(#[from] ModelError),
    #[error(transparent)]
    Model(#[from] ValidationErrors),
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("power-law fit needs strictly positive data (found {0} at index {1})")]
    NonPositiveData(f64, usize),
    #[error("fit window holds fewer than two distinct abscissae")]
    DegenerateWindow,
    #[error("x and y differ in length")]
    LengthMismatch,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegionError {
    #[error("N spans {decades:.2} decades; at least {required} are needed")]
    InsufficientSpan { decades: f64, required: f64 },
    #[error("N values must be positive, finite and strictly increasing")]
    BadGrid,
    #[error("N and peak series differ in length")]
    LengthMismatch,
}

/// Sampled values of the swept parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub from: f64,
    pub to: f64,
    pub points: usize,
    pub log: bool,
}

impl Grid {
    pub fn validate(&self) -> Result<(), SweepError> {
        if self.points < 2 {
            return Err(SweepError::InvalidSpec(
                "grid needs at least two points".into(),
            ));
        }
        if !self.from.is_finite() || !self.to.is_finite() {
            return Err(SweepError::InvalidSpec(
                "grid endpoints must be finite".into(),
            ));
        }
        if self.log && !(self.from > 0.0 && self.to > 0.0) {
            return Err(SweepError::InvalidSpec(
                "logarithmic grids need positive endpoints".into(),
            ));
        }
        Ok(())
    }

    /// Grid values with both endpoints reproduced exactly.
    pub fn values(&self) -> Vec<f64> {
        let n = self.points;
        (0..n)
            .map(|i| {
                if i == 0 {
                    return self.from;
                }
                if i + 1 == n {
                    return self.to;
                }
                let f = i as f64 / (n - 1) as f64;
                if self.log {
                    (self.from.ln() + f * (self.to.ln() - self.from.ln())).exp()
                } else {
                    self.from + f * (self.to - self.from)
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    /// A [`ModelParams`] field name or `q`.
    pub parameter: String,
    pub grid: Grid,
    pub base: ModelParams,
    pub integrator: IntegratorConfig,
    pub metrics: MetricsOptions,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl SweepSpec {
    pub fn new(
        parameter: &str,
        grid: Grid,
        base: ModelParams,
        integrator: IntegratorConfig,
    ) -> Self {
        let metrics = MetricsOptions {
            require_minimum: false,
            ..MetricsOptions::for_run(&integrator)
        };
        Self {
            parameter: parameter.to_string(),
            grid,
            base,
            integrator,
            metrics,
            threads: None,
        }
    }
}

/// One evaluated grid point. Failed points keep their value and carry the
/// error message; whatever could be measured before the failure is kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub index: usize,
    pub value: f64,
    /// `n_pen * (p5 + p3)` at `t_max`, or at the end of the run when E has
    /// no maximum.
    pub measured_n: Option<f64>,
    pub n_ph_peak: Option<f64>,
    pub metrics: Option<BatteryMetrics>,
    pub error: Option<String>,
}

impl SweepPoint {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub parameter: String,
    pub points: Vec<SweepPoint>,
}

/// Linear interpolation of a sampled series at `t`.
pub fn value_at(times: &[f64], values: &[f64], t: f64) -> f64 {
    let k = times.partition_point(|&x| x < t);
    if k == 0 {
        return values[0];
    }
    if k >= times.len() {
        return values[values.len() - 1];
    }
    let f = (t - times[k - 1]) / (times[k] - times[k - 1]);
    values[k - 1] + f * (values[k] - values[k - 1])
}

/// Number of molecules in the masing pair, `n_pen * (p5 + p3)`, at `t`.
pub fn measured_n(traj: &Trajectory, n_pen: f64, t: f64) -> f64 {
    let pair: Vec<f64> = traj.states.iter().map(|s| s.p[4] + s.p[2]).collect();
    n_pen * value_at(&traj.times, &pair, t)
}

fn evaluate(spec: &SweepSpec, index: usize, value: f64) -> SweepPoint {
    let mut point = SweepPoint {
        index,
        value,
        measured_n: None,
        n_ph_peak: None,
        metrics: None,
        error: None,
    };
    let mut params = spec.base.clone();
    if let Err(e) = params.set(&spec.parameter, value) {
        point.error = Some(e.to_string());
        return point;
    }
    let model = match validate(&params) {
        Ok(m) => m,
        Err(e) => {
            point.error = Some(e.to_string());
            return point;
        }
    };
    let initial = CumulantState::ground(params.n_th);
    let traj = match cumulant::integrate(&initial, &model, &spec.integrator) {
        Ok(t) => t,
        Err(e) => {
            point.error = Some(e.to_string());
            return point;
        }
    };
    point.n_ph_peak = traj.photon_number().into_iter().reduce(f64::max);
    match observables::extract_metrics(&traj, &params, &spec.metrics) {
        Ok(m) => {
            point.measured_n = Some(measured_n(&traj, params.n_pen, m.t_max));
            point.metrics = Some(m);
        }
        Err(e) => {
            let t_end = *traj.times.last().expect("non-empty grid");
            point.measured_n = Some(measured_n(&traj, params.n_pen, t_end));
            point.error = Some(e.to_string());
        }
    }
    point
}

/// Evaluates every grid point. Points run concurrently; output order follows
/// the grid regardless of completion order.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult, SweepError> {
    spec.grid.validate()?;
    spec.integrator
        .validate()
        .map_err(|e| SweepError::InvalidSpec(e.to_string()))?;
    if spec.parameter != "q"
        && crate::model::NUMERIC_FIELDS
            .iter()
            .all(|f| *f != spec.parameter)
    {
        return Err(ModelError::UnknownParameter(spec.parameter.clone()).into());
    }
    validate(&spec.base)?;
    let points = run_points(spec, &spec.grid.values())?;
    Ok(SweepResult {
        parameter: spec.parameter.clone(),
        points,
    })
}

/// Evaluates `spec` at arbitrary parameter values instead of its grid.
/// Point `i` of the output belongs to `values[i]`.
pub fn run_points(spec: &SweepSpec, values: &[f64]) -> Result<Vec<SweepPoint>, SweepError> {
    let run = || -> Vec<SweepPoint> {
        values
            .par_iter()
            .enumerate()
            .map(|(i, &v)| evaluate(spec, i, v))
            .collect()
    };
    Ok(match spec.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| SweepError::Pool(e.to_string()))?
            .install(run),
        None => run(),
    })
}

/// `y = prefactor * x^exponent` fitted by least squares in log-log space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub exponent: f64,
    pub prefactor: f64,
    /// Inclusive x range of the points used.
    pub window: (f64, f64),
    pub points: usize,
    pub r_squared: f64,
}

/// Fits the points whose x lies in `window` (all points if `None`).
pub fn fit_power_law(
    x: &[f64],
    y: &[f64],
    window: Option<(f64, f64)>,
) -> Result<ScalingFit, FitError> {
    if x.len() != y.len() {
        return Err(FitError::LengthMismatch);
    }
    let (lo, hi) = window.unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
    let mut lx = Vec::new();
    let mut ly = Vec::new();
    let (mut wmin, mut wmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for (i, (&xi, &yi)) in x.iter().zip(y).enumerate() {
        if xi < lo || xi > hi {
            continue;
        }
        if !(xi > 0.0) {
            return Err(FitError::NonPositiveData(xi, i));
        }
        if !(yi > 0.0) {
            return Err(FitError::NonPositiveData(yi, i));
        }
        lx.push(xi.ln());
        ly.push(yi.ln());
        wmin = wmin.min(xi);
        wmax = wmax.max(xi);
    }
    let n = lx.len() as f64;
    if lx.len() < 2 {
        return Err(FitError::DegenerateWindow);
    }
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|v| (v - mx) * (v - mx)).sum();
    if !(sxx > 0.0) {
        return Err(FitError::DegenerateWindow);
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let ss_tot: f64 = ly.iter().map(|b| (b - my).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };
    Ok(ScalingFit {
        exponent: slope,
        prefactor: intercept.exp(),
        window: (wmin, wmax),
        points: lx.len(),
        r_squared,
    })
}

/// Best-R² fit over contiguous runs of at least `min_points` points (after
/// sorting by x) spanning at least `min_decades` in x.
pub fn auto_window_fit(
    x: &[f64],
    y: &[f64],
    min_points: usize,
    min_decades: f64,
) -> Result<ScalingFit, FitError> {
    if x.len() != y.len() {
        return Err(FitError::LengthMismatch);
    }
    let mut pts: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    let mut best: Option<ScalingFit> = None;
    let n = xs.len();
    for i in 0..n {
        for j in (i + min_points.max(2) - 1)..n {
            if (xs[j] / xs[i]).log10() < min_decades {
                continue;
            }
            if let Ok(fit) = fit_power_law(&xs[i..=j], &ys[i..=j], None) {
                let better = match &best {
                    None => true,
                    Some(b) => fit.r_squared > b.r_squared,
                };
                if better {
                    best = Some(fit);
                }
            }
        }
    }
    best.ok_or(FitError::DegenerateWindow)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionOptions {
    /// Thermal floor of the photon peak; the smallest peak if `None`.
    pub background: Option<f64>,
    /// Region 1 holds peaks up to `background * (1 + background_tol)`.
    pub background_tol: f64,
    /// Local slope that marks the nonlinear onset.
    pub nonlinear_slope: f64,
    /// Local slope range of the linear regime.
    pub linear_slope: (f64, f64),
    /// Minimum span of the N grid in decades.
    pub min_decades: f64,
}

impl Default for RegionOptions {
    fn default() -> Self {
        Self {
            background: None,
            background_tol: 1.0,
            nonlinear_slope: 1.5,
            linear_slope: (0.8, 1.2),
            min_decades: 3.0,
        }
    }
}

/// Region index (1, 2, 3) of every point plus the N values where regions 2
/// and 3 begin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionPartition {
    pub regions: Vec<u8>,
    pub local_slopes: Vec<f64>,
    pub background: f64,
    pub region2_start: Option<f64>,
    pub region3_start: Option<f64>,
}

impl RegionPartition {
    /// All three regions are present and region 2 shows a nonlinear rise.
    pub fn is_complete(&self) -> bool {
        [1u8, 2, 3].iter().all(|r| self.regions.contains(r))
    }
}

/// Centred three-point slopes of `ln y` against `ln x`; one-sided at the ends.
pub fn local_log_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    (0..n)
        .map(|i| {
            let (a, b) = match i {
                0 => (0, 1.min(n - 1)),
                _ if i + 1 == n => (i - 1, i),
                _ => (i - 1, i + 1),
            };
            if a == b {
                0.0
            } else {
                (ly[b] - ly[a]) / (lx[b] - lx[a])
            }
        })
        .collect()
}

/// Splits an emitter-number sweep into negligible emission (1), nonlinear
/// onset (2) and linear growth (3).
///
/// Region 1 is the longest prefix whose peaks stay near the background,
/// region 3 the longest suffix with linear local slope, region 2 whatever
/// lies between. Region 2 is only reported if it contains a slope above
/// `nonlinear_slope`; otherwise its points join region 1 or 3.
pub fn classify_regions(
    n: &[f64],
    peaks: &[f64],
    opts: &RegionOptions,
) -> Result<RegionPartition, RegionError> {
    if n.len() != peaks.len() {
        return Err(RegionError::LengthMismatch);
    }
    if n.len() < 3
        || n.iter().any(|v| !(v.is_finite() && *v > 0.0))
        || peaks.iter().any(|v| !(v.is_finite() && *v > 0.0))
        || n.windows(2).any(|w| w[1] <= w[0])
    {
        return Err(RegionError::BadGrid);
    }
    let decades = (n[n.len() - 1] / n[0]).log10();
    if decades < opts.min_decades {
        return Err(RegionError::InsufficientSpan {
            decades,
            required: opts.min_decades,
        });
    }
    let background = opts
        .background
        .unwrap_or_else(|| peaks.iter().copied().fold(f64::INFINITY, f64::min));
    let slopes = local_log_slopes(n, peaks);
    let len = n.len();

    let r1_end = peaks
        .iter()
        .position(|&p| p > background * (1.0 + opts.background_tol))
        .unwrap_or(len);
    let (lo, hi) = opts.linear_slope;
    let mut r3_start = len;
    while r3_start > r1_end && (lo..=hi).contains(&slopes[r3_start - 1]) {
        r3_start -= 1;
    }
    let has_nonlinear = slopes[r1_end..r3_start]
        .iter()
        .any(|&s| s > opts.nonlinear_slope);

    let mut regions = vec![0u8; len];
    for (i, r) in regions.iter_mut().enumerate() {
        *r = if i < r1_end {
            1
        } else if i >= r3_start {
            3
        } else if has_nonlinear {
            2
        } else if r3_start < len {
            // No nonlinear onset: treat the transition as the start of region 3.
            3
        } else {
            1
        };
    }
    let first = |r: u8| regions.iter().position(|&x| x == r).map(|i| n[i]);
    Ok(RegionPartition {
        region2_start: first(2),
        region3_start: first(3),
        regions,
        local_slopes: slopes,
        background,
    })
}

/// Power-law fit with its window-selection mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    /// Fit over every successful point.
    pub full: Option<ScalingFit>,
    /// Best contiguous sub-range.
    pub auto: Option<ScalingFit>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub parameter: String,
    pub grid: Grid,
    pub points: usize,
    pub failed_points: Vec<usize>,
    /// `t_max` against measured N.
    pub t_max_fit: FitSummary,
    /// `p_max` against measured N.
    pub p_max_fit: FitSummary,
    pub regions: Option<RegionPartition>,
    pub regions_error: Option<String>,
}

/// Minimum points in an automatically chosen fit window.
pub const AUTO_WINDOW_MIN_POINTS: usize = 5;

fn fit_summary(x: &[f64], y: &[f64]) -> FitSummary {
    let full = fit_power_law(x, y, None);
    let auto = auto_window_fit(x, y, AUTO_WINDOW_MIN_POINTS, 0.0);
    FitSummary {
        error: full.as_ref().err().map(|e| e.to_string()),
        full: full.ok(),
        auto: auto.ok(),
    }
}

/// Fits and region classification for a finished sweep.
pub fn summarize(spec: &SweepSpec, result: &SweepResult, regions: &RegionOptions) -> SweepSummary {
    let mut n = Vec::new();
    let mut t_max = Vec::new();
    let mut p_max = Vec::new();
    for p in &result.points {
        if let (Some(nv), Some(m)) = (p.measured_n, &p.metrics) {
            n.push(nv);
            t_max.push(m.t_max);
            p_max.push(m.p_max);
        }
    }

    // Photon peaks are available even where E has no maximum.
    let mut pairs: Vec<(f64, f64)> = result
        .points
        .iter()
        .filter_map(|p| Some((p.measured_n?, p.n_ph_peak?)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.dedup_by(|a, b| a.0 == b.0);
    let (rn, rp): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let (regions, regions_error) = match classify_regions(&rn, &rp, regions) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };

    SweepSummary {
        parameter: result.parameter.clone(),
        grid: spec.grid.clone(),
        points: result.points.len(),
        failed_points: result
            .points
            .iter()
            .filter(|p| p.metrics.is_none())
            .map(|p| p.index)
            .collect(),
        t_max_fit: fit_summary(&n, &t_max),
        p_max_fit: fit_summary(&n, &p_max),
        regions,
        regions_error,
    }
}
