// Copyright 2026 Pentabat Contributors
// SPDX-License-Identifier: Apache-2.0

//! Battery figures of merit computed from sampled trajectories.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cumulant::{IntegratorConfig, Trajectory};
use crate::model::ModelParams;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ObservableError {
    #[error("stored energy has no interior maximum on the sampled interval")]
    NoMaximumFound,
    #[error("stored energy has no local minimum after its first maximum")]
    NoMinimumFound,
    #[error("storage lifetime is only defined with the load decoupled")]
    StorageLifetimeUndefined,
    #[error("photon number never rises above the thermal background")]
    NoEmission,
    #[error("invalid option: {0}")]
    InvalidOption(String),
    #[error("time and value series differ in length or are too short")]
    BadSeries,
}

/// Figures of merit of one charging/discharging run. Fields that do not
/// apply to the run (work without a load, storage lifetime with a load,
/// a lifetime longer than the simulated window) are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryMetrics {
    /// J
    pub e_max: f64,
    /// s
    pub t_max: f64,
    /// W
    pub p_max: f64,
    /// s
    pub tau_max: f64,
    pub e_min: Option<f64>,
    pub t_min: Option<f64>,
    pub work_w: Option<f64>,
    pub p_w: Option<f64>,
    pub eta: Option<f64>,
    pub tau_s: Option<f64>,
    pub n_ph_peak: Option<f64>,
    pub latency: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsOptions {
    /// Whether the run had the cavity coupled.
    pub load_coupled: bool,
    /// Time the pump was switched off, if it was.
    pub charge_stop_time: Option<f64>,
    /// Fraction of `e_max` that defines the storage lifetime.
    pub storage_threshold: f64,
    /// Fraction of the photon peak above background that defines latency.
    pub latency_frac: f64,
    /// Treat a missing post-maximum minimum as an error rather than leaving
    /// the work fields empty.
    pub require_minimum: bool,
}

impl Default for MetricsOptions {
    fn default() -> Self {
        Self {
            load_coupled: true,
            charge_stop_time: None,
            storage_threshold: (-1.0f64).exp(),
            latency_frac: 0.01,
            require_minimum: true,
        }
    }
}

impl MetricsOptions {
    pub fn for_run(cfg: &IntegratorConfig) -> Self {
        Self {
            load_coupled: cfg.load_coupled,
            charge_stop_time: cfg.charge_stop_time.filter(|&t| t < cfg.t_end),
            ..Self::default()
        }
    }
}

/// `E(t) = n_pen * hbar * omega_35 * p5(t)`.
pub fn energy_series(traj: &Trajectory, params: &ModelParams) -> Vec<f64> {
    let quantum = params.n_pen * params.hbar * params.omega_35;
    traj.states.iter().map(|s| quantum * s.p[4]).collect()
}

/// `P(t) = E(t) / t`. At `t = 0` the right limit is used: the initial slope
/// when `E(0) = 0`, otherwise infinity.
pub fn power_series(times: &[f64], energy: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = times
        .iter()
        .zip(energy)
        .map(|(&t, &e)| if t > 0.0 { e / t } else { f64::NAN })
        .collect();
    for i in 0..out.len() {
        if times[i] > 0.0 {
            continue;
        }
        out[i] = if energy[i] != 0.0 {
            f64::INFINITY.copysign(energy[i])
        } else {
            initial_slope(&times[i..], &energy[i..])
        };
    }
    out
}

fn initial_slope(t: &[f64], e: &[f64]) -> f64 {
    match t.len() {
        0 | 1 => 0.0,
        2 => (e[1] - e[0]) / (t[1] - t[0]),
        _ => {
            // Derivative of the parabola through the first three samples.
            let (h1, h2) = (t[1] - t[0], t[2] - t[0]);
            let d1 = (e[1] - e[0]) / h1;
            let d2 = (e[2] - e[0]) / h2;
            (d1 * h2 - d2 * h1) / (h2 - h1)
        }
    }
}

/// Vertex of the parabola through three samples; falls back to the middle
/// sample when the points are collinear or the vertex leaves the bracket.
fn refine_extremum(t: [f64; 3], y: [f64; 3]) -> (f64, f64) {
    let (d0, d1) = (t[1] - t[0], t[2] - t[1]);
    let s0 = (y[1] - y[0]) / d0;
    let s1 = (y[2] - y[1]) / d1;
    let curv = (s1 - s0) / (t[2] - t[0]);
    if curv == 0.0 || !curv.is_finite() {
        return (t[1], y[1]);
    }
    // y(t) = y1 + b (t - t1) + curv (t - t1)^2 with b the slope at t1.
    let b = (s0 * d1 + s1 * d0) / (d0 + d1);
    let dt = -b / (2.0 * curv);
    let tv = t[1] + dt;
    if tv < t[0] || tv > t[2] {
        return (t[1], y[1]);
    }
    (tv, y[1] + b * dt + curv * dt * dt)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Extremum {
    Max,
    Min,
}

/// First local extremum of `y` at index > `from`, refined by quadratic
/// interpolation. Plateaus are resolved to their first sample.
fn first_extremum(t: &[f64], y: &[f64], from: usize, kind: Extremum) -> Option<(usize, f64, f64)> {
    let n = y.len();
    let better = |a: f64, b: f64| match kind {
        Extremum::Max => a > b,
        Extremum::Min => a < b,
    };
    let mut i = from.max(1);
    while i + 1 < n {
        if better(y[i], y[i - 1]) {
            // Skip over an exactly flat top.
            let mut j = i;
            while j + 1 < n && y[j + 1] == y[i] {
                j += 1;
            }
            if j + 1 < n && better(y[i], y[j + 1]) {
                let (tv, yv) = if j == i {
                    refine_extremum([t[i - 1], t[i], t[i + 1]], [y[i - 1], y[i], y[i + 1]])
                } else {
                    (t[i], y[i])
                };
                return Some((i, tv, yv));
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    None
}

/// Time of the first downward crossing of `level` after `t_ref`, linearly
/// interpolated between samples.
fn first_crossing_below(t: &[f64], y: &[f64], t_ref: f64, level: f64) -> Option<f64> {
    let start = t.partition_point(|&x| x < t_ref);
    for i in start..y.len() {
        if y[i] <= level {
            if i == 0 || t[i - 1] < t_ref || y[i - 1] <= level {
                return Some(t[i]);
            }
            let f = (y[i - 1] - level) / (y[i - 1] - y[i]);
            return Some(t[i - 1] + f * (t[i] - t[i - 1]));
        }
    }
    None
}

/// `(e_max, t_max)` from the first local maximum of E.
pub fn first_energy_maximum(
    times: &[f64],
    energy: &[f64],
) -> Result<(usize, f64, f64), ObservableError> {
    check_series(times, energy)?;
    first_extremum(times, energy, 1, Extremum::Max)
        .map(|(i, t, e)| (i, e, t))
        .ok_or(ObservableError::NoMaximumFound)
}

fn check_series(times: &[f64], values: &[f64]) -> Result<(), ObservableError> {
    if times.len() != values.len() || times.len() < 3 {
        return Err(ObservableError::BadSeries);
    }
    Ok(())
}

/// Storage lifetime: time after the reference point (charge stop, or `t_max`
/// if charging continues) for E to fall to `threshold * e_max`. `Ok(None)`
/// if E never falls that far within the trajectory.
pub fn storage_lifetime(
    times: &[f64],
    energy: &[f64],
    opts: &MetricsOptions,
) -> Result<Option<f64>, ObservableError> {
    if opts.load_coupled {
        return Err(ObservableError::StorageLifetimeUndefined);
    }
    if !(opts.storage_threshold > 0.0 && opts.storage_threshold < 1.0) {
        return Err(ObservableError::InvalidOption(
            "storage_threshold must be in (0, 1)".into(),
        ));
    }
    let (_, e_max, t_max) = first_energy_maximum(times, energy)?;
    let t_ref = opts.charge_stop_time.unwrap_or(t_max);
    Ok(
        first_crossing_below(times, energy, t_ref, opts.storage_threshold * e_max)
            .map(|tc| tc - t_ref),
    )
}

/// Photon peak and emission latency.
///
/// The peak is the largest `n_ph`; latency is the first time `n_ph - n_th`
/// exceeds `threshold_frac * (peak - n_th)`.
pub fn photon_metrics(
    traj: &Trajectory,
    n_th: f64,
    threshold_frac: f64,
) -> Result<(f64, f64), ObservableError> {
    photon_metrics_series(&traj.times, &traj.photon_number(), n_th, threshold_frac)
}

pub fn photon_metrics_series(
    times: &[f64],
    n_ph: &[f64],
    n_th: f64,
    threshold_frac: f64,
) -> Result<(f64, f64), ObservableError> {
    if !(threshold_frac > 0.0 && threshold_frac < 1.0) {
        return Err(ObservableError::InvalidOption(
            "threshold_frac must be in (0, 1)".into(),
        ));
    }
    if times.len() != n_ph.len() || times.is_empty() {
        return Err(ObservableError::BadSeries);
    }
    let peak = n_ph.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let excess = peak - n_th;
    if !(excess > 1e-9 * n_th.max(1.0)) {
        return Err(ObservableError::NoEmission);
    }
    let level = threshold_frac * excess;
    let i = n_ph
        .iter()
        .position(|&v| v - n_th > level)
        .expect("peak exceeds level");
    let latency = if i == 0 {
        times[0]
    } else {
        let (a, b) = (n_ph[i - 1] - n_th, n_ph[i] - n_th);
        times[i - 1] + (level - a) / (b - a) * (times[i] - times[i - 1])
    };
    Ok((peak, latency))
}

/// All figures of merit of one run.
pub fn extract_metrics(
    traj: &Trajectory,
    params: &ModelParams,
    opts: &MetricsOptions,
) -> Result<BatteryMetrics, ObservableError> {
    let energy = energy_series(traj, params);
    metrics_from_series(
        &traj.times,
        &energy,
        &traj.photon_number(),
        params.n_th,
        opts,
    )
}

/// [`extract_metrics`] on raw series.
pub fn metrics_from_series(
    times: &[f64],
    energy: &[f64],
    n_ph: &[f64],
    n_th: f64,
    opts: &MetricsOptions,
) -> Result<BatteryMetrics, ObservableError> {
    let (i_max, e_max, t_max) = first_energy_maximum(times, energy)?;

    let power = power_series(times, energy);
    let (p_max, tau_max) = match first_extremum(times, &power, 1, Extremum::Max) {
        Some((i, t, p)) if i <= i_max => (p, t),
        // Power still rising at t_max: report its largest sampled value.
        _ => {
            let (i, p) = power[..=i_max]
                .iter()
                .enumerate()
                .filter(|(_, p)| p.is_finite())
                .fold(
                    (0, f64::NEG_INFINITY),
                    |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc },
                );
            (p, times[i])
        }
    };

    let mut m = BatteryMetrics {
        e_max,
        t_max,
        p_max,
        tau_max,
        e_min: None,
        t_min: None,
        work_w: None,
        p_w: None,
        eta: None,
        tau_s: None,
        n_ph_peak: None,
        latency: None,
    };

    if opts.load_coupled {
        match first_extremum(times, energy, i_max + 1, Extremum::Min) {
            Some((_, t_min, e_min)) => {
                let w = e_max - e_min;
                m.e_min = Some(e_min);
                m.t_min = Some(t_min);
                m.work_w = Some(w);
                m.p_w = Some(w / (t_min - t_max));
                m.eta = Some(if e_max > 0.0 { w / e_max } else { 0.0 });
            }
            None if opts.require_minimum => return Err(ObservableError::NoMinimumFound),
            None => {}
        }
    } else {
        m.tau_s = storage_lifetime(times, energy, opts)?;
    }

    match photon_metrics_series(times, n_ph, n_th, opts.latency_frac) {
        Ok((peak, latency)) => {
            m.n_ph_peak = Some(peak);
            m.latency = Some(latency);
        }
        Err(ObservableError::NoEmission) => {
            m.n_ph_peak = n_ph.iter().copied().reduce(f64::max);
        }
        Err(e) => return Err(e),
    }
    Ok(m)
}

/// Oscillatory content of E from the first time it reaches its largest
/// value: total variation minus net change, relative to `2 * max`. Zero for
/// a monotone tail; one full swing of amplitude A gives `A / max`.
pub fn ripple_after_plateau(energy: &[f64]) -> f64 {
    let peak = energy.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(peak > 0.0) {
        return 0.0;
    }
    let start = energy.iter().position(|&e| e == peak).unwrap_or(0);
    let tail = &energy[start..];
    let tv: f64 = tail.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    let net = (tail[tail.len() - 1] - tail[0]).abs();
    (tv - net) / (2.0 * peak)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cumulant::CumulantState;
    use proptest::prelude::*;

    fn grid(n: usize, t_end: f64) -> Vec<f64> {
        (0..n).map(|i| t_end * i as f64 / (n - 1) as f64).collect()
    }

    fn traj_from_p5(times: &[f64], p5: impl Fn(f64) -> f64) -> Trajectory {
        let states = times
            .iter()
            .map(|&t| CumulantState {
                p: [1.0 - p5(t), 0.0, 0.0, 0.0, p5(t)],
                ..Default::default()
            })
            .collect();
        Trajectory {
            times: times.to_vec(),
            states,
            ..Default::default()
        }
    }

    #[test]
    fn energy_examples() {
        let t = grid(5, 1.0);
        let mut p = ModelParams::default();
        assert!(energy_series(&traj_from_p5(&t, |_| 0.0), &p)
            .iter()
            .all(|&e| e == 0.0));
        p.n_pen = 1.0;
        let e = energy_series(&traj_from_p5(&t, |_| 1.0), &p);
        assert!(e.iter().all(|&x| x == p.hbar * p.omega_35));
    }

    #[test]
    fn power_examples() {
        let t = grid(11, 2.0);
        let lin: Vec<f64> = t.iter().map(|&x| 3.0 * x).collect();
        for p in power_series(&t, &lin) {
            assert!((p - 3.0).abs() < 1e-12);
        }
        let flat = vec![2.0; t.len()];
        let p = power_series(&t, &flat);
        assert_eq!(p[0], f64::INFINITY);
        for (ti, pi) in t.iter().zip(&p).skip(1) {
            assert!((pi * ti - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn synthetic_work_example() {
        // max 1 at t=1, min 0.2 at t=2
        let t = grid(3001, 3.0);
        let e: Vec<f64> = t
            .iter()
            .map(|&x| 0.6 + 0.4 * (std::f64::consts::PI * (x - 0.5)).sin())
            .collect();
        let n_ph = vec![0.0; t.len()];
        let m = metrics_from_series(&t, &e, &n_ph, 0.0, &MetricsOptions::default()).unwrap();
        assert!((m.e_max - 1.0).abs() < 1e-9);
        assert!((m.t_max - 1.0).abs() < 1e-6);
        assert!((m.t_min.unwrap() - 2.0).abs() < 1e-6);
        assert!((m.work_w.unwrap() - 0.8).abs() < 1e-9);
        assert!((m.p_w.unwrap() - 0.8).abs() < 1e-6);
        assert_eq!(m.eta.unwrap(), m.work_w.unwrap() / m.e_max);
        assert!(m.tau_max > 0.0 && m.tau_max < m.t_max);
    }

    #[test]
    fn monotone_energy_has_no_minimum_or_maximum() {
        let t = grid(50, 1.0);
        let rising: Vec<f64> = t.iter().map(|x| x * x).collect();
        let n = vec![0.0; t.len()];
        assert_eq!(
            metrics_from_series(&t, &rising, &n, 0.0, &MetricsOptions::default()),
            Err(ObservableError::NoMaximumFound)
        );
        let tail_down: Vec<f64> = t.iter().map(|&x| x * (-2.0 * x).exp()).collect();
        assert_eq!(
            metrics_from_series(&t, &tail_down, &n, 0.0, &MetricsOptions::default()),
            Err(ObservableError::NoMinimumFound)
        );
    }

    #[test]
    fn storage_lifetime_rules() {
        let t = grid(2001, 10.0);
        // Rises to 1 by t=1, then pump stops and E decays at rate 0.5.
        let e: Vec<f64> = t
            .iter()
            .map(|&x| {
                if x <= 1.0 {
                    x * (2.0 - x)
                } else {
                    (-(x - 1.0) * 0.5).exp()
                }
            })
            .collect();
        let opts = MetricsOptions {
            load_coupled: false,
            charge_stop_time: Some(1.0),
            ..Default::default()
        };
        let tau = storage_lifetime(&t, &e, &opts).unwrap().unwrap();
        // The refined maximum straddles the kink at t = 1, hence the loose bound.
        assert!((tau - 2.0).abs() < 1e-3, "{tau}");
        let coupled = MetricsOptions::default();
        assert_eq!(
            storage_lifetime(&t, &e, &coupled),
            Err(ObservableError::StorageLifetimeUndefined)
        );
        // Never decays far enough.
        let flat_tail: Vec<f64> = t
            .iter()
            .map(|&x| if x <= 1.0 { x * (2.0 - x) } else { 0.9 })
            .collect();
        assert_eq!(storage_lifetime(&t, &flat_tail, &opts).unwrap(), None);
    }

    #[test]
    fn photon_examples() {
        let t = grid(2001, 2e-6);
        let flat = vec![5.0; t.len()];
        assert_eq!(
            photon_metrics_series(&t, &flat, 5.0, 0.01),
            Err(ObservableError::NoEmission)
        );
        let pulse: Vec<f64> = t
            .iter()
            .map(|&x| 5.0 + 40.0 * (-((x - 1e-6) / 1e-7).powi(2)).exp())
            .collect();
        let (peak, lat) = photon_metrics_series(&t, &pulse, 5.0, 0.01).unwrap();
        assert!((peak - 45.0).abs() < 1e-9);
        assert!(lat < 1e-6 && lat > 7e-7);
        assert!(photon_metrics_series(&t, &pulse, 5.0, 1.5).is_err());
    }

    #[test]
    fn ripple_examples() {
        let mono: Vec<f64> = (0..100).map(|i| 1.0 - (-(i as f64) / 10.0).exp()).collect();
        assert!(ripple_after_plateau(&mono) < 1e-15);
        let mut swing = vec![1.0; 10];
        swing.extend([0.9, 1.0]);
        assert!((ripple_after_plateau(&swing) - 0.1).abs() < 1e-12);
        let overshoot = [0.0, 0.5, 1.0, 0.95, 0.9, 0.85];
        assert_eq!(ripple_after_plateau(&overshoot), 0.0);
    }

    #[test]
    fn quadratic_refinement_is_exact_on_parabolas() {
        let (t, y) = refine_extremum([0.0, 1.0, 3.0], [0.0, 2.0, 0.0]);
        // y = 3t - t^2 through (0,0), (1,2), (3,0) has its vertex at (1.5, 2.25).
        assert!((t - 1.5).abs() < 1e-12);
        assert!((y - 2.25).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn scale_equivariance(c in 0.1f64..1e3) {
            let t = grid(400, 4.0);
            let e: Vec<f64> = t.iter().map(|&x| x * (-x).exp() + 0.05 * (3.0 * x).sin().powi(2) * x).collect();
            let es: Vec<f64> = e.iter().map(|v| v * c).collect();
            let n = vec![0.0; t.len()];
            let opts = MetricsOptions::default();
            let (a, b) = (metrics_from_series(&t, &e, &n, 0.0, &opts), metrics_from_series(&t, &es, &n, 0.0, &opts));
            match (a, b) {
                (Ok(a), Ok(b)) => {
                    prop_assert!((b.e_max - c * a.e_max).abs() <= 1e-12 * b.e_max.abs());
                    prop_assert!((b.t_max - a.t_max).abs() <= 1e-12);
                    prop_assert!((b.p_max - c * a.p_max).abs() <= 1e-12 * b.p_max.abs());
                    prop_assert!((b.work_w.unwrap() - c * a.work_w.unwrap()).abs() <= 1e-11 * b.e_max);
                }
                (Err(x), Err(y)) => prop_assert_eq!(x, y),
                _ => prop_assert!(false),
            }
        }
    }
}
