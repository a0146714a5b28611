// Copyright 2026 Pentabat Contributors
// SPDX-License-Identifier: Apache-2.0

//! Second-order cumulant equations of motion for the pentacene ensemble.
//!
//! The molecules are identical, so every one-molecule expectation value is
//! tracked for a single representative and every two-molecule expectation
//! value for one representative pair. The closed set is
//!
//! * one-molecule means: populations `p1..p5`, triplet coherences
//!   `<s35>`, `<s45>`, `<s34>`;
//! * cavity mean `<a>` and photon number `<a+ a>`;
//! * second moments `<a+ s35>` and `<s53_j s35_k>` (j != k), which carry the
//!   spin-photon and spin-spin correlations needed for spontaneous masing.
//!
//! All other second-order cumulants are set to zero and third-order moments
//! are factorized at vanishing third cumulant. Equations are written in the
//! frame rotating at `omega_d`; see [`DetuningFrame::level_energies`].

mod extended;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelParams, ValidatedModel};
use crate::ode::{self, Dopri5Options, IntegrationStats, OdeError, OdeSystem};

use extended::Extended;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Number of real components in [`CumulantState::to_array`].
pub const STATE_DIM: usize = 18;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EomError {
    #[error("level pair {0:?} is not one of (3,5), (4,5), (3,4)")]
    InvalidPair((usize, usize)),
    #[error("non-finite state")]
    NonFiniteState,
    #[error("initial state violates invariants: {0}")]
    InvalidInitialState(String),
    #[error("invalid integrator configuration: {0}")]
    InvalidConfig(String),
    #[error("step size underflow at t = {t:e} s")]
    StepSizeUnderflow { t: f64 },
    #[error("tolerance not met within {steps} steps (stopped at t = {t:e} s)")]
    ToleranceNotMet { t: f64, steps: usize },
}

impl From<OdeError> for EomError {
    fn from(e: OdeError) -> Self {
        match e {
            OdeError::StepSizeUnderflow { t, .. } => EomError::StepSizeUnderflow { t },
            OdeError::ToleranceNotMet { t, steps } => EomError::ToleranceNotMet { t, steps },
            OdeError::NonFiniteState { .. } => EomError::NonFiniteState,
            OdeError::InvalidRequest(m) => EomError::InvalidConfig(m),
        }
    }
}

/// The closed set of expectation values.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CumulantState {
    /// Populations `<s_jj>` of levels 1..5 for one molecule.
    pub p: [f64; 5],
    /// `<a+ a>`
    pub n_ph: f64,
    /// `<a+ s35>`
    pub c35: Complex64,
    /// `<s53_j s35_k>`, j != k
    pub s_coll: Complex64,
    /// `<s35>`
    pub m35: Complex64,
    /// `<s45>`
    pub m45: Complex64,
    /// `<s34>`
    pub m34: Complex64,
    /// `<a>`
    pub alpha: Complex64,
}

impl CumulantState {
    /// All molecules in the ground singlet, cavity at thermal occupation,
    /// no coherences or correlations.
    pub fn ground(n_th: f64) -> Self {
        Self {
            p: [1.0, 0.0, 0.0, 0.0, 0.0],
            n_ph: n_th,
            ..Self::default()
        }
    }

    pub fn population_sum(&self) -> f64 {
        self.p.iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn to_array(&self) -> [f64; STATE_DIM] {
        let [p1, p2, p3, p4, p5] = self.p;
        [
            p1,
            p2,
            p3,
            p4,
            p5,
            self.n_ph,
            self.c35.re,
            self.c35.im,
            self.s_coll.re,
            self.s_coll.im,
            self.m35.re,
            self.m35.im,
            self.m45.re,
            self.m45.im,
            self.m34.re,
            self.m34.im,
            self.alpha.re,
            self.alpha.im,
        ]
    }

    pub fn from_slice(y: &[f64]) -> Self {
        Self {
            p: [y[0], y[1], y[2], y[3], y[4]],
            n_ph: y[5],
            c35: Complex64::new(y[6], y[7]),
            s_coll: Complex64::new(y[8], y[9]),
            m35: Complex64::new(y[10], y[11]),
            m45: Complex64::new(y[12], y[13]),
            m34: Complex64::new(y[14], y[15]),
            alpha: Complex64::new(y[16], y[17]),
        }
    }
}

/// Coherence decay rate of the triplet pair `(i, j)` implied by the
/// dissipators: half the population out-rates of both levels, the full
/// same-pair dephasing, and a quarter of each other pair's dephasing.
pub fn transverse_rate(params: &ModelParams, pair: (usize, usize)) -> Result<f64, EomError> {
    let (a, b) = if pair.0 <= pair.1 {
        pair
    } else {
        (pair.1, pair.0)
    };
    let p = params;
    let (own, others) = match (a, b) {
        (3, 5) => (p.chi_35, p.chi_34 + p.chi_45),
        (4, 5) => (p.chi_45, p.chi_34 + p.chi_35),
        (3, 4) => (p.chi_34, p.chi_35 + p.chi_45),
        _ => return Err(EomError::InvalidPair(pair)),
    };
    Ok(own + 0.25 * others + 0.5 * (p.triplet_out_rate(a) + p.triplet_out_rate(b)))
}

/// Rates and couplings resolved once per integration segment.
#[derive(Debug, Clone, Copy)]
struct Coefficients {
    n: f64,
    xi: f64,
    k_sp: f64,
    k_2: [f64; 3],
    k_1: [f64; 3],
    // slr[i][j]: transfer from level i+3 to level j+3
    slr: [[f64; 3]; 3],
    gamma_35: f64,
    gamma_45: f64,
    gamma_34: f64,
    g: f64,
    kappa: f64,
    n_th: f64,
    drive_35: f64,
    drive_45: f64,
    drive_34: f64,
    energies: [f64; 3],
    delta_b: f64,
    delta_m: f64,
}

impl Coefficients {
    fn new(model: &ValidatedModel, pumped: bool, load_coupled: bool) -> Self {
        let p = model.params();
        let frame = model.frame();
        let gamma = |pair| transverse_rate(p, pair).expect("valid pair");
        Self {
            n: p.n_pen,
            xi: if pumped { p.xi } else { 0.0 },
            k_sp: p.k_sp,
            k_2: [p.k_23, p.k_24, p.k_25],
            k_1: [p.k_31, p.k_41, p.k_51],
            slr: [
                [0.0, p.k_34, p.k_35],
                [p.k_43, 0.0, p.k_45],
                [p.k_53, p.k_54, 0.0],
            ],
            gamma_35: gamma((3, 5)),
            gamma_45: gamma((4, 5)),
            gamma_34: gamma((3, 4)),
            g: if load_coupled { p.g_35 } else { 0.0 },
            kappa: p.kappa,
            n_th: p.n_th,
            drive_35: p.drive_35,
            drive_45: p.drive_45,
            drive_34: p.drive_34,
            energies: frame.level_energies(),
            delta_b: frame.delta_b,
            delta_m: frame.delta_m,
        }
    }

    fn derivative(&self, s: &CumulantState) -> CumulantState {
        let [p1, p2, p3, p4, p5] = s.p;
        let (n, c, sc) = (s.n_ph, s.c35, s.s_coll);
        let (m35, m45, m34, alpha) = (s.m35, s.m45, s.m34, s.alpha);
        let g = self.g;
        let z = p5 - p3;

        // One-molecule triplet block, basis (|3>, |4>, |5>), rho[a][b] = <|b><a|>.
        let rho = [
            [Complex64::new(p3, 0.0), m34.conj(), m35.conj()],
            [m34, Complex64::new(p4, 0.0), m45.conj()],
            [m35, m45, Complex64::new(p5, 0.0)],
        ];
        // Effective one-molecule Hamiltonian: frame energies, classical drives
        // and the mean cavity field.
        let [e3, e4, e5] = self.energies;
        let (o35, o45, o34) = (self.drive_35, self.drive_45, self.drive_34);
        let h = [
            [
                Complex64::new(e3, 0.0),
                Complex64::new(o34, 0.0),
                o35 + g * alpha.conj(),
            ],
            [
                Complex64::new(o34, 0.0),
                Complex64::new(e4, 0.0),
                Complex64::new(o45, 0.0),
            ],
            [
                o35 + g * alpha,
                Complex64::new(o45, 0.0),
                Complex64::new(e5, 0.0),
            ],
        ];
        let mut comm = [[Complex64::default(); 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                let mut acc = Complex64::default();
                for k in 0..3 {
                    acc += h[a][k] * rho[k][b] - rho[a][k] * h[k][b];
                }
                comm[a][b] = -I * acc;
            }
        }

        // Incoherent population flow.
        let trip = [p3, p4, p5];
        let mut dtrip = [0.0; 3];
        for i in 0..3 {
            dtrip[i] += self.k_2[i] * p2 - self.k_1[i] * trip[i];
            for j in 0..3 {
                dtrip[i] += self.slr[j][i] * trip[j] - self.slr[i][j] * trip[i];
            }
            dtrip[i] += comm[i][i].re;
        }
        let k_isc: f64 = self.k_2.iter().sum();
        let dp1 = (self.xi + self.k_sp) * p2 - self.xi * p1
            + self.k_1[0] * p3
            + self.k_1[1] * p4
            + self.k_1[2] * p5;
        let dp2 = self.xi * p1 - (self.xi + self.k_sp + k_isc) * p2;

        // Spin-photon correlation beyond the mean-field product.
        let exchange = 2.0 * g * (c - alpha.conj() * m35).im;
        dtrip[2] -= exchange;
        dtrip[0] += exchange;

        let dm35 = comm[2][0] - self.gamma_35 * m35;
        let dm45 = comm[2][1] - self.gamma_45 * m45;
        let dm34 = comm[1][0] - self.gamma_34 * m34;

        let dalpha = -(I * self.delta_m + 0.5 * self.kappa) * alpha - I * g * self.n * m35;
        let dn = -self.kappa * (n - self.n_th) + 2.0 * g * self.n * c.im;

        let dc = I * (self.delta_m - self.delta_b) * c - (0.5 * self.kappa + self.gamma_35) * c
            + I * g * (p5 * (n + 1.0) - p3 * n + (self.n - 1.0) * sc)
            + I * alpha.conj() * (o35 * z - o45 * m34 + o34 * m45);

        let x = -I * self.delta_b * sc
            + I * m35.conj() * (o35 * z - o45 * m34 + o34 * m45)
            + I * g * c.conj() * z
            - self.gamma_35 * sc;
        let y = I * self.delta_b * sc
            - I * m35 * (o35 * z - o45 * m34.conj() + o34 * m45.conj())
            - I * g * c * z
            - self.gamma_35 * sc;
        let ds = x + y;

        CumulantState {
            p: [dp1, dp2, dtrip[0], dtrip[1], dtrip[2]],
            n_ph: dn,
            c35: dc,
            s_coll: ds,
            m35: dm35,
            m45: dm45,
            m34: dm34,
            alpha: dalpha,
        }
    }
}

/// Time derivative of `state` under the full (pumped, load-coupled) model.
pub fn rhs(state: &CumulantState, model: &ValidatedModel) -> Result<CumulantState, EomError> {
    if !state.is_finite() {
        return Err(EomError::NonFiniteState);
    }
    let d = Coefficients::new(model, true, true).derivative(state);
    if d.is_finite() {
        Ok(d)
    } else {
        Err(EomError::NonFiniteState)
    }
}

impl OdeSystem for Coefficients {
    fn dim(&self) -> usize {
        STATE_DIM
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        let d = self.derivative(&CumulantState::from_slice(y));
        dy.copy_from_slice(&d.to_array());
    }
}

/// Sampling times of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputGrid {
    /// `points` equally spaced samples on `[0, t_end]`, both ends included.
    Uniform { points: usize },
    /// Explicit sorted sample times in `[0, t_end]`.
    Explicit { times: Vec<f64> },
}

impl OutputGrid {
    pub fn times(&self, t_end: f64) -> Vec<f64> {
        match self {
            OutputGrid::Uniform { points } => {
                let n = (*points).max(2);
                (0..n)
                    .map(|i| {
                        if i + 1 == n {
                            t_end
                        } else {
                            t_end * i as f64 / (n - 1) as f64
                        }
                    })
                    .collect()
            }
            OutputGrid::Explicit { times } => times.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Largest step (s); `None` for unlimited.
    pub max_step: Option<f64>,
    pub t_end: f64,
    pub grid: OutputGrid,
    /// Switch the optical pump off at this time (s).
    pub charge_stop_time: Option<f64>,
    /// When false the cavity coupling is removed (`g_35 = 0`).
    pub load_coupled: bool,
    pub max_steps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            max_step: None,
            t_end: 3e-6,
            grid: OutputGrid::Uniform { points: 3001 },
            charge_stop_time: None,
            load_coupled: true,
            max_steps: 5_000_000,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<(), EomError> {
        if !(self.rel_tol > 0.0) || !(self.abs_tol > 0.0) {
            return Err(EomError::InvalidConfig(
                "tolerances must be positive".into(),
            ));
        }
        if !(self.t_end > 0.0) || !self.t_end.is_finite() {
            return Err(EomError::InvalidConfig(
                "t_end must be positive and finite".into(),
            ));
        }
        if let Some(h) = self.max_step {
            if !(h > 0.0) {
                return Err(EomError::InvalidConfig("max_step must be positive".into()));
            }
        }
        if let Some(ts) = self.charge_stop_time {
            if !(ts >= 0.0) || !ts.is_finite() {
                return Err(EomError::InvalidConfig(
                    "charge_stop_time must be non-negative".into(),
                ));
            }
        }
        let times = self.grid.times(self.t_end);
        if times.is_empty()
            || times.windows(2).any(|w| w[1] < w[0])
            || times.iter().any(|&t| t < 0.0 || t > self.t_end)
        {
            return Err(EomError::InvalidConfig(
                "output grid must be sorted within [0, t_end]".into(),
            ));
        }
        Ok(())
    }
}

/// Sampled time evolution.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<CumulantState>,
    #[serde(skip)]
    pub stats: IntegrationStats,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn population(&self, level: usize) -> Vec<f64> {
        self.states.iter().map(|s| s.p[level - 1]).collect()
    }

    pub fn photon_number(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.n_ph).collect()
    }

    /// Largest `|sum_j p_j - 1|` over the trajectory.
    pub fn max_population_drift(&self) -> f64 {
        self.states
            .iter()
            .map(|s| (s.population_sum() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Most negative population (or zero).
    pub fn min_population(&self) -> f64 {
        self.states
            .iter()
            .flat_map(|s| s.p.iter().copied())
            .fold(0.0, f64::min)
    }
}

fn abs_tolerances(model: &ValidatedModel, abs_tol: f64) -> Vec<f64> {
    let p = model.params();
    let photon_scale = p.n_th + 1.0;
    let amp_scale = photon_scale.sqrt();
    let mut atol = vec![abs_tol; STATE_DIM];
    atol[5] = abs_tol * photon_scale;
    for i in [6, 7, 16, 17] {
        atol[i] = abs_tol * amp_scale;
    }
    atol
}

fn check_initial(s: &CumulantState, tol: f64) -> Result<(), EomError> {
    if !s.is_finite() {
        return Err(EomError::InvalidInitialState("non-finite entries".into()));
    }
    let drift = (s.population_sum() - 1.0).abs();
    if drift > tol {
        return Err(EomError::InvalidInitialState(format!(
            "populations sum to {}",
            s.population_sum()
        )));
    }
    if s.p.iter().any(|&v| v < -tol || v > 1.0 + tol) {
        return Err(EomError::InvalidInitialState(
            "population outside [0, 1]".into(),
        ));
    }
    if s.n_ph < -tol {
        return Err(EomError::InvalidInitialState(
            "negative photon number".into(),
        ));
    }
    Ok(())
}

/// Which set of moments is propagated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Closure {
    /// The eighteen real components of [`CumulantState`]; exact at second
    /// order when no drive is applied.
    Compact,
    /// All one-molecule, spin-photon and molecule-pair moments, needed once a
    /// drive breaks the excitation-number symmetry.
    Extended,
}

impl Closure {
    pub fn for_model(model: &ValidatedModel) -> Self {
        let p = model.params();
        if p.drive_35 == 0.0 && p.drive_45 == 0.0 && p.drive_34 == 0.0 {
            Closure::Compact
        } else {
            Closure::Extended
        }
    }
}

/// Integrates the moment equations from `initial` on `cfg.grid`.
///
/// Drive-free models propagate the compact state directly; driven models use
/// the extended closure and report its projection onto [`CumulantState`].
///
/// A charge stop is handled by splitting the integration at exactly
/// `charge_stop_time` and restarting with the pump off.
pub fn integrate(
    initial: &CumulantState,
    model: &ValidatedModel,
    cfg: &IntegratorConfig,
) -> Result<Trajectory, EomError> {
    integrate_with(initial, model, cfg, Closure::for_model(model))
}

/// [`integrate`] with an explicit choice of closure.
pub fn integrate_with(
    initial: &CumulantState,
    model: &ValidatedModel,
    cfg: &IntegratorConfig,
    closure: Closure,
) -> Result<Trajectory, EomError> {
    cfg.validate()?;
    check_initial(initial, 1e-9)?;

    let times = cfg.grid.times(cfg.t_end);
    let mut opts = Dopri5Options {
        rel_tol: cfg.rel_tol,
        abs_tol: match closure {
            Closure::Compact => abs_tolerances(model, cfg.abs_tol),
            Closure::Extended => Extended::abs_tolerances(model, cfg.abs_tol),
        },
        max_step: cfg.max_step.unwrap_or(f64::INFINITY),
        initial_step: None,
        max_steps: cfg.max_steps,
    };
    let mut states = vec![CumulantState::default(); times.len()];
    let mut stats = IntegrationStats::default();

    let stop = cfg.charge_stop_time.filter(|&ts| ts < cfg.t_end);
    let segments: Vec<(f64, f64, bool)> = match stop {
        Some(ts) if ts > 0.0 => vec![(0.0, ts, true), (ts, cfg.t_end, false)],
        Some(_) => vec![(0.0, cfg.t_end, false)],
        None => vec![(0.0, cfg.t_end, true)],
    };

    let mut y = match closure {
        Closure::Compact => initial.to_array().to_vec(),
        Closure::Extended => Extended::embed(initial),
    };
    let project = match closure {
        Closure::Compact => CumulantState::from_slice as fn(&[f64]) -> CumulantState,
        Closure::Extended => Extended::project,
    };
    let mut first_out = 0;
    for (k, &(t0, t1, pumped)) in segments.iter().enumerate() {
        let is_last = k + 1 == segments.len();
        // Samples exactly at a segment boundary belong to the earlier segment.
        let end_out = if is_last {
            times.len()
        } else {
            first_out + times[first_out..].partition_point(|&t| t <= t1)
        };
        let outs = &times[first_out..end_out];
        let sink = |i: usize, _: f64, yy: &[f64]| states[first_out + i] = project(yy);
        let (y_end, seg_stats) = match closure {
            Closure::Compact => {
                let sys = Coefficients::new(model, pumped, cfg.load_coupled);
                ode::integrate(&sys, t0, &y, t1, outs, &opts, sink)?
            }
            Closure::Extended => {
                let sys = Extended::new(model, pumped, cfg.load_coupled);
                ode::integrate(&sys, t0, &y, t1, outs, &opts, sink)?
            }
        };
        stats += seg_stats;
        y = y_end;
        first_out = end_out;
        opts.max_steps = cfg
            .max_steps
            .saturating_sub(stats.accepted + stats.rejected)
            .max(1);
    }

    Ok(Trajectory {
        times,
        states,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate, ModelParams};

    fn zero_model() -> ModelParams {
        ModelParams::zeroed()
    }

    #[test]
    fn transverse_rate_examples() {
        let mut p = zero_model();
        assert_eq!(transverse_rate(&p, (3, 5)).unwrap(), 0.0);
        p.chi_35 = 1.0;
        assert_eq!(transverse_rate(&p, (3, 5)).unwrap(), 1.0);
        assert_eq!(transverse_rate(&p, (5, 3)).unwrap(), 1.0);
        assert_eq!(transverse_rate(&p, (4, 5)).unwrap(), 0.25);
        p.chi_35 = 0.0;
        p.k_51 = 2.0;
        assert_eq!(transverse_rate(&p, (3, 5)).unwrap(), 1.0);
        assert!(matches!(
            transverse_rate(&p, (1, 2)),
            Err(EomError::InvalidPair(_))
        ));
    }

    #[test]
    fn transverse_rate_full_formula() {
        let p = ModelParams::default();
        let expected = p.chi_35
            + (p.chi_34 + p.chi_45) / 4.0
            + (p.k_31 + p.k_34 + p.k_35 + p.k_51 + p.k_54 + p.k_53) / 2.0;
        assert_eq!(transverse_rate(&p, (3, 5)).unwrap(), expected);
    }

    #[test]
    fn single_channel_pump() {
        let mut p = zero_model();
        p.xi = 3.0;
        let m = validate(&p).unwrap();
        let d = rhs(&CumulantState::ground(0.0), &m).unwrap();
        assert_eq!(d.p, [-3.0, 3.0, 0.0, 0.0, 0.0]);
        assert_eq!(d.n_ph, 0.0);
        assert_eq!(d.c35, Complex64::default());
    }

    #[test]
    fn thermal_fill_of_empty_cavity() {
        let mut p = zero_model();
        p.kappa = 2.0;
        p.n_th = 5.0;
        let m = validate(&p).unwrap();
        let d = rhs(&CumulantState::ground(0.0), &m).unwrap();
        assert_eq!(d.n_ph, 10.0);
    }

    #[test]
    fn spontaneous_seed_from_excited_level() {
        let mut p = zero_model();
        p.g_35 = 0.7;
        p.n_pen = 3.0;
        let m = validate(&p).unwrap();
        let s = CumulantState {
            p: [0.0, 0.0, 0.0, 0.0, 1.0],
            ..Default::default()
        };
        let d = rhs(&s, &m).unwrap();
        assert_eq!(d.c35, Complex64::new(0.0, 0.7));
        assert_eq!(d.p, [0.0; 5]);
    }

    #[test]
    fn rhs_rejects_nan() {
        let m = validate(&zero_model()).unwrap();
        let s = CumulantState {
            n_ph: f64::NAN,
            ..CumulantState::ground(0.0)
        };
        assert_eq!(rhs(&s, &m), Err(EomError::NonFiniteState));
    }

    #[test]
    fn drive_free_resonant_sector_matches_rate_equations() {
        let p = ModelParams {
            n_pen: 1e3,
            ..ModelParams::default()
        };
        let m = validate(&p).unwrap();
        let s = CumulantState {
            p: [0.3, 0.1, 0.15, 0.2, 0.25],
            n_ph: 12.0,
            c35: Complex64::new(0.01, 0.02),
            s_coll: Complex64::new(0.003, 0.0),
            ..Default::default()
        };
        let d = rhs(&s, &m).unwrap();
        let [p1, p2, p3, p4, p5] = s.p;
        let g = p.g_35;
        let dp4 = p.k_24 * p2 - p.k_41 * p4 + (p.k_34 * p3 + p.k_54 * p5 - (p.k_43 + p.k_45) * p4);
        let dp5 = p.k_25 * p2 - p.k_51 * p5 + p.k_35 * p3 + p.k_45 * p4
            - (p.k_53 + p.k_54) * p5
            - 2.0 * g * s.c35.im;
        let dp2 = p.xi * p1 - (p.xi + p.k_sp + p.k_23 + p.k_24 + p.k_25) * p2;
        let dn = -p.kappa * (s.n_ph - p.n_th) + 2.0 * g * p.n_pen * s.c35.im;
        let gp = transverse_rate(&p, (3, 5)).unwrap();
        let dc = I * g * (p5 * (s.n_ph + 1.0) - p3 * s.n_ph + (p.n_pen - 1.0) * s.s_coll)
            - (0.5 * p.kappa + gp) * s.c35;
        let ds = 2.0 * g * (p5 - p3) * s.c35.im - 2.0 * gp * s.s_coll.re;
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-30);
        assert!(close(d.p[3], dp4));
        assert!(close(d.p[4], dp5));
        assert!(close(d.p[1], dp2));
        assert!(close(d.n_ph, dn));
        assert!(close(d.c35.re, dc.re) && close(d.c35.im, dc.im));
        assert!(close(d.s_coll.re, ds) && d.s_coll.im.abs() < 1e-20);
        assert!(d.p.iter().sum::<f64>().abs() < 1e-6 * p.xi);
    }

    #[test]
    fn zero_rates_keep_state_constant() {
        let m = validate(&zero_model()).unwrap();
        let s0 = CumulantState {
            p: [0.2, 0.2, 0.2, 0.2, 0.2],
            n_ph: 3.0,
            ..Default::default()
        };
        let cfg = IntegratorConfig {
            t_end: 1.0,
            grid: OutputGrid::Uniform { points: 11 },
            ..Default::default()
        };
        let traj = integrate(&s0, &m, &cfg).unwrap();
        assert!(traj.states.iter().all(|s| *s == s0));
    }

    #[test]
    fn isolated_decay_is_exponential() {
        let mut p = zero_model();
        p.k_51 = 2.0e4;
        let m = validate(&p).unwrap();
        let s0 = CumulantState {
            p: [0.0, 0.0, 0.0, 0.0, 1.0],
            ..Default::default()
        };
        let cfg = IntegratorConfig {
            t_end: 2e-4,
            grid: OutputGrid::Uniform { points: 201 },
            ..Default::default()
        };
        let traj = integrate(&s0, &m, &cfg).unwrap();
        for (t, s) in traj.times.iter().zip(&traj.states) {
            let exact = (-2.0e4 * t).exp();
            assert!((s.p[4] - exact).abs() <= 1e-7 * exact.max(1e-6));
        }
    }

    #[test]
    fn drive_free_coherences_stay_zero() {
        let m = validate(&ModelParams::default()).unwrap();
        let cfg = IntegratorConfig {
            t_end: 1e-6,
            grid: OutputGrid::Uniform { points: 101 },
            ..Default::default()
        };
        let traj = integrate(&CumulantState::ground(m.params().n_th), &m, &cfg).unwrap();
        for s in &traj.states {
            assert_eq!(s.m35, Complex64::default());
            assert_eq!(s.m45, Complex64::default());
            assert_eq!(s.m34, Complex64::default());
            assert_eq!(s.alpha, Complex64::default());
        }
    }

    #[test]
    fn charge_stop_switches_pump_off_exactly() {
        let mut p = zero_model();
        p.xi = 1e6;
        let m = validate(&p).unwrap();
        let cfg = IntegratorConfig {
            t_end: 2e-6,
            grid: OutputGrid::Uniform { points: 21 },
            charge_stop_time: Some(1e-6),
            ..Default::default()
        };
        let traj = integrate(&CumulantState::ground(0.0), &m, &cfg).unwrap();
        // Only xi is on: p2 relaxes towards 1/2 with rate 2 xi, then freezes.
        let at_stop = 0.5 * (1.0 - (-2.0f64).exp());
        assert!((traj.states[10].p[1] - at_stop).abs() < 1e-8);
        for s in &traj.states[10..] {
            assert!((s.p[1] - at_stop).abs() < 1e-8);
        }
    }

    #[test]
    fn rejects_bad_initial_state_and_config() {
        let m = validate(&zero_model()).unwrap();
        let cfg = IntegratorConfig::default();
        let bad = CumulantState {
            p: [0.5, 0.0, 0.0, 0.0, 0.0],
            ..Default::default()
        };
        assert!(matches!(
            integrate(&bad, &m, &cfg),
            Err(EomError::InvalidInitialState(_))
        ));
        let cfg = IntegratorConfig {
            t_end: -1.0,
            ..Default::default()
        };
        assert!(matches!(
            integrate(&CumulantState::ground(0.0), &m, &cfg),
            Err(EomError::InvalidConfig(_))
        ));
    }

    #[test]
    fn closures_agree_without_drive() {
        let m = validate(&ModelParams::default()).unwrap();
        let cfg = IntegratorConfig {
            rel_tol: 1e-11,
            abs_tol: 1e-13,
            t_end: 1.2e-6,
            grid: OutputGrid::Uniform { points: 121 },
            ..Default::default()
        };
        let s0 = CumulantState::ground(m.params().n_th);
        let a = integrate_with(&s0, &m, &cfg, Closure::Compact).unwrap();
        let b = integrate_with(&s0, &m, &cfg, Closure::Extended).unwrap();
        // Independent step sequences: compare relative to each series' peak.
        let n_peak = a.photon_number().into_iter().fold(0.0, f64::max);
        let c_peak = a.states.iter().map(|s| s.c35.norm()).fold(0.0, f64::max);
        for (x, y) in a.states.iter().zip(&b.states) {
            for k in 0..5 {
                assert!((x.p[k] - y.p[k]).abs() < 1e-7, "{k}: {} {}", x.p[k], y.p[k]);
            }
            assert!(
                (x.n_ph - y.n_ph).abs() < 1e-6 * n_peak,
                "{} {}",
                x.n_ph,
                y.n_ph
            );
            assert!(
                (x.c35 - y.c35).norm() < 1e-6 * c_peak,
                "{} {} {}",
                x.c35,
                y.c35,
                c_peak
            );
        }
    }

    #[test]
    fn uniform_grid_hits_endpoints() {
        let t = OutputGrid::Uniform { points: 4 }.times(3.0);
        assert_eq!(t, vec![0.0, 1.0, 2.0, 3.0]);
    }
}
