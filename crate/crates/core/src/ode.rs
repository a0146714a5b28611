// Copyright 2026 Pentabat Contributors
// SPDX-License-Identifier: Apache-2.0

//! Adaptive Dormand-Prince 5(4) integrator with continuous (dense) output.
//!
//! Step control is the PI controller of Hairer, Norsett & Wanner; dense output
//! uses the fourth-order continuous extension of the same tableau, so output
//! samples never force extra steps.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OdeError {
    #[error("step size underflow at t = {t:e} (h = {h:e})")]
    StepSizeUnderflow { t: f64, h: f64 },
    #[error("tolerance not met within {steps} steps (stopped at t = {t:e})")]
    ToleranceNotMet { t: f64, steps: usize },
    #[error("non-finite state at t = {t:e}")]
    NonFiniteState { t: f64 },
    #[error("invalid integration request: {0}")]
    InvalidRequest(String),
}

/// A first-order system `y' = f(t, y)`.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]);

    /// Magnitudes that relative tolerances apply to. Systems integrated in
    /// shifted variables can report the size of the unshifted quantity.
    fn error_scale(&self, y: &[f64], scale: &mut [f64]) {
        for (s, v) in scale.iter_mut().zip(y) {
            *s = v.abs();
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dopri5Options {
    pub rel_tol: f64,
    /// Absolute tolerance per component; must have length `dim`.
    pub abs_tol: Vec<f64>,
    pub max_step: f64,
    pub initial_step: Option<f64>,
    pub max_steps: usize,
}

impl Dopri5Options {
    pub fn uniform(dim: usize, rel_tol: f64, abs_tol: f64) -> Self {
        Self {
            rel_tol,
            abs_tol: vec![abs_tol; dim],
            max_step: f64::INFINITY,
            initial_step: None,
            max_steps: 10_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IntegrationStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

impl std::ops::AddAssign for IntegrationStats {
    fn add_assign(&mut self, rhs: Self) {
        self.accepted += rhs.accepted;
        self.rejected += rhs.rejected;
        self.rhs_evals += rhs.rhs_evals;
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const BETA: f64 = 0.04;

struct Workspace {
    k: [Vec<f64>; 7],
    y_stage: Vec<f64>,
    y_new: Vec<f64>,
    err: Vec<f64>,
    scale_old: Vec<f64>,
    scale_new: Vec<f64>,
    cont: [Vec<f64>; 5],
}

impl Workspace {
    fn new(n: usize) -> Self {
        let z = || vec![0.0; n];
        Self {
            k: [z(), z(), z(), z(), z(), z(), z()],
            y_stage: z(),
            y_new: z(),
            err: z(),
            scale_old: z(),
            scale_new: z(),
            cont: [z(), z(), z(), z(), z()],
        }
    }
}

/// Largest scaled error over all components. An RMS norm would let one
/// component exceed its tolerance by up to `sqrt(dim)` in large systems.
fn error_norm(scale0: &[f64], scale1: &[f64], err: &[f64], opts: &Dopri5Options) -> f64 {
    (0..err.len())
        .map(|i| {
            let sc = opts.abs_tol[i] + opts.rel_tol * scale0[i].max(scale1[i]);
            (err[i] / sc).abs()
        })
        .fold(0.0, f64::max)
}

fn initial_step<S: OdeSystem>(
    sys: &S,
    t0: f64,
    y0: &[f64],
    f0: &[f64],
    opts: &Dopri5Options,
    span: f64,
) -> f64 {
    let n = y0.len();
    let mut sc = vec![0.0; n];
    sys.error_scale(y0, &mut sc);
    for (s, a) in sc.iter_mut().zip(&opts.abs_tol) {
        *s = a + opts.rel_tol * *s;
    }
    let norm = |v: &[f64]| -> f64 {
        ((0..n).map(|i| (v[i] / sc[i]).powi(2)).sum::<f64>() / n as f64).sqrt()
    };
    let d0 = norm(y0);
    let d1 = norm(f0);
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6 * span
    } else {
        0.01 * d0 / d1
    };
    h0 = h0.min(opts.max_step).min(span);
    let y1: Vec<f64> = (0..n).map(|i| y0[i] + h0 * f0[i]).collect();
    let mut f1 = vec![0.0; n];
    sys.rhs(t0 + h0, &y1, &mut f1);
    let diff: Vec<f64> = (0..n).map(|i| f1[i] - f0[i]).collect();
    let d2 = norm(&diff) / h0;
    let dmax = d1.max(d2);
    let h1 = if dmax <= 1e-15 {
        (1e-6 * h0).max(1e-6 * span)
    } else {
        (0.01 / dmax).powf(0.2)
    };
    (100.0 * h0).min(h1).min(opts.max_step).min(span)
}

/// Integrates `sys` from `(t0, y0)` to `t_end`, calling `sink(i, t, y)` for
/// each `outputs[i]` in order. Output times must be sorted and lie in
/// `[t0, t_end]`. Returns the state at `t_end`.
pub fn integrate<S, F>(
    sys: &S,
    t0: f64,
    y0: &[f64],
    t_end: f64,
    outputs: &[f64],
    opts: &Dopri5Options,
    mut sink: F,
) -> Result<(Vec<f64>, IntegrationStats), OdeError>
where
    S: OdeSystem,
    F: FnMut(usize, f64, &[f64]),
{
    let n = sys.dim();
    if y0.len() != n || opts.abs_tol.len() != n {
        return Err(OdeError::InvalidRequest("dimension mismatch".into()));
    }
    if !(t_end >= t0) || !t0.is_finite() || !t_end.is_finite() {
        return Err(OdeError::InvalidRequest(format!(
            "bad interval [{t0}, {t_end}]"
        )));
    }
    if !(opts.rel_tol > 0.0) || opts.abs_tol.iter().any(|a| !(*a > 0.0)) {
        return Err(OdeError::InvalidRequest(
            "tolerances must be positive".into(),
        ));
    }
    if outputs.windows(2).any(|w| w[1] < w[0]) || outputs.iter().any(|&t| t < t0 || t > t_end) {
        return Err(OdeError::InvalidRequest(
            "output times must be sorted and inside the interval".into(),
        ));
    }
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(OdeError::NonFiniteState { t: t0 });
    }

    let mut stats = IntegrationStats::default();
    let mut y = y0.to_vec();
    let mut t = t0;
    let mut next_out = 0;
    while next_out < outputs.len() && outputs[next_out] <= t0 {
        sink(next_out, outputs[next_out], &y);
        next_out += 1;
    }
    if t_end == t0 {
        return Ok((y, stats));
    }

    let span = t_end - t0;
    let mut ws = Workspace::new(n);
    sys.rhs(t, &y, &mut ws.k[0]);
    stats.rhs_evals += 1;
    let mut h = opts
        .initial_step
        .unwrap_or_else(|| initial_step(sys, t, &y, &ws.k[0], opts, span));
    stats.rhs_evals += 1;
    let mut err_old: f64 = 1e-4;
    let mut last_rejected = false;

    loop {
        if stats.accepted + stats.rejected >= opts.max_steps {
            return Err(OdeError::ToleranceNotMet {
                t,
                steps: opts.max_steps,
            });
        }
        h = h.min(opts.max_step);
        let last = t + 1.01 * h >= t_end;
        if last {
            h = t_end - t;
        }
        if h <= 16.0 * f64::EPSILON * t.abs().max(span) {
            return Err(OdeError::StepSizeUnderflow { t, h });
        }

        step(sys, t, &y, h, &mut ws);
        stats.rhs_evals += 6;
        sys.error_scale(&y, &mut ws.scale_old);
        sys.error_scale(&ws.y_new, &mut ws.scale_new);
        let err = error_norm(&ws.scale_old, &ws.scale_new, &ws.err, opts);
        if !err.is_finite() {
            // Treat as a gross rejection; a non-finite state that persists will
            // drive h to underflow.
            stats.rejected += 1;
            h *= FAC_MIN;
            last_rejected = true;
            continue;
        }

        let fac11 = err.powf(0.2 - BETA * 0.75);
        if err <= 1.0 {
            let mut fac = fac11 / err_old.powf(BETA);
            fac = (fac / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
            let mut h_new = h / fac;
            if last_rejected {
                h_new = h_new.min(h);
            }
            err_old = err.max(1e-4);

            if ws.y_new.iter().any(|v| !v.is_finite()) {
                return Err(OdeError::NonFiniteState { t: t + h });
            }
            stats.accepted += 1;
            let t_new = if last { t_end } else { t + h };

            if next_out < outputs.len() && outputs[next_out] <= t_new {
                prepare_dense(&y, h, &mut ws);
                let mut buf = vec![0.0; n];
                while next_out < outputs.len() && outputs[next_out] <= t_new {
                    let to = outputs[next_out];
                    if to == t_new {
                        sink(next_out, to, &ws.y_new);
                    } else {
                        let theta = (to - t) / h;
                        dense_eval(&ws.cont, theta, &mut buf);
                        sink(next_out, to, &buf);
                    }
                    next_out += 1;
                }
            }

            std::mem::swap(&mut y, &mut ws.y_new);
            // FSAL: the last stage is f(t + h, y_new).
            ws.k.swap(0, 6);
            t = t_new;
            if last {
                return Ok((y, stats));
            }
            h = h_new;
            last_rejected = false;
        } else {
            stats.rejected += 1;
            h /= (fac11 / SAFETY).min(1.0 / FAC_MIN);
            last_rejected = true;
        }
    }
}

fn step<S: OdeSystem>(sys: &S, t: f64, y: &[f64], h: f64, ws: &mut Workspace) {
    let n = y.len();
    let Workspace {
        k,
        y_stage,
        y_new,
        err,
        ..
    } = ws;
    let (k1, rest) = k.split_at_mut(1);
    let k1 = &k1[0];
    let (k2, rest) = rest.split_at_mut(1);
    let k2 = &mut k2[0];
    let (k3, rest) = rest.split_at_mut(1);
    let k3 = &mut k3[0];
    let (k4, rest) = rest.split_at_mut(1);
    let k4 = &mut k4[0];
    let (k5, rest) = rest.split_at_mut(1);
    let k5 = &mut k5[0];
    let (k6, k7) = rest.split_at_mut(1);
    let k6 = &mut k6[0];
    let k7 = &mut k7[0];

    for i in 0..n {
        y_stage[i] = y[i] + h * A21 * k1[i];
    }
    sys.rhs(t + C2 * h, y_stage, k2);
    for i in 0..n {
        y_stage[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
    }
    sys.rhs(t + C3 * h, y_stage, k3);
    for i in 0..n {
        y_stage[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
    }
    sys.rhs(t + C4 * h, y_stage, k4);
    for i in 0..n {
        y_stage[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
    }
    sys.rhs(t + C5 * h, y_stage, k5);
    for i in 0..n {
        y_stage[i] =
            y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
    }
    sys.rhs(t + h, y_stage, k6);
    for i in 0..n {
        y_new[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
    }
    sys.rhs(t + h, y_new, k7);
    for i in 0..n {
        err[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
    }
}

fn prepare_dense(y: &[f64], h: f64, ws: &mut Workspace) {
    let n = y.len();
    let k = &ws.k;
    for i in 0..n {
        let dy = ws.y_new[i] - y[i];
        let bspl = h * k[0][i] - dy;
        ws.cont[0][i] = y[i];
        ws.cont[1][i] = dy;
        ws.cont[2][i] = bspl;
        ws.cont[3][i] = dy - h * k[6][i] - bspl;
        ws.cont[4][i] = h
            * (D1 * k[0][i]
                + D3 * k[2][i]
                + D4 * k[3][i]
                + D5 * k[4][i]
                + D6 * k[5][i]
                + D7 * k[6][i]);
    }
}

fn dense_eval(cont: &[Vec<f64>; 5], theta: f64, out: &mut [f64]) {
    let theta1 = 1.0 - theta;
    for i in 0..out.len() {
        out[i] = cont[0][i]
            + theta
                * (cont[1][i] + theta1 * (cont[2][i] + theta * (cont[3][i] + theta1 * cont[4][i])));
    }
}
