// Copyright 2026 Pentabat Contributors
// SPDX-License-Identifier: Apache-2.0

//! Complete second-order closure used when a coherent drive is on.
//!
//! A drive breaks the excitation-number symmetry, so every one-molecule
//! operator can correlate with the field and with other molecules. The state
//! holds, for identical molecules:
//!
//! * `r`: one-molecule reduced density matrix (5 x 5);
//! * `q = tr_cav(a+ rho)`, so that `<a+ X> = tr(X q)`;
//! * `m`: reduced density matrix of two distinct molecules, laid out as a
//!   25 x 25 array `m[(a1,b1),(a2,b2)] = rho2[(a1 a2),(b1 b2)]`;
//! * `<a>`, `<a+ a>` and `<a a>`.
//!
//! Moments of third order are factorized at vanishing third cumulant. In the
//! drive-free sector this reduces exactly to the compact equations in the
//! parent module.
//!
//! The integrated vector stores the fluctuation parts `q - conj(<a>) r`,
//! `m - r (x) r`, `<a+ a> - |<a>|^2` and `<a a> - <a>^2`. Under a strong
//! drive the coherent field dominates and the raw moments differ from their
//! mean-field products only in the last digits.

use num_complex::Complex64;

use super::CumulantState;
use crate::model::ValidatedModel;
use crate::ode::OdeSystem;

type C = Complex64;
const LV: usize = 5;
const OPS: usize = LV * LV;
const C0: C = C { re: 0.0, im: 0.0 };
const I: C = C { re: 0.0, im: 1.0 };

// Offsets into the complex state vector.
const R: usize = 0;
const Q: usize = R + OPS;
const M: usize = Q + OPS;
const ALPHA: usize = M + OPS * OPS;
const N_PH: usize = ALPHA + 1;
const AA: usize = N_PH + 1;
const COMPLEX_DIM: usize = AA + 1;

/// Number of real components of the extended state.
pub const EXTENDED_DIM: usize = 2 * COMPLEX_DIM;

/// Levels are 1-based in the public API.
const fn ix(a: usize, b: usize) -> usize {
    (a - 1) * LV + (b - 1)
}

type Mat = [[C; LV]; LV];

fn unit(a: usize, b: usize) -> Mat {
    let mut m = [[C0; LV]; LV];
    m[a - 1][b - 1] = C::new(1.0, 0.0);
    m
}

fn mul(x: &Mat, y: &Mat) -> Mat {
    let mut out = [[C0; LV]; LV];
    for i in 0..LV {
        for k in 0..LV {
            if x[i][k] == C0 {
                continue;
            }
            for j in 0..LV {
                out[i][j] += x[i][k] * y[k][j];
            }
        }
    }
    out
}

fn dagger(x: &Mat) -> Mat {
    let mut out = [[C0; LV]; LV];
    for i in 0..LV {
        for j in 0..LV {
            out[i][j] = x[j][i].conj();
        }
    }
    out
}

fn axpy(acc: &mut Mat, s: C, x: &Mat) {
    for i in 0..LV {
        for j in 0..LV {
            acc[i][j] += s * x[i][j];
        }
    }
}

/// Sparse linear map on one-molecule operators in the `ix` layout.
#[derive(Debug, Clone, Default)]
struct SuperOp {
    entries: Vec<(usize, usize, C)>,
}

impl SuperOp {
    fn from_map(f: impl Fn(&Mat) -> Mat) -> Self {
        let mut entries = Vec::new();
        for a in 1..=LV {
            for b in 1..=LV {
                let img = f(&unit(a, b));
                for i in 0..LV {
                    for j in 0..LV {
                        if img[i][j] != C0 {
                            entries.push((i * LV + j, ix(a, b), img[i][j]));
                        }
                    }
                }
            }
        }
        Self { entries }
    }

    fn apply(&self, x: &[C], out: &mut [C], scale: C) {
        for &(o, i, v) in &self.entries {
            out[o] += scale * v * x[i];
        }
    }

    /// `out += scale * (self (x) 1) m` on the pair layout.
    fn apply_first(&self, m: &[C], out: &mut [C], scale: C) {
        for &(o, i, v) in &self.entries {
            let s = scale * v;
            let (src, dst) = (&m[i * OPS..(i + 1) * OPS], &mut out[o * OPS..(o + 1) * OPS]);
            for k in 0..OPS {
                dst[k] += s * src[k];
            }
        }
    }

    /// `out += scale * (1 (x) self) m` on the pair layout.
    fn apply_second(&self, m: &[C], out: &mut [C], scale: C) {
        for row in 0..OPS {
            let (src, dst) = (
                &m[row * OPS..(row + 1) * OPS],
                &mut out[row * OPS..(row + 1) * OPS],
            );
            for &(o, i, v) in &self.entries {
                dst[o] += scale * v * src[i];
            }
        }
    }
}

/// Right-hand side of the extended closure for one segment.
#[derive(Debug, Clone)]
pub(super) struct Extended {
    n: f64,
    g: f64,
    kappa: f64,
    n_th: f64,
    delta_m: f64,
    molecular: SuperOp,
    ad_53: SuperOp,
    ad_35: SuperOp,
    right_53: SuperOp,
}

impl Extended {
    pub(super) fn new(model: &ValidatedModel, pumped: bool, load_coupled: bool) -> Self {
        let p = model.params();
        let frame = model.frame();
        let [e3, e4, e5] = frame.level_energies();
        let mut h = [[C0; LV]; LV];
        for (level, e) in [(3, e3), (4, e4), (5, e5)] {
            h[level - 1][level - 1] = C::new(e, 0.0);
        }
        for (a, b, omega) in [(3, 4, p.drive_34), (3, 5, p.drive_35), (4, 5, p.drive_45)] {
            h[a - 1][b - 1] += omega;
            h[b - 1][a - 1] += omega;
        }

        let xi = if pumped { p.xi } else { 0.0 };
        // (operator, rate) with the rate multiplying L X L+ - {L+L, X}/2.
        let mut jumps: Vec<(Mat, f64)> = vec![(unit(2, 1), xi), (unit(1, 2), xi + p.k_sp)];
        for (level, into, out) in [
            (3, p.k_23, p.k_31),
            (4, p.k_24, p.k_41),
            (5, p.k_25, p.k_51),
        ] {
            jumps.push((unit(level, 2), into));
            jumps.push((unit(1, level), out));
        }
        for (from, to, rate) in [
            (3, 4, p.k_34),
            (4, 3, p.k_43),
            (3, 5, p.k_35),
            (5, 3, p.k_53),
            (4, 5, p.k_45),
            (5, 4, p.k_54),
        ] {
            jumps.push((unit(to, from), rate));
        }
        for (a, b, chi) in [(3, 4, p.chi_34), (3, 5, p.chi_35), (4, 5, p.chi_45)] {
            let mut op = unit(b, b);
            axpy(&mut op, C::new(-1.0, 0.0), &unit(a, a));
            jumps.push((op, 0.5 * chi));
        }
        jumps.retain(|(_, rate)| *rate > 0.0);

        // Schrodinger-picture generator: -i[H, X] + sum r (L X L+ - {L+L, X}/2).
        let molecular = SuperOp::from_map(|x| {
            let mut out = [[C0; LV]; LV];
            axpy(&mut out, -I, &mul(&h, x));
            axpy(&mut out, I, &mul(x, &h));
            for (l, rate) in &jumps {
                let ld = dagger(l);
                let ldl = mul(&ld, l);
                axpy(&mut out, C::new(*rate, 0.0), &mul(&mul(l, x), &ld));
                axpy(&mut out, C::new(-0.5 * rate, 0.0), &mul(&ldl, x));
                axpy(&mut out, C::new(-0.5 * rate, 0.0), &mul(x, &ldl));
            }
            out
        });
        let commutator = |s: Mat| {
            SuperOp::from_map(move |x| {
                let mut out = mul(&s, x);
                axpy(&mut out, C::new(-1.0, 0.0), &mul(x, &s));
                out
            })
        };
        let s53 = unit(5, 3);
        Self {
            n: p.n_pen,
            g: if load_coupled { p.g_35 } else { 0.0 },
            kappa: p.kappa,
            n_th: p.n_th,
            delta_m: frame.delta_m,
            molecular,
            ad_53: commutator(unit(5, 3)),
            ad_35: commutator(unit(3, 5)),
            right_53: SuperOp::from_map(move |x| mul(x, &s53)),
        }
    }

    fn derivative(&self, y: &[C], dy: &mut [C]) {
        dy.fill(C0);
        let (r, q, m) = (&y[R..Q], &y[Q..M], &y[M..ALPHA]);
        let (alpha, n_ph, aa) = (y[ALPHA], y[N_PH].re, y[AA]);
        let g = self.g;
        let ig = I * g;
        let n = self.n;
        let q_dag: Vec<C> = (0..OPS).map(|k| q[(k % LV) * LV + k / LV].conj()).collect();

        // One-molecule density matrix.
        {
            let dr = &mut dy[R..Q];
            self.molecular.apply(r, dr, C::new(1.0, 0.0));
            self.ad_53.apply(&q_dag, dr, -ig);
            self.ad_35.apply(q, dr, -ig);
        }

        // Spin-photon moment q.
        {
            let mut photon_weighted = vec![C0; OPS];
            let mut pair_annihilated = vec![C0; OPS];
            let coh = n_ph - 2.0 * alpha.norm_sqr();
            let aa_part = aa.conj() - 2.0 * alpha.conj() * alpha.conj();
            for k in 0..OPS {
                photon_weighted[k] = coh * r[k] + alpha.conj() * q_dag[k] + alpha * q[k];
                pair_annihilated[k] = aa_part * r[k] + 2.0 * alpha.conj() * q[k];
            }
            let dq = &mut dy[Q..M];
            self.molecular.apply(q, dq, C::new(1.0, 0.0));
            let free = C::new(-0.5 * self.kappa, self.delta_m);
            for k in 0..OPS {
                dq[k] += free * q[k];
            }
            self.ad_53.apply(&photon_weighted, dq, -ig);
            self.right_53.apply(r, dq, ig);
            self.ad_35.apply(&pair_annihilated, dq, -ig);
            if n > 1.0 {
                // Field radiated by the other molecules.
                let row = &m[ix(3, 5) * OPS..(ix(3, 5) + 1) * OPS];
                for k in 0..OPS {
                    dq[k] += ig * (n - 1.0) * row[k];
                }
            }
        }

        // Pair density matrix.
        {
            let mut q2 = vec![C0; OPS * OPS];
            let mut q2_dag = vec![C0; OPS * OPS];
            let ac = alpha.conj();
            for i in 0..OPS {
                for j in 0..OPS {
                    let k = i * OPS + j;
                    let rr = r[i] * r[j];
                    q2[k] = q[i] * r[j] + r[i] * q[j] + ac * m[k] - 2.0 * ac * rr;
                    q2_dag[k] = q_dag[i] * r[j] + r[i] * q_dag[j] + alpha * m[k] - 2.0 * alpha * rr;
                }
            }
            let mut d1 = vec![C0; OPS * OPS];
            self.ad_53.apply_first(&q2_dag, &mut d1, -ig);
            self.ad_35.apply_first(&q2, &mut d1, -ig);
            let dm = &mut dy[M..ALPHA];
            self.molecular.apply_first(m, dm, C::new(1.0, 0.0));
            self.molecular.apply_second(m, dm, C::new(1.0, 0.0));
            for i in 0..OPS {
                for j in 0..OPS {
                    dm[i * OPS + j] += d1[i * OPS + j] + d1[j * OPS + i];
                }
            }
        }

        let sigma_35 = r[ix(5, 3)];
        let c = q[ix(5, 3)];
        let a_sigma_35 = q[ix(3, 5)].conj();
        dy[ALPHA] = -C::new(0.5 * self.kappa, self.delta_m) * alpha - ig * n * sigma_35;
        dy[N_PH] = C::new(-self.kappa * (n_ph - self.n_th) + 2.0 * g * n * c.im, 0.0);
        dy[AA] = -2.0 * C::new(0.5 * self.kappa, self.delta_m) * aa - 2.0 * ig * n * a_sigma_35;
    }

    /// Derivative of the fluctuation vector `z`.
    fn fluctuation_derivative(&self, z: &[C], dz: &mut [C]) {
        let y = to_raw(z);
        let mut dy = vec![C0; COMPLEX_DIM];
        self.derivative(&y, &mut dy);
        let (r, dr) = (&y[R..Q], &dy[R..Q]);
        let (alpha, d_alpha) = (y[ALPHA], dy[ALPHA]);
        dz[R..Q].copy_from_slice(dr);
        for k in 0..OPS {
            dz[Q + k] = dy[Q + k] - d_alpha.conj() * r[k] - alpha.conj() * dr[k];
        }
        for i in 0..OPS {
            for j in 0..OPS {
                let k = M + i * OPS + j;
                dz[k] = dy[k] - dr[i] * r[j] - r[i] * dr[j];
            }
        }
        dz[ALPHA] = d_alpha;
        dz[N_PH] = C::new(dy[N_PH].re - 2.0 * (alpha.conj() * d_alpha).re, 0.0);
        dz[AA] = dy[AA] - 2.0 * alpha * d_alpha;
    }

    pub(super) fn embed(state: &CumulantState) -> Vec<f64> {
        let mut y = vec![C0; COMPLEX_DIM];
        for level in 1..=LV {
            y[R + ix(level, level)] = C::new(state.p[level - 1], 0.0);
        }
        // <s_ab> = r[b][a]
        for (a, b, v) in [(3, 5, state.m35), (4, 5, state.m45), (3, 4, state.m34)] {
            y[R + ix(b, a)] = v;
            y[R + ix(a, b)] = v.conj();
        }
        // Uncorrelated except for the tracked correlations.
        for k in 0..OPS {
            y[Q + k] = state.alpha.conj() * y[R + k];
        }
        y[Q + ix(5, 3)] = state.c35;
        for i in 0..OPS {
            for j in 0..OPS {
                y[M + i * OPS + j] = y[R + i] * y[R + j];
            }
        }
        y[M + ix(3, 5) * OPS + ix(5, 3)] = state.s_coll;
        y[M + ix(5, 3) * OPS + ix(3, 5)] = state.s_coll;
        y[ALPHA] = state.alpha;
        y[N_PH] = C::new(state.n_ph, 0.0);
        y[AA] = state.alpha * state.alpha;
        to_fluctuation(&y)
            .iter()
            .flat_map(|v| [v.re, v.im])
            .collect()
    }

    pub(super) fn project(z: &[f64]) -> CumulantState {
        let y = to_raw(
            &z.chunks_exact(2)
                .map(|p| C::new(p[0], p[1]))
                .collect::<Vec<_>>(),
        );
        let at = |k: usize| y[k];
        let mut p = [0.0; LV];
        for level in 1..=LV {
            p[level - 1] = at(R + ix(level, level)).re;
        }
        CumulantState {
            p,
            n_ph: at(N_PH).re,
            c35: at(Q + ix(5, 3)),
            s_coll: at(M + ix(3, 5) * OPS + ix(5, 3)),
            m35: at(R + ix(5, 3)),
            m45: at(R + ix(5, 4)),
            m34: at(R + ix(4, 3)),
            alpha: at(ALPHA),
        }
    }

    pub(super) fn abs_tolerances(model: &ValidatedModel, abs_tol: f64) -> Vec<f64> {
        let photon_scale = model.params().n_th + 1.0;
        let mut atol = vec![abs_tol; EXTENDED_DIM];
        for k in Q..M {
            atol[2 * k] = abs_tol * photon_scale.sqrt();
            atol[2 * k + 1] = abs_tol * photon_scale.sqrt();
        }
        for (k, scale) in [
            (ALPHA, photon_scale.sqrt()),
            (N_PH, photon_scale),
            (AA, photon_scale),
        ] {
            atol[2 * k] = abs_tol * scale;
            atol[2 * k + 1] = abs_tol * scale;
        }
        atol
    }
}

impl OdeSystem for Extended {
    fn dim(&self) -> usize {
        EXTENDED_DIM
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        // Complex64 is repr(C) { re, im }, but avoid relying on layout.
        let yc: Vec<C> = y.chunks_exact(2).map(|p| C::new(p[0], p[1])).collect();
        let mut dc = vec![C0; COMPLEX_DIM];
        self.fluctuation_derivative(&yc, &mut dc);
        for (k, v) in dc.iter().enumerate() {
            dy[2 * k] = v.re;
            dy[2 * k + 1] = v.im;
        }
    }

    /// Tolerances relative to the full moments, not their small fluctuations.
    fn error_scale(&self, z: &[f64], scale: &mut [f64]) {
        let zc: Vec<C> = z.chunks_exact(2).map(|p| C::new(p[0], p[1])).collect();
        for (k, v) in to_raw(&zc).iter().enumerate() {
            scale[2 * k] = v.re.abs();
            scale[2 * k + 1] = v.im.abs();
        }
    }
}

fn to_raw(z: &[C]) -> Vec<C> {
    let mut y = z.to_vec();
    let ac = z[ALPHA].conj();
    for k in 0..OPS {
        y[Q + k] += ac * z[R + k];
    }
    for i in 0..OPS {
        for j in 0..OPS {
            y[M + i * OPS + j] += z[R + i] * z[R + j];
        }
    }
    y[N_PH] += z[ALPHA].norm_sqr();
    y[AA] += z[ALPHA] * z[ALPHA];
    y
}

fn to_fluctuation(y: &[C]) -> Vec<C> {
    let mut z = y.to_vec();
    let ac = y[ALPHA].conj();
    for k in 0..OPS {
        z[Q + k] -= ac * y[R + k];
    }
    for i in 0..OPS {
        for j in 0..OPS {
            z[M + i * OPS + j] -= y[R + i] * y[R + j];
        }
    }
    z[N_PH] -= y[ALPHA].norm_sqr();
    z[AA] -= y[ALPHA] * y[ALPHA];
    z
}

/// Coherence decay of `<s35>` implied by the assembled generator; used to
/// check the assembly against [`super::transverse_rate`].
#[cfg(test)]
fn assembled_decay_35(model: &ValidatedModel) -> f64 {
    let e = Extended::new(model, true, true);
    let mut x = vec![C0; OPS];
    x[ix(5, 3)] = C::new(1.0, 0.0);
    let mut out = vec![C0; OPS];
    e.molecular.apply(&x, &mut out, C::new(1.0, 0.0));
    -out[ix(5, 3)].re
}
