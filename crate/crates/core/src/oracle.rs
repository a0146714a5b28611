// Copyright 2026 Pentabat Contributors
// SPDX-License-Identifier: Apache-2.0

//! Exact master-equation evolution for a handful of molecules and a
//! truncated cavity, used to certify the cumulant equations.
//!
//! The generator is kept at the operator level (effective non-Hermitian
//! Hamiltonian plus jump operators). Evolution only tracks the density-matrix
//! elements reachable from the initial state's support, which removes the
//! symmetry sectors that stay empty. Those elements are stored as a real
//! vector: `Re rho_ii`, and `Re rho_ij`, `Im rho_ij` for `i < j`.

use std::collections::{HashMap, VecDeque};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cumulant::{self, CumulantState, EomError, IntegratorConfig, OutputGrid, Trajectory};
use crate::model::{validate, ModelParams, ValidatedModel, ValidationErrors};
use crate::ode::{self, Dopri5Options, OdeSystem};

/// Default ceiling on the Hilbert-space dimension.
pub const DEFAULT_DIMENSION_CAP: usize = 4000;
/// Largest reduced Liouville dimension propagated with a dense exponential.
pub const DENSE_PROPAGATOR_LIMIT: usize = 1600;
/// Population allowed at the highest Fock level before results are rejected.
pub const TRUNCATION_LEAK_TOL: f64 = 1e-6;
/// Most negative eigenvalue of rho tolerated at sampled times.
pub const EIGENVALUE_TOL: f64 = -1e-8;
/// Allowed drift of tr(rho) from one.
pub const TRACE_TOL: f64 = 1e-10;

const LEVELS: usize = 5;
const C0: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("Hilbert dimension {dim} exceeds the cap {cap}")]
    DimensionCap { dim: usize, cap: usize },
    #[error("population {population:e} at the Fock ceiling at t = {t:e} s exceeds {TRUNCATION_LEAK_TOL:e}")]
    TruncationLeak { t: f64, population: f64 },
    #[error("density matrix eigenvalue {eigenvalue:e} at t = {t:e} s")]
    NotPositive { t: f64, eigenvalue: f64 },
    #[error("trace drifted by {drift:e} at t = {t:e} s")]
    TraceDrift { t: f64, drift: f64 },
    #[error("initial density matrix rejected: {0}")]
    InvalidInitialState(String),
    #[error("invalid oracle configuration: {0}")]
    InvalidConfig(String),
    #[error("trajectories are sampled on different grids")]
    GridMismatch,
    #[error(transparent)]
    Model(#[from] ValidationErrors),
    #[error(transparent)]
    Integration(#[from] EomError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    /// Number of explicitly simulated molecules (1..=3).
    pub n_molecules: usize,
    /// Highest retained photon number.
    pub fock_cutoff: usize,
    pub params: ModelParams,
    pub t_end: f64,
    pub grid: OutputGrid,
    pub dimension_cap: usize,
}

impl OracleConfig {
    pub fn new(
        params: ModelParams,
        n_molecules: usize,
        fock_cutoff: usize,
        t_end: f64,
        points: usize,
    ) -> Self {
        Self {
            n_molecules,
            fock_cutoff,
            params,
            t_end,
            grid: OutputGrid::Uniform { points },
            dimension_cap: DEFAULT_DIMENSION_CAP,
        }
    }

    pub fn hilbert_dim(&self) -> usize {
        LEVELS.pow(self.n_molecules as u32) * (self.fock_cutoff + 1)
    }
}

/// Column-compressed sparse complex operator.
#[derive(Debug, Clone, PartialEq)]
struct SparseOp {
    cols: Vec<Vec<(usize, Complex64)>>,
}

impl SparseOp {
    fn zero(dim: usize) -> Self {
        Self {
            cols: vec![Vec::new(); dim],
        }
    }

    fn from_columns(dim: usize, f: impl Fn(usize) -> Vec<(usize, Complex64)>) -> Self {
        let mut op = Self::zero(dim);
        for j in 0..dim {
            op.cols[j] = f(j).into_iter().filter(|(_, v)| *v != C0).collect();
        }
        op
    }

    fn add_scaled(&mut self, other: &SparseOp, scale: Complex64) {
        for (j, col) in other.cols.iter().enumerate() {
            for &(i, v) in col {
                match self.cols[j].iter_mut().find(|(r, _)| *r == i) {
                    Some(slot) => slot.1 += scale * v,
                    None => self.cols[j].push((i, scale * v)),
                }
            }
        }
    }

    /// `self^dagger * self`
    fn gram(&self) -> SparseOp {
        let dim = self.cols.len();
        let mut rows: Vec<Vec<(usize, Complex64)>> = vec![Vec::new(); dim];
        for (j, col) in self.cols.iter().enumerate() {
            for &(i, v) in col {
                rows[i].push((j, v));
            }
        }
        let mut out = SparseOp::zero(dim);
        for row in &rows {
            for &(a, va) in row {
                for &(b, vb) in row {
                    let val = va.conj() * vb;
                    match out.cols[b].iter_mut().find(|(r, _)| *r == a) {
                        Some(slot) => slot.1 += val,
                        None => out.cols[b].push((a, val)),
                    }
                }
            }
        }
        out
    }

    fn is_zero(&self) -> bool {
        self.cols.iter().flatten().all(|(_, v)| *v == C0)
    }
}

/// Product basis `|l_1 ... l_N> (x) |n>`, index = code * (cutoff + 1) + n with
/// `code = sum_k l_k 5^k` and `l_k` in 0..5 for levels 1..5.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Basis {
    n_molecules: usize,
    fock: usize,
}

impl Basis {
    fn dim(&self) -> usize {
        LEVELS.pow(self.n_molecules as u32) * self.fock
    }

    fn photons(&self, idx: usize) -> usize {
        idx % self.fock
    }

    /// Level (1..=5) of molecule `k` in basis state `idx`.
    fn level(&self, idx: usize, k: usize) -> usize {
        (idx / self.fock / LEVELS.pow(k as u32)) % LEVELS + 1
    }

    fn with_level(&self, idx: usize, k: usize, level: usize) -> usize {
        let stride = self.fock * LEVELS.pow(k as u32);
        idx - (self.level(idx, k) - 1) * stride + (level - 1) * stride
    }

    /// `|a><b|` on molecule `k`.
    fn transition(&self, k: usize, a: usize, b: usize) -> SparseOp {
        SparseOp::from_columns(self.dim(), |j| {
            if self.level(j, k) == b {
                vec![(self.with_level(j, k, a), Complex64::new(1.0, 0.0))]
            } else {
                Vec::new()
            }
        })
    }

    fn annihilation(&self) -> SparseOp {
        SparseOp::from_columns(self.dim(), |j| {
            let n = self.photons(j);
            if n > 0 {
                vec![(j - 1, Complex64::new((n as f64).sqrt(), 0.0))]
            } else {
                Vec::new()
            }
        })
    }

    fn creation(&self) -> SparseOp {
        SparseOp::from_columns(self.dim(), |j| {
            let n = self.photons(j);
            if n + 1 < self.fock {
                vec![(j + 1, Complex64::new(((n + 1) as f64).sqrt(), 0.0))]
            } else {
                Vec::new()
            }
        })
    }
}

/// Lindblad generator `L rho = -i (K rho - rho K^dagger) + sum_m L_m rho L_m^dagger`,
/// with the jump rates folded into the jump operators.
#[derive(Debug, Clone)]
pub struct Liouvillian {
    basis: Basis,
    effective_h: SparseOp,
    jumps: Vec<SparseOp>,
}

impl Liouvillian {
    pub fn hilbert_dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn n_molecules(&self) -> usize {
        self.basis.n_molecules
    }

    pub fn fock_cutoff(&self) -> usize {
        self.basis.fock - 1
    }

    /// True when the generator annihilates every operator.
    pub fn is_zero(&self) -> bool {
        self.effective_h.is_zero() && self.jumps.iter().all(SparseOp::is_zero)
    }

    /// Image of `|i><j|` as a list of `((k, l), coefficient)`.
    fn apply_element(&self, i: usize, j: usize, out: &mut Vec<((usize, usize), Complex64)>) {
        out.clear();
        for &(k, v) in &self.effective_h.cols[i] {
            out.push(((k, j), -I * v));
        }
        for &(l, v) in &self.effective_h.cols[j] {
            out.push(((i, l), I * v.conj()));
        }
        for jump in &self.jumps {
            for &(k, vk) in &jump.cols[i] {
                for &(l, vl) in &jump.cols[j] {
                    out.push(((k, l), vk * vl.conj()));
                }
            }
        }
    }

    /// Applies the generator to a sparse operator given as `(i, j, value)`.
    pub fn apply(&self, rho: &[(usize, usize, Complex64)]) -> HashMap<(usize, usize), Complex64> {
        let mut acc = HashMap::new();
        let mut buf = Vec::new();
        for &(i, j, v) in rho {
            self.apply_element(i, j, &mut buf);
            for &(kl, c) in &buf {
                *acc.entry(kl).or_insert(C0) += c * v;
            }
        }
        acc.retain(|_, v| *v != C0);
        acc
    }
}

/// Assembles the generator for `cfg`. Each dissipator `(r/2) D[O]` with
/// `D[O] rho = 2 O rho O+ - O+O rho - rho O+O` contributes a jump
/// `sqrt(r) O`; dephasing `(chi/4) D[O]` contributes `sqrt(chi/2) O`.
pub fn build_generator(cfg: &OracleConfig) -> Result<Liouvillian, OracleError> {
    if !(1..=3).contains(&cfg.n_molecules) {
        return Err(OracleError::InvalidConfig(
            "n_molecules must be 1, 2 or 3".into(),
        ));
    }
    let dim = cfg.hilbert_dim();
    if dim > cfg.dimension_cap {
        return Err(OracleError::DimensionCap {
            dim,
            cap: cfg.dimension_cap,
        });
    }
    let model = validate(&cfg.params)?;
    let p = model.params();
    let basis = Basis {
        n_molecules: cfg.n_molecules,
        fock: cfg.fock_cutoff + 1,
    };
    let [e3, e4, e5] = model.frame().level_energies();
    let energies = [0.0, 0.0, e3, e4, e5];
    let delta_m = model.frame().delta_m;

    let mut h = SparseOp::from_columns(dim, |j| {
        let mut e = delta_m * basis.photons(j) as f64;
        for k in 0..basis.n_molecules {
            e += energies[basis.level(j, k) - 1];
        }
        vec![(j, Complex64::new(e, 0.0))]
    });
    let a = basis.annihilation();
    let a_dag = basis.creation();
    let mut jumps = Vec::new();
    let push_jump = |op: SparseOp, rate: f64, jumps: &mut Vec<SparseOp>| {
        if rate > 0.0 {
            let mut scaled = SparseOp::zero(dim);
            scaled.add_scaled(&op, Complex64::new(rate.sqrt(), 0.0));
            jumps.push(scaled);
        }
    };

    for k in 0..basis.n_molecules {
        let s = |x: usize, y: usize| basis.transition(k, x, y);
        // Spin-photon exchange: s53 a + a+ s35.
        if p.g_35 != 0.0 {
            h.add_scaled(&compose(&s(5, 3), &a), Complex64::new(p.g_35, 0.0));
            h.add_scaled(&compose(&a_dag, &s(3, 5)), Complex64::new(p.g_35, 0.0));
        }
        for (x, y, omega) in [(3, 4, p.drive_34), (3, 5, p.drive_35), (4, 5, p.drive_45)] {
            if omega != 0.0 {
                h.add_scaled(&s(x, y), Complex64::new(omega, 0.0));
                h.add_scaled(&s(y, x), Complex64::new(omega, 0.0));
            }
        }

        push_jump(s(2, 1), p.xi, &mut jumps);
        push_jump(s(1, 2), p.xi + p.k_sp, &mut jumps);
        for (level, into, out) in [
            (3, p.k_23, p.k_31),
            (4, p.k_24, p.k_41),
            (5, p.k_25, p.k_51),
        ] {
            push_jump(s(level, 2), into, &mut jumps);
            push_jump(s(1, level), out, &mut jumps);
        }
        for (from, to, rate) in [
            (3, 4, p.k_34),
            (4, 3, p.k_43),
            (3, 5, p.k_35),
            (5, 3, p.k_53),
            (4, 5, p.k_45),
            (5, 4, p.k_54),
        ] {
            push_jump(s(to, from), rate, &mut jumps);
        }
        for (x, y, chi) in [(3, 4, p.chi_34), (3, 5, p.chi_35), (4, 5, p.chi_45)] {
            let mut op = s(y, y);
            op.add_scaled(&s(x, x), Complex64::new(-1.0, 0.0));
            push_jump(op, 0.5 * chi, &mut jumps);
        }
    }
    push_jump(a.clone(), p.kappa * (p.n_th + 1.0), &mut jumps);
    push_jump(a_dag.clone(), p.kappa * p.n_th, &mut jumps);

    let mut effective_h = h;
    for jump in &jumps {
        effective_h.add_scaled(&jump.gram(), Complex64::new(0.0, -0.5));
    }
    Ok(Liouvillian {
        basis,
        effective_h,
        jumps,
    })
}

/// `x * y` for sparse operators.
fn compose(x: &SparseOp, y: &SparseOp) -> SparseOp {
    let dim = y.cols.len();
    SparseOp::from_columns(dim, |j| {
        let mut col: Vec<(usize, Complex64)> = Vec::new();
        for &(k, vy) in &y.cols[j] {
            for &(i, vx) in &x.cols[k] {
                match col.iter_mut().find(|(r, _)| *r == i) {
                    Some(slot) => slot.1 += vx * vy,
                    None => col.push((i, vx * vy)),
                }
            }
        }
        col
    })
}

/// Sparse Hermitian density matrix, stored as its upper triangle `(i <= j)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DensityMatrix {
    pub dim: usize,
    pub upper: Vec<(usize, usize, Complex64)>,
}

impl DensityMatrix {
    /// Every molecule in the ground singlet, cavity in a thermal state with
    /// mean `n_th` truncated at `fock_cutoff` and renormalized.
    pub fn ground_thermal(n_molecules: usize, fock_cutoff: usize, n_th: f64) -> Self {
        let fock = fock_cutoff + 1;
        let weights: Vec<f64> = if n_th > 0.0 {
            let ratio = n_th / (1.0 + n_th);
            (0..fock).map(|n| ratio.powi(n as i32)).collect()
        } else {
            let mut w = vec![0.0; fock];
            w[0] = 1.0;
            w
        };
        let norm: f64 = weights.iter().sum();
        let dim = LEVELS.pow(n_molecules as u32) * fock;
        let upper = (0..fock)
            .map(|n| (n, n, Complex64::new(weights[n] / norm, 0.0)))
            .filter(|(_, _, v)| v.re > 0.0)
            .collect();
        Self { dim, upper }
    }

    /// Pure state `|psi><psi|` from `(index, amplitude)` pairs.
    pub fn pure(dim: usize, psi: &[(usize, Complex64)]) -> Self {
        let mut upper = Vec::new();
        for &(i, ai) in psi {
            for &(j, aj) in psi {
                if i <= j {
                    upper.push((i, j, ai * aj.conj()));
                }
            }
        }
        Self { dim, upper }
    }

    pub fn trace(&self) -> f64 {
        self.upper
            .iter()
            .filter(|(i, j, _)| i == j)
            .map(|(_, _, v)| v.re)
            .sum()
    }

    pub fn photon_mean(&self, fock_cutoff: usize) -> f64 {
        let fock = fock_cutoff + 1;
        self.upper
            .iter()
            .filter(|(i, j, _)| i == j)
            .map(|(i, _, v)| v.re * (i % fock) as f64)
            .sum()
    }
}

/// Basis index of a product state; `levels[k]` in 1..=5.
pub fn basis_index(levels: &[usize], photons: usize, fock_cutoff: usize) -> usize {
    let code: usize = levels
        .iter()
        .enumerate()
        .map(|(k, &l)| (l - 1) * LEVELS.pow(k as u32))
        .sum();
    code * (fock_cutoff + 1) + photons
}

/// Exact expectation values on the output grid, in the cumulant layout
/// (molecule-averaged), plus the diagnostics gathered along the way.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactTrajectory {
    pub trajectory: Trajectory,
    /// Number of real parameters in the reduced state.
    pub reduced_dim: usize,
    pub max_trace_error: f64,
    pub min_eigenvalue: f64,
    pub max_ceiling_population: f64,
}

/// Reduced real representation of the reachable operator space.
struct Reduced {
    /// Upper-triangle element of each real parameter and whether it is the
    /// imaginary part.
    params: Vec<(usize, usize, bool)>,
    index: HashMap<(usize, usize), usize>,
}

impl Reduced {
    fn element(&self, i: usize, j: usize, x: &[f64]) -> Complex64 {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        let Some(&k) = self.index.get(&(a, b)) else {
            return C0;
        };
        let v = if a == b {
            Complex64::new(x[k], 0.0)
        } else {
            Complex64::new(x[k], x[k + 1])
        };
        if i <= j {
            v
        } else {
            v.conj()
        }
    }
}

fn reachable(l: &Liouvillian, support: &[(usize, usize)]) -> Reduced {
    let mut seen: HashMap<(usize, usize), ()> = HashMap::new();
    let mut queue = VecDeque::new();
    for &(i, j) in support {
        let key = (i.min(j), i.max(j));
        if seen.insert(key, ()).is_none() {
            queue.push_back(key);
        }
    }
    let mut buf = Vec::new();
    let mut order = Vec::new();
    while let Some((i, j)) = queue.pop_front() {
        order.push((i, j));
        for (a, b) in [(i, j), (j, i)] {
            l.apply_element(a, b, &mut buf);
            for &((k, m), _) in &buf {
                let key = (k.min(m), k.max(m));
                if seen.insert(key, ()).is_none() {
                    queue.push_back(key);
                }
            }
        }
    }
    order.sort_unstable();
    let mut params = Vec::new();
    let mut index = HashMap::new();
    for (i, j) in order {
        index.insert((i, j), params.len());
        params.push((i, j, false));
        if i != j {
            params.push((i, j, true));
        }
    }
    Reduced { params, index }
}

/// Real generator matrix in the reduced representation, as triplets.
fn reduced_generator(l: &Liouvillian, red: &Reduced) -> Vec<(usize, usize, f64)> {
    let mut triplets = Vec::new();
    let mut image: HashMap<(usize, usize), Complex64> = HashMap::new();
    let mut buf = Vec::new();
    for (col, &(i, j, imag)) in red.params.iter().enumerate() {
        image.clear();
        // Hermitian basis element for this parameter.
        let parts: Vec<(usize, usize, Complex64)> = if i == j {
            vec![(i, i, Complex64::new(1.0, 0.0))]
        } else if imag {
            vec![(i, j, I), (j, i, -I)]
        } else {
            vec![
                (i, j, Complex64::new(1.0, 0.0)),
                (j, i, Complex64::new(1.0, 0.0)),
            ]
        };
        for (a, b, w) in parts {
            l.apply_element(a, b, &mut buf);
            for &(kl, c) in &buf {
                *image.entry(kl).or_insert(C0) += c * w;
            }
        }
        for (&(k, m), &v) in &image {
            if k > m {
                continue;
            }
            let row = red.index[&(k, m)];
            if v.re != 0.0 {
                triplets.push((row, col, v.re));
            }
            if k != m && v.im != 0.0 {
                triplets.push((row + 1, col, v.im));
            }
        }
    }
    triplets.sort_unstable_by_key(|a| (a.0, a.1));
    triplets
}

struct SparseReal {
    dim: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl OdeSystem for SparseReal {
    fn dim(&self) -> usize {
        self.dim
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        for (r, row) in self.rows.iter().enumerate() {
            dy[r] = row.iter().map(|&(c, v)| v * y[c]).sum();
        }
    }
}

/// Single-molecule (or pair) operators whose expectations are reported.
struct Observables {
    n_molecules: usize,
    fock: usize,
    a_dag_s35: SparseOp,
    s53_s35: Option<SparseOp>,
    s35: SparseOp,
    s45: SparseOp,
    s34: SparseOp,
    a: SparseOp,
}

impl Observables {
    fn new(basis: Basis) -> Self {
        let dim = basis.dim();
        let n = basis.n_molecules;
        let avg = Complex64::new(1.0 / n as f64, 0.0);
        let mut a_dag_s35 = SparseOp::zero(dim);
        let (mut s35, mut s45, mut s34) = (
            SparseOp::zero(dim),
            SparseOp::zero(dim),
            SparseOp::zero(dim),
        );
        let a_dag = basis.creation();
        for k in 0..n {
            a_dag_s35.add_scaled(&compose(&a_dag, &basis.transition(k, 3, 5)), avg);
            s35.add_scaled(&basis.transition(k, 3, 5), avg);
            s45.add_scaled(&basis.transition(k, 4, 5), avg);
            s34.add_scaled(&basis.transition(k, 3, 4), avg);
        }
        let s53_s35 = (n > 1).then(|| {
            let pairs = (n * (n - 1)) as f64;
            let mut op = SparseOp::zero(dim);
            for j in 0..n {
                for k in 0..n {
                    if j != k {
                        op.add_scaled(
                            &compose(&basis.transition(j, 5, 3), &basis.transition(k, 3, 5)),
                            Complex64::new(1.0 / pairs, 0.0),
                        );
                    }
                }
            }
            op
        });
        Self {
            n_molecules: n,
            fock: basis.fock,
            a_dag_s35,
            s53_s35,
            s35,
            s45,
            s34,
            a: basis.annihilation(),
        }
    }

    fn expect(op: &SparseOp, red: &Reduced, x: &[f64]) -> Complex64 {
        let mut acc = C0;
        for (j, col) in op.cols.iter().enumerate() {
            for &(i, v) in col {
                // <A> = sum_ij A_ij rho_ji
                acc += v * red.element(j, i, x);
            }
        }
        acc
    }

    fn state(&self, basis: Basis, red: &Reduced, x: &[f64]) -> (CumulantState, f64, f64) {
        let mut p = [0.0; LEVELS];
        let (mut n_ph, mut trace, mut ceiling) = (0.0, 0.0, 0.0);
        for (&(i, j), &k) in &red.index {
            if i != j {
                continue;
            }
            let w = x[k];
            trace += w;
            let photons = basis.photons(i);
            n_ph += w * photons as f64;
            if photons + 1 == self.fock {
                ceiling += w;
            }
            for m in 0..self.n_molecules {
                p[basis.level(i, m) - 1] += w / self.n_molecules as f64;
            }
        }
        let state = CumulantState {
            p,
            n_ph,
            c35: Self::expect(&self.a_dag_s35, red, x),
            s_coll: self
                .s53_s35
                .as_ref()
                .map_or(C0, |op| Self::expect(op, red, x)),
            m35: Self::expect(&self.s35, red, x),
            m45: Self::expect(&self.s45, red, x),
            m34: Self::expect(&self.s34, red, x),
            alpha: Self::expect(&self.a, red, x),
        };
        (state, trace, ceiling)
    }
}

fn min_eigenvalue(red: &Reduced, x: &[f64]) -> f64 {
    let mut idx: Vec<usize> = red.index.keys().flat_map(|&(i, j)| [i, j]).collect();
    idx.sort_unstable();
    idx.dedup();
    let pos: HashMap<usize, usize> = idx.iter().enumerate().map(|(p, &i)| (i, p)).collect();
    let n = idx.len();
    let mut m = DMatrix::<Complex64>::zeros(n, n);
    for &(i, j) in red.index.keys() {
        let v = red.element(i, j, x);
        m[(pos[&i], pos[&j])] = v;
        m[(pos[&j], pos[&i])] = v.conj();
    }
    m.symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

fn check_initial(rho0: &DensityMatrix, dim: usize) -> Result<(), OracleError> {
    if rho0.dim != dim {
        return Err(OracleError::InvalidInitialState(format!(
            "dimension {} != {}",
            rho0.dim, dim
        )));
    }
    if rho0
        .upper
        .iter()
        .any(|&(i, j, v)| i > j || j >= dim || !v.is_finite() || (i == j && v.im != 0.0))
    {
        return Err(OracleError::InvalidInitialState(
            "entries must be finite upper-triangle".into(),
        ));
    }
    let drift = (rho0.trace() - 1.0).abs();
    if drift > TRACE_TOL {
        return Err(OracleError::InvalidInitialState(format!(
            "trace differs from 1 by {drift:e}"
        )));
    }
    Ok(())
}

/// Evolves `rho0` under `l` and returns expectations on `grid` over `[0, t_end]`.
pub fn evolve_exact(
    rho0: &DensityMatrix,
    l: &Liouvillian,
    t_end: f64,
    grid: &OutputGrid,
) -> Result<ExactTrajectory, OracleError> {
    check_initial(rho0, l.hilbert_dim())?;
    if !(t_end >= 0.0) || !t_end.is_finite() {
        return Err(OracleError::InvalidConfig(
            "t_end must be finite and non-negative".into(),
        ));
    }
    let times = grid.times(t_end);
    if times.is_empty() || times[0] < 0.0 || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(OracleError::InvalidConfig(
            "output grid must be sorted and non-negative".into(),
        ));
    }

    let support: Vec<(usize, usize)> = rho0.upper.iter().map(|&(i, j, _)| (i, j)).collect();
    let red = reachable(l, &support);
    let dim = red.params.len();
    let mut x0 = vec![0.0; dim];
    for &(i, j, v) in &rho0.upper {
        let k = red.index[&(i, j)];
        x0[k] += v.re;
        if i != j {
            x0[k + 1] += v.im;
        }
    }
    let initial_eig = min_eigenvalue(&red, &x0);
    if initial_eig < EIGENVALUE_TOL {
        return Err(OracleError::InvalidInitialState(format!(
            "eigenvalue {initial_eig:e}"
        )));
    }

    let triplets = reduced_generator(l, &red);
    let mut samples = Vec::with_capacity(times.len());
    if dim <= DENSE_PROPAGATOR_LIMIT {
        let mut g = DMatrix::<f64>::zeros(dim, dim);
        for &(r, c, v) in &triplets {
            g[(r, c)] += v;
        }
        let mut cache: HashMap<u64, DMatrix<f64>> = HashMap::new();
        let mut x = DVector::from_vec(x0);
        let mut t_prev = 0.0;
        for &t in &times {
            let dt = t - t_prev;
            if dt > 0.0 {
                let prop = cache.entry(dt.to_bits()).or_insert_with(|| (&g * dt).exp());
                x = &*prop * &x;
            }
            samples.push(x.as_slice().to_vec());
            t_prev = t;
        }
    } else {
        let mut rows = vec![Vec::new(); dim];
        for &(r, c, v) in &triplets {
            rows[r].push((c, v));
        }
        let sys = SparseReal { dim, rows };
        let opts = Dopri5Options::uniform(dim, 1e-10, 1e-13);
        samples = vec![Vec::new(); times.len()];
        ode::integrate(&sys, 0.0, &x0, t_end, &times, &opts, |k, _, y| {
            samples[k] = y.to_vec()
        })
        .map_err(EomError::from)?;
    }

    let obs = Observables::new(l.basis);
    let eig_stride = (times.len() / 10).max(1);
    let mut states = Vec::with_capacity(times.len());
    let (mut max_trace_error, mut max_ceiling, mut min_eig) = (0.0f64, 0.0f64, initial_eig);
    for (k, (&t, x)) in times.iter().zip(&samples).enumerate() {
        let (state, trace, ceiling) = obs.state(l.basis, &red, x);
        let drift = (trace - 1.0).abs();
        max_trace_error = max_trace_error.max(drift);
        if drift > TRACE_TOL {
            return Err(OracleError::TraceDrift { t, drift });
        }
        max_ceiling = max_ceiling.max(ceiling);
        // With cutoff 0 there is no photon space to leak out of.
        if l.basis.fock > 1 && ceiling > TRUNCATION_LEAK_TOL {
            return Err(OracleError::TruncationLeak {
                t,
                population: ceiling,
            });
        }
        if k % eig_stride == 0 || k + 1 == times.len() {
            let e = min_eigenvalue(&red, x);
            min_eig = min_eig.min(e);
            if e < EIGENVALUE_TOL {
                return Err(OracleError::NotPositive { t, eigenvalue: e });
            }
        }
        states.push(state);
    }

    Ok(ExactTrajectory {
        trajectory: Trajectory {
            times,
            states,
            ..Default::default()
        },
        reduced_dim: dim,
        max_trace_error,
        min_eigenvalue: min_eig,
        max_ceiling_population: max_ceiling,
    })
}

/// Per-observable outcome of [`compare`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableDeviation {
    pub name: String,
    pub max_abs_deviation: f64,
    /// Largest magnitude of the exact series; the deviation is relative to it.
    pub scale: f64,
    pub relative_deviation: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub tolerance: f64,
    pub observables: Vec<ObservableDeviation>,
    pub pass: bool,
}

impl CompareReport {
    pub fn worst(&self) -> f64 {
        self.observables
            .iter()
            .map(|o| o.relative_deviation)
            .fold(0.0, f64::max)
    }
}

/// Compares populations and photon number of two trajectories sampled on the
/// same grid. The deviation of each observable is `max_t |x - x_ref|`
/// divided by `max_t |x_ref|`.
pub fn compare(
    cumulant: &Trajectory,
    exact: &Trajectory,
    tol: f64,
) -> Result<CompareReport, OracleError> {
    if cumulant.times.len() != exact.times.len()
        || cumulant
            .times
            .iter()
            .zip(&exact.times)
            .any(|(a, b)| (a - b).abs() > 1e-12 * a.abs().max(b.abs()))
    {
        return Err(OracleError::GridMismatch);
    }
    type Series = (&'static str, fn(&CumulantState) -> f64);
    let series: [Series; 6] = [
        ("p1", |s| s.p[0]),
        ("p2", |s| s.p[1]),
        ("p3", |s| s.p[2]),
        ("p4", |s| s.p[3]),
        ("p5", |s| s.p[4]),
        ("n_ph", |s| s.n_ph),
    ];
    let observables: Vec<ObservableDeviation> = series
        .iter()
        .map(|(name, f)| {
            let max_abs_deviation = cumulant
                .states
                .iter()
                .zip(&exact.states)
                .map(|(a, b)| (f(a) - f(b)).abs())
                .fold(0.0, f64::max);
            let scale = exact.states.iter().map(|s| f(s).abs()).fold(0.0, f64::max);
            let relative_deviation = if scale > 0.0 {
                max_abs_deviation / scale
            } else if max_abs_deviation == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            ObservableDeviation {
                name: name.to_string(),
                max_abs_deviation,
                scale,
                relative_deviation,
                pass: relative_deviation <= tol,
            }
        })
        .collect();
    let pass = observables.iter().all(|o| o.pass);
    Ok(CompareReport {
        tolerance: tol,
        observables,
        pass,
    })
}

/// Thermal photon number of the reduced instances.
pub const DOWNSCALED_N_TH: f64 = 0.1;
/// Single-molecule cooperativity `4 g^2 / (kappa gamma)` of the reduced instances.
pub const DOWNSCALED_COOPERATIVITY: f64 = 0.1;

/// Maps a full-size parameter set onto an instance the oracle can solve:
/// `n_molecules` explicit molecules, a nearly dark cavity, and a weak
/// coupling fixed by [`DOWNSCALED_COOPERATIVITY`]. Rates and drives are kept.
pub fn downscale(base: &ModelParams, n_molecules: usize) -> ModelParams {
    let mut p = base.clone();
    p.n_pen = n_molecules as f64;
    p.n_th = DOWNSCALED_N_TH;
    p.temperature = None;
    let gamma = cumulant::transverse_rate(&p, (3, 5)).expect("valid pair");
    p.g_35 = (DOWNSCALED_COOPERATIVITY * p.kappa * gamma / 4.0).sqrt();
    p
}

/// Oracle tolerance for drive-free runs.
pub const DRIVE_FREE_TOL: f64 = 0.05;
/// Oracle tolerance with a coherent drive.
pub const DRIVEN_TOL: f64 = 0.10;

/// Result of running both solvers on one reduced instance.
#[derive(Debug, Clone)]
pub struct OracleCheck {
    pub params: ModelParams,
    pub n_molecules: usize,
    pub fock_cutoff: usize,
    pub exact: ExactTrajectory,
    pub cumulant: Trajectory,
    pub report: CompareReport,
}

/// Runs the exact and cumulant solvers for `params` (already reduced, with
/// `n_pen == n_molecules`) over `t_end` and compares them at `tol`.
pub fn run_check(
    params: &ModelParams,
    n_molecules: usize,
    fock_cutoff: usize,
    t_end: f64,
    points: usize,
    tol: f64,
) -> Result<OracleCheck, OracleError> {
    run_check_against(params, params, n_molecules, fock_cutoff, t_end, points, tol)
}

/// [`run_check`] with the cumulant solver given its own parameters, so that a
/// deliberately wrong rate can be checked to fail.
pub fn run_check_against(
    params: &ModelParams,
    cumulant_params: &ModelParams,
    n_molecules: usize,
    fock_cutoff: usize,
    t_end: f64,
    points: usize,
    tol: f64,
) -> Result<OracleCheck, OracleError> {
    let cfg = OracleConfig::new(params.clone(), n_molecules, fock_cutoff, t_end, points);
    let l = build_generator(&cfg)?;
    let rho0 = DensityMatrix::ground_thermal(n_molecules, fock_cutoff, params.n_th);
    let exact = evolve_exact(&rho0, &l, t_end, &cfg.grid)?;

    let model: ValidatedModel = validate(cumulant_params)?;
    let initial = CumulantState::ground(rho0.photon_mean(fock_cutoff));
    let icfg = IntegratorConfig {
        rel_tol: 1e-9,
        abs_tol: 1e-12,
        t_end,
        grid: cfg.grid.clone(),
        ..Default::default()
    };
    let cumulant = cumulant::integrate(&initial, &model, &icfg)?;
    let report = compare(&cumulant, &exact.trajectory, tol)?;
    Ok(OracleCheck {
        params: params.clone(),
        n_molecules,
        fock_cutoff,
        exact,
        cumulant,
        report,
    })
}
