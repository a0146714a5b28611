// Copyright 2026 Pentabat Contributors
// SPDX-License-Identifier: Apache-2.0

//! C ABI for the pentabat simulator.
//!
//! Every fallible function returns a [`PbStatus`]. On failure a description
//! is kept per thread and can be read with [`pb_last_error_message`].
//! Handles are opaque. They come from [`pb_model_default`],
//! [`pb_model_from_json`] or [`pb_simulate`] and are released by the matching
//! `*_free`; passing NULL to a free is a no-op.
//! Optional metric values that do not apply to a run are reported as NaN.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use pentabat::cumulant::{
    self, CumulantState, IntegratorConfig, OutputGrid, Trajectory, STATE_DIM,
};
use pentabat::model::{self, validate, ModelParams};
use pentabat::observables::{extract_metrics, MetricsOptions};
use pentabat::oracle::{self, OracleError, DRIVEN_TOL, DRIVE_FREE_TOL};
use pentabat::sweep::fit_power_law;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidModel = 3,
    Integration = 4,
    Metrics = 5,
    DimensionCap = 6,
    Io = 7,
    Panic = 8,
}

/// Number of reals per trajectory sample, excluding time.
pub const PB_STATE_DIM: usize = 18;
const _: () = assert!(PB_STATE_DIM == STATE_DIM);

/// Model parameters.
pub struct PbModel {
    params: ModelParams,
}

/// A sampled cumulant trajectory.
pub struct PbTrajectory {
    traj: Trajectory,
}

/// Battery figures of merit. Fields that do not apply are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PbMetrics {
    pub e_max: f64,
    pub t_max: f64,
    pub p_max: f64,
    pub tau_max: f64,
    pub e_min: f64,
    pub t_min: f64,
    pub work_w: f64,
    pub p_w: f64,
    pub eta: f64,
    pub tau_s: f64,
    pub n_ph_peak: f64,
    pub latency: f64,
}

/// `y = prefactor * x^exponent`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PbFit {
    pub exponent: f64,
    pub prefactor: f64,
    pub r_squared: f64,
    pub window_lo: f64,
    pub window_hi: f64,
    pub points: usize,
}

/// Outcome of comparing the cumulant solver with the exact solver.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PbOracleReport {
    pub worst_deviation: f64,
    pub tolerance: f64,
    pub pass: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl AsRef<str>) {
    let s = CString::new(msg.as_ref().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = s);
}

fn fail(status: PbStatus, msg: impl AsRef<str>) -> PbStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> PbStatus) -> PbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == PbStatus::Ok {
                set_error("");
            }
            s
        }
        Err(_) => fail(PbStatus::Panic, "internal panic"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, PbStatus> {
    if p.is_null() {
        return Err(fail(PbStatus::NullPointer, format!("{what} is NULL")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(PbStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(PbStatus::NullPointer, concat!(stringify!($p), " is NULL"));
        })+
    };
}

macro_rules! try_status {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

fn nan(v: Option<f64>) -> f64 {
    v.unwrap_or(f64::NAN)
}

/// Message describing the most recent failure on this thread, or an empty
/// string. Valid until the next pentabat call on the same thread.
#[no_mangle]
pub extern "C" fn pb_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Baseline model parameters.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pb_model_default(out: *mut *mut PbModel) -> PbStatus {
    guard(|| {
        non_null!(out);
        *out = Box::into_raw(Box::new(PbModel {
            params: ModelParams::default(),
        }));
        PbStatus::Ok
    })
}

/// Parameters from a JSON object; missing keys take baseline values.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pb_model_from_json(
    json: *const c_char,
    out: *mut *mut PbModel,
) -> PbStatus {
    guard(|| {
        non_null!(out);
        let src = try_status!(str_arg(json, "json"));
        match serde_json::from_str::<ModelParams>(src) {
            Ok(params) => {
                *out = Box::into_raw(Box::new(PbModel { params }));
                PbStatus::Ok
            }
            Err(e) => fail(PbStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pb_model_free(model: *mut PbModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Sets a numeric parameter by name; `"q"` sets the quality factor.
///
/// # Safety
/// `model` must be a live handle and `name` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pb_model_set(
    model: *mut PbModel,
    name: *const c_char,
    value: f64,
) -> PbStatus {
    guard(|| {
        non_null!(model);
        let name = try_status!(str_arg(name, "name"));
        match (*model).params.set(name, value) {
            Ok(()) => PbStatus::Ok,
            Err(e) => fail(PbStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// # Safety
/// `model` must be a live handle, `name` a NUL-terminated string and `out`
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pb_model_get(
    model: *const PbModel,
    name: *const c_char,
    out: *mut f64,
) -> PbStatus {
    guard(|| {
        non_null!(model, out);
        let name = try_status!(str_arg(name, "name"));
        match (*model).params.get(name) {
            Ok(v) => {
                *out = v;
                PbStatus::Ok
            }
            Err(e) => fail(PbStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Checks every parameter invariant.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pb_model_validate(model: *const PbModel) -> PbStatus {
    guard(|| {
        non_null!(model);
        match validate(&(*model).params) {
            Ok(_) => PbStatus::Ok,
            Err(e) => fail(PbStatus::InvalidModel, e.to_string()),
        }
    })
}

fn run_config(
    t_end: f64,
    points: usize,
    load_coupled: bool,
    charge_stop: f64,
) -> Result<IntegratorConfig, PbStatus> {
    let cfg = IntegratorConfig {
        t_end,
        grid: OutputGrid::Uniform { points },
        load_coupled,
        charge_stop_time: (!charge_stop.is_nan()).then_some(charge_stop),
        ..Default::default()
    };
    if points < 2 {
        return Err(fail(PbStatus::InvalidArgument, "points must be at least 2"));
    }
    cfg.validate()
        .map_err(|e| fail(PbStatus::InvalidArgument, e.to_string()))?;
    Ok(cfg)
}

/// Integrates from the ground state over `[0, t_end]` sampled at `points`
/// equally spaced times. `charge_stop` is the pump switch-off time, NaN for
/// continuous pumping.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pb_simulate(
    model: *const PbModel,
    t_end: f64,
    points: usize,
    load_coupled: bool,
    charge_stop: f64,
    out: *mut *mut PbTrajectory,
) -> PbStatus {
    guard(|| {
        non_null!(model, out);
        let params = &(*model).params;
        let cfg = try_status!(run_config(t_end, points, load_coupled, charge_stop));
        let vm = match validate(params) {
            Ok(m) => m,
            Err(e) => return fail(PbStatus::InvalidModel, e.to_string()),
        };
        match cumulant::integrate(&CumulantState::ground(params.n_th), &vm, &cfg) {
            Ok(traj) => {
                *out = Box::into_raw(Box::new(PbTrajectory { traj }));
                PbStatus::Ok
            }
            Err(e) => fail(PbStatus::Integration, e.to_string()),
        }
    })
}

/// # Safety
/// `traj` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pb_trajectory_free(traj: *mut PbTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

/// Number of samples, or 0 for NULL.
///
/// # Safety
/// `traj` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pb_trajectory_len(traj: *const PbTrajectory) -> usize {
    if traj.is_null() {
        0
    } else {
        (*traj).traj.len()
    }
}

/// Sample `index`: its time and the `PB_STATE_DIM` reals p1..p5, n_ph, then
/// real and imaginary parts of c35, s_coll, m35, m45, m34, alpha.
///
/// # Safety
/// `traj` must be a live handle, `t` a valid pointer and `state` point to
/// `PB_STATE_DIM` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn pb_trajectory_point(
    traj: *const PbTrajectory,
    index: usize,
    t: *mut f64,
    state: *mut f64,
) -> PbStatus {
    guard(|| {
        non_null!(traj, t, state);
        let tr = &(*traj).traj;
        if index >= tr.len() {
            return fail(
                PbStatus::InvalidArgument,
                format!("index {index} out of range ({})", tr.len()),
            );
        }
        *t = tr.times[index];
        let values = tr.states[index].to_array();
        std::ptr::copy_nonoverlapping(values.as_ptr(), state, STATE_DIM);
        PbStatus::Ok
    })
}

/// Writes the trajectory in the command-line CSV format.
///
/// # Safety
/// `traj` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pb_trajectory_write_csv(
    traj: *const PbTrajectory,
    path: *const c_char,
) -> PbStatus {
    guard(|| {
        non_null!(traj);
        let path = try_status!(str_arg(path, "path"));
        match pentabat::io::write_trajectory_file(Path::new(path), &(*traj).traj, "none") {
            Ok(()) => PbStatus::Ok,
            Err(e) => fail(PbStatus::Io, e.to_string()),
        }
    })
}

/// Figures of merit of a trajectory produced with the same `load_coupled`
/// and `charge_stop` settings. A missing post-maximum minimum leaves the
/// work fields NaN instead of failing.
///
/// # Safety
/// `traj` and `model` must be live handles and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pb_metrics(
    traj: *const PbTrajectory,
    model: *const PbModel,
    load_coupled: bool,
    charge_stop: f64,
    out: *mut PbMetrics,
) -> PbStatus {
    guard(|| {
        non_null!(traj, model, out);
        let tr = &(*traj).traj;
        let t_end = tr.times.last().copied().unwrap_or(0.0);
        let opts = MetricsOptions {
            load_coupled,
            charge_stop_time: (!charge_stop.is_nan() && charge_stop < t_end).then_some(charge_stop),
            require_minimum: false,
            ..Default::default()
        };
        match extract_metrics(tr, &(*model).params, &opts) {
            Ok(m) => {
                *out = PbMetrics {
                    e_max: m.e_max,
                    t_max: m.t_max,
                    p_max: m.p_max,
                    tau_max: m.tau_max,
                    e_min: nan(m.e_min),
                    t_min: nan(m.t_min),
                    work_w: nan(m.work_w),
                    p_w: nan(m.p_w),
                    eta: nan(m.eta),
                    tau_s: nan(m.tau_s),
                    n_ph_peak: nan(m.n_ph_peak),
                    latency: nan(m.latency),
                };
                PbStatus::Ok
            }
            Err(e) => fail(PbStatus::Metrics, e.to_string()),
        }
    })
}

/// Bose-Einstein occupation at angular frequency `omega` (rad/s) and
/// temperature (K).
#[no_mangle]
pub extern "C" fn pb_thermal_photons(omega: f64, temperature: f64) -> f64 {
    model::thermal_photons(omega, temperature)
}

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pb_kappa_from_q(omega_m: f64, q: f64, out: *mut f64) -> PbStatus {
    guard(|| {
        non_null!(out);
        match model::kappa_from_q(omega_m, q) {
            Ok(k) => {
                *out = k;
                PbStatus::Ok
            }
            Err(e) => fail(PbStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Least-squares power law through `n` points in log-log space.
///
/// # Safety
/// `x` and `y` must point to `n` doubles and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pb_fit_power_law(
    x: *const f64,
    y: *const f64,
    n: usize,
    out: *mut PbFit,
) -> PbStatus {
    guard(|| {
        non_null!(x, y, out);
        let xs = std::slice::from_raw_parts(x, n);
        let ys = std::slice::from_raw_parts(y, n);
        match fit_power_law(xs, ys, None) {
            Ok(f) => {
                *out = PbFit {
                    exponent: f.exponent,
                    prefactor: f.prefactor,
                    r_squared: f.r_squared,
                    window_lo: f.window.0,
                    window_hi: f.window.1,
                    points: f.points,
                };
                PbStatus::Ok
            }
            Err(e) => fail(PbStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Runs the exact and cumulant solvers on `model` reduced to `n_molecules`
/// molecules with photon cutoff `fock_cutoff`, over ten triplet lifetimes.
/// `tolerance` NaN selects 5 % without drive and 10 % with one. A mismatch
/// is reported through `out->pass`, not the status.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pb_oracle_check(
    model: *const PbModel,
    n_molecules: usize,
    fock_cutoff: usize,
    tolerance: f64,
    out: *mut PbOracleReport,
) -> PbStatus {
    guard(|| {
        non_null!(model, out);
        let reduced = oracle::downscale(&(*model).params, n_molecules);
        let driven = [reduced.drive_35, reduced.drive_45, reduced.drive_34]
            .iter()
            .any(|&d| d != 0.0);
        let tol = if tolerance.is_nan() {
            if driven {
                DRIVEN_TOL
            } else {
                DRIVE_FREE_TOL
            }
        } else {
            tolerance
        };
        let t_end = 10.0 * reduced.triplet_lifetime();
        if !t_end.is_finite() {
            return fail(PbStatus::InvalidModel, "triplet levels do not decay");
        }
        match oracle::run_check(&reduced, n_molecules, fock_cutoff, t_end, 2001, tol) {
            Ok(c) => {
                *out = PbOracleReport {
                    worst_deviation: c.report.worst(),
                    tolerance: tol,
                    pass: c.report.pass,
                };
                PbStatus::Ok
            }
            Err(e @ OracleError::DimensionCap { .. }) => {
                fail(PbStatus::DimensionCap, e.to_string())
            }
            Err(e @ (OracleError::Model(_) | OracleError::InvalidConfig(_))) => {
                fail(PbStatus::InvalidModel, e.to_string())
            }
            Err(e) => fail(PbStatus::Integration, e.to_string()),
        }
    })
}
