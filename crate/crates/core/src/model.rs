// Copyright 2026 Pentabat Contributors
// SPDX-License-Identifier: Apache-2.0

//! Physical parameters of the five-level pentacene ensemble coupled to a
//! lossy microwave cavity, their validation, and a few derived quantities.
//!
//! Level labels follow the usual pentacene convention: `|1>` ground singlet,
//! `|2>` excited singlet, `|3>`, `|4>`, `|5>` the triplet sublevels (Z, Y, X in
//! zero field) with `|5> -> |3>` the masing transition.
//!
//! Unit convention: everything named `omega_*`, `g_35`, `drive_*` is an
//! angular frequency in rad/s; everything named `k_*`, `xi`, `chi_*`, `kappa`
//! is a rate in 1/s. Transition rates `k_ij` with i, j in the triplet are
//! transfers *from* `|i>` *to* `|j>`.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reduced Planck constant (J s), CODATA 2018.
pub const HBAR: f64 = 1.054_571_817e-34;
/// Boltzmann constant (J/K), exact SI value.
pub const BOLTZMANN: f64 = 1.380_649e-23;

/// Pentacene intersystem-crossing branching into `(|5>, |4>, |3>)`.
pub const ISC_BRANCHING: (f64, f64, f64) = (0.76, 0.16, 0.08);

const SYMMETRY_RTOL: f64 = 1e-12;
const RESONANCE_RTOL: f64 = 1e-9;

/// Every rate, frequency and coupling that defines one physical configuration.
///
/// Serialized as a flat JSON object; missing keys take the [`Default`] values
/// and unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelParams {
    /// Number of pentacene molecules. Kept as `f64`: it enters the moment
    /// equations only as a multiplicity.
    pub n_pen: f64,
    pub omega_35: f64,
    pub omega_45: f64,
    pub omega_m: f64,
    pub omega_d: f64,
    pub xi: f64,
    pub k_sp: f64,
    pub k_23: f64,
    pub k_24: f64,
    pub k_25: f64,
    pub k_31: f64,
    pub k_41: f64,
    pub k_51: f64,
    pub k_34: f64,
    pub k_43: f64,
    pub k_35: f64,
    pub k_53: f64,
    pub k_45: f64,
    pub k_54: f64,
    pub chi_34: f64,
    pub chi_35: f64,
    pub chi_45: f64,
    pub g_35: f64,
    pub kappa: f64,
    pub n_th: f64,
    pub drive_35: f64,
    pub drive_45: f64,
    pub drive_34: f64,
    pub hbar: f64,
    /// Bath temperature (K). Only used to derive `n_th` when a config file
    /// sets it without setting `n_th`.
    pub temperature: Option<f64>,
    /// Require `k_34 = k_43`, `k_35 = k_53`, `k_45 = k_54`.
    pub symmetric_slr: bool,
    /// Accept a drive frequency that is not resonant with the driven transition.
    pub frame_override: bool,
}

impl Default for ModelParams {
    /// Baseline configuration. None of these numbers is a measured value for a
    /// specific sample; each is a documented modelling choice.
    fn default() -> Self {
        // X-Z zero-field transition of pentacene in p-terphenyl, the masing line.
        let omega_35 = 2.0 * PI * 1.45e9;
        // X-Y splitting (1.45 GHz - 1.345 GHz for the Y-Z line).
        let omega_45 = 2.0 * PI * 0.105e9;
        // S1 lifetime ~23 ns with ~62.5 % triplet yield: k_isc ~ 2.7e7 /s and
        // k_sp ~ 1.6e7 /s (singlet lifetimes "~ns").
        let k_isc = 2.7e7;
        let (k_25, k_24, k_23) =
            isc_branching(k_isc, ISC_BRANCHING).expect("constant branching ratio is valid");
        // Loaded Q of a sapphire-ring maser cavity.
        let q = 2.0e4;
        let temperature = 300.0;
        Self {
            // Chosen so that masing sets in a few hundred ns after the pump is
            // switched on at xi = 6.2e7 /s.
            n_pen: 1.0e16,
            omega_35,
            omega_45,
            omega_m: omega_35,
            omega_d: omega_35,
            xi: 6.2e7,
            k_sp: 1.6e7,
            k_23,
            k_24,
            k_25,
            // Triplet sublevel decay to S0, tens of microseconds to sub-ms.
            k_31: 2.5e3,
            k_41: 2.0e4,
            k_51: 2.0e4,
            // Spin-lattice relaxation, symmetric pairs, ~100 us.
            k_34: 1.0e4,
            k_43: 1.0e4,
            k_35: 1.0e4,
            k_53: 1.0e4,
            k_45: 1.0e4,
            k_54: 1.0e4,
            // Pure dephasing, T2 ~ 1 us.
            chi_34: 1.0e6,
            chi_35: 1.0e6,
            chi_45: 1.0e6,
            // Single-spin coupling of a few tenths of a Hz for a
            // millilitre-scale mode volume.
            g_35: 0.5,
            kappa: omega_35 / q,
            n_th: thermal_photons(omega_35, temperature),
            drive_35: 0.0,
            drive_45: 0.0,
            drive_34: 0.0,
            hbar: HBAR,
            temperature: Some(temperature),
            symmetric_slr: true,
            frame_override: false,
        }
    }
}

macro_rules! numeric_fields {
    ($($name:ident),* $(,)?) => {
        /// Names of all numeric fields, in declaration order.
        pub const NUMERIC_FIELDS: &[&str] = &[$(stringify!($name)),*];

        impl ModelParams {
            fn field(&self, name: &str) -> Option<f64> {
                match name {
                    $(stringify!($name) => Some(self.$name),)*
                    _ => None,
                }
            }

            fn field_mut(&mut self, name: &str) -> Option<&mut f64> {
                match name {
                    $(stringify!($name) => Some(&mut self.$name),)*
                    _ => None,
                }
            }
        }
    };
}

numeric_fields!(
    n_pen, omega_35, omega_45, omega_m, omega_d, xi, k_sp, k_23, k_24, k_25, k_31, k_41, k_51,
    k_34, k_43, k_35, k_53, k_45, k_54, chi_34, chi_35, chi_45, g_35, kappa, n_th, drive_35,
    drive_45, drive_34, hbar,
);

impl ModelParams {
    /// Reads a numeric field by name. `"q"` returns the loaded quality
    /// factor `omega_m / kappa`.
    pub fn get(&self, name: &str) -> Result<f64, ModelError> {
        if name == "q" {
            return Ok(self.omega_m / self.kappa);
        }
        self.field(name)
            .ok_or_else(|| ModelError::UnknownParameter(name.to_string()))
    }

    /// Sets a numeric field by name. `"q"` sets `kappa = omega_m / q`.
    pub fn set(&mut self, name: &str, value: f64) -> Result<(), ModelError> {
        if name == "q" {
            self.kappa = kappa_from_q(self.omega_m, value)?;
            return Ok(());
        }
        let slot = self
            .field_mut(name)
            .ok_or_else(|| ModelError::UnknownParameter(name.to_string()))?;
        *slot = value;
        Ok(())
    }

    /// Total spin-lattice plus ground-state decay rate out of a triplet level.
    pub fn triplet_out_rate(&self, level: usize) -> f64 {
        match level {
            3 => self.k_31 + self.k_34 + self.k_35,
            4 => self.k_41 + self.k_43 + self.k_45,
            5 => self.k_51 + self.k_53 + self.k_54,
            _ => 0.0,
        }
    }

    /// Mean triplet lifetime `3 / (k_31 + k_41 + k_51)`, or infinity when the
    /// triplets do not decay.
    pub fn triplet_lifetime(&self) -> f64 {
        let total = self.k_31 + self.k_41 + self.k_51;
        if total > 0.0 {
            3.0 / total
        } else {
            f64::INFINITY
        }
    }

    /// A configuration with every rate, frequency, coupling and drive set to
    /// zero, one molecule and an empty cavity. Useful as a starting point for
    /// isolating single channels.
    pub fn zeroed() -> Self {
        let mut p = Self::default();
        for name in NUMERIC_FIELDS {
            if *name != "hbar" {
                p.set(name, 0.0).expect("listed field");
            }
        }
        p.n_pen = 1.0;
        p.temperature = None;
        p
    }
}

/// A single violated invariant.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("{field} must be finite, got {value}")]
    NonFinite { field: &'static str, value: f64 },
    #[error("{field} must be non-negative, got {value}")]
    NegativeRate { field: &'static str, value: f64 },
    #[error("n_pen must be at least 1, got {0}")]
    InvalidMoleculeCount(f64),
    #[error("symmetric SLR requested but {forward} = {forward_value} differs from {backward} = {backward_value}")]
    SymmetryViolation {
        forward: &'static str,
        forward_value: f64,
        backward: &'static str,
        backward_value: f64,
    },
    #[error(
        "drive frequency {omega_d} rad/s is not resonant with the driven transition ({expected})"
    )]
    InconsistentDriveResonance { omega_d: f64, expected: String },
    #[error("quality factor must be positive, got {0}")]
    NonPositiveQ(f64),
    #[error("ISC branching ratio must have non-negative entries with a positive sum")]
    ZeroRatioSum,
    #[error("unknown model parameter `{0}`")]
    UnknownParameter(String),
}

/// All invariants violated by a parameter set.
#[derive(Debug, Clone, PartialEq, Error)]
pub struct ValidationErrors(pub Vec<ModelError>);

impl fmt::Display for ValidationErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid model parameters: ")?;
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl ValidationErrors {
    pub fn contains(&self, pred: impl Fn(&ModelError) -> bool) -> bool {
        self.0.iter().any(pred)
    }
}

/// Detunings in the frame rotating at the drive frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetuningFrame {
    /// `omega_35 - omega_d`
    pub delta_b: f64,
    /// `omega_m - omega_d`
    pub delta_m: f64,
    /// `omega_45 - omega_d`, the detuning carried by the |4>-|5> drive.
    pub delta_45: f64,
}

impl DetuningFrame {
    fn from_params(p: &ModelParams) -> Self {
        Self {
            delta_b: p.omega_35 - p.omega_d,
            delta_m: p.omega_m - p.omega_d,
            delta_45: p.omega_45 - p.omega_d,
        }
    }

    /// Rotating-frame energies (rad/s) of `|3>`, `|4>`, `|5>`.
    ///
    /// `|5>` and `|3>` sit at `+-delta_b/2`; `|4>` sits `delta_45` below `|5>`
    /// so that a `|4>-|5>` drive at `omega_d` is static in this frame.
    pub fn level_energies(&self) -> [f64; 3] {
        let e5 = 0.5 * self.delta_b;
        [-0.5 * self.delta_b, e5 - self.delta_45, e5]
    }
}

/// A parameter set that passed [`validate`]. Immutable; share freely across
/// threads.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedModel {
    params: ModelParams,
    frame: DetuningFrame,
}

impl ValidatedModel {
    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn frame(&self) -> &DetuningFrame {
        &self.frame
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    /// Energy quantum of the battery transition, `hbar * omega_35` (J).
    pub fn quantum(&self) -> f64 {
        self.params.hbar * self.params.omega_35
    }
}

fn check_field(errors: &mut Vec<ModelError>, field: &'static str, value: f64) {
    if !value.is_finite() {
        errors.push(ModelError::NonFinite { field, value });
    } else if value < 0.0 {
        errors.push(ModelError::NegativeRate { field, value });
    }
}

fn close(a: f64, b: f64, rtol: f64) -> bool {
    (a - b).abs() <= rtol * a.abs().max(b.abs())
}

/// Checks every invariant of `params` and computes the detuning frame.
///
/// Returns every violation at once rather than stopping at the first one.
pub fn validate(params: &ModelParams) -> Result<ValidatedModel, ValidationErrors> {
    let mut errors = Vec::new();
    let p = params;
    let fields: [(&'static str, f64); 29] = [
        ("n_pen", p.n_pen),
        ("omega_35", p.omega_35),
        ("omega_45", p.omega_45),
        ("omega_m", p.omega_m),
        ("omega_d", p.omega_d),
        ("xi", p.xi),
        ("k_sp", p.k_sp),
        ("k_23", p.k_23),
        ("k_24", p.k_24),
        ("k_25", p.k_25),
        ("k_31", p.k_31),
        ("k_41", p.k_41),
        ("k_51", p.k_51),
        ("k_34", p.k_34),
        ("k_43", p.k_43),
        ("k_35", p.k_35),
        ("k_53", p.k_53),
        ("k_45", p.k_45),
        ("k_54", p.k_54),
        ("chi_34", p.chi_34),
        ("chi_35", p.chi_35),
        ("chi_45", p.chi_45),
        ("g_35", p.g_35),
        ("kappa", p.kappa),
        ("n_th", p.n_th),
        ("drive_35", p.drive_35),
        ("drive_45", p.drive_45),
        ("drive_34", p.drive_34),
        ("hbar", p.hbar),
    ];
    for (field, value) in fields {
        check_field(&mut errors, field, value);
    }
    if let Some(t) = p.temperature {
        check_field(&mut errors, "temperature", t);
    }
    if p.n_pen.is_finite() && p.n_pen < 1.0 {
        errors.push(ModelError::InvalidMoleculeCount(p.n_pen));
    }

    if p.symmetric_slr {
        for (forward, fv, backward, bv) in [
            ("k_34", p.k_34, "k_43", p.k_43),
            ("k_35", p.k_35, "k_53", p.k_53),
            ("k_45", p.k_45, "k_54", p.k_54),
        ] {
            if !close(fv, bv, SYMMETRY_RTOL) {
                errors.push(ModelError::SymmetryViolation {
                    forward,
                    forward_value: fv,
                    backward,
                    backward_value: bv,
                });
            }
        }
    }

    if !p.frame_override {
        let on35 = p.drive_35 != 0.0;
        let on45 = p.drive_45 != 0.0;
        let res35 = close(p.omega_d, p.omega_35, RESONANCE_RTOL);
        let res45 = close(p.omega_d, p.omega_45, RESONANCE_RTOL);
        let expected = match (on35, on45) {
            (true, false) if !res35 => Some("omega_35".to_string()),
            (false, true) if !res45 => Some("omega_45".to_string()),
            (true, true) if !res35 && !res45 => Some("omega_35 or omega_45".to_string()),
            _ => None,
        };
        if let Some(expected) = expected {
            errors.push(ModelError::InconsistentDriveResonance {
                omega_d: p.omega_d,
                expected,
            });
        }
    }

    if errors.is_empty() {
        Ok(ValidatedModel {
            params: params.clone(),
            frame: DetuningFrame::from_params(params),
        })
    } else {
        Err(ValidationErrors(errors))
    }
}

/// Splits a total intersystem-crossing rate into `(k_25, k_24, k_23)` in
/// proportion to `ratio = (|5>, |4>, |3>)`.
pub fn isc_branching(
    total_rate: f64,
    ratio: (f64, f64, f64),
) -> Result<(f64, f64, f64), ModelError> {
    let (r5, r4, r3) = ratio;
    let sum = r5 + r4 + r3;
    if r5 < 0.0 || r4 < 0.0 || r3 < 0.0 || !(sum > 0.0) {
        return Err(ModelError::ZeroRatioSum);
    }
    let k5 = total_rate * r5 / sum;
    let k4 = total_rate * r4 / sum;
    // Close the sum exactly on total_rate.
    let k3 = if r3 == 0.0 { 0.0 } else { total_rate - k5 - k4 };
    Ok((k5, k4, k3))
}

/// Bose-Einstein occupation of a mode at angular frequency `omega` (rad/s)
/// and temperature `temperature` (K). Zero at `T = 0`.
pub fn thermal_photons(omega: f64, temperature: f64) -> f64 {
    if temperature <= 0.0 {
        return 0.0;
    }
    let x = HBAR * omega / (BOLTZMANN * temperature);
    1.0 / x.exp_m1()
}

/// Cavity energy decay rate `kappa = omega_m / q`.
pub fn kappa_from_q(omega_m: f64, q: f64) -> Result<f64, ModelError> {
    if !(q > 0.0) {
        return Err(ModelError::NonPositiveQ(q));
    }
    Ok(omega_m / q)
}
