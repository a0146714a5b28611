// Copyright 2026 Pentabat Contributors
// SPDX-License-Identifier: Apache-2.0

//! Run configuration: defaults, JSON overlay files and command-line overrides.
//!
//! A config file is a JSON object with optional sections `model`,
//! `integrator`, `metrics`, `oracle`. Keys inside a section replace the
//! corresponding default; keys not present keep it. Unknown sections or keys
//! are errors. Precedence is flags > file > defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::cumulant::{IntegratorConfig, OutputGrid};
use crate::model::{thermal_photons, ModelError, ModelParams};
use crate::observables::MetricsOptions;

/// Directory searched for config files given by relative path, and for
/// `default.json` when no config is given.
pub const CONFIG_DIR_ENV: &str = "PENTABAT_CONFIG_DIR";
/// File looked up in [`CONFIG_DIR_ENV`] when no `--config` is passed.
pub const DEFAULT_CONFIG_NAME: &str = "default.json";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("config not found: {0}")]
    NotFound(PathBuf),
    #[error("bad override `{0}`: expected name=value")]
    BadOverride(String),
    #[error(transparent)]
    Parameter(#[from] ModelError),
}

/// Tunables of the figure-of-merit extraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSettings {
    pub storage_threshold: f64,
    pub latency_frac: f64,
}

impl Default for MetricsSettings {
    fn default() -> Self {
        let d = MetricsOptions::default();
        Self {
            storage_threshold: d.storage_threshold,
            latency_frac: d.latency_frac,
        }
    }
}

/// Reduced instance used by `oracle-check`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSettings {
    pub n_molecules: usize,
    pub fock_cutoff: usize,
    /// Window length in triplet lifetimes.
    pub lifetimes: f64,
    pub points: usize,
    /// Relative tolerance; `None` picks 5 % drive-free and 10 % driven.
    pub tolerance: Option<f64>,
    /// `name=value` changes applied to the cumulant side only. Non-empty
    /// lists make a negative control that is expected to fail.
    pub cumulant_overrides: Vec<String>,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self {
            n_molecules: 1,
            fock_cutoff: 8,
            lifetimes: 10.0,
            points: 2001,
            tolerance: None,
            cumulant_overrides: Vec::new(),
        }
    }
}

/// Fully resolved configuration of one invocation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelParams,
    pub integrator: IntegratorConfig,
    pub metrics: MetricsSettings,
    pub oracle: OracleSettings,
}

impl RunConfig {
    /// Defaults overlaid with the JSON text `src` (`origin` names it in errors).
    pub fn from_json_str(src: &str, origin: &str) -> Result<Self, ConfigError> {
        let parse = |message: String| ConfigError::Parse {
            path: origin.to_string(),
            message,
        };
        let overlay: Value = serde_json::from_str(src).map_err(|e| parse(e.to_string()))?;
        let Value::Object(overlay) = overlay else {
            return Err(parse("top level must be an object".into()));
        };
        let mut merged = serde_json::to_value(Self::default()).expect("defaults serialize");
        let sections = merged.as_object_mut().expect("object");
        for (name, body) in overlay {
            let Some(Value::Object(target)) = sections.get_mut(&name) else {
                return Err(ConfigError::UnknownKey(name));
            };
            let Value::Object(body) = body else {
                return Err(parse(format!("section `{name}` must be an object")));
            };
            overlay_section(&name, target, body)?;
        }
        let mut cfg: Self = serde_json::from_value(merged).map_err(|e| parse(e.to_string()))?;
        cfg.derive_thermal_occupation(src);
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let src = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json_str(&src, &path.display().to_string())
    }

    /// Loads the config named on the command line, or the default file of
    /// the config directory, or built-in defaults.
    pub fn load(explicit: Option<&Path>, config_dir: Option<&Path>) -> Result<Self, ConfigError> {
        match resolve_path(explicit, config_dir)? {
            Some(p) => Self::from_file(&p),
            None => Ok(Self::default()),
        }
    }

    /// A file that sets `temperature` but not `n_th` gets `n_th` from the
    /// Bose-Einstein occupation of the cavity mode.
    fn derive_thermal_occupation(&mut self, src: &str) {
        let Ok(Value::Object(top)) = serde_json::from_str::<Value>(src) else {
            return;
        };
        let Some(Value::Object(model)) = top.get("model") else {
            return;
        };
        if model.contains_key("temperature") && !model.contains_key("n_th") {
            if let Some(t) = self.model.temperature {
                self.model.n_th = thermal_photons(self.model.omega_m, t);
            }
        }
    }

    /// Applies `name=value` model overrides (`q` sets the cavity decay).
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<(), ConfigError> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| ConfigError::BadOverride(o.to_string()))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| ConfigError::BadOverride(o.to_string()))?;
            self.model.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn metrics_options(&self) -> MetricsOptions {
        MetricsOptions {
            storage_threshold: self.metrics.storage_threshold,
            latency_frac: self.metrics.latency_frac,
            ..MetricsOptions::for_run(&self.integrator)
        }
    }

    /// Changes the run length, keeping the sample spacing of a uniform grid.
    pub fn set_until(&mut self, t_end: f64) {
        if let OutputGrid::Uniform { points } = self.integrator.grid {
            let spacing = self.integrator.t_end / (points.max(2) - 1) as f64;
            let n = (t_end / spacing).round().max(1.0) as usize + 1;
            self.integrator.grid = OutputGrid::Uniform { points: n };
        }
        self.integrator.t_end = t_end;
    }
}

fn overlay_section(
    name: &str,
    target: &mut Map<String, Value>,
    body: Map<String, Value>,
) -> Result<(), ConfigError> {
    for (k, v) in body {
        if !target.contains_key(&k) {
            return Err(ConfigError::UnknownKey(format!("{name}.{k}")));
        }
        target.insert(k, v);
    }
    Ok(())
}

fn resolve_path(
    explicit: Option<&Path>,
    config_dir: Option<&Path>,
) -> Result<Option<PathBuf>, ConfigError> {
    match explicit {
        Some(p) if p.exists() => Ok(Some(p.to_path_buf())),
        Some(p) => {
            if p.is_relative() {
                if let Some(dir) = config_dir {
                    let candidate = dir.join(p);
                    if candidate.exists() {
                        return Ok(Some(candidate));
                    }
                }
            }
            Err(ConfigError::NotFound(p.to_path_buf()))
        }
        None => Ok(config_dir
            .map(|d| d.join(DEFAULT_CONFIG_NAME))
            .filter(|p| p.exists())),
    }
}

/// Value of [`CONFIG_DIR_ENV`], if set and non-empty.
pub fn config_dir_from_env() -> Option<PathBuf> {
    std::env::var_os(CONFIG_DIR_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
}
