// Copyright 2026 Pentabat Contributors
// SPDX-License-Identifier: Apache-2.0

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use pentabat::cumulant::{self, CumulantState, IntegratorConfig, OutputGrid, Trajectory};
use pentabat::model::{validate, ModelParams};
use pentabat::oracle;

pub const BLESS_ENV: &str = "PENTABAT_BLESS";

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

pub fn run(params: &ModelParams, cfg: &IntegratorConfig) -> Trajectory {
    let m = validate(params).expect("valid model");
    cumulant::integrate(&CumulantState::ground(params.n_th), &m, cfg).expect("integration")
}

pub fn uniform(t_end: f64, points: usize) -> IntegratorConfig {
    IntegratorConfig {
        t_end,
        grid: OutputGrid::Uniform { points },
        ..Default::default()
    }
}

/// Drive `Omega_35` equal to the 3-5 transverse rate.
pub fn driven_at_gamma(mut p: ModelParams) -> ModelParams {
    p.drive_35 = cumulant::transverse_rate(&p, (3, 5)).expect("pair");
    p
}

/// Oracle equivalence window for a reduced instance: ten triplet lifetimes.
pub fn oracle_window(p: &ModelParams) -> f64 {
    10.0 * p.triplet_lifetime()
}

pub fn reduced(n: usize, driven: bool) -> ModelParams {
    let p = oracle::downscale(&ModelParams::default(), n);
    if driven {
        driven_at_gamma(p)
    } else {
        p
    }
}

/// Largest `|a - b|` per column relative to the column's largest `|b|`
/// (floored at `floor` so all-zero columns compare absolutely).
pub fn max_column_deviation(a: &Trajectory, b: &Trajectory, floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut worst = 0.0f64;
    let ta: Vec<[f64; 18]> = a.states.iter().map(|s| s.to_array()).collect();
    let tb: Vec<[f64; 18]> = b.states.iter().map(|s| s.to_array()).collect();
    for c in 0..18 {
        let scale = tb.iter().map(|r| r[c].abs()).fold(floor, f64::max);
        let dev = ta
            .iter()
            .zip(&tb)
            .map(|(x, y)| (x[c] - y[c]).abs())
            .fold(0.0, f64::max);
        worst = worst.max(dev / scale);
    }
    let tdev = a
        .times
        .iter()
        .zip(&b.times)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    worst.max(tdev / b.times.last().copied().unwrap_or(1.0))
}

pub struct GoldenCase {
    pub file: &'static str,
    /// Exact density-matrix result rather than the cumulant solver.
    pub exact: bool,
    pub rel_tol: f64,
}

pub const GOLDEN_CASES: [GoldenCase; 5] = [
    GoldenCase {
        file: "baseline.csv",
        exact: false,
        rel_tol: 1e-8,
    },
    GoldenCase {
        file: "no_load.csv",
        exact: false,
        rel_tol: 1e-8,
    },
    GoldenCase {
        file: "charge_stop.csv",
        exact: false,
        rel_tol: 1e-8,
    },
    GoldenCase {
        file: "reduced_driven_n1.csv",
        exact: false,
        rel_tol: 1e-9,
    },
    GoldenCase {
        file: "exact_n1.csv",
        exact: true,
        rel_tol: 1e-10,
    },
];

/// Recomputes the trajectory stored in a golden file.
pub fn golden_trajectory(file: &str) -> Trajectory {
    let base = ModelParams::default();
    match file {
        "baseline.csv" => run(&base, &uniform(3e-6, 601)),
        "no_load.csv" => run(
            &base,
            &IntegratorConfig {
                load_coupled: false,
                ..uniform(1e-5, 501)
            },
        ),
        "charge_stop.csv" => run(
            &base,
            &IntegratorConfig {
                load_coupled: false,
                charge_stop_time: Some(1e-6),
                ..uniform(6e-5, 601)
            },
        ),
        "reduced_driven_n1.csv" => {
            let p = reduced(1, true);
            let cfg = IntegratorConfig {
                rel_tol: 1e-9,
                abs_tol: 1e-12,
                ..uniform(oracle_window(&p), 501)
            };
            run(&p, &cfg)
        }
        "exact_n1.csv" => exact_n1().trajectory,
        other => panic!("unknown golden file {other}"),
    }
}

pub fn exact_n1() -> oracle::ExactTrajectory {
    let p = reduced(1, false);
    let t_end = oracle_window(&p);
    let cfg = oracle::OracleConfig::new(p.clone(), 1, 8, t_end, 501);
    let l = oracle::build_generator(&cfg).expect("generator");
    let rho0 = oracle::DensityMatrix::ground_thermal(1, 8, p.n_th);
    oracle::evolve_exact(&rho0, &l, t_end, &cfg.grid).expect("exact evolution")
}
