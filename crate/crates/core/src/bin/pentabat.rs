// Copyright 2026 Pentabat Contributors
// SPDX-License-Identifier: Apache-2.0

//! `pentabat` command-line driver.
//!
//! Exit codes: 0 success, 1 oracle mismatch or I/O failure, 2 configuration
//! error, 3 integration failure, 4 oracle dimension cap exceeded.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use pentabat::config::{config_dir_from_env, ConfigError, RunConfig, CONFIG_DIR_ENV};
use pentabat::cumulant::{self, CumulantState};
use pentabat::io::{self, MetricsRecord, RunManifest, Tagged};
use pentabat::model::validate;
use pentabat::observables::extract_metrics;
use pentabat::oracle::{self, OracleError, DRIVEN_TOL, DRIVE_FREE_TOL};
use pentabat::sweep::{self, Grid, RegionOptions, SweepSpec};

#[derive(Parser)]
#[command(
    name = "pentabat",
    version,
    about = "Pentacene maser quantum battery simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one charging run and write trajectory, metrics and manifest.
    Simulate(SimulateArgs),
    /// Evaluate a parameter sweep with power-law fits and threshold regions.
    Sweep(SweepArgs),
    /// Compare the cumulant solver against the exact density-matrix solver
    /// on a reduced instance.
    OracleCheck(OracleArgs),
    /// Re-fit a power law to two columns of an existing sweep CSV.
    Fit(FitArgs),
}

#[derive(Args, Clone)]
struct Common {
    /// JSON config overlaid on the built-in defaults. Relative paths are
    /// also looked up in the directory named by PENTABAT_CONFIG_DIR.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "pentabat-out")]
    out_dir: PathBuf,
    /// Model parameter override, `name=value`; repeatable.
    #[arg(long = "set", value_name = "NAME=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Clone)]
struct RunFlags {
    /// Simulated time (s).
    #[arg(long)]
    until: Option<f64>,
    /// Switch the pump off at this time (s).
    #[arg(long)]
    charge_stop: Option<f64>,
    /// Decouple the cavity load.
    #[arg(long)]
    no_load: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    run: RunFlags,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    run: RunFlags,
    /// Parameter to vary: a model field name or `q`.
    #[arg(long)]
    param: String,
    #[arg(long)]
    from: f64,
    #[arg(long)]
    to: f64,
    #[arg(long, default_value_t = 11)]
    points: usize,
    /// Logarithmic spacing.
    #[arg(long)]
    log: bool,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    molecules: Option<usize>,
    #[arg(long)]
    cutoff: Option<usize>,
    /// Relative tolerance; defaults to 5 % drive-free, 10 % driven.
    #[arg(long)]
    tolerance: Option<f64>,
}

#[derive(Args)]
struct FitArgs {
    /// Sweep CSV produced by `pentabat sweep`.
    input: PathBuf,
    #[arg(long, default_value = "measured_n")]
    x: String,
    #[arg(long, default_value = "t_max")]
    y: String,
    /// Lower end of the fit window in x.
    #[arg(long)]
    from: Option<f64>,
    /// Upper end of the fit window in x.
    #[arg(long)]
    to: Option<f64>,
    /// Write the fit here instead of standard output.
    #[arg(long)]
    output: Option<PathBuf>,
}

enum Failure {
    Config(String),
    Integration(String),
    DimensionCap(String),
    Other(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Other(_) => 1,
            Failure::Config(_) => 2,
            Failure::Integration(_) => 3,
            Failure::DimensionCap(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m)
            | Failure::Integration(m)
            | Failure::DimensionCap(m)
            | Failure::Other(m) => m,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<io::IoError> for Failure {
    fn from(e: io::IoError) -> Self {
        Failure::Other(e.to_string())
    }
}

fn load_config(common: &Common, run: Option<&RunFlags>) -> Result<RunConfig, Failure> {
    let dir = config_dir_from_env();
    let mut cfg =
        RunConfig::load(common.config.as_deref(), dir.as_deref()).map_err(|e| match e {
            ConfigError::NotFound(p) => Failure::Config(format!(
                "config not found: {} (also searched ${CONFIG_DIR_ENV})",
                p.display()
            )),
            e => e.into(),
        })?;
    cfg.apply_overrides(&common.set)?;
    if let Some(run) = run {
        if let Some(t) = run.until {
            if !(t > 0.0) {
                return Err(Failure::Config("--until must be positive".into()));
            }
            cfg.set_until(t);
        }
        if let Some(t) = run.charge_stop {
            cfg.integrator.charge_stop_time = Some(t);
        }
        if run.no_load {
            cfg.integrator.load_coupled = false;
        }
    }
    cfg.integrator
        .validate()
        .map_err(|e| Failure::Config(e.to_string()))?;
    Ok(cfg)
}

fn finish_manifest(
    dir: &Path,
    manifest: &mut RunManifest,
    outputs: &[&str],
) -> Result<(), Failure> {
    manifest.outputs = outputs.iter().map(|s| s.to_string()).collect();
    io::write_manifest(&dir.join(io::MANIFEST_FILE), manifest)?;
    Ok(())
}

fn simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let cfg = load_config(&args.common, Some(&args.run))?;
    let model = validate(&cfg.model).map_err(|e| Failure::Config(e.to_string()))?;
    let traj = cumulant::integrate(
        &CumulantState::ground(cfg.model.n_th),
        &model,
        &cfg.integrator,
    )
    .map_err(|e| Failure::Integration(e.to_string()))?;

    let dir = &args.common.out_dir;
    io::write_trajectory_file(&dir.join(io::TRAJECTORY_FILE), &traj, io::MANIFEST_FILE)?;
    let metrics = extract_metrics(&traj, &cfg.model, &cfg.metrics_options());
    let quantum = cfg.model.n_pen * cfg.model.hbar * cfg.model.omega_35;
    let record = MetricsRecord {
        manifest: io::MANIFEST_FILE.into(),
        e_max_per_quantum: metrics.as_ref().ok().map(|m| m.e_max / quantum),
        error: metrics.as_ref().err().map(|e| e.to_string()),
        metrics: metrics.ok(),
        final_state: traj.states.last().copied(),
        max_population_drift: traj.max_population_drift(),
        min_population: traj.min_population(),
    };
    io::write_metrics_file(&dir.join(io::METRICS_FILE), &record)?;
    let mut manifest = RunManifest::new("simulate", &cfg);
    finish_manifest(dir, &mut manifest, &[io::TRAJECTORY_FILE, io::METRICS_FILE])?;

    match (&record.metrics, &record.error) {
        (Some(m), _) => println!(
            "E_max = {:.4e} J ({:.4} N hbar w35) at t_max = {:.4e} s; W = {}; eta = {}; tau_s = {}",
            m.e_max,
            record.e_max_per_quantum.unwrap_or(f64::NAN),
            m.t_max,
            opt(m.work_w),
            opt(m.eta),
            opt(m.tau_s)
        ),
        (None, Some(e)) => println!("metrics unavailable: {e}"),
        _ => {}
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4e}"))
        .unwrap_or_else(|| "n/a".into())
}

fn run_sweep_cmd(args: &SweepArgs) -> Result<(), Failure> {
    let cfg = load_config(&args.common, Some(&args.run))?;
    let grid = Grid {
        from: args.from,
        to: args.to,
        points: args.points,
        log: args.log,
    };
    let mut spec = SweepSpec::new(&args.param, grid, cfg.model.clone(), cfg.integrator.clone());
    spec.metrics = pentabat::observables::MetricsOptions {
        require_minimum: false,
        ..cfg.metrics_options()
    };
    spec.threads = args.threads;
    let result = sweep::run_sweep(&spec).map_err(|e| Failure::Config(e.to_string()))?;
    let regions = RegionOptions {
        background: Some(cfg.model.n_th),
        ..Default::default()
    };
    let summary = sweep::summarize(&spec, &result, &regions);

    let dir = &args.common.out_dir;
    io::write_sweep_file(&dir.join(io::SWEEP_FILE), &result, io::MANIFEST_FILE)?;
    io::write_summary_file(
        &dir.join(io::SUMMARY_FILE),
        &Tagged {
            manifest: io::MANIFEST_FILE.into(),
            body: &summary,
        },
    )?;
    let mut manifest = RunManifest::new("sweep", &cfg);
    manifest.extra = serde_json::to_value(SweepExtra {
        parameter: &spec.parameter,
        grid: &spec.grid,
        threads: spec.threads,
    })
    .ok();
    finish_manifest(dir, &mut manifest, &[io::SWEEP_FILE, io::SUMMARY_FILE])?;

    for p in &result.points {
        if let Some(e) = &p.error {
            eprintln!(
                "point {} ({} = {:e}): {e}",
                p.index, spec.parameter, p.value
            );
        }
    }
    for (name, fit) in [("t_max", &summary.t_max_fit), ("p_max", &summary.p_max_fit)] {
        if let Some(f) = &fit.full {
            println!(
                "{name} ~ N^{:.4} (R^2 = {:.5}, {} points)",
                f.exponent, f.r_squared, f.points
            );
        }
    }
    if let Some(r) = &summary.regions {
        println!(
            "regions: 2 from N = {}, 3 from N = {}",
            opt(r.region2_start),
            opt(r.region3_start)
        );
    }
    println!("wrote {}", dir.display());
    if result
        .points
        .iter()
        .all(|p| p.metrics.is_none() && p.n_ph_peak.is_none())
    {
        return Err(Failure::Integration("every sweep point failed".into()));
    }
    Ok(())
}

#[derive(Serialize)]
struct SweepExtra<'a> {
    parameter: &'a str,
    grid: &'a Grid,
    threads: Option<usize>,
}

#[derive(Serialize)]
struct OracleExtra {
    n_molecules: usize,
    fock_cutoff: usize,
    t_end: f64,
    reduced_params: pentabat::model::ModelParams,
    cumulant_overrides: Vec<String>,
}

#[derive(Serialize)]
struct OracleReport<'a> {
    report: &'a oracle::CompareReport,
    reduced_dim: usize,
    max_trace_error: f64,
    min_eigenvalue: f64,
    max_ceiling_population: f64,
}

fn oracle_check(args: &OracleArgs) -> Result<bool, Failure> {
    let mut cfg = load_config(&args.common, None)?;
    if let Some(n) = args.molecules {
        cfg.oracle.n_molecules = n;
    }
    if let Some(c) = args.cutoff {
        cfg.oracle.fock_cutoff = c;
    }
    let settings = cfg.oracle.clone();
    let reduced = oracle::downscale(&cfg.model, settings.n_molecules);
    let mut perturbed = RunConfig {
        model: reduced.clone(),
        ..cfg.clone()
    };
    perturbed.apply_overrides(&settings.cumulant_overrides)?;
    let driven = [reduced.drive_35, reduced.drive_45, reduced.drive_34]
        .iter()
        .any(|&d| d != 0.0);
    let tol = args.tolerance.or(settings.tolerance).unwrap_or(if driven {
        DRIVEN_TOL
    } else {
        DRIVE_FREE_TOL
    });
    let t_end = settings.lifetimes * reduced.triplet_lifetime();
    if !t_end.is_finite() || !(t_end > 0.0) {
        return Err(Failure::Config(
            "oracle window needs decaying triplets".into(),
        ));
    }

    let check = oracle::run_check_against(
        &reduced,
        &perturbed.model,
        settings.n_molecules,
        settings.fock_cutoff,
        t_end,
        settings.points,
        tol,
    )
    .map_err(|e| match e {
        OracleError::DimensionCap { .. } => Failure::DimensionCap(e.to_string()),
        OracleError::Model(_)
        | OracleError::InvalidConfig(_)
        | OracleError::InvalidInitialState(_) => Failure::Config(e.to_string()),
        e => Failure::Integration(e.to_string()),
    })?;

    let dir = &args.common.out_dir;
    io::write_summary_file(
        &dir.join(io::REPORT_FILE),
        &Tagged {
            manifest: io::MANIFEST_FILE.into(),
            body: OracleReport {
                report: &check.report,
                reduced_dim: check.exact.reduced_dim,
                max_trace_error: check.exact.max_trace_error,
                min_eigenvalue: check.exact.min_eigenvalue,
                max_ceiling_population: check.exact.max_ceiling_population,
            },
        },
    )?;
    let mut manifest = RunManifest::new("oracle-check", &cfg);
    manifest.extra = serde_json::to_value(OracleExtra {
        n_molecules: settings.n_molecules,
        fock_cutoff: settings.fock_cutoff,
        t_end,
        reduced_params: reduced,
        cumulant_overrides: settings.cumulant_overrides.clone(),
    })
    .ok();
    finish_manifest(dir, &mut manifest, &[io::REPORT_FILE])?;

    for o in &check.report.observables {
        println!(
            "{:6} {:.3e} {}",
            o.name,
            o.relative_deviation,
            if o.pass { "ok" } else { "FAIL" }
        );
    }
    println!(
        "{}: worst deviation {:.3e} against tolerance {:.3e} (N = {}, cutoff {})",
        if check.report.pass { "PASS" } else { "FAIL" },
        check.report.worst(),
        tol,
        settings.n_molecules,
        settings.fock_cutoff
    );
    Ok(check.report.pass)
}

fn fit(args: &FitArgs) -> Result<(), Failure> {
    let (x, y) = io::read_sweep_columns(&args.input, &args.x, &args.y)?;
    let window = match (args.from, args.to) {
        (None, None) => None,
        (a, b) => Some((a.unwrap_or(f64::NEG_INFINITY), b.unwrap_or(f64::INFINITY))),
    };
    let manual = sweep::fit_power_law(&x, &y, window).map_err(|e| Failure::Other(e.to_string()))?;
    let auto = sweep::auto_window_fit(&x, &y, sweep::AUTO_WINDOW_MIN_POINTS, 0.0).ok();
    #[derive(Serialize)]
    struct FitOut<'a> {
        input: String,
        x: &'a str,
        y: &'a str,
        fit: sweep::ScalingFit,
        auto: Option<sweep::ScalingFit>,
    }
    let out = FitOut {
        input: args.input.display().to_string(),
        x: &args.x,
        y: &args.y,
        fit: manual,
        auto,
    };
    match &args.output {
        Some(p) => io::write_summary_file(p, &out)?,
        None => {
            use std::io::Write;
            // A closed pipe (`| head`) is not an error worth reporting.
            let json = serde_json::to_string_pretty(&out).expect("serializable");
            let _ = writeln!(std::io::stdout().lock(), "{json}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Simulate(a) => simulate(a).map(|_| true),
        Command::Sweep(a) => run_sweep_cmd(a).map(|_| true),
        Command::OracleCheck(a) => oracle_check(a),
        Command::Fit(a) => fit(a).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
