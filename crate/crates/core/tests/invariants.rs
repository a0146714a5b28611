// Copyright 2026 Pentabat Contributors
// SPDX-License-Identifier: Apache-2.0

mod common;

use common::*;
use pentabat::cumulant::{self, CumulantState, IntegratorConfig};
use pentabat::model::{validate, ModelParams};
use pentabat::observables::{extract_metrics, MetricsOptions};
use pentabat::sweep::{run_points, Grid, SweepSpec};
use proptest::prelude::*;

fn scaled(xi: f64, n_pen: f64, g_scale: f64, q: f64) -> ModelParams {
    let mut p = ModelParams::default();
    p.xi = xi;
    p.n_pen = n_pen;
    p.g_35 *= g_scale;
    p.set("q", q).unwrap();
    p
}

fn metrics_opts() -> MetricsOptions {
    MetricsOptions {
        require_minimum: false,
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, ..ProptestConfig::default() })]

    #[test]
    fn populations_conserved_and_positive(
        xi in 1e5f64..2e8,
        log_n in 13.0f64..18.0,
        g_scale in 0.1f64..3.0,
        log_q in 3.0f64..6.0,
        drive in prop_oneof![Just(0.0), 1e5f64..1e7],
    ) {
        let mut p = scaled(xi, 10f64.powf(log_n), g_scale, 10f64.powf(log_q));
        p.drive_35 = drive;
        let cfg = uniform(1e-6, 201);
        let tr = run(&p, &cfg);
        let bound = 10.0 * cfg.rel_tol;
        prop_assert!(tr.max_population_drift() < bound, "drift {:e}", tr.max_population_drift());
        prop_assert!(tr.min_population() > -bound, "min p {:e}", tr.min_population());
        prop_assert!(tr.photon_number().iter().all(|&n| n > -bound));
    }

    #[test]
    fn drive_free_collective_correlation_stays_real(
        xi in 1e6f64..2e8,
        log_n in 13.0f64..18.0,
    ) {
        let p = scaled(xi, 10f64.powf(log_n), 1.0, 2e4);
        let cfg = uniform(2e-6, 201);
        let tr = run(&p, &cfg);
        let worst = tr.states.iter().map(|s| s.s_coll.im.abs()).fold(0.0, f64::max);
        prop_assert!(worst < 10.0 * cfg.rel_tol, "Im s_coll {worst:e}");
    }

    #[test]
    fn cavity_relaxes_to_thermal_occupation(
        n_th in 0.0f64..5e3,
        start in 0.0f64..3.0,
        log_q in 3.0f64..5.0,
    ) {
        let mut p = ModelParams::zeroed();
        p.omega_35 = ModelParams::default().omega_35;
        p.omega_m = p.omega_35;
        p.omega_d = p.omega_35;
        p.n_th = n_th;
        p.set("q", 10f64.powf(log_q)).unwrap();
        let m = validate(&p).unwrap();
        let initial = CumulantState { n_ph: start * n_th, ..CumulantState::ground(n_th) };
        let t_end = 20.0 / p.kappa;
        let tr = cumulant::integrate(&initial, &m, &uniform(t_end, 11)).unwrap();
        let last = tr.states.last().unwrap().n_ph;
        prop_assert!((last - n_th).abs() <= 1e-3 * n_th.max(1e-3), "{last} vs {n_th}");
    }

    #[test]
    fn efficiency_is_work_over_peak(xi in 2e7f64..2e8, log_n in 15.0f64..17.0) {
        let p = scaled(xi, 10f64.powf(log_n), 1.0, 2e4);
        let tr = run(&p, &uniform(3e-6, 1501));
        let m = extract_metrics(&tr, &p, &metrics_opts()).unwrap();
        if let (Some(w), Some(eta)) = (m.work_w, m.eta) {
            prop_assert_eq!(eta, w / m.e_max);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 6, ..ProptestConfig::default() })]

    #[test]
    fn halving_tolerances_keeps_peak_energy(xi in 3e7f64..2e8, log_n in 15.5f64..17.0) {
        let p = scaled(xi, 10f64.powf(log_n), 1.0, 2e4);
        let cfg = uniform(3e-6, 3001);
        let fine = IntegratorConfig { rel_tol: cfg.rel_tol / 2.0, abs_tol: cfg.abs_tol / 2.0, ..cfg.clone() };
        let a = extract_metrics(&run(&p, &cfg), &p, &metrics_opts()).unwrap();
        let b = extract_metrics(&run(&p, &fine), &p, &metrics_opts()).unwrap();
        prop_assert!((a.e_max / b.e_max - 1.0).abs() < 1e-3);
    }

    #[test]
    fn metrics_stable_under_grid_refinement(xi in 3e7f64..2e8, log_n in 15.5f64..17.0) {
        let p = scaled(xi, 10f64.powf(log_n), 1.0, 2e4);
        let coarse = extract_metrics(&run(&p, &uniform(3e-6, 3001)), &p, &metrics_opts()).unwrap();
        let fine = extract_metrics(&run(&p, &uniform(3e-6, 6001)), &p, &metrics_opts()).unwrap();
        let close = |a: f64, b: f64| (a / b - 1.0).abs() < 5e-3;
        prop_assert!(close(coarse.e_max, fine.e_max));
        prop_assert!(close(coarse.t_max, fine.t_max));
        prop_assert!(close(coarse.p_max, fine.p_max));
        prop_assert!(close(coarse.tau_max, fine.tau_max));
        for (a, b) in [
            (coarse.e_min, fine.e_min),
            (coarse.t_min, fine.t_min),
            (coarse.work_w, fine.work_w),
            (coarse.p_w, fine.p_w),
            (coarse.eta, fine.eta),
            (coarse.n_ph_peak, fine.n_ph_peak),
            (coarse.latency, fine.latency),
        ] {
            prop_assert_eq!(a.is_some(), b.is_some());
            if let (Some(a), Some(b)) = (a, b) {
                prop_assert!(close(a, b), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn sweep_output_follows_input_order(seed in any::<u64>(), threads in 1usize..5) {
        let values = [1e7, 2e7, 4e7, 6.2e7, 1e8, 2e8];
        let mut perm: Vec<usize> = (0..values.len()).collect();
        // Fisher-Yates driven by a small LCG.
        let mut s = seed;
        for i in (1..perm.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let shuffled: Vec<f64> = perm.iter().map(|&i| values[i]).collect();
        let mut spec = SweepSpec::new("xi", Grid { from: 1e7, to: 2e8, points: 2, log: true }, ModelParams::default(), uniform(1e-6, 201));
        spec.threads = Some(1);
        let reference = run_points(&spec, &values).unwrap();
        spec.threads = Some(threads);
        let permuted = run_points(&spec, &shuffled).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            prop_assert_eq!(permuted[k].value, reference[i].value);
            prop_assert_eq!(&permuted[k].metrics, &reference[i].metrics);
            prop_assert_eq!(permuted[k].measured_n, reference[i].measured_n);
            prop_assert_eq!(&permuted[k].error, &reference[i].error);
        }
    }
}

/// Strong drive at large N with a lossy cavity: the coherent field dominates
/// the photon number and raw moments cancel to many digits.
#[test]
fn coherent_field_dominated_run_stays_positive() {
    let mut p = scaled(5.4476e7, 10f64.powf(17.1923), 0.1, 10f64.powf(3.1448));
    p.drive_35 = 4.451e6;
    let cfg = uniform(1e-6, 201);
    let tr = run(&p, &cfg);
    let n = tr.photon_number();
    assert!(n.iter().fold(0.0f64, |a, &b| a.max(b)) > 1e16);
    assert!(
        n.iter().all(|&v| v >= 0.999 * p.n_th),
        "min {:e}",
        n.iter().fold(f64::INFINITY, |a, &b| a.min(b))
    );
}
