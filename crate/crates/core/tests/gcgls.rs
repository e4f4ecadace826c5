mod common;

use cg_invert_core::gcgls::{
    diagnostics, initial_scale, solve, solve_with_interrupt, Block, SolveReport, SolverConfig, TikhonovMode,
};
use cg_invert_core::regularizer::{cost, ScaleRegularizer};
use cg_invert_core::scale_step::ZStepMethod;
use cg_invert_core::sensing::SensingModel;
use cg_invert_core::tikhonov::{CovarianceKind, CovarianceParam, NagdConfig};
use common::*;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn problem(seed: u64) -> (SensingModel, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = dense_model(12, 16, &mut rng);
    let c = normal_vec(16, &mut rng);
    let y = model.apply(&c).unwrap() + normal_vec(12, &mut rng) * 0.01;
    (model, y)
}

fn assert_monotone(report: &SolveReport) {
    for w in report.state.trace.windows(2) {
        assert!(w[1].cost <= w[0].cost + 1e-14 * w[0].cost.abs(), "{} -> {}", w[0].cost, w[1].cost);
    }
}

#[test]
fn zero_measurement_reconstructs_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = dense_model(6, 9, &mut rng);
    let cov = CovarianceParam::scaled_identity(9, 1.0, 1e-4);
    let report = solve(&model, &DVector::zeros(6), &cov, &ScaleRegularizer::zero(), &SolverConfig::default()).unwrap();
    assert_eq!(report.c_star, DVector::zeros(9));
    assert_eq!(report.state.z, DVector::zeros(9));
}

#[test]
fn noiseless_measurements_of_a_prior_draw_are_recovered() {
    // The truth lies in the range of a rank-4 prior with unit scales, which a
    // strong log penalty pins down.
    let (n, rank) = (16, 4);
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = dense_model(12, n, &mut rng);
        let mut lower = Vec::new();
        let mut factor = DMatrix::zeros(n, rank);
        for i in 0..n {
            for j in 0..=i {
                let v = if j < rank { 10.0 * normal(&mut rng) } else { 0.0 };
                if j < rank {
                    factor[(i, j)] = v;
                }
                lower.push(v);
            }
        }
        let cov = CovarianceParam::full(n, lower, 1e-6).unwrap();
        let c = &factor * normal_vec(rank, &mut rng);
        let y = model.apply(&c).unwrap();
        let cfg = SolverConfig {
            outer_iters: 50,
            ..Default::default()
        };
        let report = solve(&model, &y, &cov, &ScaleRegularizer::log_squared(100.0), &cfg).unwrap();
        let err = rel_err(&report.c_star, &c);
        assert!(err < 0.05, "seed {seed}: relative error {err}");
    }
}

#[test]
fn long_runs_settle_to_a_constant_cost() {
    for seed in 0..4 {
        let (model, y) = problem(seed);
        let cov = CovarianceParam::scaled_identity(16, 1.0, 1e-4);
        let cfg = SolverConfig {
            outer_iters: 200,
            ..Default::default()
        };
        let report = solve(&model, &y, &cov, &ScaleRegularizer::log_squared(0.5), &cfg).unwrap();
        assert_monotone(&report);
        let tail: Vec<f64> = report.state.trace.iter().rev().take(10).map(|r| r.cost).collect();
        let spread = tail.iter().cloned().fold(f64::MIN, f64::max) - tail.iter().cloned().fold(f64::MAX, f64::min);
        let f = report.final_cost();
        assert!(spread < 1e-8 * f.abs(), "seed {seed}: spread {spread}");
    }
}

#[test]
fn tight_runs_reach_stationarity() {
    let (model, y) = problem(7);
    let cov = CovarianceParam::scaled_identity(16, 1.0, 1e-4);
    let cfg = SolverConfig {
        outer_iters: 3000,
        stop_tol: 1e-10,
        ..Default::default()
    };
    let report = solve(&model, &y, &cov, &ScaleRegularizer::log_squared(0.5), &cfg).unwrap();
    let d = diagnostics(&report);
    let f = report.final_cost();
    assert!(report.converged);
    assert!(d.u_grad_norm < 1e-6 * (1.0 + f.abs()));
    assert!(d.z_residual < 1e-6);
}

#[test]
fn descent_audit_holds_for_both_block_shapes_and_methods() {
    for (k, j) in [(3, 4), (4, 3)] {
        for method in [ZStepMethod::Pgd, ZStepMethod::Ista] {
            for seed in 0..3 {
                let (model, y) = problem(100 + seed);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let cov = random_cov(CovarianceKind::Tridiagonal, 16, &mut rng);
                // Projected steps from floor-lifted entries shrink far below the default budget.
                let mut cfg = SolverConfig {
                    outer_iters: k,
                    inner_iters: j,
                    method,
                    ..Default::default()
                };
                cfg.linesearch.max_halvings = 200;
                let report = solve(&model, &y, &cov, &ScaleRegularizer::log_squared(0.3), &cfg).unwrap();
                assert_monotone(&report);
                let d = diagnostics(&report);
                assert_eq!(d.z_step_count, k * j);
                assert!(d.min_margin >= -1e-10 * report.state.trace[0].cost.abs().max(1.0));
                assert!(d.telescoping_holds);
                assert!(d.telescoping_lhs <= d.telescoping_rhs + 1e-10 * report.state.trace[0].cost.abs());
            }
        }
    }
}

#[test]
fn trace_layout_follows_the_block_schedule() {
    let (model, y) = problem(3);
    let cov = CovarianceParam::scaled_identity(16, 1.0, 1e-4);
    let cfg = SolverConfig {
        outer_iters: 5,
        inner_iters: 3,
        ..Default::default()
    };
    let report = solve(&model, &y, &cov, &ScaleRegularizer::log_squared(0.5), &cfg).unwrap();
    let trace = &report.state.trace;
    assert_eq!(trace.len(), 1 + 5 * 4);
    assert_eq!(trace[0].block, Block::Init);
    for k in 0..5 {
        for j in 0..3 {
            let r = &trace[1 + 4 * k + j];
            assert_eq!((r.block, r.iter, r.inner), (Block::Scale, k + 1, j + 1));
            assert!(r.eta > 0.0 && r.eta <= 1.0);
        }
        assert_eq!(trace[4 + 4 * k].block, Block::Gaussian);
    }
    assert_eq!(report.outer_iterations, 5);
    assert!(!report.converged && !report.interrupted);
}

#[test]
fn single_outer_iteration_records_j_scale_steps() {
    let (model, y) = problem(4);
    let cov = CovarianceParam::scaled_identity(16, 1.0, 1e-4);
    for j in 1..=5 {
        let cfg = SolverConfig {
            outer_iters: 1,
            inner_iters: j,
            ..Default::default()
        };
        let report = solve(&model, &y, &cov, &ScaleRegularizer::log_squared(0.5), &cfg).unwrap();
        assert_eq!(diagnostics(&report).z_step_count, j);
    }
}

#[test]
fn report_is_consistent_with_its_state() {
    let (model, y) = problem(5);
    let p = CovarianceParam::scaled_identity(16, 1.0, 1e-4);
    let reg = ScaleRegularizer::log_squared(0.5);
    let report = solve(&model, &y, &p, &reg, &SolverConfig::default()).unwrap();
    assert_eq!(report.c_star, report.state.z.component_mul(&report.state.u));
    assert!(report.state.z.iter().all(|&v| v >= reg.domain_floor));
    let f = cost(&report.state.u, &report.state.z, &model, &y, &p.materialize().unwrap(), &reg).unwrap();
    assert_eq!(f, report.final_cost());
    let zero = solve(&model, &y, &p, &ScaleRegularizer::zero(), &SolverConfig::default()).unwrap();
    assert!(zero.state.z.iter().all(|&v| v >= 0.0));
}

#[test]
fn reruns_are_bit_identical() {
    let (model, y) = problem(6);
    let cov = CovarianceParam::scaled_identity(16, 1.0, 1e-4);
    let reg = ScaleRegularizer::log_squared(0.5);
    let a = solve(&model, &y, &cov, &reg, &SolverConfig::default()).unwrap();
    let b = solve(&model, &y, &cov, &reg, &SolverConfig::default()).unwrap();
    // NaN placeholders in the trace rule out `==`.
    assert_eq!(format!("{a:?}"), format!("{b:?}"));
}

#[test]
fn accelerated_gaussian_block_keeps_descent() {
    let (model, y) = problem(8);
    let cov = CovarianceParam::initial(CovarianceKind::Full, 16, 0.1, 1e-4).unwrap();
    let cfg = SolverConfig {
        outer_iters: 20,
        tikhonov: TikhonovMode::Nagd(NagdConfig::default()),
        ..Default::default()
    };
    let report = solve(&model, &y, &cov, &ScaleRegularizer::log_squared(0.5), &cfg).unwrap();
    assert_monotone(&report);
    assert!(report.state.trace.iter().filter(|r| r.block == Block::Gaussian).all(|r| r.eta > 0.0));
}

#[test]
fn stop_tolerance_and_interrupt_end_the_run_early() {
    let (model, y) = problem(9);
    let cov = CovarianceParam::scaled_identity(16, 1.0, 1e-4);
    let reg = ScaleRegularizer::log_squared(0.5);
    let loose = SolverConfig {
        outer_iters: 500,
        stop_tol: 1e-3,
        ..Default::default()
    };
    let report = solve(&model, &y, &cov, &reg, &loose).unwrap();
    assert!(report.converged && report.outer_iterations < 500);
    let mut calls = Vec::new();
    let report = solve_with_interrupt(&model, &y, &cov, &reg, &SolverConfig::default(), &mut |k| {
        calls.push(k);
        k == 2
    })
    .unwrap();
    assert!(report.interrupted);
    assert_eq!(report.outer_iterations, 2);
    assert_eq!(calls, vec![1, 2]);
    assert_eq!(report.state.trace.len(), 1 + 2 * 5);
}

#[test]
fn initial_scale_is_clamped_normalised_backprojection() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let model = dense_model(12, 16, &mut rng);
    let a = model.a_dense().into_owned();
    let y = normal_vec(12, &mut rng) * 5.0;
    let bound = 0.8;
    let z0 = initial_scale(&model, &y, bound).unwrap();
    let back = a.transpose() * &y / a.singular_values().max();
    for i in 0..16 {
        let want = back[i].clamp(0.0, bound);
        assert!((z0[i] - want).abs() < 1e-6, "{i}: {} vs {want}", z0[i]);
    }
    let negatives = back.iter().filter(|&&v| v <= 0.0).count();
    assert!(negatives > 0);
    let cov = CovarianceParam::scaled_identity(16, 1.0, 1e-4);
    let cfg = SolverConfig {
        outer_iters: 1,
        init_bound: bound,
        ..Default::default()
    };
    let report = solve(&model, &y, &cov, &ScaleRegularizer::log_squared(0.5), &cfg).unwrap();
    assert_eq!(report.lifted_zeros, negatives);
    let report = solve(&model, &y, &cov, &ScaleRegularizer::zero(), &cfg).unwrap();
    assert_eq!(report.lifted_zeros, 0);
}

#[test]
fn invalid_inputs_are_rejected() {
    let (model, y) = problem(11);
    let cov = CovarianceParam::scaled_identity(16, 1.0, 1e-4);
    let reg = ScaleRegularizer::log_squared(0.5);
    for cfg in [
        SolverConfig { outer_iters: 0, ..Default::default() },
        SolverConfig { inner_iters: 0, ..Default::default() },
        SolverConfig { init_bound: 0.0, ..Default::default() },
        SolverConfig { stop_tol: -1.0, ..Default::default() },
    ] {
        assert!(solve(&model, &y, &cov, &reg, &cfg).is_err());
    }
    assert!(solve(&model, &DVector::zeros(5), &cov, &reg, &SolverConfig::default()).is_err());
    let small = CovarianceParam::scaled_identity(4, 1.0, 1e-4);
    assert!(solve(&model, &y, &small, &reg, &SolverConfig::default()).is_err());
}
