mod common;

use cg_invert_core::sensing::SensingModel;
use cg_invert_core::tikhonov::{
    momentum, r_u_step, solve_routed, tikhonov_exact, tikhonov_nagd, tikhonov_nagd_trace, tikhonov_solve,
    tikhonov_woodbury, CovarianceKind, CovarianceParam, NagdConfig, Route, StepRule,
};
use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `(A_zᵀA_z + P⁻¹)⁻¹ A_zᵀy` through LU and an explicit inverse of `P`.
fn normal_equation_oracle(a: &DMatrix<f64>, z: &DVector<f64>, y: &DVector<f64>, p: &DMatrix<f64>) -> DVector<f64> {
    let mut az = a.clone();
    for (j, mut col) in az.column_iter_mut().enumerate() {
        col *= z[j];
    }
    let h = az.transpose() * &az + p.clone().try_inverse().unwrap();
    h.lu().solve(&(az.transpose() * y)).unwrap()
}

/// `½‖y − A_z u‖² + ½uᵀP⁻¹u` from the oracles.
fn cost_u(a: &DMatrix<f64>, y: &DVector<f64>, u: &DVector<f64>, z: &DVector<f64>, p: &DMatrix<f64>) -> f64 {
    data_fit(a, y, u, z) + prior_term(p, u)
}

#[test]
fn zero_scale_gives_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = dense_model(6, 9, &mut rng);
    let y = normal_vec(6, &mut rng);
    let cov = random_cov(CovarianceKind::Full, 9, &mut rng).materialize().unwrap();
    let z = DVector::zeros(9);
    assert!(tikhonov_exact(&z, &model, &y, &cov).unwrap().amax() == 0.0);
    assert!(tikhonov_woodbury(&z, &model, &y, &cov).unwrap().amax() == 0.0);
}

#[test]
fn identity_problem_halves_the_measurement() {
    let model = SensingModel::from_dense(DMatrix::identity(5, 5)).unwrap();
    let cov = CovarianceParam::scaled_identity(5, 1.0, 1e-4).materialize().unwrap();
    let y = DVector::from_vec(vec![2.0, -1.0, 0.5, 3.0, 0.0]);
    let z = DVector::from_element(5, 1.0);
    for u in [
        tikhonov_exact(&z, &model, &y, &cov).unwrap(),
        tikhonov_woodbury(&z, &model, &y, &cov).unwrap(),
    ] {
        assert!((u - &y / 2.0).amax() < 1e-14);
    }
}

#[test]
fn exact_form_matches_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for kind in KINDS {
        for _ in 0..10 {
            let model = dense_model(8, 12, &mut rng);
            let a = model.a_dense().into_owned();
            let y = normal_vec(8, &mut rng);
            let z = uniform_vec(12, 0.1, 3.0, &mut rng);
            let p = random_cov(kind, 12, &mut rng);
            let u = tikhonov_exact(&z, &model, &y, &p.materialize().unwrap()).unwrap();
            let want = normal_equation_oracle(&a, &z, &y, &cov_dense(&p));
            assert!(rel_err(&u, &want) < 1e-9, "{kind:?}: {}", rel_err(&u, &want));
        }
    }
}

#[test]
fn exact_form_residual_is_small() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = dense_model(10, 14, &mut rng);
    let a = model.a_dense().into_owned();
    let y = normal_vec(10, &mut rng);
    let z = uniform_vec(14, 0.1, 3.0, &mut rng);
    let p = random_cov(CovarianceKind::Tridiagonal, 14, &mut rng);
    let u = tikhonov_exact(&z, &model, &y, &p.materialize().unwrap()).unwrap();
    let mut az = a.clone();
    for (j, mut col) in az.column_iter_mut().enumerate() {
        col *= z[j];
    }
    let rhs = az.transpose() * &y;
    let resid = (az.transpose() * &az + cov_dense(&p).try_inverse().unwrap()) * &u - &rhs;
    assert!(resid.norm() < 1e-8 * rhs.norm());
}

#[test]
fn woodbury_form_matches_exact_on_wide_problems() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for kind in KINDS {
        for _ in 0..5 {
            let model = dense_model(8, 32, &mut rng);
            let y = normal_vec(8, &mut rng);
            let z = uniform_vec(32, 0.1, 3.0, &mut rng);
            let cov = random_cov(kind, 32, &mut rng).materialize().unwrap();
            let exact = tikhonov_exact(&z, &model, &y, &cov).unwrap();
            let wood = tikhonov_woodbury(&z, &model, &y, &cov).unwrap();
            assert!(rel_err(&wood, &exact) < 1e-8);
        }
    }
}

#[test]
fn single_measurement_has_scalar_solution() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = dense_model(1, 6, &mut rng);
    let a = model.a_dense().into_owned();
    let y = DVector::from_vec(vec![0.8]);
    let z = uniform_vec(6, 0.2, 2.0, &mut rng);
    let p = random_cov(CovarianceKind::Full, 6, &mut rng);
    let pd = cov_dense(&p);
    let az = DVector::from_fn(6, |j, _| a[(0, j)] * z[j]);
    let denom = 1.0 + (az.transpose() * &pd * &az)[(0, 0)];
    let want = &pd * &az * (y[0] / denom);
    let got = tikhonov_woodbury(&z, &model, &y, &p.materialize().unwrap()).unwrap();
    assert!(rel_err(&got, &want) < 1e-12);
}

#[test]
fn routing_picks_the_smaller_system() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cov = CovarianceParam::scaled_identity(10, 0.5, 1e-4).materialize().unwrap();
    let z = DVector::from_element(10, 1.0);
    let wide = dense_model(4, 10, &mut rng);
    let y4 = normal_vec(4, &mut rng);
    assert_eq!(solve_routed(&z, &wide.a_dense(), &y4, &cov).unwrap().route, Route::Woodbury);
    let tall = dense_model(12, 10, &mut rng);
    let y12 = normal_vec(12, &mut rng);
    assert_eq!(solve_routed(&z, &tall.a_dense(), &y12, &cov).unwrap().route, Route::Direct);
    let routed = tikhonov_solve(&z, &tall, &y12, &cov).unwrap();
    assert_eq!(routed, tikhonov_exact(&z, &tall, &y12, &cov).unwrap());
}

#[test]
fn hessian_solve_inverts_the_system() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (m, n) in [(5, 9), (9, 5)] {
        let model = dense_model(m, n, &mut rng);
        let a = model.a_dense().into_owned();
        let y = normal_vec(m, &mut rng);
        let z = uniform_vec(n, 0.2, 2.0, &mut rng);
        let p = random_cov(CovarianceKind::Diagonal, n, &mut rng);
        let sol = solve_routed(&z, &a, &y, &p.materialize().unwrap()).unwrap();
        let v = normal_vec(n, &mut rng);
        let mut az = a.clone();
        for (j, mut col) in az.column_iter_mut().enumerate() {
            col *= z[j];
        }
        let h = az.transpose() * &az + cov_dense(&p).try_inverse().unwrap();
        assert!((h * sol.solve_hessian(&v) - &v).amax() < 1e-10);
    }
}

#[test]
fn gradient_step_fixes_the_minimiser_and_zero_step_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let model = dense_model(6, 9, &mut rng);
    let y = normal_vec(6, &mut rng);
    let z = uniform_vec(9, 0.2, 2.0, &mut rng);
    let cov = random_cov(CovarianceKind::Tridiagonal, 9, &mut rng).materialize().unwrap();
    let u = tikhonov_exact(&z, &model, &y, &cov).unwrap();
    let next = r_u_step(&u, &z, &model, &y, &cov, 0.1).unwrap();
    assert!((&next - &u).amax() < 1e-8);
    let w = normal_vec(9, &mut rng);
    assert_eq!(r_u_step(&w, &z, &model, &y, &cov, 0.0).unwrap(), w);
}

#[test]
fn gradient_step_prior_part_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for kind in KINDS {
        let model = dense_model(3, 5, &mut rng);
        let y = normal_vec(3, &mut rng);
        let p = random_cov(kind, 5, &mut rng);
        let pd = cov_dense(&p);
        let u = normal_vec(5, &mut rng);
        let z = DVector::zeros(5);
        let eta = 0.25;
        let step = r_u_step(&u, &z, &model, &y, &p.materialize().unwrap(), eta).unwrap();
        let grad = (&u - step) / eta;
        let h = 1e-6;
        let fd = DVector::from_fn(5, |i, _| {
            let mut up = u.clone();
            let mut um = u.clone();
            up[i] += h;
            um[i] -= h;
            (prior_term(&pd, &up) - prior_term(&pd, &um)) / (2.0 * h)
        });
        assert!(rel_err(&grad, &fd) < 1e-6, "{kind:?}");
    }
}

#[test]
fn exact_solution_is_the_unique_minimiser() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for kind in KINDS {
        let model = dense_model(6, 10, &mut rng);
        let a = model.a_dense().into_owned();
        let y = normal_vec(6, &mut rng);
        let z = uniform_vec(10, 0.2, 2.0, &mut rng);
        let p = random_cov(kind, 10, &mut rng);
        let pd = cov_dense(&p);
        let u = tikhonov_exact(&z, &model, &y, &p.materialize().unwrap()).unwrap();
        let best = cost_u(&a, &y, &u, &z, &pd);
        for _ in 0..25 {
            let scale = 10f64.powf(rng.random_range(-4.0..1.0));
            let d = normal_vec(10, &mut rng) * scale;
            assert!(best <= cost_u(&a, &y, &(&u + d), &z, &pd) + 1e-12 * best.abs());
        }
    }
}

#[test]
fn momentum_schedule_starts_at_four_sevenths() {
    assert!((momentum(1) - 4.0 / 7.0).abs() < 1e-15);
    assert!((momentum(4) - 0.7).abs() < 1e-15);
    for j in 1..200 {
        assert!(momentum(j) < momentum(j + 1) && momentum(j) < 1.0);
    }
}

#[test]
fn nagd_from_the_minimiser_stays_put() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for kind in KINDS {
        let model = dense_model(8, 16, &mut rng);
        let y = normal_vec(8, &mut rng);
        let z = uniform_vec(16, 0.2, 2.0, &mut rng);
        let cov = CovarianceParam::initial(kind, 16, 0.1, 1e-4).unwrap().materialize().unwrap();
        let u = tikhonov_exact(&z, &model, &y, &cov).unwrap();
        let out = tikhonov_nagd(&u, &z, &model, &y, &cov, &NagdConfig::default()).unwrap();
        assert!((out - &u).amax() < 1e-8);
    }
}

#[test]
fn nagd_error_shrinks_with_more_steps() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for kind in KINDS {
        for _ in 0..10 {
            let model = dense_model(8, 16, &mut rng);
            let y = normal_vec(8, &mut rng);
            let z = uniform_vec(16, 0.2, 2.0, &mut rng);
            let cov = random_cov(kind, 16, &mut rng).materialize().unwrap();
            let exact = tikhonov_exact(&z, &model, &y, &cov).unwrap();
            let u0 = DVector::zeros(16);
            let run = |steps| {
                let cfg = NagdConfig { steps, ..Default::default() };
                rel_err(&tikhonov_nagd(&u0, &z, &model, &y, &cov, &cfg).unwrap(), &exact)
            };
            assert!(run(100) < run(10), "{kind:?}");
        }
    }
}

#[test]
fn nagd_cost_ends_below_its_start() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let model = dense_model(8, 16, &mut rng);
    let a = model.a_dense().into_owned();
    let y = normal_vec(8, &mut rng);
    let z = uniform_vec(16, 0.2, 2.0, &mut rng);
    let p = CovarianceParam::initial(CovarianceKind::Full, 16, 0.1, 1e-4).unwrap();
    let cov = p.materialize().unwrap();
    let u0 = DVector::zeros(16);
    let (u, costs, eta) = tikhonov_nagd_trace(&u0, &z, &model, &y, &cov, &NagdConfig::default()).unwrap();
    assert_eq!(costs.len(), 100);
    assert!(eta > 0.0);
    let start = cost_u(&a, &y, &u0, &z, &cov_dense(&p));
    assert!(costs.iter().all(|&c| c <= start));
    assert!((costs[99] - cost_u(&a, &y, &u, &z, &cov_dense(&p))).abs() < 1e-12 * start);
}

#[test]
fn nagd_reports_divergence_for_oversized_steps() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let model = dense_model(8, 16, &mut rng);
    let y = normal_vec(8, &mut rng);
    let z = uniform_vec(16, 0.2, 2.0, &mut rng);
    let cov = CovarianceParam::scaled_identity(16, 0.1, 1e-4).materialize().unwrap();
    let cfg = NagdConfig {
        eta: StepRule::Fixed(10.0),
        ..Default::default()
    };
    assert!(tikhonov_nagd(&DVector::zeros(16), &z, &model, &y, &cov, &cfg).is_err());
    let bad = NagdConfig { steps: 0, ..Default::default() };
    assert!(tikhonov_nagd(&DVector::zeros(16), &z, &model, &y, &cov, &bad).is_err());
}

#[test]
fn materialised_covariance_matches_its_layout() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for kind in KINDS {
        for n in [1, 2, 7] {
            let p = random_cov(kind, n, &mut rng);
            assert_eq!(p.dim(), kind.dim(n));
            let got = p.materialize().unwrap().to_dense();
            assert!((got - cov_dense(&p)).amax() < 1e-14);
        }
    }
}

#[test]
fn flat_parameters_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for kind in KINDS {
        let mut p = random_cov(kind, 6, &mut rng);
        let flat = p.to_flat();
        p.set_flat(&flat).unwrap();
        assert_eq!(p.to_flat(), flat);
        assert!(p.set_flat(&flat[1..]).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn materialised_covariance_is_bounded_below_by_eps(
        kind in 0usize..4,
        n in 1usize..=64,
        eps in 1e-6f64..1e-2,
        seed in 0u64..10_000,
    ) {
        let kind = KINDS[kind];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = CovarianceParam::initial(kind, n, 1.0, eps).unwrap();
        let flat: Vec<f64> = (0..p.dim()).map(|_| normal(&mut rng)).collect();
        p.set_flat(&flat).unwrap();
        let dense = p.materialize().unwrap().to_dense();
        prop_assert!((&dense - dense.transpose()).amax() < 1e-12);
        let lo = dense.symmetric_eigenvalues().min();
        prop_assert!(lo >= eps * (1.0 - 1e-8) - 1e-12 * dense.amax(), "min eigenvalue {} eps {}", lo, eps);
    }

    #[test]
    fn woodbury_and_exact_agree(
        kind in 0usize..4,
        m in 1usize..=20,
        n in 2usize..=20,
        seed in 0u64..10_000,
    ) {
        let kind = KINDS[kind];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = dense_model(m, n, &mut rng);
        let y = normal_vec(m, &mut rng);
        let z = uniform_vec(n, 0.05, 3.0, &mut rng);
        let cov = random_cov(kind, n, &mut rng).materialize().unwrap();
        let exact = tikhonov_exact(&z, &model, &y, &cov).unwrap();
        let wood = tikhonov_woodbury(&z, &model, &y, &cov).unwrap();
        prop_assert!(rel_err(&wood, &exact) < 1e-8);
    }
}
