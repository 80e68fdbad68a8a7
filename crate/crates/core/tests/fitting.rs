mod common;

use common::{eckart_young, gaussian, graph, single};
use mmpca_core::objective::reconstruct;
use mmpca_core::selection::holdout_error;
use mmpca_core::{
    cross_validate, fit_model, impute, init_global, minimize, r2_matrix, reconstruction_loss, CvConfig, Dataset,
    FitConfig, FnProblem, LambdaGrid, MaskedMatrix, OptimizerConfig, Solution, Termination,
};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rank_one(seed: u64, r: usize, c: usize) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = gaussian(&mut rng, r, 1);
    let v = gaussian(&mut rng, c, 1);
    u * v.transpose()
}

#[test]
fn rosenbrock_from_standard_start() {
    let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
    let g = |x: &[f64]| {
        vec![
            -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]),
            200.0 * (x[1] - x[0] * x[0]),
        ]
    };
    let cfg = OptimizerConfig {
        gradient_tolerance: 1e-10,
        objective_tolerance: 0.0,
        ..Default::default()
    };
    let (x, rep) = minimize(&FnProblem::new(2, f, g), &[-1.2, 1.0], &cfg).unwrap();
    assert!((x[0] - 1.0).abs() < 1e-6 && (x[1] - 1.0).abs() < 1e-6, "{x:?} {rep:?}");
    for w in rep.objective_trace.windows(2) {
        assert!(w[1] <= w[0]);
    }
}

#[test]
fn deterministic_iterates() {
    let x = gaussian(&mut ChaCha8Rng::seed_from_u64(3), 8, 6);
    let ds = single(x);
    let a = fit_model(&ds, 2, [0.1, 0.0, 0.1, 0.0], &FitConfig::default()).unwrap();
    let b = fit_model(&ds, 2, [0.1, 0.0, 0.1, 0.0], &FitConfig::default()).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.report, b.report);
}

#[test]
fn noiseless_rank_one_is_fitted_exactly() {
    let ds = single(rank_one(1, 7, 5));
    let fit = fit_model(&ds, 1, [0.0; 4], &FitConfig::default()).unwrap();
    assert!(reconstruction_loss(&ds, &fit.params) <= 1e-8);
}

#[test]
fn unpenalized_fit_reaches_truncated_svd() {
    for seed in 0..5 {
        let x = gaussian(&mut ChaCha8Rng::seed_from_u64(100 + seed), 15, 10);
        let ds = single(x.clone());
        for k in [1, 3] {
            let fit = fit_model(&ds, k, [0.0; 4], &FitConfig::default()).unwrap();
            let loss = reconstruction_loss(&ds, &fit.params);
            let best = eckart_young(&x, k);
            assert!((loss - best) / best <= 1e-6, "seed {seed} k {k}: {loss} vs {best}");
        }
    }
}

#[test]
fn objective_never_increases_and_ends_below_start() {
    let x = gaussian(&mut ChaCha8Rng::seed_from_u64(8), 9, 7);
    let ds = single(x);
    let fit = fit_model(&ds, 2, [0.5, 0.5, 0.5, 0.5], &FitConfig::default()).unwrap();
    let t = &fit.report.objective_trace;
    assert!(t.windows(2).all(|w| w[1] <= w[0]));
    assert!(fit.report.final_objective <= fit.report.initial_objective);
    assert_ne!(fit.report.termination, Termination::LineSearchFailed);
}

#[test]
fn identical_matrices_share_initialization() {
    let x = rank_one(4, 5, 4) + gaussian(&mut ChaCha8Rng::seed_from_u64(9), 5, 4) * 0.01;
    let one = single(x.clone());
    let g = graph(&[5, 4, 4], vec![(0, 1), (0, 2)]);
    let two = Dataset::new(
        g,
        vec![
            MaskedMatrix::fully_observed(x.clone()).unwrap(),
            MaskedMatrix::fully_observed(x).unwrap(),
        ],
    )
    .unwrap();
    let a = init_global(&one, 1).unwrap();
    let b = init_global(&two, 1).unwrap();
    let va = a.frames()[0].matrix().clone();
    let vb = b.frames()[0].matrix().clone();
    assert!((va.column(0).dot(&vb.column(0)).abs() - 1.0).abs() < 1e-10);
}

#[test]
fn cv_with_single_zero_candidate_is_a_plain_fit() {
    let x = gaussian(&mut ChaCha8Rng::seed_from_u64(12), 8, 6);
    let ds = single(x);
    let grid = LambdaGrid::ray([true; 4], &[0.0]).unwrap();
    let cv = cross_validate(&ds, 2, &grid, &CvConfig::default()).unwrap();
    assert_eq!(cv.chosen_candidate().lambda, [0.0; 4]);
    let plain = fit_model(&ds, 2, [0.0; 4], &FitConfig::default()).unwrap();
    assert_eq!(cv.params, plain.params);
}

#[test]
fn cv_prefers_no_penalty_on_noiseless_rank_one() {
    let x = rank_one(2, 12, 10);
    let ds = single(x.clone());
    let grid = LambdaGrid::ray([true; 4], &[0.0, 1e3]).unwrap();
    let cfg = CvConfig {
        seed: 4,
        ..Default::default()
    };
    let cv = cross_validate(&ds, 1, &grid, &cfg).unwrap();
    assert_eq!(cv.chosen, 0);
    let zero_err = cv.candidates[0].test_error.unwrap();
    let huge_err = cv.candidates[1].test_error.unwrap();
    let held: f64 = cv.holdout.elements.iter().map(|&(_, r, c)| x[(r, c)] * x[(r, c)]).sum();
    assert!(zero_err <= 1e-6 * x.norm_squared());
    assert!(huge_err > 0.5 * held);
}

#[test]
fn cv_is_deterministic() {
    let ds = single(gaussian(&mut ChaCha8Rng::seed_from_u64(21), 7, 6));
    let grid = LambdaGrid::ray([true, false, true, false], &[0.01, 0.1]).unwrap();
    let a = cross_validate(&ds, 2, &grid, &CvConfig::default()).unwrap();
    let b = cross_validate(&ds, 2, &grid, &CvConfig::default()).unwrap();
    assert_eq!(a.candidates, b.candidates);
    assert_eq!(a.params, b.params);
}

#[test]
fn r2_formula_matches_dense_reconstruction() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let x = gaussian(&mut rng, 6, 5);
    let ds = single(x.clone());
    let fit = fit_model(&ds, 2, [0.0; 4], &FitConfig::default()).unwrap();
    let sol = Solution::new(&ds, fit.params.clone(), 0.0).unwrap();
    let xhat = impute(&sol, 0, 1).unwrap();
    let r2 = r2_matrix(&sol, 0).unwrap();
    assert!((r2.total - xhat.norm_squared() / x.norm_squared()).abs() < 1e-10);
    let sum: f64 = r2.per_component.iter().sum();
    assert_eq!(sum, r2.total);
}

#[test]
fn imputation_equals_loss_reconstruction() {
    let x = gaussian(&mut ChaCha8Rng::seed_from_u64(41), 6, 4);
    let ds = single(x);
    let fit = fit_model(&ds, 2, [0.1; 4], &FitConfig::default()).unwrap();
    let sol = Solution::new(&ds, fit.params, 1e-4).unwrap();
    let p = sol.params();
    let frames = p.frames();
    let direct = reconstruct(frames[0].matrix(), p.d(0), p.d(1), frames[1].matrix());
    assert_eq!(impute(&sol, 0, 1).unwrap(), direct);
}

#[test]
fn holdout_error_counts_only_held_elements() {
    let x = rank_one(6, 4, 4);
    let ds = single(x.clone());
    let zero = mmpca_core::ModelParams::zeros(&[4, 4], 1).unwrap();
    let h = mmpca_core::Holdout {
        elements: vec![(0, 1, 2), (0, 3, 0)],
    };
    let expect = x[(1, 2)].powi(2) + x[(3, 0)].powi(2);
    assert!((holdout_error(&ds, &zero, &h) - expect).abs() < 1e-14);
}
