mod common;

use common::{random_binary, random_matrix, random_regression};
use fastfm::mcmc::{mcmc_fit_predict_with, GibbsHooks, GroupKind};
use fastfm::rng::rng_from_seed;
use fastfm::{
    mcmc_fit_predict, mcmc_fit_predict_classification, FmError, LabeledData, SolverConfig,
    SparseRowMatrix, Task,
};
use rand::Rng;

fn config(rank: usize, n_iter: usize, seed: u64) -> SolverConfig {
    SolverConfig {
        rank,
        n_iter,
        seed,
        ..Default::default()
    }
}

#[test]
fn zero_iterations_with_zero_init_predict_zero() {
    let data = random_regression(1, 20, 5, 0.5);
    let cfg = SolverConfig {
        init_std: 0.0,
        ..config(3, 0, 1)
    };
    let out = mcmc_fit_predict(&data, &data.x, &cfg, None).unwrap();
    assert!(out.y_pred.iter().all(|&y| y == 0.0));
    assert_eq!(out.state.iterations(), 0);
}

#[test]
fn one_call_per_iteration_matches_single_run() {
    let data = random_regression(2, 40, 8, 0.3);
    let x_test = random_matrix(&mut rng_from_seed(99), 15, 8, 0.3);
    let long = mcmc_fit_predict(&data, &x_test, &config(3, 50, 7), None).unwrap();

    let mut out = mcmc_fit_predict(&data, &x_test, &config(3, 0, 7), None).unwrap();
    for _ in 0..50 {
        out = mcmc_fit_predict(&data, &x_test, &config(3, 1, 7), Some(out.state)).unwrap();
    }
    for (a, b) in out.y_pred.iter().zip(&long.y_pred) {
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }
    assert_eq!(out.state.params(), long.state.params());
    assert_eq!(out.state.traces(), long.state.traces());
}

#[test]
fn classification_split_matches_single_run() {
    let data = random_binary(3, 40, 6, 0.4);
    let long = mcmc_fit_predict_classification(&data, &data.x, &config(2, 30, 5), None).unwrap();
    let mut out = mcmc_fit_predict_classification(&data, &data.x, &config(2, 10, 5), None).unwrap();
    out = mcmc_fit_predict_classification(&data, &data.x, &config(2, 20, 5), Some(out.state))
        .unwrap();
    for (a, b) in out.y_pred.iter().zip(&long.y_pred) {
        assert!((a - b).abs() <= 1e-12);
    }
    assert!(long.y_pred.iter().all(|&q| (0.0..=1.0).contains(&q)));
}

#[test]
fn conjugate_posterior_for_a_single_weight() {
    // y = w x + noise with alpha and lambda held fixed: w | y is Gaussian with
    // precision alpha * sum x^2 + lambda and mean alpha * sum x y / precision
    let x =
        SparseRowMatrix::from_rows(1, [[(0, 1.0)], [(0, 2.0)], [(0, -0.5)], [(0, 1.5)]]).unwrap();
    let y = vec![2.1, 3.7, -1.2, 3.3];
    let data = LabeledData::new(x, y.clone()).unwrap();
    let (alpha, lambda) = (2.0, 0.5);
    let sxx = 1.0 + 4.0 + 0.25 + 2.25;
    let sxy = 2.1 + 7.4 + 0.6 + 4.95;
    let precision = alpha * sxx + lambda;
    let (post_mean, post_var) = (alpha * sxy / precision, 1.0 / precision);

    let hooks = GibbsHooks {
        sample_noise: false,
        sample_hyper: false,
        variance_scale: 1.0,
    };
    let cfg = SolverConfig {
        fit_intercept: false,
        ..config(0, 0, 31)
    };
    let empty = SparseRowMatrix::empty(0, 1);
    let mut state = mcmc_fit_predict_with(&data, &empty, &cfg, None, &hooks)
        .unwrap()
        .state;
    state.set_alpha(alpha);
    for g in state.groups_mut() {
        g.lambda = lambda;
        g.mu = 0.0;
    }
    let one = SolverConfig { n_iter: 1, ..cfg };
    let n = 20_000;
    let mut draws = Vec::with_capacity(n);
    for _ in 0..n {
        state = mcmc_fit_predict_with(&data, &empty, &one, Some(state), &hooks)
            .unwrap()
            .state;
        draws.push(state.params().w[0]);
    }
    let mean = draws.iter().sum::<f64>() / n as f64;
    let var = draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1) as f64;
    let se = (post_var / n as f64).sqrt();
    assert!(
        (mean - post_mean).abs() < 2.0 * se,
        "mean {mean} vs {post_mean} (se {se})"
    );
    // the sample variance of n Gaussian draws has relative sd sqrt(2 / n) ~ 1%
    assert!(
        (var / post_var - 1.0).abs() < 0.04,
        "var {var} vs {post_var}"
    );
}

#[test]
fn all_positive_labels_push_probability_up() {
    let x = SparseRowMatrix::from_rows(0, (0..30).map(|_| Vec::<(usize, f64)>::new())).unwrap();
    let data = LabeledData::new(x, vec![1.0; 30]).unwrap();
    let x_test = SparseRowMatrix::empty(3, 0);
    let cfg = config(0, 50, 2);
    let warm = mcmc_fit_predict_classification(&data, &x_test, &cfg, None).unwrap();
    let mut state = warm.state;
    state.reset_accumulator();
    let out =
        mcmc_fit_predict_classification(&data, &x_test, &config(0, 200, 2), Some(state)).unwrap();
    assert!(out.y_pred.iter().all(|&q| q > 0.5), "{:?}", out.y_pred);
}

fn assert_mirrored(data: &LabeledData, rank: usize) {
    let mut flipped = data.clone();
    flipped.y.iter_mut().for_each(|y| *y = -*y);
    let cfg = config(rank, 5000, 13);
    let a = mcmc_fit_predict_classification(data, &data.x, &cfg, None).unwrap();
    let b = mcmc_fit_predict_classification(&flipped, &data.x, &cfg, None).unwrap();
    for (p, q) in a.y_pred.iter().zip(&b.y_pred) {
        assert!((p - (1.0 - q)).abs() < 0.02, "rank {rank}: {p} vs 1 - {q}");
    }
}

// The probit link gives q -> 1 - q only when the prior on y_hat is symmetric.
// That holds for the linear part but not for <v_i, v_j>, whose prior mean is
// sum_f mu_f^2, so the pairwise term is kept out of play.
#[test]
fn flipping_labels_mirrors_probabilities() {
    assert_mirrored(&random_binary(8, 80, 5, 0.5), 0);

    let mut rng = rng_from_seed(8);
    let rows: Vec<[(usize, f64); 1]> = (0..80)
        .map(|r| [(r % 5, 0.5 + rng.random::<f64>())])
        .collect();
    let x = SparseRowMatrix::from_rows(5, rows).unwrap();
    let y = (0..80)
        .map(|r| if (r * 7) % 3 == 0 { 1.0 } else { -1.0 })
        .collect();
    assert_mirrored(&LabeledData::new(x, y).unwrap(), 2);
}

#[test]
fn permuting_rows_leaves_a_linear_chain_unchanged() {
    // with k = 0 and p = 1 the sampler only sees sums over rows, so a row
    // permutation changes nothing beyond summation order
    let mut rng = rng_from_seed(5);
    let x = random_matrix(&mut rng, 30, 1, 0.8);
    let y: Vec<f64> = (0..30).map(|r| (r as f64 * 0.3).sin()).collect();
    let data = LabeledData::new(x, y).unwrap();
    let order: Vec<usize> = (0..30).rev().collect();
    let permuted = data.select_rows(&order);
    let x_test = SparseRowMatrix::from_rows(1, [[(0, 1.0)], [(0, -2.0)]]).unwrap();
    let cfg = config(0, 100, 3);
    let a = mcmc_fit_predict(&data, &x_test, &cfg, None).unwrap();
    let b = mcmc_fit_predict(&permuted, &x_test, &cfg, None).unwrap();
    for (p, q) in a.y_pred.iter().zip(&b.y_pred) {
        assert!((p - q).abs() < 1e-12 * q.abs().max(1.0), "{p} vs {q}");
    }
}

#[test]
fn long_chain_stays_finite() {
    let data = random_regression(21, 60, 10, 0.3);
    let out = mcmc_fit_predict(&data, &data.x, &config(4, 1000, 21), None).unwrap();
    let traces = out.state.traces();
    assert_eq!(traces.len(), 1000);
    assert!(traces.alpha.iter().all(|a| a.is_finite() && *a > 0.0));
    for g in 0..out.state.groups().len() {
        assert!(traces.lambda[g].iter().all(|l| l.is_finite() && *l > 0.0));
        assert!(traces.mu[g].iter().all(|m| m.is_finite()));
    }
    assert!(out.y_pred.iter().all(|y| y.is_finite()));
}

#[test]
fn traces_and_hyper_layout() {
    let data = random_regression(4, 25, 6, 0.4);
    let out = mcmc_fit_predict(&data, &data.x, &config(3, 10, 4), None).unwrap();
    let state = &out.state;
    let traces = state.traces();
    assert_eq!(traces.len(), 10);
    assert_eq!(traces.iteration, (1..=10).collect::<Vec<_>>());
    for (s, l) in traces.sigma_w().iter().zip(traces.lambda_w()) {
        assert_eq!(*s, l.powf(-0.5));
    }

    let hyper = state.hyper_params();
    assert_eq!(hyper.len(), 3 + 2 * 3);
    assert_eq!(hyper[0], state.alpha());
    let linear = state
        .groups()
        .iter()
        .find(|g| g.kind == GroupKind::Linear)
        .unwrap();
    assert_eq!((hyper[1], hyper[2]), (linear.lambda, linear.mu));
    for f in 0..3 {
        let g = state
            .groups()
            .iter()
            .find(|g| g.kind == GroupKind::Latent(f))
            .unwrap();
        assert_eq!((hyper[3 + f], hyper[6 + f]), (g.lambda, g.mu));
    }

    let csv = traces.to_csv();
    let mut lines = csv.lines();
    assert!(lines
        .next()
        .unwrap()
        .starts_with("iter,alpha,lambda_w,mu_w,lambda_v_0"));
    assert_eq!(lines.count(), 10);
}

#[test]
fn changed_inputs_are_rejected() {
    let data = random_regression(6, 20, 4, 0.5);
    let out = mcmc_fit_predict(&data, &data.x, &config(2, 3, 6), None).unwrap();
    let other_test = random_matrix(&mut rng_from_seed(1), 20, 4, 0.5);
    let err = mcmc_fit_predict(
        &data,
        &other_test,
        &config(2, 1, 6),
        Some(out.state.clone()),
    )
    .unwrap_err();
    assert!(matches!(err, FmError::Contract(_)));
    let mut moved = data.clone();
    moved.y[0] += 1.0;
    assert!(mcmc_fit_predict(&moved, &data.x, &config(2, 1, 6), Some(out.state)).is_err());
}

#[test]
fn ranking_is_not_supported() {
    let data = random_regression(6, 20, 4, 0.5);
    let cfg = SolverConfig {
        task: Task::Ranking,
        ..config(2, 3, 6)
    };
    assert!(mcmc_fit_predict_with(&data, &data.x, &cfg, None, &GibbsHooks::default()).is_err());
}
