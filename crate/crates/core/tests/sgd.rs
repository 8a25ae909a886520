mod common;

use common::{ols_toy, random_binary, random_matrix, random_params, random_regression};
use fastfm::diagnostics::fm_gradient_check;
use fastfm::rng::rng_from_seed;
use fastfm::sgd::{pairwise_accuracy, sample_step_gradient, LossInput};
use fastfm::synth::ranking_toy;
use fastfm::{bpr_fit, sgd_fit, LabeledData, RankingPairs, SolverConfig, SparseRowMatrix, Task};

fn task_config(task: Task, case: u64) -> SolverConfig {
    SolverConfig {
        rank: 3,
        task,
        l2_reg_w0: 0.01 * (case + 1) as f64,
        ..Default::default()
    }
    .with_l2_reg(0.05 * (case % 4) as f64)
}

#[test]
fn gradients_match_finite_differences() {
    for case in 0..50u64 {
        let mut rng = rng_from_seed(1000 + case);
        let params = random_params(&mut rng, 6, 3, 0.5);

        let reg = random_regression(case, 12, 6, 0.5);
        let r = fm_gradient_check(
            &params,
            LossInput::Labeled(&reg),
            &task_config(Task::Regression, case),
            1e-5,
        )
        .unwrap();
        assert!(
            r.max_relative_error < 1e-4,
            "square loss case {case}: {r:?}"
        );

        let cls = random_binary(case, 12, 6, 0.5);
        let r = fm_gradient_check(
            &params,
            LossInput::Labeled(&cls),
            &task_config(Task::Classification, case),
            1e-5,
        )
        .unwrap();
        assert!(r.max_relative_error < 1e-4, "sigmoid case {case}: {r:?}");

        let x = random_matrix(&mut rng, 8, 6, 0.5);
        let pairs = RankingPairs::new(vec![(0, 1), (2, 3), (4, 5), (6, 7), (1, 6)], 8).unwrap();
        let r = fm_gradient_check(
            &params,
            LossInput::Pairs(&x, &pairs),
            &task_config(Task::Ranking, case),
            1e-5,
        )
        .unwrap();
        assert!(r.max_relative_error < 1e-4, "bpr case {case}: {r:?}");
    }
}

#[test]
fn seeded_runs_are_identical() {
    let data = random_regression(4, 50, 10, 0.3);
    let cfg = SolverConfig {
        rank: 3,
        n_iter: 5,
        seed: 9,
        ..Default::default()
    };
    let a = sgd_fit(&data, &cfg, None).unwrap();
    let b = sgd_fit(&data, &cfg, None).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.report.objective_per_iter, b.report.objective_per_iter);

    let toy = ranking_toy(10, 2).unwrap();
    let cfg = SolverConfig {
        rank: 2,
        n_iter: 5,
        seed: 9,
        task: Task::Ranking,
        ..Default::default()
    };
    assert_eq!(
        bpr_fit(&toy.x, &toy.pairs, &cfg, None).unwrap().params,
        bpr_fit(&toy.x, &toy.pairs, &cfg, None).unwrap().params
    );
}

#[test]
fn tiny_steps_move_parameters_by_at_most_the_gradient_budget() {
    let data = random_regression(6, 40, 8, 0.4);
    let cfg = SolverConfig {
        rank: 2,
        n_iter: 1,
        step_size: 1e-7,
        seed: 2,
        ..Default::default()
    }
    .with_l2_reg(0.1);
    let warm = random_params(&mut rng_from_seed(3), 8, 2, 0.3);
    let fit = sgd_fit(&data, &cfg, Some(&warm)).unwrap();
    let moved: f64 = fit
        .params
        .to_flat()
        .iter()
        .zip(warm.to_flat())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let max_norm = (0..data.n_rows())
        .map(|r| {
            sample_step_gradient(&warm, &data, r, &cfg)
                .iter()
                .map(|g| g * g)
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max);
    let budget = cfg.step_size * max_norm * data.n_rows() as f64;
    assert!(moved > 0.0);
    // gradients drift by O(step) within the epoch
    assert!(
        moved <= budget * (1.0 + 1e-4),
        "moved {moved}, budget {budget}"
    );
}

#[test]
fn ols_slope_with_stable_step() {
    // step * (sum x^2 + lambda) = 0.1 * 5 < 2
    let cfg = SolverConfig {
        rank: 0,
        n_iter: 200,
        step_size: 0.1,
        fit_intercept: false,
        ..Default::default()
    };
    let fit = sgd_fit(&ols_toy(), &cfg, None).unwrap();
    assert!((fit.params.w[0] - 2.0).abs() < 1e-3);
}

#[test]
fn separated_data_lowers_log_loss_every_epoch() {
    let x = SparseRowMatrix::from_rows(
        1,
        (0..20).map(|r| {
            [(
                0,
                if r % 2 == 0 {
                    1.0 + r as f64 * 0.1
                } else {
                    -1.0 - r as f64 * 0.1
                },
            )]
        }),
    )
    .unwrap();
    let y = (0..20)
        .map(|r| if r % 2 == 0 { 1.0 } else { -1.0 })
        .collect();
    let data = LabeledData::new(x, y).unwrap();
    let cfg = SolverConfig {
        rank: 0,
        n_iter: 20,
        step_size: 0.05,
        task: Task::Classification,
        seed: 4,
        ..Default::default()
    };
    let losses = sgd_fit(&data, &cfg, None)
        .unwrap()
        .report
        .objective_per_iter;
    assert_eq!(losses.len(), 20);
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    // logistic regression on separable data has infimum zero loss
    assert!(losses[19] < 0.5 * losses[0]);
}

#[test]
fn bpr_orders_synthetic_items() {
    let toy = ranking_toy(20, 11).unwrap();
    let cfg = SolverConfig {
        rank: 4,
        n_iter: 100,
        step_size: 0.05,
        task: Task::Ranking,
        seed: 3,
        ..Default::default()
    };
    let fit = bpr_fit(&toy.x, &toy.pairs, &cfg, None).unwrap();
    let acc = pairwise_accuracy(&fit.params, &toy.x, &toy.pairs).unwrap();
    assert!(acc >= 0.95, "accuracy {acc}");
    assert_eq!(fit.report.objective_per_iter.len(), 100);
}

#[test]
fn wrong_task_is_rejected() {
    let data = ols_toy();
    let ranking = SolverConfig {
        task: Task::Ranking,
        ..Default::default()
    };
    assert!(sgd_fit(&data, &ranking, None).is_err());
    let pairs = RankingPairs::new(vec![(0, 1)], 2).unwrap();
    assert!(bpr_fit(&data.x, &pairs, &SolverConfig::default(), None).is_err());
}
