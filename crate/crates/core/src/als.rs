//! Alternating least squares, implemented as exact coordinate descent.
//!
//! Each scalar parameter is replaced by the minimizer of the regularized
//! squared loss with every other parameter held fixed:
//!
//! ```text
//! theta' = (theta * sum h^2 - sum h e) / (sum h^2 + lambda)
//! ```
//!
//! so the objective `1/2 sum e^2 + 1/2 (l_w0 w0^2 + l_w |w|^2 + l_V |V|^2)`
//! never increases. Classification fits a probit model by MAP: before each
//! sweep the targets are replaced by the mean of the latent unit-variance
//! normal given its sign, `y_hat + y phi(y y_hat) / Phi(y y_hat)`.

use std::time::Instant;

use crate::error::{FmError, Result};
use crate::model::{
    build_caches, init_params, FitReport, FmParams, SampleCaches, SolverConfig, Task,
};
use crate::probit::{ln_normal_cdf, truncated_mean};
use crate::sparse::LabeledData;
use crate::sweep::{sweep, Coord};

/// Fitted parameters plus the incrementally maintained caches needed to
/// continue the same run with [`als_continue`].
#[derive(Debug, Clone)]
pub struct AlsFit {
    pub params: FmParams,
    pub caches: SampleCaches,
    pub report: FitReport,
}

/// Cache drift tolerated by [`als_continue`] before it rejects the caches.
pub const CACHE_TOLERANCE: f64 = 1e-9;

fn penalty(config: &SolverConfig, coord: Coord) -> f64 {
    match coord {
        Coord::Bias => config.l2_reg_w0,
        Coord::Linear(_) => config.l2_reg_w,
        Coord::Latent(..) => config.l2_reg_v,
    }
}

pub(crate) fn penalty_term(params: &FmParams, config: &SolverConfig) -> f64 {
    let (b, w, v) = params.squared_norms();
    0.5 * (config.l2_reg_w0 * b + config.l2_reg_w * w + config.l2_reg_v * v)
}

/// `1/2 sum (y_hat - y)^2` plus the L2 penalty.
pub fn regularized_square_loss(
    params: &FmParams,
    y_hat: &[f64],
    y: &[f64],
    config: &SolverConfig,
) -> f64 {
    let sse: f64 = y_hat.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    0.5 * sse + penalty_term(params, config)
}

/// `-sum ln Phi(y * y_hat)` plus the L2 penalty.
pub fn regularized_probit_loss(
    params: &FmParams,
    y_hat: &[f64],
    y: &[f64],
    config: &SolverConfig,
) -> f64 {
    let nll: f64 = y_hat
        .iter()
        .zip(y)
        .map(|(a, b)| -ln_normal_cdf(a * b))
        .sum();
    nll + penalty_term(params, config)
}

fn starting_point(
    data: &LabeledData,
    config: &SolverConfig,
    warm: Option<&FmParams>,
) -> Result<FmParams> {
    config.validate()?;
    match warm {
        Some(w) => {
            if w.n_features() < data.x.n_cols() || w.rank() != config.rank {
                return Err(FmError::Dimension(format!(
                    "warm start has p={}, k={}; data needs p>={}, config rank {}",
                    w.n_features(),
                    w.rank(),
                    data.x.n_cols(),
                    config.rank
                )));
            }
            Ok(w.clone())
        }
        None => Ok(init_params(data.x.n_cols(), config)),
    }
}

/// Squared-loss regression. `warm` replaces the random initialization.
pub fn als_fit(
    data: &LabeledData,
    config: &SolverConfig,
    warm: Option<&FmParams>,
) -> Result<AlsFit> {
    if config.task != Task::Regression {
        return Err(FmError::Contract(
            "als_fit expects the regression task".into(),
        ));
    }
    let params = starting_point(data, config, warm)?;
    let caches = build_caches(&params, &data.x)?;
    run(data, config, params, caches, config.n_iter)
}

/// Probit classification by MAP; labels must be -1 or +1.
pub fn als_fit_classification(
    data: &LabeledData,
    config: &SolverConfig,
    warm: Option<&FmParams>,
) -> Result<AlsFit> {
    if config.task != Task::Classification {
        return Err(FmError::Contract(
            "als_fit_classification expects the classification task".into(),
        ));
    }
    data.check_binary_labels()?;
    let params = starting_point(data, config, warm)?;
    let caches = build_caches(&params, &data.x)?;
    run(data, config, params, caches, config.n_iter)
}

/// Runs `n_more_iter` further sweeps from a previous result.
///
/// Because the caches are carried over instead of recomputed, splitting a run
/// into pieces gives bit-identical parameters to running it in one go.
/// `config` may differ from the original run (e.g. a new penalty).
pub fn als_continue(
    params: FmParams,
    caches: SampleCaches,
    data: &LabeledData,
    config: &SolverConfig,
    n_more_iter: usize,
) -> Result<AlsFit> {
    config.validate()?;
    if params.rank() != config.rank {
        return Err(FmError::Dimension(format!(
            "params have rank {}, config {}",
            params.rank(),
            config.rank
        )));
    }
    if config.task == Task::Classification {
        data.check_binary_labels()?;
    } else if config.task != Task::Regression {
        return Err(FmError::Contract(
            "ALS supports regression and classification".into(),
        ));
    }
    if caches.n_rows() != data.n_rows() {
        return Err(FmError::Contract(
            "caches belong to a different data set".into(),
        ));
    }
    let fresh = build_caches(&params, &data.x)?;
    let drift = caches.max_deviation(&fresh);
    if !(drift <= CACHE_TOLERANCE) {
        return Err(FmError::Contract(format!(
            "stale caches: deviate from recomputation by {drift:e}"
        )));
    }
    run(data, config, params, caches, n_more_iter)
}

fn run(
    data: &LabeledData,
    config: &SolverConfig,
    mut params: FmParams,
    mut caches: SampleCaches,
    n_iter: usize,
) -> Result<AlsFit> {
    let start = Instant::now();
    let xc = data.x.to_column_major();
    let classification = config.task == Task::Classification;
    let mut targets = data.y.clone();
    let mut scratch = Vec::new();
    let mut report = FitReport::default();

    for s in 0..n_iter {
        if classification {
            for (t, (&yh, &y)) in targets.iter_mut().zip(caches.y_hat.iter().zip(&data.y)) {
                *t = truncated_mean(yh, y);
            }
        }
        #[cfg(debug_assertions)]
        let before = regularized_square_loss(&params, &caches.y_hat, &targets, config);

        sweep(
            &mut params,
            &mut caches,
            &xc,
            &targets,
            config.fit_intercept,
            &mut scratch,
            |coord, st| {
                if st.sum_h2 == 0.0 {
                    return None;
                }
                let lambda = penalty(config, coord);
                Some((st.theta * st.sum_h2 - st.sum_he) / (st.sum_h2 + lambda))
            },
        );

        if !caches.y_hat.iter().all(|y| y.is_finite()) || !params.is_finite() {
            return Err(FmError::Divergence(format!(
                "ALS diverged in sweep {}: non-finite predictions",
                s + 1
            )));
        }
        #[cfg(debug_assertions)]
        {
            let after = regularized_square_loss(&params, &caches.y_hat, &targets, config);
            debug_assert!(
                after <= before + 1e-9 * before.abs().max(1.0),
                "sweep {} increased the objective: {before} -> {after}",
                s + 1
            );
        }

        let objective = if classification {
            regularized_probit_loss(&params, &caches.y_hat, &data.y, config)
        } else {
            regularized_square_loss(&params, &caches.y_hat, &data.y, config)
        };
        report.objective_per_iter.push(objective);
        report.n_iter_done += 1;
    }
    report.wall_time = start.elapsed();
    Ok(AlsFit {
        params,
        caches,
        report,
    })
}
