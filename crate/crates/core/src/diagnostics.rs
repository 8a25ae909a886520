//! Solver validation harnesses: central finite differences for the gradient
//! based solvers, and simulation-based posterior quantiles (Cook, Gelman &
//! Rubin, 2006) for the Gibbs sampler.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{FmError, Result};
use crate::mcmc::{mcmc_fit_predict_with, GibbsHooks, HYPER_PRIOR};
use crate::model::{predict, FmParams, SolverConfig, Task};
use crate::probit::sample_normal;
use crate::rng::{gamma_rate, open_unit, rng_from_seed, split_seed, std_normal, FmRng};
use crate::sgd::{full_batch_loss, loss_gradient, LossInput};
use crate::sparse::{LabeledData, SparseRowMatrix};

/// Outcome of [`finite_difference_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    /// `max_i |a_i - n_i| / max(|a_i|, |n_i|, 1e-12)`.
    pub max_relative_error: f64,
    /// Coordinate attaining the maximum.
    pub worst_index: usize,
    /// Largest ratio of estimated rounding noise in the numeric derivative,
    /// `eps_mach * (|L+| + |L-|) / (2 eps)`, to the derivative's magnitude.
    pub noise_ratio: f64,
}

impl FdReport {
    /// Rounding noise stays well below the tolerance the check is used at.
    pub const NOISE_LIMIT: f64 = 1e-6;

    /// False when `epsilon` is so small that cancellation dominates.
    pub fn is_reliable(&self) -> bool {
        self.noise_ratio < Self::NOISE_LIMIT
    }
}

/// Compares `analytic` with central differences `(L(t + e) - L(t - e)) / 2e`
/// of `loss` at `theta`, one coordinate at a time.
pub fn finite_difference_check<F>(
    loss: F,
    analytic: &[f64],
    theta: &[f64],
    epsilon: f64,
) -> Result<FdReport>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if !(epsilon > 0.0) {
        return Err(FmError::Contract(format!(
            "epsilon must be > 0, got {epsilon}"
        )));
    }
    if analytic.len() != theta.len() {
        return Err(FmError::Dimension(format!(
            "gradient has {} entries, parameters {}",
            analytic.len(),
            theta.len()
        )));
    }
    let mut probe = theta.to_vec();
    let mut report = FdReport {
        max_relative_error: 0.0,
        worst_index: 0,
        noise_ratio: 0.0,
    };
    for (i, &a) in analytic.iter().enumerate() {
        let orig = probe[i];
        probe[i] = orig + epsilon;
        let plus = loss(&probe)?;
        probe[i] = orig - epsilon;
        let minus = loss(&probe)?;
        probe[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(FmError::Contract(format!(
                "loss is not finite when coordinate {i} is perturbed"
            )));
        }
        let numeric = (plus - minus) / (2.0 * epsilon);
        let scale = a.abs().max(numeric.abs()).max(1e-12);
        let rel = (a - numeric).abs() / scale;
        if rel > report.max_relative_error {
            report.max_relative_error = rel;
            report.worst_index = i;
        }
        let noise = f64::EPSILON * (plus.abs() + minus.abs()) / (2.0 * epsilon);
        report.noise_ratio = report.noise_ratio.max(noise / scale);
    }
    Ok(report)
}

/// Finite-difference check of [`loss_gradient`] against [`full_batch_loss`].
pub fn fm_gradient_check(
    params: &FmParams,
    input: LossInput<'_>,
    config: &SolverConfig,
    epsilon: f64,
) -> Result<FdReport> {
    let (p, k) = (params.n_features(), params.rank());
    let analytic = loss_gradient(params, input, config)?;
    finite_difference_check(
        |theta| full_batch_loss(&FmParams::from_flat(theta, p, k)?, input, config),
        &analytic,
        &params.to_flat(),
        epsilon,
    )
}

/// One-sample Kolmogorov–Smirnov test against Uniform(0, 1).
///
/// Returns `(D, p)` with the asymptotic Kolmogorov distribution evaluated at
/// `(sqrt(n) + 0.12 + 0.11 / sqrt(n)) * D`.
pub fn ks_uniform(samples: &[f64]) -> (f64, f64) {
    let d = ks_statistic(samples);
    (d, ks_p_value(d, samples.len() as f64))
}

/// `sup |F_n(u) - u|` over the empirical distribution of `samples`.
pub fn ks_statistic(samples: &[f64]) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let nf = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &u)| {
            let u = u.clamp(0.0, 1.0);
            ((i + 1) as f64 / nf - u).max(u - i as f64 / nf)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic p-value of statistic `d` at (possibly fractional) sample size `n`.
pub fn ks_p_value(d: f64, n: f64) -> f64 {
    if n <= 0.0 {
        return 1.0;
    }
    let sqrt_n = n.sqrt();
    kolmogorov_survival((sqrt_n + 0.12 + 0.11 / sqrt_n) * d)
}

/// Variance inflation of a mean over equal clusters of `cluster_size`
/// consecutive values, `1 + (m - 1) * rho` with `rho` the one-way ANOVA
/// intraclass correlation. Clamped below at 1.
pub fn design_effect(values: &[f64], cluster_size: usize) -> f64 {
    let m = cluster_size;
    if m < 2 || values.len() < 2 * m {
        return 1.0;
    }
    let g = values.len() / m;
    let values = &values[..g * m];
    let grand = values.iter().sum::<f64>() / (g * m) as f64;
    let means: Vec<f64> = values
        .chunks(m)
        .map(|c| c.iter().sum::<f64>() / m as f64)
        .collect();
    let msb =
        m as f64 * means.iter().map(|x| (x - grand) * (x - grand)).sum::<f64>() / (g - 1) as f64;
    let msw = values
        .chunks(m)
        .zip(&means)
        .map(|(c, mu)| c.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>())
        .sum::<f64>()
        / (g * (m - 1)) as f64;
    let denom = msb + (m - 1) as f64 * msw;
    if denom <= 0.0 {
        return 1.0;
    }
    let rho = (msb - msw) / denom;
    (1.0 + (m - 1) as f64 * rho).max(1.0)
}

/// `P(K > t)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(t: f64) -> f64 {
    if t < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=200 {
        let jf = j as f64;
        let term = (-2.0 * jf * jf * t * t).exp();
        sum += sign * term;
        if term < 1e-16 * sum.abs() || term == 0.0 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Fraction of draws strictly below `truth`, counting ties as one half.
pub fn posterior_quantile(draws: &[f64], truth: f64) -> f64 {
    let (below, ties) = draws.iter().fold((0usize, 0usize), |(b, t), &d| {
        if d < truth {
            (b + 1, t)
        } else if d == truth {
            (b, t + 1)
        } else {
            (b, t)
        }
    });
    (below as f64 + 0.5 * ties as f64) / draws.len() as f64
}

/// Simulation setup for [`posterior_quantile_run`].
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileConfig {
    pub n_features: usize,
    pub rank: usize,
    pub n_samples: usize,
    pub n_replications: usize,
    pub n_gibbs_iter: usize,
    /// Leading draws discarded from every chain.
    pub burn_in: usize,
    pub seed: u64,
    pub hooks: GibbsHooks,
}

impl Default for QuantileConfig {
    fn default() -> Self {
        QuantileConfig {
            n_features: 5,
            rank: 2,
            n_samples: 40,
            n_replications: 200,
            n_gibbs_iter: 500,
            burn_in: 50,
            seed: 0,
            hooks: GibbsHooks::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileReport {
    /// Pooled quantiles, replication-major.
    pub quantiles: Vec<f64>,
    /// Number of tracked scalars per replication.
    pub per_replication: usize,
    pub n_failed: usize,
    pub ks_statistic: f64,
    /// Intraclass inflation of the pooled quantiles, see [`design_effect`].
    pub design_effect: f64,
    /// KS p-value at the effective sample size `n / design_effect`.
    pub p_value: f64,
}

impl QuantileReport {
    /// `replication,scalar,quantile` rows for external plotting.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("replication,scalar,quantile\n");
        for (i, q) in self.quantiles.iter().enumerate() {
            let (r, j) = (i / self.per_replication, i % self.per_replication);
            writeln!(s, "{r},{j},{q:?}").unwrap();
        }
        s
    }
}

/// Ground truth drawn from the full hierarchical prior.
#[derive(Debug, Clone)]
pub struct PriorDraw {
    pub params: FmParams,
    pub alpha: f64,
}

/// Draws noise precision, group hyperparameters and parameters from the
/// prior the sampler assumes.
pub fn draw_from_prior(p: usize, k: usize, rng: &mut FmRng) -> PriorDraw {
    let hp = HYPER_PRIOR;
    let alpha = gamma_rate(rng, hp.alpha_0, hp.beta_0);
    let group = |rng: &mut FmRng, size: usize| -> Vec<f64> {
        let lambda = gamma_rate(rng, hp.alpha_lambda, hp.beta_lambda);
        let mu = sample_normal(rng, hp.mu_0, 1.0 / (hp.gamma_0 * lambda));
        (0..size)
            .map(|_| sample_normal(rng, mu, 1.0 / lambda))
            .collect()
    };
    let w0 = group(rng, 1)[0];
    let w = group(rng, p);
    let mut v = Vec::with_capacity(p * k);
    for _ in 0..k {
        v.extend(group(rng, p));
    }
    PriorDraw {
        params: FmParams::from_parts(w0, w, v, k).expect("prior draw is finite"),
        alpha,
    }
}

/// Random design: each feature present with probability 0.6, values `N(0, 1)`.
pub fn random_design(n: usize, p: usize, rng: &mut FmRng) -> SparseRowMatrix {
    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|_| {
            (0..p)
                .filter_map(|i| (open_unit(rng) < 0.6).then(|| (i, std_normal(rng))))
                .collect()
        })
        .collect();
    SparseRowMatrix::from_rows(p, rows).expect("valid design")
}

/// Scalars whose quantiles are tracked: `w0`, every `w_i` and every pairwise
/// interaction weight `<v_i, v_j>`, `i < j`. Raw latent coordinates are left
/// out: the likelihood is invariant to sign flips and permutations of the
/// latent dimensions, so their marginals are not identified.
pub fn tracked_scalars(params: &FmParams) -> Vec<f64> {
    let p = params.n_features();
    let mut out = Vec::with_capacity(1 + p + p * (p - 1) / 2);
    out.push(params.w0);
    out.extend_from_slice(&params.w);
    for i in 0..p {
        for j in i + 1..p {
            out.push(
                (0..params.rank())
                    .map(|f| params.v_at(f, i) * params.v_at(f, j))
                    .sum(),
            );
        }
    }
    out
}

fn replication(cfg: &QuantileConfig, rep: usize) -> Result<Vec<f64>> {
    let rep_seed = split_seed(cfg.seed, rep as u64);
    let mut rng = rng_from_seed(rep_seed);
    let truth = draw_from_prior(cfg.n_features, cfg.rank, &mut rng);
    let x = random_design(cfg.n_samples, cfg.n_features, &mut rng);
    let noise_var = 1.0 / truth.alpha;
    let y: Vec<f64> = predict(&truth.params, &x)?
        .into_iter()
        .map(|m| sample_normal(&mut rng, m, noise_var))
        .collect();
    let train = LabeledData::new(x, y)?;
    let x_test = SparseRowMatrix::empty(0, cfg.n_features);

    let solver = SolverConfig {
        rank: cfg.rank,
        n_iter: cfg.burn_in,
        init_std: 0.1,
        seed: split_seed(rep_seed, 0),
        task: Task::Regression,
        ..Default::default()
    };
    let mut out = mcmc_fit_predict_with(&train, &x_test, &solver, None, &cfg.hooks)?;
    let one = SolverConfig {
        n_iter: 1,
        ..solver
    };
    let kept = cfg.n_gibbs_iter.saturating_sub(cfg.burn_in);
    let mut draws: Vec<Vec<f64>> = Vec::with_capacity(kept);
    for _ in 0..kept {
        out = mcmc_fit_predict_with(&train, &x_test, &one, Some(out.state), &cfg.hooks)?;
        draws.push(tracked_scalars(out.state.params()));
    }
    let true_scalars = tracked_scalars(&truth.params);
    Ok((0..true_scalars.len())
        .map(|j| {
            let column: Vec<f64> = draws.iter().map(|d| d[j]).collect();
            posterior_quantile(&column, true_scalars[j])
        })
        .collect())
}

/// Runs the posterior quantile experiment: for each replication, draw a
/// ground truth from the prior, simulate targets, run the sampler, and record
/// the quantile of every true tracked scalar among its posterior draws. The
/// pooled quantiles are tested for uniformity with a KS test. Quantiles from
/// one replication share data and are mildly correlated, so the p-value uses
/// the effective sample size from [`design_effect`] rather than the raw count.
///
/// Replication `r` uses seed `split_seed(seed, r)`, so results do not depend
/// on how replications are scheduled across threads. Replications whose
/// sampler diverges are dropped; more than 5% failures is an error.
pub fn posterior_quantile_run(cfg: &QuantileConfig) -> Result<QuantileReport> {
    if cfg.n_replications < 50 {
        return Err(FmError::Contract(format!(
            "n_replications must be at least 50, got {}",
            cfg.n_replications
        )));
    }
    if cfg.n_gibbs_iter <= cfg.burn_in {
        return Err(FmError::Contract("n_gibbs_iter must exceed burn_in".into()));
    }
    let results: Vec<Result<Vec<f64>>> = (0..cfg.n_replications)
        .into_par_iter()
        .map(|rep| replication(cfg, rep))
        .collect();

    let mut quantiles = Vec::new();
    let mut n_failed = 0;
    let mut per_replication = 0;
    for r in results {
        match r {
            Ok(q) => {
                per_replication = q.len();
                quantiles.extend(q);
            }
            Err(FmError::Divergence(_)) => n_failed += 1,
            Err(e) => return Err(e),
        }
    }
    if n_failed * 20 > cfg.n_replications {
        return Err(FmError::Divergence(format!(
            "{n_failed} of {} replications diverged",
            cfg.n_replications
        )));
    }
    let ks_statistic = ks_statistic(&quantiles);
    let design_effect = design_effect(&quantiles, per_replication);
    let p_value = ks_p_value(ks_statistic, quantiles.len() as f64 / design_effect);
    Ok(QuantileReport {
        quantiles,
        per_replication,
        n_failed,
        ks_statistic,
        design_effect,
        p_value,
    })
}
