//! Bayesian factorization machine fitted by Gibbs sampling.
//!
//! Every parameter has a Gaussian prior whose mean and precision are shared
//! within a group: one group for `w0`, one for all `w_i`, and one per latent
//! dimension `f` for `V[f][..]`. Group precisions get `Gamma(1, 1)` priors and
//! group means `N(0, 1 / lambda)`. The noise precision `alpha` also has a
//! `Gamma(1, 1)` prior. One iteration draws, in this order:
//!
//! 1. `alpha` (regression only; probit fixes the latent noise at 1),
//! 2. each group's `lambda` then `mu`, groups ordered `w0`, `w`, `V[0]`, ...,
//! 3. every parameter, in the same coordinate order as ALS,
//! 4. for classification, the latent targets `z_n ~ N(y_hat_n, 1)` truncated
//!    to the half-line of the label.
//!
//! Test-set predictions of every draw are averaged, so the output is the
//! posterior-mean prediction. State, including the generator, is carried
//! between calls: `k` calls of one iteration reproduce one call of `k`.

use std::fmt::Write as _;
use std::time::Instant;

use crate::error::{FmError, Result};
use crate::model::{
    build_caches, init_params_with, predict, FitReport, FmParams, SampleCaches, SolverConfig, Task,
};
use crate::probit::{normal_cdf, sample_normal, sample_truncated};
use crate::rng::{gamma_rate, rng_from_seed, FmRng};
use crate::sparse::{LabeledData, SparseRowMatrix};
use crate::sweep::{sweep, Coord};

/// Hyperprior constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperPrior {
    /// Shape and rate of the Gamma prior on `alpha`.
    pub alpha_0: f64,
    pub beta_0: f64,
    /// Shape and rate of the Gamma prior on each group precision.
    pub alpha_lambda: f64,
    pub beta_lambda: f64,
    /// Group means: `mu ~ N(mu_0, 1 / (gamma_0 * lambda))`.
    pub gamma_0: f64,
    pub mu_0: f64,
}

pub const HYPER_PRIOR: HyperPrior = HyperPrior {
    alpha_0: 1.0,
    beta_0: 1.0,
    alpha_lambda: 1.0,
    beta_lambda: 1.0,
    gamma_0: 1.0,
    mu_0: 0.0,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupKind {
    Bias,
    Linear,
    Latent(usize),
}

/// Shared Gaussian prior of one parameter group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperGroup {
    pub kind: GroupKind,
    pub lambda: f64,
    pub mu: f64,
}

/// Switches used by tests to isolate parts of the sampler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GibbsHooks {
    pub sample_noise: bool,
    pub sample_hyper: bool,
    /// Multiplies the variance of every parameter draw. 1 is the correct
    /// sampler; anything else is a deliberately broken one.
    pub variance_scale: f64,
}

impl Default for GibbsHooks {
    fn default() -> Self {
        GibbsHooks {
            sample_noise: true,
            sample_hyper: true,
            variance_scale: 1.0,
        }
    }
}

/// One entry per completed iteration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Traces {
    pub iteration: Vec<usize>,
    pub alpha: Vec<f64>,
    /// Indexed `[group][iteration]`, groups ordered as in [`McmcState::groups`].
    pub lambda: Vec<Vec<f64>>,
    pub mu: Vec<Vec<f64>>,
}

impl Traces {
    fn new(n_groups: usize) -> Self {
        Traces {
            lambda: vec![Vec::new(); n_groups],
            mu: vec![Vec::new(); n_groups],
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.iteration.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iteration.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.lambda.len().saturating_sub(2)
    }

    pub fn lambda_w(&self) -> &[f64] {
        &self.lambda[1]
    }

    pub fn mu_w(&self) -> &[f64] {
        &self.mu[1]
    }

    pub fn lambda_v(&self, f: usize) -> &[f64] {
        &self.lambda[2 + f]
    }

    pub fn mu_v(&self, f: usize) -> &[f64] {
        &self.mu[2 + f]
    }

    /// Prior standard deviation of the first-order weights,
    /// `lambda_w^(-1/2)`.
    pub fn sigma_w(&self) -> Vec<f64> {
        self.lambda_w().iter().map(|l| 1.0 / l.sqrt()).collect()
    }

    /// CSV with header
    /// `iter,alpha,lambda_w,mu_w,lambda_v_0..,mu_v_0..,lambda_w0,mu_w0,sigma_w`.
    pub fn to_csv(&self) -> String {
        let k = self.rank();
        let mut s = String::from("iter,alpha,lambda_w,mu_w");
        for f in 0..k {
            write!(s, ",lambda_v_{f}").unwrap();
        }
        for f in 0..k {
            write!(s, ",mu_v_{f}").unwrap();
        }
        s.push_str(",lambda_w0,mu_w0,sigma_w\n");
        let sigma = self.sigma_w();
        for t in 0..self.len() {
            write!(
                s,
                "{},{:?},{:?},{:?}",
                self.iteration[t], self.alpha[t], self.lambda[1][t], self.mu[1][t]
            )
            .unwrap();
            for f in 0..k {
                write!(s, ",{:?}", self.lambda_v(f)[t]).unwrap();
            }
            for f in 0..k {
                write!(s, ",{:?}", self.mu_v(f)[t]).unwrap();
            }
            writeln!(
                s,
                ",{:?},{:?},{:?}",
                self.lambda[0][t], self.mu[0][t], sigma[t]
            )
            .unwrap();
        }
        s
    }
}

/// Complete sampler state carried across warm-started calls.
#[derive(Debug, Clone)]
pub struct McmcState {
    params: FmParams,
    alpha: f64,
    groups: Vec<HyperGroup>,
    caches: SampleCaches,
    latent: Vec<f64>,
    rng: FmRng,
    pred_sum: Vec<f64>,
    n_samples: usize,
    traces: Traces,
    task: Task,
    fit_intercept: bool,
    iterations: usize,
    train_fingerprint: u64,
    test_fingerprint: u64,
}

impl McmcState {
    fn new(train: &LabeledData, x_test: &SparseRowMatrix, config: &SolverConfig) -> Result<Self> {
        let p = train.x.n_cols();
        if x_test.n_cols() > p {
            return Err(FmError::Dimension(format!(
                "test data has {} columns, training data {p}",
                x_test.n_cols()
            )));
        }
        let mut rng = rng_from_seed(config.seed);
        let params = init_params_with(p, config.rank, config.init_std, &mut rng);
        let caches = build_caches(&params, &train.x)?;
        let mut groups = vec![
            HyperGroup {
                kind: GroupKind::Bias,
                lambda: 1.0,
                mu: 0.0,
            },
            HyperGroup {
                kind: GroupKind::Linear,
                lambda: 1.0,
                mu: 0.0,
            },
        ];
        groups.extend((0..config.rank).map(|f| HyperGroup {
            kind: GroupKind::Latent(f),
            lambda: 1.0,
            mu: 0.0,
        }));
        let latent = if config.task == Task::Classification {
            caches
                .y_hat
                .iter()
                .zip(&train.y)
                .map(|(&c, &y)| sample_truncated(&mut rng, c, y))
                .collect()
        } else {
            Vec::new()
        };
        let n_groups = groups.len();
        Ok(McmcState {
            params,
            alpha: 1.0,
            groups,
            caches,
            latent,
            rng,
            pred_sum: vec![0.0; x_test.n_rows()],
            n_samples: 0,
            traces: Traces::new(n_groups),
            task: config.task,
            fit_intercept: config.fit_intercept,
            iterations: 0,
            train_fingerprint: train.x.fingerprint() ^ fingerprint_targets(&train.y),
            test_fingerprint: x_test.fingerprint(),
        })
    }

    /// Current draw of the model parameters.
    pub fn params(&self) -> &FmParams {
        &self.params
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn set_alpha(&mut self, alpha: f64) {
        assert!(alpha > 0.0 && alpha.is_finite(), "alpha must be positive");
        self.alpha = alpha;
    }

    /// Groups ordered `w0`, `w`, `V[0]`, ..., `V[k-1]`.
    pub fn groups(&self) -> &[HyperGroup] {
        &self.groups
    }

    pub fn groups_mut(&mut self) -> &mut [HyperGroup] {
        &mut self.groups
    }

    pub fn traces(&self) -> &Traces {
        &self.traces
    }

    pub fn n_samples_accumulated(&self) -> usize {
        self.n_samples
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn task(&self) -> Task {
        self.task
    }

    /// Latent probit targets of the current draw (empty for regression).
    pub fn latent_targets(&self) -> &[f64] {
        &self.latent
    }

    /// `[alpha, lambda_w, mu_w, lambda_V_0..k-1, mu_V_0..k-1]`.
    pub fn hyper_params(&self) -> Vec<f64> {
        let mut out = vec![self.alpha, self.groups[1].lambda, self.groups[1].mu];
        out.extend(self.groups[2..].iter().map(|g| g.lambda));
        out.extend(self.groups[2..].iter().map(|g| g.mu));
        out
    }

    /// Drops accumulated predictions, e.g. after burn-in.
    pub fn reset_accumulator(&mut self) {
        self.pred_sum.iter_mut().for_each(|s| *s = 0.0);
        self.n_samples = 0;
    }

    /// Replaces the current parameter draw and rebuilds the caches.
    pub fn set_params(&mut self, params: FmParams, train: &LabeledData) -> Result<()> {
        if params.n_features() != self.params.n_features() || params.rank() != self.params.rank() {
            return Err(FmError::Dimension(
                "replacement params change p or k".into(),
            ));
        }
        self.check_train(train)?;
        self.caches = build_caches(&params, &train.x)?;
        self.params = params;
        Ok(())
    }

    fn check_train(&self, train: &LabeledData) -> Result<()> {
        if train.x.fingerprint() ^ fingerprint_targets(&train.y) != self.train_fingerprint {
            return Err(FmError::Contract(
                "training data differs from the data this state was built on".into(),
            ));
        }
        Ok(())
    }

    /// Posterior-mean prediction so far, or the current draw's prediction
    /// when nothing has been accumulated.
    fn current_prediction(&self, x_test: &SparseRowMatrix) -> Result<Vec<f64>> {
        if self.n_samples > 0 {
            let n = self.n_samples as f64;
            return Ok(self.pred_sum.iter().map(|s| s / n).collect());
        }
        let raw = predict(&self.params, x_test)?;
        Ok(match self.task {
            Task::Classification => raw.into_iter().map(normal_cdf).collect(),
            _ => raw,
        })
    }

    fn group_index(coord: Coord) -> usize {
        match coord {
            Coord::Bias => 0,
            Coord::Linear(_) => 1,
            Coord::Latent(f, _) => 2 + f,
        }
    }

    fn sample_hyper(&mut self) {
        let prior = HYPER_PRIOR;
        let p = self.params.n_features();
        for g in 0..self.groups.len() {
            let members: &[f64] = match self.groups[g].kind {
                GroupKind::Bias if !self.fit_intercept => continue,
                GroupKind::Bias => std::slice::from_ref(&self.params.w0),
                GroupKind::Linear => &self.params.w,
                GroupKind::Latent(f) => &self.params.v[f * p..(f + 1) * p],
            };
            let size = members.len() as f64;
            let mu = self.groups[g].mu;
            let ss: f64 = members.iter().map(|t| (t - mu) * (t - mu)).sum();
            let ss_mu = prior.gamma_0 * (mu - prior.mu_0) * (mu - prior.mu_0);
            let lambda = gamma_rate(
                &mut self.rng,
                prior.alpha_lambda + 0.5 * (size + 1.0),
                prior.beta_lambda + 0.5 * (ss + ss_mu),
            );
            let sum: f64 = members.iter().sum();
            let mu_mean = (sum + prior.gamma_0 * prior.mu_0) / (size + prior.gamma_0);
            let mu_var = 1.0 / ((size + prior.gamma_0) * lambda);
            let mu = sample_normal(&mut self.rng, mu_mean, mu_var);
            self.groups[g].lambda = lambda;
            self.groups[g].mu = mu;
        }
    }

    fn iterate(
        &mut self,
        train: &LabeledData,
        xc: &crate::sparse::SparseColMatrix,
        x_test: &SparseRowMatrix,
        hooks: &GibbsHooks,
        scratch: &mut Vec<f64>,
    ) -> Result<f64> {
        let classification = self.task == Task::Classification;
        let iteration = self.iterations + 1;

        if !classification && hooks.sample_noise {
            let sse: f64 = self
                .caches
                .y_hat
                .iter()
                .zip(&train.y)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let n = train.n_rows() as f64;
            self.alpha = gamma_rate(
                &mut self.rng,
                HYPER_PRIOR.alpha_0 + 0.5 * n,
                HYPER_PRIOR.beta_0 + 0.5 * sse,
            );
        }
        if hooks.sample_hyper {
            self.sample_hyper();
        }

        let alpha = self.alpha;
        let groups = &self.groups;
        let rng = &mut self.rng;
        let targets: &[f64] = if classification {
            &self.latent
        } else {
            &train.y
        };
        let scale = hooks.variance_scale;
        sweep(
            &mut self.params,
            &mut self.caches,
            xc,
            targets,
            self.fit_intercept,
            scratch,
            |coord, st| {
                let g = &groups[Self::group_index(coord)];
                let var = 1.0 / (alpha * st.sum_h2 + g.lambda);
                let mean = var * (alpha * (st.theta * st.sum_h2 - st.sum_he) + g.lambda * g.mu);
                Some(sample_normal(rng, mean, var * scale))
            },
        );

        if classification {
            for ((z, &c), &y) in self.latent.iter_mut().zip(&self.caches.y_hat).zip(&train.y) {
                *z = sample_truncated(&mut self.rng, c, y);
            }
        }

        let finite = self.alpha.is_finite()
            && self.alpha > 0.0
            && self
                .groups
                .iter()
                .all(|g| g.lambda > 0.0 && g.lambda.is_finite() && g.mu.is_finite())
            && self.params.is_finite()
            && self.caches.y_hat.iter().all(|y| y.is_finite());
        if !finite {
            return Err(FmError::Divergence(format!(
                "MCMC produced a non-finite draw at iteration {iteration}"
            )));
        }

        let test_pred = predict(&self.params, x_test)?;
        for (s, t) in self.pred_sum.iter_mut().zip(test_pred) {
            *s += if classification { normal_cdf(t) } else { t };
        }
        self.n_samples += 1;
        self.iterations = iteration;

        self.traces.iteration.push(iteration);
        self.traces.alpha.push(self.alpha);
        for (g, group) in self.groups.iter().enumerate() {
            self.traces.lambda[g].push(group.lambda);
            self.traces.mu[g].push(group.mu);
        }

        let n = train.n_rows().max(1) as f64;
        Ok(if classification {
            -self
                .caches
                .y_hat
                .iter()
                .zip(&train.y)
                .map(|(a, y)| crate::probit::ln_normal_cdf(a * y))
                .sum::<f64>()
                / n
        } else {
            let sse: f64 = self
                .caches
                .y_hat
                .iter()
                .zip(&train.y)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            (sse / n).sqrt()
        })
    }
}

fn fingerprint_targets(y: &[f64]) -> u64 {
    y.iter().fold(0x9e37_79b9_7f4a_7c15u64, |h, t| {
        (h ^ t.to_bits())
            .wrapping_mul(0x0100_0000_01b3)
            .rotate_left(17)
    })
}

/// Result of a fit-predict call.
#[derive(Debug, Clone)]
pub struct McmcOutput {
    /// Posterior-mean prediction (probabilities for classification).
    pub y_pred: Vec<f64>,
    pub state: McmcState,
    /// Per iteration: training RMSE of the current draw (regression) or its
    /// mean probit negative log-likelihood (classification).
    pub report: FitReport,
}

/// Runs `config.n_iter` Gibbs iterations for squared-loss regression and
/// returns the averaged test prediction.
///
/// Pass the state returned by a previous call to continue the chain; in that
/// case `config.n_iter` counts the additional iterations and only `n_iter` is
/// read from `config`. With a fresh state and `n_iter = 0` the parameters are
/// only initialized and the initial model's prediction is returned.
pub fn mcmc_fit_predict(
    train: &LabeledData,
    x_test: &SparseRowMatrix,
    config: &SolverConfig,
    state: Option<McmcState>,
) -> Result<McmcOutput> {
    mcmc_fit_predict_with(train, x_test, config, state, &GibbsHooks::default())
}

/// Probit classification; returns averaged `Phi(y_hat)` on the test rows.
pub fn mcmc_fit_predict_classification(
    train: &LabeledData,
    x_test: &SparseRowMatrix,
    config: &SolverConfig,
    state: Option<McmcState>,
) -> Result<McmcOutput> {
    let config = SolverConfig {
        task: Task::Classification,
        ..config.clone()
    };
    mcmc_fit_predict_with(train, x_test, &config, state, &GibbsHooks::default())
}

/// [`mcmc_fit_predict`] with explicit sampler hooks. The task is read from
/// `config.task` for a fresh state and from the state otherwise.
pub fn mcmc_fit_predict_with(
    train: &LabeledData,
    x_test: &SparseRowMatrix,
    config: &SolverConfig,
    state: Option<McmcState>,
    hooks: &GibbsHooks,
) -> Result<McmcOutput> {
    let start = Instant::now();
    let mut state = match state {
        Some(s) => {
            s.check_train(train)?;
            if x_test.fingerprint() != s.test_fingerprint {
                return Err(FmError::Contract(
                    "test matrix changed between warm-started calls".into(),
                ));
            }
            s
        }
        None => {
            config.validate()?;
            match config.task {
                Task::Regression => {}
                Task::Classification => train.check_binary_labels()?,
                Task::Ranking => {
                    return Err(FmError::Contract("MCMC does not support ranking".into()))
                }
            }
            McmcState::new(train, x_test, config)?
        }
    };

    let mut report = FitReport::default();
    if config.n_iter > 0 {
        let xc = train.x.to_column_major();
        let mut scratch = Vec::new();
        for _ in 0..config.n_iter {
            let obj = state.iterate(train, &xc, x_test, hooks, &mut scratch)?;
            report.objective_per_iter.push(obj);
            report.n_iter_done += 1;
        }
    }
    let y_pred = state.current_prediction(x_test)?;
    report.wall_time = start.elapsed();
    Ok(McmcOutput {
        y_pred,
        state,
        report,
    })
}
