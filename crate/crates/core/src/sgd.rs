//! Stochastic gradient descent for squared and logistic loss, and the
//! pairwise BPR ranking solver.
//!
//! Per visited sample, every parameter touched by the row (`w0` and the
//! features with `x_i != 0`) moves by `-step * (g * h + lambda * theta)`,
//! where `h = dy/dtheta` and `g` is the derivative of the loss with respect to
//! the prediction: `e` for squared loss, `-y sigmoid(-y y_hat)` for logistic
//! loss. The step size is constant.

use std::io::BufRead;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{FmError, Result};
use crate::model::{init_params_with, predict, FitReport, FmParams, SolverConfig, Task};
use crate::probit::{ln_sigmoid, sigmoid};
use crate::rng::{rng_from_seed, FmRng};
use crate::sparse::{LabeledData, SparseRowMatrix};

/// Preference pairs `(winner_row, loser_row)` over the rows of a matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingPairs {
    pairs: Vec<(usize, usize)>,
}

impl RankingPairs {
    pub fn new(pairs: Vec<(usize, usize)>, n_rows: usize) -> Result<Self> {
        for (k, &(a, b)) in pairs.iter().enumerate() {
            if a >= n_rows || b >= n_rows {
                return Err(FmError::Contract(format!(
                    "pair {k} ({a},{b}) indexes past {n_rows} rows"
                )));
            }
            if a == b {
                return Err(FmError::Contract(format!(
                    "pair {k} compares row {a} with itself"
                )));
            }
        }
        Ok(RankingPairs { pairs })
    }

    pub fn as_slice(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Reads `winner_row,loser_row` lines (0-based). A leading header line
/// `winner_row,loser_row` is allowed.
pub fn parse_pairs_csv<R: BufRead>(reader: R, n_rows: usize) -> Result<RankingPairs> {
    let mut pairs = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line == "winner_row,loser_row") {
            continue;
        }
        let parsed = line
            .split_once(',')
            .and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)));
        match parsed {
            Some(pair) => pairs.push(pair),
            None => {
                return Err(FmError::Parse {
                    line: lineno + 1,
                    msg: format!("expected winner_row,loser_row, got {line:?}"),
                })
            }
        }
    }
    RankingPairs::new(pairs, n_rows)
}

/// Fitted parameters with the per-epoch loss trace.
#[derive(Debug, Clone)]
pub struct SgdFit {
    pub params: FmParams,
    pub report: FitReport,
}

/// Training data for [`loss_gradient`].
#[derive(Debug, Clone, Copy)]
pub enum LossInput<'a> {
    Labeled(&'a LabeledData),
    Pairs(&'a SparseRowMatrix, &'a RankingPairs),
}

// Per-row factor sums q_f = sum_i V[f][i] x_i and the prediction.
fn row_state(params: &FmParams, cols: &[usize], vals: &[f64], q: &mut [f64]) -> f64 {
    let mut y = params.w0;
    for (&i, &x) in cols.iter().zip(vals) {
        y += params.w[i] * x;
    }
    for (f, qf) in q.iter_mut().enumerate() {
        let vf = params.factor(f);
        let (mut s, mut s2) = (0.0, 0.0);
        for (&i, &x) in cols.iter().zip(vals) {
            let t = vf[i] * x;
            s += t;
            s2 += t * t;
        }
        *qf = s;
        y += 0.5 * (s * s - s2);
    }
    y
}

/// Adds `scale * dy/dtheta` for one row into a flat `(w0, w, V)` gradient.
fn add_row_gradient(
    params: &FmParams,
    cols: &[usize],
    vals: &[f64],
    q: &[f64],
    scale: f64,
    grad: &mut [f64],
) {
    let p = params.n_features();
    grad[0] += scale;
    for (&i, &x) in cols.iter().zip(vals) {
        grad[1 + i] += scale * x;
    }
    for (f, &qf) in q.iter().enumerate() {
        let base = 1 + p + f * p;
        for (&i, &x) in cols.iter().zip(vals) {
            grad[base + i] += scale * x * (qf - params.v_at(f, i) * x);
        }
    }
}

fn add_penalty_gradient(params: &FmParams, config: &SolverConfig, grad: &mut [f64]) {
    let p = params.n_features();
    grad[0] += config.l2_reg_w0 * params.w0;
    for (g, w) in grad[1..1 + p].iter_mut().zip(&params.w) {
        *g += config.l2_reg_w * w;
    }
    for (g, v) in grad[1 + p..].iter_mut().zip(&params.v) {
        *g += config.l2_reg_v * v;
    }
}

fn check_task_input(input: &LossInput<'_>, task: Task) -> Result<()> {
    match (input, task) {
        (LossInput::Labeled(d), Task::Classification) => d.check_binary_labels(),
        (LossInput::Labeled(_), Task::Regression) | (LossInput::Pairs(..), Task::Ranking) => Ok(()),
        _ => Err(FmError::Contract(format!(
            "input does not match task {task:?}"
        ))),
    }
}

/// Full-batch objective whose gradient [`loss_gradient`] returns:
///
/// * regression: `sum 1/2 (y_hat - y)^2`
/// * classification: `sum ln(1 + exp(-y y_hat))`
/// * ranking: `-sum_pairs ln sigmoid(y_hat_winner - y_hat_loser)`
///
/// each plus `1/2 (l_w0 w0^2 + l_w |w|^2 + l_V |V|^2)`.
pub fn full_batch_loss(
    params: &FmParams,
    input: LossInput<'_>,
    config: &SolverConfig,
) -> Result<f64> {
    check_task_input(&input, config.task)?;
    let penalty = crate::als::penalty_term(params, config);
    let data_loss = match input {
        LossInput::Labeled(d) => {
            let y_hat = predict(params, &d.x)?;
            y_hat
                .iter()
                .zip(&d.y)
                .map(|(&yh, &y)| match config.task {
                    Task::Regression => 0.5 * (yh - y) * (yh - y),
                    _ => -ln_sigmoid(y * yh),
                })
                .sum::<f64>()
        }
        LossInput::Pairs(x, pairs) => {
            let y_hat = predict(params, x)?;
            pairs
                .as_slice()
                .iter()
                .map(|&(a, b)| -ln_sigmoid(y_hat[a] - y_hat[b]))
                .sum()
        }
    };
    Ok(data_loss + penalty)
}

/// Analytic gradient of [`full_batch_loss`], laid out `(w0, w, V row-major)`.
pub fn loss_gradient(
    params: &FmParams,
    input: LossInput<'_>,
    config: &SolverConfig,
) -> Result<Vec<f64>> {
    check_task_input(&input, config.task)?;
    let p = params.n_features();
    let mut grad = vec![0.0; 1 + p + p * params.rank()];
    let mut q = vec![0.0; params.rank()];
    match input {
        LossInput::Labeled(d) => {
            if d.x.n_cols() > p {
                return Err(FmError::Dimension("data wider than model".into()));
            }
            for r in 0..d.n_rows() {
                let (cols, vals) = d.x.row(r);
                let yh = row_state(params, cols, vals, &mut q);
                let g = match config.task {
                    Task::Regression => yh - d.y[r],
                    _ => -d.y[r] * sigmoid(-d.y[r] * yh),
                };
                add_row_gradient(params, cols, vals, &q, g, &mut grad);
            }
        }
        LossInput::Pairs(x, pairs) => {
            if x.n_cols() > p {
                return Err(FmError::Dimension("data wider than model".into()));
            }
            let mut qb = vec![0.0; params.rank()];
            for &(a, b) in pairs.as_slice() {
                let (ca, va) = x.row(a);
                let (cb, vb) = x.row(b);
                let delta = row_state(params, ca, va, &mut q) - row_state(params, cb, vb, &mut qb);
                let m = sigmoid(-delta);
                add_row_gradient(params, ca, va, &q, -m, &mut grad);
                add_row_gradient(params, cb, vb, &qb, m, &mut grad);
            }
        }
    }
    add_penalty_gradient(params, config, &mut grad);
    Ok(grad)
}

/// Plain gradient descent on [`full_batch_loss`]: `n_steps` steps of
/// `theta -= config.step_size * grad`.
pub fn full_batch_descent(
    params: &FmParams,
    input: LossInput<'_>,
    config: &SolverConfig,
    n_steps: usize,
) -> Result<FmParams> {
    let (p, k) = (params.n_features(), params.rank());
    let mut theta = params.to_flat();
    for _ in 0..n_steps {
        let current = FmParams::from_flat(&theta, p, k)?;
        let grad = loss_gradient(&current, input, config)?;
        for (t, g) in theta.iter_mut().zip(grad) {
            *t -= config.step_size * g;
        }
    }
    FmParams::from_flat(&theta, p, k)
}

fn starting_point(
    n_cols: usize,
    config: &SolverConfig,
    warm: Option<&FmParams>,
    rng: &mut FmRng,
) -> Result<FmParams> {
    config.validate()?;
    match warm {
        Some(w) if w.n_features() < n_cols || w.rank() != config.rank => {
            Err(FmError::Dimension(format!(
                "warm start has p={}, k={}; data needs p>={n_cols}, config rank {}",
                w.n_features(),
                w.rank(),
                config.rank
            )))
        }
        Some(w) => Ok(w.clone()),
        None => Ok(init_params_with(n_cols, config.rank, config.init_std, rng)),
    }
}

/// In-place step for one row: `theta -= step * (scale * h + lambda * theta)`.
/// `q` must hold the row's factor sums at the current parameters.
fn sgd_row_step(
    params: &mut FmParams,
    cols: &[usize],
    vals: &[f64],
    q: &[f64],
    scale: f64,
    config: &SolverConfig,
    update_bias: bool,
) {
    let eta = config.step_size;
    if update_bias {
        params.w0 -= eta * (scale + config.l2_reg_w0 * params.w0);
    }
    for (&i, &x) in cols.iter().zip(vals) {
        params.w[i] -= eta * (scale * x + config.l2_reg_w * params.w[i]);
    }
    let p = params.n_features();
    for (f, &qf) in q.iter().enumerate() {
        for (&i, &x) in cols.iter().zip(vals) {
            let v = &mut params.v[f * p + i];
            let h = x * (qf - *v * x);
            *v -= eta * (scale * h + config.l2_reg_v * *v);
        }
    }
}

/// SGD for regression (squared loss) or classification (logistic loss,
/// labels -1/+1). Samples are visited in a fresh seeded permutation each
/// epoch. The report holds the mean training loss after every epoch.
pub fn sgd_fit(
    data: &LabeledData,
    config: &SolverConfig,
    warm: Option<&FmParams>,
) -> Result<SgdFit> {
    let start = Instant::now();
    let classification = match config.task {
        Task::Regression => false,
        Task::Classification => {
            data.check_binary_labels()?;
            true
        }
        Task::Ranking => return Err(FmError::Contract("use bpr_fit for ranking".into())),
    };
    let mut rng = rng_from_seed(config.seed);
    let mut params = starting_point(data.x.n_cols(), config, warm, &mut rng)?;
    let mut order: Vec<usize> = (0..data.n_rows()).collect();
    let mut q = vec![0.0; config.rank];
    let mut report = FitReport::default();
    let n = data.n_rows().max(1) as f64;

    for epoch in 1..=config.n_iter {
        order.shuffle(&mut rng);
        for &r in &order {
            let (cols, vals) = data.x.row(r);
            let yh = row_state(&params, cols, vals, &mut q);
            let y = data.y[r];
            let g = if classification {
                -y * sigmoid(-y * yh)
            } else {
                yh - y
            };
            sgd_row_step(&mut params, cols, vals, &q, g, config, config.fit_intercept);
        }
        let y_hat = predict(&params, &data.x)?;
        let loss = y_hat
            .iter()
            .zip(&data.y)
            .map(|(&yh, &y)| {
                if classification {
                    -ln_sigmoid(y * yh)
                } else {
                    0.5 * (yh - y) * (yh - y)
                }
            })
            .sum::<f64>()
            / n;
        if !loss.is_finite() || !params.is_finite() {
            return Err(FmError::Divergence(format!(
                "SGD diverged in epoch {epoch}; try a smaller step_size than {}",
                config.step_size
            )));
        }
        report.objective_per_iter.push(loss);
        report.n_iter_done += 1;
    }
    report.wall_time = start.elapsed();
    Ok(SgdFit { params, report })
}

/// Pairwise BPR: each step draws a pair uniformly with replacement and
/// ascends `ln sigmoid(y_hat_winner - y_hat_loser)` minus the L2 penalty.
/// An epoch is `pairs.len()` draws; the report holds the mean
/// `ln sigmoid(delta)` of the draws in each epoch.
pub fn bpr_fit(
    x: &SparseRowMatrix,
    pairs: &RankingPairs,
    config: &SolverConfig,
    warm: Option<&FmParams>,
) -> Result<SgdFit> {
    let start = Instant::now();
    if config.task != Task::Ranking {
        return Err(FmError::Contract("bpr_fit expects the ranking task".into()));
    }
    if pairs.is_empty() {
        return Err(FmError::Contract("no ranking pairs".into()));
    }
    if let Some(&(a, b)) = pairs
        .as_slice()
        .iter()
        .find(|&&(a, b)| a >= x.n_rows() || b >= x.n_rows())
    {
        return Err(FmError::Contract(format!("pair ({a},{b}) out of range")));
    }
    let mut rng = rng_from_seed(config.seed);
    let mut params = starting_point(x.n_cols(), config, warm, &mut rng)?;
    let (mut qa, mut qb) = (vec![0.0; config.rank], vec![0.0; config.rank]);
    let mut merged: Vec<(usize, f64, f64)> = Vec::new();
    let mut report = FitReport::default();
    let n_pairs = pairs.len();

    for epoch in 1..=config.n_iter {
        let mut sum_ln = 0.0;
        for _ in 0..n_pairs {
            let (a, b) = pairs.as_slice()[rng.random_range(0..n_pairs)];
            let (ca, va) = x.row(a);
            let (cb, vb) = x.row(b);
            let delta = row_state(&params, ca, va, &mut qa) - row_state(&params, cb, vb, &mut qb);
            sum_ln += ln_sigmoid(delta);
            bpr_step(
                &mut params,
                ca,
                va,
                cb,
                vb,
                &qa,
                &qb,
                sigmoid(-delta),
                config,
                &mut merged,
            );
        }
        let mean_ln = sum_ln / n_pairs as f64;
        if !mean_ln.is_finite() || !params.is_finite() {
            return Err(FmError::Divergence(format!(
                "BPR diverged in epoch {epoch}; try a smaller step_size than {}",
                config.step_size
            )));
        }
        report.objective_per_iter.push(mean_ln);
        report.n_iter_done += 1;
    }
    report.wall_time = start.elapsed();
    Ok(SgdFit { params, report })
}

#[allow(clippy::too_many_arguments)]
fn bpr_step(
    params: &mut FmParams,
    ca: &[usize],
    va: &[f64],
    cb: &[usize],
    vb: &[f64],
    qa: &[f64],
    qb: &[f64],
    weight: f64,
    config: &SolverConfig,
    merged: &mut Vec<(usize, f64, f64)>,
) {
    // union of the two rows' columns with both values, zero where absent
    merged.clear();
    let (mut i, mut j) = (0, 0);
    while i < ca.len() || j < cb.len() {
        if j == cb.len() || (i < ca.len() && ca[i] < cb[j]) {
            merged.push((ca[i], va[i], 0.0));
            i += 1;
        } else if i == ca.len() || cb[j] < ca[i] {
            merged.push((cb[j], 0.0, vb[j]));
            j += 1;
        } else {
            merged.push((ca[i], va[i], vb[j]));
            i += 1;
            j += 1;
        }
    }

    let eta = config.step_size;
    if config.fit_intercept {
        // w0 cancels in the difference; only the penalty acts
        params.w0 -= eta * config.l2_reg_w0 * params.w0;
    }
    for &(c, xa, xb) in merged.iter() {
        params.w[c] += eta * (weight * (xa - xb) - config.l2_reg_w * params.w[c]);
    }
    let p = params.n_features();
    for f in 0..params.rank() {
        for &(c, xa, xb) in merged.iter() {
            let v = &mut params.v[f * p + c];
            let ha = xa * (qa[f] - *v * xa);
            let hb = xb * (qb[f] - *v * xb);
            *v += eta * (weight * (ha - hb) - config.l2_reg_v * *v);
        }
    }
}

/// Fraction of pairs ordered correctly by the model (`y_hat_winner > y_hat_loser`).
pub fn pairwise_accuracy(
    params: &FmParams,
    x: &SparseRowMatrix,
    pairs: &RankingPairs,
) -> Result<f64> {
    let y_hat = predict(params, x)?;
    let correct = pairs
        .as_slice()
        .iter()
        .filter(|&&(a, b)| y_hat[a] > y_hat[b])
        .count();
    Ok(correct as f64 / pairs.len().max(1) as f64)
}

/// Gradient of one sample's loss plus the penalty on the parameters the row
/// touches, as applied by one SGD step. Flat `(w0, w, V)` layout.
pub fn sample_step_gradient(
    params: &FmParams,
    data: &LabeledData,
    row: usize,
    config: &SolverConfig,
) -> Vec<f64> {
    let p = params.n_features();
    let mut grad = vec![0.0; 1 + p + p * params.rank()];
    let mut q = vec![0.0; params.rank()];
    let (cols, vals) = data.x.row(row);
    let yh = row_state(params, cols, vals, &mut q);
    let y = data.y[row];
    let g = match config.task {
        Task::Classification => -y * sigmoid(-y * yh),
        _ => yh - y,
    };
    add_row_gradient(params, cols, vals, &q, g, &mut grad);
    if config.fit_intercept {
        grad[0] += config.l2_reg_w0 * params.w0;
    } else {
        grad[0] = 0.0;
    }
    for &i in cols {
        grad[1 + i] += config.l2_reg_w * params.w[i];
        for f in 0..params.rank() {
            grad[1 + p + f * p + i] += config.l2_reg_v * params.v_at(f, i);
        }
    }
    grad
}
