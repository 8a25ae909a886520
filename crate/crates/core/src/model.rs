//! Factorization machine parameters and the prediction kernel.
//!
//! A second-order FM predicts
//!
//! ```text
//! y(x) = w0 + sum_i w_i x_i + sum_{i<j} <v_i, v_j> x_i x_j
//! ```
//!
//! With one-hot user and item indicators the model reduces to biased matrix
//! factorization: `y = w0 + w_user + w_item + <v_user, v_item>`.
//!
//! [`predict`] evaluates the pairwise term in `O(nnz * k)` through
//! `sum_{i<j} <v_i, v_j> x_i x_j = 1/2 sum_f [(sum_i V[f][i] x_i)^2 - sum_i V[f][i]^2 x_i^2]`;
//! [`predict_naive`] is the literal double loop and serves as the reference.

use std::fmt::Write as _;
use std::time::Duration;

use rayon::prelude::*;

use crate::error::{FmError, Result};
use crate::rng::{rng_from_seed, std_normal, FmRng};
use crate::sparse::SparseRowMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Regression,
    Classification,
    Ranking,
}

/// Model state: global bias, first-order weights and latent factors.
///
/// `v` is stored factor-major: entry `(f, i)` lives at `v[f * p + i]`, so one
/// latent dimension is contiguous across all features.
#[derive(Debug, Clone, PartialEq)]
pub struct FmParams {
    pub w0: f64,
    pub w: Vec<f64>,
    pub v: Vec<f64>,
    p: usize,
    k: usize,
}

impl FmParams {
    pub fn zeros(p: usize, k: usize) -> Self {
        FmParams {
            w0: 0.0,
            w: vec![0.0; p],
            v: vec![0.0; p * k],
            p,
            k,
        }
    }

    /// Builds parameters from explicit values; `v` is factor-major `k x p`.
    pub fn from_parts(w0: f64, w: Vec<f64>, v: Vec<f64>, k: usize) -> Result<Self> {
        let p = w.len();
        if v.len() != p * k {
            return Err(FmError::Dimension(format!(
                "V has {} entries, expected {k} x {p}",
                v.len()
            )));
        }
        let params = FmParams { w0, w, v, p, k };
        if !params.is_finite() {
            return Err(FmError::Contract("non-finite parameter".into()));
        }
        Ok(params)
    }

    pub fn n_features(&self) -> usize {
        self.p
    }

    pub fn rank(&self) -> usize {
        self.k
    }

    /// Latent dimension `f` across all features.
    #[inline]
    pub fn factor(&self, f: usize) -> &[f64] {
        &self.v[f * self.p..(f + 1) * self.p]
    }

    #[inline]
    pub fn v_at(&self, f: usize, i: usize) -> f64 {
        self.v[f * self.p + i]
    }

    pub fn is_finite(&self) -> bool {
        self.w0.is_finite()
            && self.w.iter().all(|x| x.is_finite())
            && self.v.iter().all(|x| x.is_finite())
    }

    /// Flat layout `(w0, w, V row-major)`, matching gradient vectors.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(1 + self.p + self.v.len());
        out.push(self.w0);
        out.extend_from_slice(&self.w);
        out.extend_from_slice(&self.v);
        out
    }

    pub fn from_flat(flat: &[f64], p: usize, k: usize) -> Result<Self> {
        if flat.len() != 1 + p + p * k {
            return Err(FmError::Dimension(format!(
                "flat vector of {} for p={p}, k={k}",
                flat.len()
            )));
        }
        Ok(FmParams {
            w0: flat[0],
            w: flat[1..1 + p].to_vec(),
            v: flat[1 + p..].to_vec(),
            p,
            k,
        })
    }

    /// Squared norms `(w0^2, |w|^2, |V|^2)`.
    pub fn squared_norms(&self) -> (f64, f64, f64) {
        (
            self.w0 * self.w0,
            self.w.iter().map(|x| x * x).sum(),
            self.v.iter().map(|x| x * x).sum(),
        )
    }

    pub fn max_abs_diff(&self, other: &FmParams) -> f64 {
        assert_eq!((self.p, self.k), (other.p, other.k));
        self.to_flat()
            .iter()
            .zip(other.to_flat())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Solver knobs shared by ALS, MCMC and SGD.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub rank: usize,
    pub n_iter: usize,
    pub init_std: f64,
    pub l2_reg_w: f64,
    pub l2_reg_v: f64,
    pub l2_reg_w0: f64,
    /// SGD and BPR only.
    pub step_size: f64,
    pub seed: u64,
    pub task: Task,
    /// When false, `w0` is pinned at its initial value and never updated.
    pub fit_intercept: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            rank: 8,
            n_iter: 100,
            init_std: 0.1,
            l2_reg_w: 0.0,
            l2_reg_v: 0.0,
            l2_reg_w0: 0.0,
            step_size: 0.01,
            seed: 0,
            task: Task::Regression,
            fit_intercept: true,
        }
    }
}

impl SolverConfig {
    /// Sets one penalty for both `w` and `V`; `w0` stays unpenalized.
    pub fn with_l2_reg(mut self, l2_reg: f64) -> Self {
        self.l2_reg_w = l2_reg;
        self.l2_reg_v = l2_reg;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("init_std", self.init_std),
            ("l2_reg_w", self.l2_reg_w),
            ("l2_reg_V", self.l2_reg_v),
            ("l2_reg_w0", self.l2_reg_w0),
        ];
        for (name, val) in nonneg {
            if !(val >= 0.0) || !val.is_finite() {
                return Err(FmError::Contract(format!("{name} must be >= 0, got {val}")));
            }
        }
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(FmError::Contract(format!(
                "step_size must be > 0, got {}",
                self.step_size
            )));
        }
        Ok(())
    }
}

/// Per-run training summary.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitReport {
    /// Training objective after each sweep or epoch; solver-specific.
    pub objective_per_iter: Vec<f64>,
    pub n_iter_done: usize,
    pub wall_time: Duration,
}

/// Zero biases and `N(0, init_std^2)` latent factors drawn from `rng`.
pub fn init_params_with(p: usize, rank: usize, init_std: f64, rng: &mut FmRng) -> FmParams {
    let mut params = FmParams::zeros(p, rank);
    if init_std > 0.0 {
        for v in params.v.iter_mut() {
            *v = init_std * std_normal(rng);
        }
    }
    params
}

/// [`init_params_with`] on a generator seeded from `config.seed`.
pub fn init_params(p: usize, config: &SolverConfig) -> FmParams {
    let mut rng = rng_from_seed(config.seed);
    init_params_with(p, config.rank, config.init_std, &mut rng)
}

/// Literal double-loop evaluation of the model equation for one sparse row.
pub fn predict_naive(params: &FmParams, cols: &[usize], vals: &[f64]) -> f64 {
    assert!(
        cols.iter().all(|&c| c < params.p),
        "feature index out of range"
    );
    let mut y = params.w0;
    for (&i, &xi) in cols.iter().zip(vals) {
        y += params.w[i] * xi;
    }
    for a in 0..cols.len() {
        for b in a + 1..cols.len() {
            let (i, j) = (cols[a], cols[b]);
            let dot: f64 = (0..params.k)
                .map(|f| params.v_at(f, i) * params.v_at(f, j))
                .sum();
            y += dot * vals[a] * vals[b];
        }
    }
    y
}

#[inline]
pub(crate) fn predict_row(params: &FmParams, cols: &[usize], vals: &[f64]) -> f64 {
    let mut y = params.w0;
    for (&i, &xi) in cols.iter().zip(vals) {
        y += params.w[i] * xi;
    }
    let mut pair = 0.0;
    for f in 0..params.k {
        let vf = params.factor(f);
        let (mut s, mut s2) = (0.0, 0.0);
        for (&i, &xi) in cols.iter().zip(vals) {
            let t = vf[i] * xi;
            s += t;
            s2 += t * t;
        }
        pair += s * s - s2;
    }
    y + 0.5 * pair
}

fn check_width(params: &FmParams, x: &SparseRowMatrix) -> Result<()> {
    if x.n_cols() > params.p {
        return Err(FmError::Dimension(format!(
            "data has {} columns, model has {} features",
            x.n_cols(),
            params.p
        )));
    }
    Ok(())
}

/// Model output for every row of `x`.
pub fn predict(params: &FmParams, x: &SparseRowMatrix) -> Result<Vec<f64>> {
    check_width(params, x)?;
    Ok((0..x.n_rows())
        .map(|r| {
            let (c, v) = x.row(r);
            predict_row(params, c, v)
        })
        .collect())
}

/// [`predict`] split across `threads` worker threads. Each row is computed
/// exactly as in the serial path, so results are bit-identical.
pub fn predict_parallel(
    params: &FmParams,
    x: &SparseRowMatrix,
    threads: usize,
) -> Result<Vec<f64>> {
    if threads <= 1 {
        return predict(params, x);
    }
    check_width(params, x)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| FmError::Contract(format!("thread pool: {e}")))?;
    Ok(pool.install(|| {
        (0..x.n_rows())
            .into_par_iter()
            .map(|r| {
                let (c, v) = x.row(r);
                predict_row(params, c, v)
            })
            .collect()
    }))
}

/// Current predictions and per-factor row sums over the training rows.
///
/// `q[f * n + row] = sum_i V[f][i] * x_row[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleCaches {
    pub y_hat: Vec<f64>,
    pub q: Vec<f64>,
    n: usize,
}

impl SampleCaches {
    pub fn n_rows(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn q_factor(&self, f: usize) -> &[f64] {
        &self.q[f * self.n..(f + 1) * self.n]
    }

    /// Largest deviation of `self` from `reference`, relative to
    /// `max(|reference|, 1)` per entry.
    pub fn max_deviation(&self, reference: &SampleCaches) -> f64 {
        self.y_hat
            .iter()
            .zip(&reference.y_hat)
            .chain(self.q.iter().zip(&reference.q))
            .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
            .fold(0.0, f64::max)
    }
}

pub fn build_caches(params: &FmParams, x: &SparseRowMatrix) -> Result<SampleCaches> {
    check_width(params, x)?;
    let n = x.n_rows();
    let mut q = vec![0.0; params.k * n];
    let mut y_hat = Vec::with_capacity(n);
    for r in 0..n {
        let (cols, vals) = x.row(r);
        y_hat.push(predict_row(params, cols, vals));
        for f in 0..params.k {
            let vf = params.factor(f);
            q[f * n + r] = cols.iter().zip(vals).map(|(&i, &xi)| vf[i] * xi).sum();
        }
    }
    Ok(SampleCaches { y_hat, q, n })
}

const MODEL_HEADER: &str = "fastfm-model v1";

/// Renders the line-oriented model file:
///
/// ```text
/// fastfm-model v1
/// p <features>
/// k <rank>
/// w0 <bias>
/// w <p values>
/// V <p values>      (k lines, one per latent dimension)
/// ```
///
/// Numbers use the shortest decimal that parses back to the same bits.
pub fn save_model(params: &FmParams) -> String {
    let mut s = String::new();
    writeln!(s, "{MODEL_HEADER}").unwrap();
    writeln!(s, "p {}", params.p).unwrap();
    writeln!(s, "k {}", params.k).unwrap();
    writeln!(s, "w0 {:?}", params.w0).unwrap();
    s.push('w');
    for x in &params.w {
        write!(s, " {x:?}").unwrap();
    }
    s.push('\n');
    for f in 0..params.k {
        s.push('V');
        for x in params.factor(f) {
            write!(s, " {x:?}").unwrap();
        }
        s.push('\n');
    }
    s
}

fn parse_section<'a>(
    lines: &mut impl Iterator<Item = &'a str>,
    name: &str,
) -> Result<Vec<&'a str>> {
    let line = lines
        .next()
        .ok_or_else(|| FmError::ModelFormat(format!("missing section `{name}`")))?;
    let mut toks = line.split_whitespace();
    match toks.next() {
        Some(t) if t == name => Ok(toks.collect()),
        other => Err(FmError::ModelFormat(format!(
            "expected section `{name}`, found `{}`",
            other.unwrap_or("")
        ))),
    }
}

fn parse_real(tok: &str, section: &str) -> Result<f64> {
    let x: f64 = tok
        .parse()
        .map_err(|_| FmError::ModelFormat(format!("bad number {tok:?} in `{section}`")))?;
    if !x.is_finite() {
        return Err(FmError::ModelFormat(format!(
            "non-finite entry in `{section}`"
        )));
    }
    Ok(x)
}

fn parse_count(toks: &[&str], section: &str) -> Result<usize> {
    match toks {
        [t] => t
            .parse()
            .map_err(|_| FmError::ModelFormat(format!("bad count {t:?} in `{section}`"))),
        _ => Err(FmError::ModelFormat(format!("`{section}` takes one value"))),
    }
}

pub fn load_model(text: &str) -> Result<FmParams> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next().map(str::trim) {
        Some(MODEL_HEADER) => {}
        Some(h) if h.starts_with("fastfm-model") => {
            return Err(FmError::ModelFormat(format!("unsupported version `{h}`")))
        }
        _ => return Err(FmError::ModelFormat("missing header".into())),
    }
    let p = parse_count(&parse_section(&mut lines, "p")?, "p")?;
    let k = parse_count(&parse_section(&mut lines, "k")?, "k")?;
    let w0_toks = parse_section(&mut lines, "w0")?;
    if w0_toks.len() != 1 {
        return Err(FmError::ModelFormat("`w0` takes one value".into()));
    }
    let w0 = parse_real(w0_toks[0], "w0")?;
    let w = parse_section(&mut lines, "w")?
        .into_iter()
        .map(|t| parse_real(t, "w"))
        .collect::<Result<Vec<_>>>()?;
    if w.len() != p {
        return Err(FmError::ModelFormat(format!(
            "`w` has {} values, p = {p}",
            w.len()
        )));
    }
    let mut v = Vec::with_capacity(p * k);
    for f in 0..k {
        let row = parse_section(&mut lines, "V")
            .map_err(|e| FmError::ModelFormat(format!("{e} (latent row {f} of {k})")))?;
        if row.len() != p {
            return Err(FmError::ModelFormat(format!(
                "`V` row {f} has {} values, p = {p}",
                row.len()
            )));
        }
        for t in row {
            v.push(parse_real(t, "V")?);
        }
    }
    if let Some(extra) = lines.next() {
        return Err(FmError::ModelFormat(format!("trailing content `{extra}`")));
    }
    Ok(FmParams { w0, w, v, p, k })
}
