//! Runtime-versus-rank measurements.

use std::time::{Duration, Instant};

use crate::als::als_fit;
use crate::error::Result;
use crate::mcmc::mcmc_fit_predict;
use crate::model::{SolverConfig, Task};
use crate::sparse::{LabeledData, SparseRowMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchSolver {
    Als,
    Mcmc,
}

impl BenchSolver {
    pub fn name(self) -> &'static str {
        match self {
            BenchSolver::Als => "als",
            BenchSolver::Mcmc => "mcmc",
        }
    }
}

/// Wall time of one regression fit with `config` (MCMC also predicts
/// `x_test` every iteration).
pub fn time_fit(
    solver: BenchSolver,
    train: &LabeledData,
    x_test: &SparseRowMatrix,
    config: &SolverConfig,
) -> Result<Duration> {
    let config = SolverConfig {
        task: Task::Regression,
        ..config.clone()
    };
    let start = Instant::now();
    match solver {
        BenchSolver::Als => {
            als_fit(train, &config, None)?;
        }
        BenchSolver::Mcmc => {
            mcmc_fit_predict(train, x_test, &config, None)?;
        }
    }
    Ok(start.elapsed())
}

/// One timing sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timing {
    pub solver: BenchSolver,
    pub rank: usize,
    pub repeat: usize,
    pub seconds: f64,
}

/// Times `repeats` fits at every rank, sorted by rank then repeat. The iteration count is
/// `config.n_iter` for every rank.
pub fn rank_sweep(
    solver: BenchSolver,
    train: &LabeledData,
    x_test: &SparseRowMatrix,
    config: &SolverConfig,
    ranks: &[usize],
    repeats: usize,
) -> Result<Vec<Timing>> {
    // Repeats run as full passes over the ranks so a slow spell on the host
    // spreads across ranks instead of shifting one rank's median.
    let mut out = Vec::with_capacity(ranks.len() * repeats);
    for repeat in 0..repeats {
        for &rank in ranks {
            let cfg = SolverConfig {
                rank,
                ..config.clone()
            };
            let seconds = time_fit(solver, train, x_test, &cfg)?.as_secs_f64();
            out.push(Timing {
                solver,
                rank,
                repeat,
                seconds,
            });
        }
    }
    out.sort_by_key(|t| (ranks.iter().position(|&r| r == t.rank), t.repeat));
    Ok(out)
}

pub fn timings_csv(timings: &[Timing]) -> String {
    let mut s = String::from("solver,rank,repeat,seconds\n");
    for t in timings {
        s.push_str(&format!(
            "{},{},{},{:?}\n",
            t.solver.name(),
            t.rank,
            t.repeat,
            t.seconds
        ));
    }
    s
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median seconds per rank, in order of first appearance.
pub fn median_by_rank(timings: &[Timing]) -> Vec<(usize, f64)> {
    let mut ranks: Vec<usize> = Vec::new();
    for t in timings {
        if !ranks.contains(&t.rank) {
            ranks.push(t.rank);
        }
    }
    ranks
        .into_iter()
        .map(|r| {
            let secs: Vec<f64> = timings
                .iter()
                .filter(|t| t.rank == r)
                .map(|t| t.seconds)
                .collect();
            (r, median(&secs))
        })
        .collect()
}

/// Ordinary least squares line with its coefficient of determination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn fit_line(x: &[f64], y: &[f64]) -> LineFit {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = b - (intercept + slope * a);
            r * r
        })
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    LineFit {
        slope,
        intercept,
        r_squared,
    }
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> f64 {
    let n = pred.len().max(1) as f64;
    (pred
        .iter()
        .zip(truth)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
        .sqrt()
}
