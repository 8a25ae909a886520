//! One pass of single-coordinate updates over `w0`, `w` and `V`.
//!
//! The prediction is linear in every scalar parameter `theta`:
//! `y_n = g_n + theta * h_n`, with
//!
//! * `h_n = 1` for `w0`,
//! * `h_n = x_ni` for `w_i`,
//! * `h_n = x_ni * (q_fn - V_fi * x_ni)` for `V_fi`.
//!
//! For each coordinate the sweep hands `(theta, sum h^2, sum h e)` to an
//! update rule (closed-form minimizer for ALS, a Gibbs draw for MCMC) and
//! then patches `y_hat` and `q` in place. Sums only visit rows where
//! `x_ni != 0`, read through the column-major copy of the design matrix.

use crate::model::{FmParams, SampleCaches};
use crate::sparse::SparseColMatrix;

/// Which prior/penalty group a coordinate belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Coord {
    Bias,
    Linear(usize),
    Latent(usize, usize),
}

/// Sufficient statistics for one scalar update.
#[derive(Debug, Clone, Copy)]
pub(crate) struct CoordStats {
    pub theta: f64,
    pub sum_h2: f64,
    pub sum_he: f64,
}

/// Runs one sweep in the fixed order `w0`, `w` ascending, then `V` by factor
/// ascending and feature ascending. `update` returns the new value, or `None`
/// to leave the coordinate untouched. Features absent from every row still
/// reach `update`, with zero statistics.
pub(crate) fn sweep<F>(
    params: &mut FmParams,
    caches: &mut SampleCaches,
    xc: &SparseColMatrix,
    targets: &[f64],
    fit_intercept: bool,
    scratch: &mut Vec<f64>,
    mut update: F,
) where
    F: FnMut(Coord, CoordStats) -> Option<f64>,
{
    let n = caches.n_rows();
    debug_assert_eq!(targets.len(), n);

    if fit_intercept {
        let sum_he: f64 = caches.y_hat.iter().zip(targets).map(|(y, t)| y - t).sum();
        let stats = CoordStats {
            theta: params.w0,
            sum_h2: n as f64,
            sum_he,
        };
        if let Some(new) = update(Coord::Bias, stats) {
            let delta = new - params.w0;
            params.w0 = new;
            caches.y_hat.iter_mut().for_each(|y| *y += delta);
        }
    }

    for i in 0..params.n_features() {
        let (rows, xs) = xc.col(i);
        let (mut sum_h2, mut sum_he) = (0.0, 0.0);
        for (&r, &x) in rows.iter().zip(xs) {
            sum_h2 += x * x;
            sum_he += x * (caches.y_hat[r] - targets[r]);
        }
        let stats = CoordStats {
            theta: params.w[i],
            sum_h2,
            sum_he,
        };
        if let Some(new) = update(Coord::Linear(i), stats) {
            let delta = new - params.w[i];
            params.w[i] = new;
            for (&r, &x) in rows.iter().zip(xs) {
                caches.y_hat[r] += delta * x;
            }
        }
    }

    let p = params.n_features();
    for f in 0..params.rank() {
        let q = &mut caches.q[f * n..(f + 1) * n];
        for i in 0..p {
            let (rows, xs) = xc.col(i);
            let theta = params.v[f * p + i];
            scratch.clear();
            let (mut sum_h2, mut sum_he) = (0.0, 0.0);
            for (&r, &x) in rows.iter().zip(xs) {
                let h = x * (q[r] - theta * x);
                scratch.push(h);
                sum_h2 += h * h;
                sum_he += h * (caches.y_hat[r] - targets[r]);
            }
            let stats = CoordStats {
                theta,
                sum_h2,
                sum_he,
            };
            if let Some(new) = update(Coord::Latent(f, i), stats) {
                let delta = new - theta;
                params.v[f * p + i] = new;
                for ((&r, &x), &h) in rows.iter().zip(xs).zip(scratch.iter()) {
                    caches.y_hat[r] += delta * h;
                    q[r] += delta * x;
                }
            }
        }
    }
}
