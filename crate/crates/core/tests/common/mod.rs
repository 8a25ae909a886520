#![allow(dead_code)]

use fastfm::rng::{rng_from_seed, std_normal, FmRng};
use fastfm::{FmParams, LabeledData, SparseRowMatrix};
use rand::Rng;

/// Dense evaluation of the model straight from its definition, with the
/// pairwise term as an explicit double loop.
pub fn dense_predict(params: &FmParams, row: &[f64]) -> f64 {
    let p = row.len();
    let mut y = params.w0;
    for i in 0..p {
        y += params.w[i] * row[i];
    }
    for i in 0..p {
        for j in i + 1..p {
            let dot: f64 = (0..params.rank())
                .map(|f| params.v_at(f, i) * params.v_at(f, j))
                .sum();
            y += dot * row[i] * row[j];
        }
    }
    y
}

pub fn random_params(rng: &mut FmRng, p: usize, k: usize, scale: f64) -> FmParams {
    let w0 = scale * std_normal(rng);
    let w = (0..p).map(|_| scale * std_normal(rng)).collect();
    let v = (0..p * k).map(|_| scale * std_normal(rng)).collect();
    FmParams::from_parts(w0, w, v, k).unwrap()
}

pub fn random_matrix(rng: &mut FmRng, n: usize, p: usize, density: f64) -> SparseRowMatrix {
    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|_| {
            (0..p)
                .filter_map(|i| (rng.random::<f64>() < density).then(|| (i, std_normal(rng))))
                .collect()
        })
        .collect();
    SparseRowMatrix::from_rows(p, rows).unwrap()
}

pub fn random_regression(seed: u64, n: usize, p: usize, density: f64) -> LabeledData {
    let mut rng = rng_from_seed(seed);
    let x = random_matrix(&mut rng, n, p, density);
    let y = (0..n).map(|_| std_normal(&mut rng)).collect();
    LabeledData::new(x, y).unwrap()
}

pub fn random_binary(seed: u64, n: usize, p: usize, density: f64) -> LabeledData {
    let mut rng = rng_from_seed(seed);
    let x = random_matrix(&mut rng, n, p, density);
    let y = (0..n)
        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect();
    LabeledData::new(x, y).unwrap()
}

/// `|a - b| / max(|b|, 1)`, the relative error used throughout the suite.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// The two-sample OLS toy: x = (1, 2), y = (2, 4).
pub fn ols_toy() -> LabeledData {
    let x = SparseRowMatrix::from_rows(1, [[(0, 1.0)], [(0, 2.0)]]).unwrap();
    LabeledData::new(x, vec![2.0, 4.0]).unwrap()
}
