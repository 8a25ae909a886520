//! Synthetic data sets with known ground truth.

use rand::seq::index;
use rand::seq::SliceRandom;

use crate::error::Result;
use crate::rng::{rng_from_seed, std_normal};
use crate::sgd::RankingPairs;
use crate::sparse::{LabeledData, SparseRowMatrix};

/// Shape of a one-hot matrix factorization data set.
#[derive(Debug, Clone, PartialEq)]
pub struct MfSpec {
    pub n_users: usize,
    pub n_items: usize,
    pub n_ratings: usize,
    pub rank: usize,
    pub noise_sd: f64,
    /// Global offset added to every rating.
    pub global_mean: f64,
    /// Spread of the user and item biases.
    pub bias_sd: f64,
    pub seed: u64,
}

impl Default for MfSpec {
    fn default() -> Self {
        MfSpec {
            n_users: 100,
            n_items: 50,
            n_ratings: 2000,
            rank: 2,
            noise_sd: 0.0,
            global_mean: 3.0,
            bias_sd: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MfData {
    /// Rows are `[user one-hot | item one-hot]`; columns `0..n_users` are
    /// users, the rest items.
    pub data: LabeledData,
    /// Noise-free ratings.
    pub truth: Vec<f64>,
}

/// Biased low-rank ratings on distinct random (user, item) cells, rows sorted
/// by user then item. Latent entries are `N(0, rank^-1/2)` so the interaction
/// term has unit variance.
pub fn one_hot_mf(spec: &MfSpec) -> Result<MfData> {
    let mut rng = rng_from_seed(spec.seed);
    let (nu, ni, k) = (spec.n_users, spec.n_items, spec.rank);
    let user_bias: Vec<f64> = (0..nu)
        .map(|_| spec.bias_sd * std_normal(&mut rng))
        .collect();
    let item_bias: Vec<f64> = (0..ni)
        .map(|_| spec.bias_sd * std_normal(&mut rng))
        .collect();
    let sd = if k > 0 { (k as f64).powf(-0.25) } else { 0.0 };
    let u: Vec<f64> = (0..nu * k).map(|_| sd * std_normal(&mut rng)).collect();
    let v: Vec<f64> = (0..ni * k).map(|_| sd * std_normal(&mut rng)).collect();

    let total = nu * ni;
    let n = spec.n_ratings.min(total);
    let mut cells = index::sample(&mut rng, total, n).into_vec();
    cells.sort_unstable();

    let mut rows = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for cell in cells {
        let (a, b) = (cell / ni, cell % ni);
        let dot: f64 = (0..k).map(|f| u[a * k + f] * v[b * k + f]).sum();
        let t = spec.global_mean + user_bias[a] + item_bias[b] + dot;
        truth.push(t);
        y.push(t + spec.noise_sd * std_normal(&mut rng));
        rows.push([(a, 1.0), (nu + b, 1.0)]);
    }
    let x = SparseRowMatrix::from_rows(nu + ni, rows)?;
    Ok(MfData {
        data: LabeledData::new(x, y)?,
        truth,
    })
}

/// Random split; returns `(train, test)` with `round(n * test_fraction)` test
/// rows. Both keep the full column count.
pub fn train_test_split(
    data: &LabeledData,
    test_fraction: f64,
    seed: u64,
) -> (LabeledData, LabeledData) {
    let mut rng = rng_from_seed(seed);
    let mut order: Vec<usize> = (0..data.n_rows()).collect();
    order.shuffle(&mut rng);
    let n_test = (data.n_rows() as f64 * test_fraction).round() as usize;
    let (test, train) = order.split_at(n_test);
    let (mut train, mut test) = (train.to_vec(), test.to_vec());
    train.sort_unstable();
    test.sort_unstable();
    (data.select_rows(&train), data.select_rows(&test))
}

/// Ranking toy: item `i` is the one-hot row `i`, its utility a standard
/// normal score, and the pairs are every correctly ordered item pair.
#[derive(Debug, Clone)]
pub struct RankingToy {
    pub x: SparseRowMatrix,
    pub pairs: RankingPairs,
    pub scores: Vec<f64>,
}

pub fn ranking_toy(n_items: usize, seed: u64) -> Result<RankingToy> {
    let mut rng = rng_from_seed(seed);
    let scores: Vec<f64> = (0..n_items).map(|_| std_normal(&mut rng)).collect();
    let x = SparseRowMatrix::from_rows(n_items, (0..n_items).map(|i| [(i, 1.0)]))?;
    let mut pairs = Vec::new();
    for a in 0..n_items {
        for b in 0..n_items {
            if scores[a] > scores[b] {
                pairs.push((a, b));
            }
        }
    }
    Ok(RankingToy {
        x,
        pairs: RankingPairs::new(pairs, n_items)?,
        scores,
    })
}

/// Two Gaussian blobs in two dense features, separated by a margin along the
/// first feature; labels are the sign of the first feature.
pub fn separable_toy(n: usize, seed: u64) -> Result<LabeledData> {
    let mut rng = rng_from_seed(seed);
    let mut rows = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for r in 0..n {
        let label = if r % 2 == 0 { 1.0 } else { -1.0 };
        let a = label * (1.0 + 0.5 * std_normal(&mut rng).abs());
        let b = std_normal(&mut rng);
        rows.push([(0, a), (1, b)]);
        y.push(label);
    }
    LabeledData::new(SparseRowMatrix::from_rows(2, rows)?, y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mf_shape_and_determinism() {
        let spec = MfSpec::default();
        let a = one_hot_mf(&spec).unwrap();
        assert_eq!(a.data.n_rows(), 2000);
        assert_eq!(a.data.x.n_cols(), 150);
        assert_eq!(a.data.x.nnz(), 4000);
        assert_eq!(a.data.y, a.truth);
        let b = one_hot_mf(&spec).unwrap();
        assert_eq!(a.data, b.data);
        let (tr, te) = train_test_split(&a.data, 0.1, 1);
        assert_eq!((tr.n_rows(), te.n_rows()), (1800, 200));
        assert_eq!(tr.x.n_cols(), 150);
    }

    #[test]
    fn ranking_pairs_are_ordered() {
        let toy = ranking_toy(20, 3).unwrap();
        assert_eq!(toy.pairs.len(), 190);
        assert!(toy
            .pairs
            .as_slice()
            .iter()
            .all(|&(a, b)| toy.scores[a] > toy.scores[b]));
    }
}
