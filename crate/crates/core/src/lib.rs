//! Factorization machines over sparse design matrices.
//!
//! The crate provides the model equation ([`model`]), three families of
//! solvers and the harnesses used to validate them:
//!
//! | task           | solvers            | loss                              |
//! |----------------|--------------------|-----------------------------------|
//! | regression     | [`als`], [`mcmc`], [`sgd`] | squared loss              |
//! | classification | [`als`], [`mcmc`], [`sgd`] | probit (MAP), probit, sigmoid |
//! | ranking        | [`sgd`] (BPR)      | pairwise `ln sigmoid`             |
//!
//! Features always arrive as a [`SparseRowMatrix`]; see [`sparse`] for the
//! libsvm reader.

pub mod als;
pub mod bench;
pub mod diagnostics;
pub mod error;
pub mod mcmc;
pub mod model;
pub mod probit;
pub mod rng;
pub mod sgd;
pub mod sparse;
mod sweep;
pub mod synth;

pub use als::{als_continue, als_fit, als_fit_classification, AlsFit};
pub use error::{FmError, Result};
pub use mcmc::{mcmc_fit_predict, mcmc_fit_predict_classification, McmcOutput, McmcState};
pub use model::{
    build_caches, init_params, load_model, predict, predict_naive, save_model, FitReport, FmParams,
    SampleCaches, SolverConfig, Task,
};
pub use sgd::{bpr_fit, loss_gradient, sgd_fit, RankingPairs};
pub use sparse::{parse_libsvm, LabeledData, LibsvmOptions, SparseColMatrix, SparseRowMatrix};
