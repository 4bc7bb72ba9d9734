//! Multiplicative SHAP attributions for two-part models.
//!
//! A two-part model predicts `h(x) = f(x) * g(x)`, e.g. claim frequency times
//! claim severity. Given SHAP explanations of `f` and `g`, [`two_part::combine`]
//! produces locally accurate attributions for `h` without re-explaining it.
//!
//! The crate also carries the machinery used to check and study that
//! composition: an exact interventional Shapley oracle ([`shapley`]), an
//! agreement score between attribution matrices ([`scoring`]), and a
//! simulation and timing harness ([`simulation`]).

pub mod cli;
pub mod config;
pub mod error;
pub mod explanation;
pub mod matrix;
pub mod numeric;
pub mod scoring;
pub mod shapley;
pub mod simulation;
pub mod table;
pub mod two_part;

pub use error::{Error, Result};
pub use explanation::{validate_local_accuracy, Attribution, LocalAccuracyReport, ShapExplanation};
pub use matrix::Matrix;
pub use scoring::{score_matrices, ScoreBreakdown, ScoreParams};
pub use shapley::{
    baseline, exact_shapley, sampling_shapley, BackgroundSet, ExactShapley, FnModel, ModelFunction,
    ProductModel,
};
pub use two_part::{combine, AlphaMethod, MshapExplanation};
