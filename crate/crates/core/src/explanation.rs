//! Attribution containers and the local accuracy validator.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::numeric::compensated_sum;

/// Anything that decomposes per-row predictions into a baseline plus
/// per-feature contributions.
pub trait Attribution {
    fn values(&self) -> &Matrix;
    fn baseline(&self) -> f64;
    fn predictions(&self) -> &[f64];
}

/// Per-feature SHAP contributions for one model, `n` rows by `p` features.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapExplanation {
    values: Matrix,
    baseline: f64,
    predictions: Vec<f64>,
    feature_names: Option<Vec<String>>,
}

impl ShapExplanation {
    pub fn new(
        values: Matrix,
        baseline: f64,
        predictions: Vec<f64>,
        feature_names: Option<Vec<String>>,
    ) -> Result<Self> {
        let (n, p) = values.shape();
        if n == 0 || p == 0 {
            return Err(Error::dim(format!(
                "explanation needs at least one row and one feature, got {n}x{p}"
            )));
        }
        if predictions.len() != n {
            return Err(Error::dim(format!(
                "{} predictions for {n} rows",
                predictions.len()
            )));
        }
        if let Some(names) = &feature_names {
            if names.len() != p {
                return Err(Error::dim(format!(
                    "{} feature names for {p} columns",
                    names.len()
                )));
            }
        }
        Ok(Self {
            values,
            baseline,
            predictions,
            feature_names,
        })
    }

    /// Builds an explanation whose predictions are reconstructed as
    /// `baseline + row sum`, for inputs that carry no prediction column.
    pub fn from_values(
        values: Matrix,
        baseline: f64,
        feature_names: Option<Vec<String>>,
    ) -> Result<Self> {
        let predictions = values
            .iter_rows()
            .map(|r| baseline + compensated_sum(r.iter().copied()))
            .collect();
        Self::new(values, baseline, predictions, feature_names)
    }

    pub fn n_rows(&self) -> usize {
        self.values.rows()
    }

    pub fn n_features(&self) -> usize {
        self.values.cols()
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    pub fn into_parts(self) -> (Matrix, f64, Vec<f64>, Option<Vec<String>>) {
        (
            self.values,
            self.baseline,
            self.predictions,
            self.feature_names,
        )
    }
}

impl Attribution for ShapExplanation {
    fn values(&self) -> &Matrix {
        &self.values
    }
    fn baseline(&self) -> f64 {
        self.baseline
    }
    fn predictions(&self) -> &[f64] {
        &self.predictions
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalAccuracyReport {
    pub tolerance: f64,
    /// `|prediction - baseline - row sum|` per row.
    pub residuals: Vec<f64>,
    pub passed: Vec<bool>,
    pub max_residual: f64,
    /// Row with the largest residual relative to its allowance.
    pub worst_row: usize,
}

impl LocalAccuracyReport {
    pub fn all_passed(&self) -> bool {
        self.passed.iter().all(|&p| p)
    }

    pub fn failures(&self) -> impl Iterator<Item = usize> + '_ {
        self.passed
            .iter()
            .enumerate()
            .filter_map(|(i, &ok)| (!ok).then_some(i))
    }

    /// Converts a failing report into an error naming the worst row.
    pub fn into_result(self, what: &str) -> Result<Self> {
        if self.all_passed() {
            Ok(self)
        } else {
            Err(Error::LocalAccuracy {
                what: what.to_string(),
                row: self.worst_row,
                residual: self.residuals[self.worst_row],
                tolerance: self.tolerance,
            })
        }
    }
}

/// Row `i` passes iff `|pred_i - baseline - sum_j values_ij| <= tol_rel * max(1, |pred_i|)`.
pub fn validate_local_accuracy<A: Attribution + ?Sized>(
    expl: &A,
    tol_rel: f64,
) -> LocalAccuracyReport {
    let values = expl.values();
    let baseline = expl.baseline();
    let mut residuals = Vec::with_capacity(values.rows());
    let mut passed = Vec::with_capacity(values.rows());
    let mut worst = (0, f64::NEG_INFINITY);
    for (i, (row, &pred)) in values.iter_rows().zip(expl.predictions()).enumerate() {
        let total = compensated_sum(std::iter::once(baseline).chain(row.iter().copied()));
        let residual = (pred - total).abs();
        let allowance = tol_rel * pred.abs().max(1.0);
        let ok = residual <= allowance;
        let ratio = if residual.is_nan() {
            f64::INFINITY
        } else {
            residual / allowance
        };
        if ratio > worst.1 {
            worst = (i, ratio);
        }
        residuals.push(residual);
        passed.push(ok);
    }
    let max_residual = residuals.iter().copied().fold(0.0, f64::max);
    LocalAccuracyReport {
        tolerance: tol_rel,
        residuals,
        passed,
        max_residual,
        worst_row: worst.0,
    }
}
