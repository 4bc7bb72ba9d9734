//! Composition of part explanations into an explanation of their product.
//!
//! For row `i` with part attributions `s_x`, `s_y` and part baselines
//! `mu_f`, `mu_g`, the product prediction expands as
//!
//! ```text
//! x_hat * y_hat = mu_f * mu_g + sum_j s'_j
//! s'_j = mu_f * s_y[j] + s_x[j] * mu_g + 1/2 * sum_a (s_x[j] * s_y[a] + s_y[j] * s_x[a])
//! ```
//!
//! Re-basing on the product baseline `mu_h` leaves a remainder
//! `alpha = mu_f * mu_g - mu_h` which is spread over the features by one of
//! the [`AlphaMethod`] weightings. Every weighting sums to one, so
//! `z_hat = mu_h + sum_j s_z[j]` holds row by row.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explanation::{validate_local_accuracy, Attribution, ShapExplanation};
use crate::matrix::Matrix;
use crate::numeric::compensated_sum;

/// Local accuracy tolerance applied to part explanations entering [`combine`].
pub const INPUT_TOLERANCE: f64 = 1e-6;

const DEGENERATE: f64 = 1e-12;

/// Rule for spreading `alpha` across the features of a row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AlphaMethod {
    /// `w_j = 1 / p`
    #[serde(rename = "uniform")]
    Uniform,
    /// `w_j = s'_j / sum_k s'_k`
    #[serde(rename = "raw")]
    RawWeights,
    /// `w_j = |s'_j| / sum_k |s'_k|`
    #[serde(rename = "absolute")]
    AbsoluteWeights,
    /// `w_j = s'_j^2 / sum_k s'_k^2`
    #[serde(rename = "squared")]
    SquaredWeights,
}

impl AlphaMethod {
    pub const ALL: [AlphaMethod; 4] = [
        AlphaMethod::Uniform,
        AlphaMethod::RawWeights,
        AlphaMethod::AbsoluteWeights,
        AlphaMethod::SquaredWeights,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AlphaMethod::Uniform => "uniform",
            AlphaMethod::RawWeights => "raw",
            AlphaMethod::AbsoluteWeights => "absolute",
            AlphaMethod::SquaredWeights => "squared",
        }
    }
}

impl fmt::Display for AlphaMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AlphaMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AlphaMethod::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::InvalidInput(format!(
                    "unknown alpha method {s:?}, expected one of uniform, raw, absolute, squared"
                ))
            })
    }
}

/// Attributions of the product model `h = f * g`.
#[derive(Debug, Clone, PartialEq)]
pub struct MshapExplanation {
    pub values: Matrix,
    pub mu_h: f64,
    pub mu_f: f64,
    pub mu_g: f64,
    pub alpha: f64,
    pub method: AlphaMethod,
    pub feature_names: Option<Vec<String>>,
    /// `x_hat * y_hat` per row.
    pub predictions: Vec<f64>,
    /// Rows whose weighting was degenerate and fell back to uniform.
    pub fallback_rows: Vec<usize>,
}

impl Attribution for MshapExplanation {
    fn values(&self) -> &Matrix {
        &self.values
    }
    fn baseline(&self) -> f64 {
        self.mu_h
    }
    fn predictions(&self) -> &[f64] {
        &self.predictions
    }
}

/// Pre-correction attribution `s'` for one row.
pub fn mshap_prime(sx_row: &[f64], sy_row: &[f64], mu_f: f64, mu_g: f64) -> Result<Vec<f64>> {
    if sx_row.len() != sy_row.len() || sx_row.is_empty() {
        return Err(Error::dim(format!(
            "part rows have {} and {} features",
            sx_row.len(),
            sy_row.len()
        )));
    }
    let sum_x = compensated_sum(sx_row.iter().copied());
    let sum_y = compensated_sum(sy_row.iter().copied());
    Ok(sx_row
        .iter()
        .zip(sy_row)
        .map(|(&sx, &sy)| mu_f * sy + sx * mu_g + 0.5 * (sx * sum_y + sy * sum_x))
        .collect())
}

pub fn compute_alpha(mu_f: f64, mu_g: f64, mu_h: f64) -> f64 {
    mu_f * mu_g - mu_h
}

/// Mean of the elementwise products of two prediction vectors.
pub fn mean_product_baseline(preds_f: &[f64], preds_g: &[f64]) -> Result<f64> {
    if preds_f.len() != preds_g.len() || preds_f.is_empty() {
        return Err(Error::dim(format!(
            "prediction vectors have lengths {} and {}",
            preds_f.len(),
            preds_g.len()
        )));
    }
    let total = compensated_sum(preds_f.iter().zip(preds_g).map(|(a, b)| a * b));
    Ok(total / preds_f.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaSplit {
    pub values: Vec<f64>,
    /// The requested weighting was degenerate and uniform was used instead.
    pub fallback: bool,
}

/// Per-feature weights for spreading alpha; the flag is set when the
/// requested weighting was degenerate and uniform weights were substituted.
///
/// The raw weighting normalises by `sum_k s'_k`, which equals
/// `z_hat - mu_f_mu_g` for locally accurate inputs; `z_hat` and `mu_f_mu_g`
/// only feed the degeneracy test.
pub fn alpha_weights(
    s_prime: &[f64],
    method: AlphaMethod,
    z_hat: f64,
    mu_f_mu_g: f64,
) -> (Vec<f64>, bool) {
    let p = s_prime.len();
    let uniform = || vec![1.0 / p as f64; p];
    let normalise = |weight: fn(f64) -> f64, whole: f64| {
        s_prime
            .iter()
            .map(|&s| weight(s) / whole)
            .collect::<Vec<_>>()
    };
    match method {
        AlphaMethod::Uniform => (uniform(), false),
        AlphaMethod::RawWeights => {
            let whole = compensated_sum(s_prime.iter().copied());
            let scale = z_hat.abs().max(1.0);
            if whole.abs() < DEGENERATE * scale || (z_hat - mu_f_mu_g).abs() < DEGENERATE * scale {
                (uniform(), true)
            } else {
                (normalise(|s| s, whole), false)
            }
        }
        AlphaMethod::AbsoluteWeights => {
            let whole = compensated_sum(s_prime.iter().map(|s| s.abs()));
            if whole < DEGENERATE {
                (uniform(), true)
            } else {
                (normalise(f64::abs, whole), false)
            }
        }
        AlphaMethod::SquaredWeights => {
            let whole = compensated_sum(s_prime.iter().map(|s| s * s));
            if whole < DEGENERATE {
                (uniform(), true)
            } else {
                (normalise(|s| s * s, whole), false)
            }
        }
    }
}

/// Adds `w_j * alpha` to each `s'_j`, with weights from [`alpha_weights`].
pub fn distribute_alpha(
    s_prime: &[f64],
    alpha: f64,
    method: AlphaMethod,
    z_hat: f64,
    mu_f_mu_g: f64,
) -> AlphaSplit {
    let (weights, fallback) = alpha_weights(s_prime, method, z_hat, mu_f_mu_g);
    let mut values: Vec<f64> = s_prime
        .iter()
        .zip(&weights)
        .map(|(s, w)| s + w * alpha)
        .collect();
    absorb_rounding(&mut values, s_prime, alpha);
    AlphaSplit { values, fallback }
}

/// Pushes the rounding left over from `s' + w * alpha` back into the
/// nonzero entries, largest first, so the stored row sums to
/// `sum s' + alpha` as closely as f64 allows. Raw weights on a row whose
/// `s'` nearly cancels produce entries far larger than the row total, and
/// without this step their rounding alone can swamp the total.
fn absorb_rounding(values: &mut [f64], s_prime: &[f64], alpha: f64) {
    let residual = |v: &[f64]| {
        compensated_sum(
            s_prime
                .iter()
                .copied()
                .chain([alpha])
                .chain(v.iter().map(|x| -x)),
        )
    };
    let mut order: Vec<usize> = (0..values.len()).filter(|&j| values[j] != 0.0).collect();
    order.sort_by(|&a, &b| values[b].abs().total_cmp(&values[a].abs()));
    let mut r = residual(values);
    // one or two steps settle almost every row; the cap bounds the cost
    for j in order.into_iter().take(4) {
        if r == 0.0 || !r.is_finite() {
            break;
        }
        values[j] += r;
        r = residual(values);
    }
}

/// Checks that the two explanations describe the same features in the same
/// order. Names are compared when both sides carry them; otherwise columns
/// are matched by position.
pub fn check_alignment(f: &ShapExplanation, g: &ShapExplanation) -> Result<()> {
    if f.n_rows() != g.n_rows() || f.n_features() != g.n_features() {
        return Err(Error::dim(format!(
            "part explanations are {}x{} and {}x{}",
            f.n_rows(),
            f.n_features(),
            g.n_rows(),
            g.n_features()
        )));
    }
    if let (Some(a), Some(b)) = (f.feature_names(), g.feature_names()) {
        if let Some((j, (x, y))) = a.iter().zip(b).enumerate().find(|(_, (x, y))| x != y) {
            return Err(Error::dim(format!(
                "feature column {} differs: {x:?} vs {y:?}",
                j + 1
            )));
        }
    }
    Ok(())
}

/// Explains `h = f * g` from explanations of `f` and `g`.
///
/// `mu_h` is the product model's baseline, usually the training-set mean of
/// `f * g` (see [`mean_product_baseline`]).
pub fn combine(
    expl_f: &ShapExplanation,
    expl_g: &ShapExplanation,
    mu_h: f64,
    method: AlphaMethod,
) -> Result<MshapExplanation> {
    check_alignment(expl_f, expl_g)?;
    validate_local_accuracy(expl_f, INPUT_TOLERANCE).into_result("f explanation")?;
    validate_local_accuracy(expl_g, INPUT_TOLERANCE).into_result("g explanation")?;

    let mu_f = expl_f.baseline();
    let mu_g = expl_g.baseline();
    let mu_f_mu_g = mu_f * mu_g;
    let alpha = compute_alpha(mu_f, mu_g, mu_h);
    let (n, p) = expl_f.values().shape();

    let rows: Vec<(Vec<f64>, f64, bool)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let s_prime = mshap_prime(expl_f.values().row(i), expl_g.values().row(i), mu_f, mu_g)?;
            let z_hat = expl_f.predictions()[i] * expl_g.predictions()[i];
            let split = distribute_alpha(&s_prime, alpha, method, z_hat, mu_f_mu_g);
            Ok((split.values, z_hat, split.fallback))
        })
        .collect::<Result<_>>()?;

    let mut values = Matrix::zeros(n, p);
    let mut predictions = Vec::with_capacity(n);
    let mut fallback_rows = Vec::new();
    for (i, (row, z_hat, fell_back)) in rows.into_iter().enumerate() {
        values.row_mut(i).copy_from_slice(&row);
        predictions.push(z_hat);
        if fell_back {
            fallback_rows.push(i);
        }
    }
    let feature_names = expl_f
        .feature_names()
        .or(expl_g.feature_names())
        .map(<[String]>::to_vec);
    Ok(MshapExplanation {
        values,
        mu_h,
        mu_f,
        mu_g,
        alpha,
        method,
        feature_names,
        predictions,
        fallback_rows,
    })
}

/// Weighted sum of attribution matrices and their baselines.
pub fn linear_combine(parts: &[(f64, &Matrix, f64)]) -> Result<(Matrix, f64)> {
    let Some(&(_, first, _)) = parts.first() else {
        return Err(Error::InvalidInput("no parts to combine".into()));
    };
    let shape = first.shape();
    if let Some((k, (_, m, _))) = parts
        .iter()
        .enumerate()
        .find(|(_, (_, m, _))| m.shape() != shape)
    {
        return Err(Error::dim(format!(
            "part {k} is {}x{}, expected {}x{}",
            m.rows(),
            m.cols(),
            shape.0,
            shape.1
        )));
    }
    let mut out = Matrix::zeros(shape.0, shape.1);
    for i in 0..shape.0 {
        for j in 0..shape.1 {
            out.set(
                i,
                j,
                compensated_sum(parts.iter().map(|(w, m, _)| w * m.get(i, j))),
            );
        }
    }
    let baseline = compensated_sum(parts.iter().map(|(w, _, b)| w * b));
    Ok((out, baseline))
}

/// [`linear_combine`] over whole explanations, carrying predictions along.
pub fn linear_combine_explanations<A: Attribution>(parts: &[(f64, &A)]) -> Result<ShapExplanation> {
    let matrices: Vec<(f64, &Matrix, f64)> = parts
        .iter()
        .map(|(w, a)| (*w, a.values(), a.baseline()))
        .collect();
    let (values, baseline) = linear_combine(&matrices)?;
    let predictions = (0..values.rows())
        .map(|i| compensated_sum(parts.iter().map(|(w, a)| w * a.predictions()[i])))
        .collect();
    ShapExplanation::new(values, baseline, predictions, None)
}
