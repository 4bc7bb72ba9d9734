use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::shapley::ModelFunction;

/// Rows whose Y2E/Y2F denominator is smaller than this are redrawn.
pub const DENOMINATOR_GUARD: f64 = 1e-3;
pub const MAX_RESAMPLES: usize = 100;

/// Analytic response surfaces of the simulation study. All read only the
/// first three covariates; any further covariates are inert.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ResponseFunction {
    /// `x1 + x2 + x3`
    #[serde(rename = "Y1A")]
    Y1A,
    /// `2 x1 + 2 x2 + 3 x3`
    #[serde(rename = "Y1B")]
    Y1B,
    /// `x1 + x2 + x3`
    #[serde(rename = "Y2A")]
    Y2A,
    /// `2 x1 + 2 x2 + 3 x3`
    #[serde(rename = "Y2B")]
    Y2B,
    /// `x1 x2 x3`
    #[serde(rename = "Y2C")]
    Y2C,
    /// `x1^2 x2^3 x3^4`
    #[serde(rename = "Y2D")]
    Y2D,
    /// `(x1 + x2) / (x1 + x2 + x3)`
    #[serde(rename = "Y2E")]
    Y2E,
    /// `x1 x2 / (x1 + x1 x2 + x1^2 x3^2)`
    #[serde(rename = "Y2F")]
    Y2F,
    /// Constant 1; a control second part that makes the product equal the first.
    #[serde(rename = "ONE")]
    Unit,
}

impl ResponseFunction {
    pub const FIRST_PARTS: [ResponseFunction; 2] = [ResponseFunction::Y1A, ResponseFunction::Y1B];
    pub const SECOND_PARTS: [ResponseFunction; 6] = [
        ResponseFunction::Y2A,
        ResponseFunction::Y2B,
        ResponseFunction::Y2C,
        ResponseFunction::Y2D,
        ResponseFunction::Y2E,
        ResponseFunction::Y2F,
    ];

    pub fn id(self) -> &'static str {
        use ResponseFunction::*;
        match self {
            Y1A => "Y1A",
            Y1B => "Y1B",
            Y2A => "Y2A",
            Y2B => "Y2B",
            Y2C => "Y2C",
            Y2D => "Y2D",
            Y2E => "Y2E",
            Y2F => "Y2F",
            Unit => "ONE",
        }
    }

    /// Features read by the formula.
    pub fn min_arity(self) -> usize {
        match self {
            ResponseFunction::Unit => 1,
            _ => 3,
        }
    }

    pub fn denominator(self, x: &[f64]) -> Option<f64> {
        match self {
            ResponseFunction::Y2E => Some(x[0] + x[1] + x[2]),
            ResponseFunction::Y2F => Some(x[0] + x[0] * x[1] + x[0] * x[0] * x[2] * x[2]),
            _ => None,
        }
    }

    /// Unguarded formula evaluation.
    pub fn eval(self, x: &[f64]) -> f64 {
        use ResponseFunction::*;
        match self {
            Y1A | Y2A => x[0] + x[1] + x[2],
            Y1B | Y2B => 2.0 * x[0] + 2.0 * x[1] + 3.0 * x[2],
            Y2C => x[0] * x[1] * x[2],
            Y2D => x[0].powi(2) * x[1].powi(3) * x[2].powi(4),
            Y2E => (x[0] + x[1]) / (x[0] + x[1] + x[2]),
            Y2F => x[0] * x[1] / (x[0] + x[0] * x[1] + x[0] * x[0] * x[2] * x[2]),
            Unit => 1.0,
        }
    }
}

impl fmt::Display for ResponseFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for ResponseFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ResponseFunction::FIRST_PARTS
            .into_iter()
            .chain(ResponseFunction::SECOND_PARTS)
            .chain([ResponseFunction::Unit])
            .find(|r| r.id().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidInput(format!("unknown response function {s:?}")))
    }
}

/// Evaluates `func` on a generated row. `Ok(None)` asks the caller to draw a
/// new row because a denominator is too close to zero.
pub fn eval_response(func: ResponseFunction, row: &[f64]) -> Result<Option<f64>> {
    if row.len() < func.min_arity() {
        return Err(Error::dim(format!(
            "{func} reads {} covariates, row has {}",
            func.min_arity(),
            row.len()
        )));
    }
    if let Some(d) = func.denominator(row) {
        if d.abs() < DENOMINATOR_GUARD {
            return Ok(None);
        }
    }
    Ok(Some(func.eval(row)))
}

/// A response function as a model over `arity` covariates.
#[derive(Debug, Clone, Copy)]
pub struct ResponseModel {
    pub func: ResponseFunction,
    pub arity: usize,
}

impl ModelFunction for ResponseModel {
    fn arity(&self) -> usize {
        self.arity
    }
    fn eval(&self, x: &[f64]) -> f64 {
        self.func.eval(x)
    }
}

/// Independent uniform bounds per covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CovariateSpec {
    bounds: Vec<(f64, f64)>,
}

impl CovariateSpec {
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self> {
        let spec = Self { bounds };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bounds.is_empty() {
            return Err(Error::InvalidInput("no covariates".into()));
        }
        for (j, &(lo, hi)) in self.bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidInput(format!(
                    "covariate {} has invalid bounds [{lo}, {hi}]",
                    j + 1
                )));
            }
        }
        Ok(())
    }

    /// x1 ~ U[-10, 10], x2 ~ U[0, 20], x3 ~ U[-5, -1].
    pub fn three_variable() -> Self {
        Self {
            bounds: vec![(-10.0, 10.0), (0.0, 20.0), (-5.0, -1.0)],
        }
    }

    /// `p` covariates, each U[-1, 1].
    pub fn symmetric_unit(p: usize) -> Self {
        Self {
            bounds: vec![(-1.0, 1.0); p],
        }
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn len(&self) -> usize {
        self.bounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bounds.is_empty()
    }

    pub(crate) fn draw_row<R: Rng>(&self, rng: &mut R, out: &mut [f64]) {
        for (v, &(lo, hi)) in out.iter_mut().zip(&self.bounds) {
            *v = rng.gen_range(lo..hi);
        }
    }
}

/// `n` i.i.d. rows drawn from `spec`, reproducible per seed.
pub fn gen_covariates(spec: &CovariateSpec, n: usize, seed: u64) -> Result<Matrix> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::InvalidInput("need at least one row".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Matrix::zeros(n, spec.len());
    for i in 0..n {
        spec.draw_row(&mut rng, m.row_mut(i));
    }
    Ok(m)
}
