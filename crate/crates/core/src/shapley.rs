//! Interventional Shapley values.
//!
//! The coalition value `v(S)` is the mean over background rows of the model
//! evaluated on a spliced vector: features in `S` come from the instance being
//! explained, the rest from the background row.
//!
//! [`ExactShapley`] enumerates every coalition and is the reference oracle for
//! everything else in the crate. [`sampling_shapley`] is a permutation
//! estimator used where enumeration is too expensive.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::explanation::ShapExplanation;
use crate::matrix::Matrix;
use crate::numeric::compensated_sum;

pub const DEFAULT_ENUM_LIMIT: usize = 16;

/// A deterministic real-valued model of `arity` covariates.
pub trait ModelFunction: Sync {
    fn arity(&self) -> usize;
    fn eval(&self, x: &[f64]) -> f64;
}

impl<M: ModelFunction + ?Sized> ModelFunction for &M {
    fn arity(&self) -> usize {
        (**self).arity()
    }
    fn eval(&self, x: &[f64]) -> f64 {
        (**self).eval(x)
    }
}

/// Wraps a closure as a [`ModelFunction`].
pub struct FnModel<F> {
    arity: usize,
    f: F,
}

impl<F> FnModel<F>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    pub fn new(arity: usize, f: F) -> Self {
        Self { arity, f }
    }
}

impl<F> ModelFunction for FnModel<F>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    fn arity(&self) -> usize {
        self.arity
    }
    fn eval(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

/// The two-part model `h(x) = f(x) * g(x)`.
pub struct ProductModel<F, G> {
    pub f: F,
    pub g: G,
}

impl<F: ModelFunction, G: ModelFunction> ModelFunction for ProductModel<F, G> {
    fn arity(&self) -> usize {
        self.f.arity()
    }
    fn eval(&self, x: &[f64]) -> f64 {
        self.f.eval(x) * self.g.eval(x)
    }
}

/// Reference observations used to marginalise out absent features.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundSet {
    data: Matrix,
}

impl BackgroundSet {
    pub fn new(data: Matrix) -> Result<Self> {
        if data.rows() == 0 || data.cols() == 0 {
            return Err(Error::dim(format!(
                "background set must be non-empty, got {}x{}",
                data.rows(),
                data.cols()
            )));
        }
        Ok(Self { data })
    }

    pub fn data(&self) -> &Matrix {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.rows() == 0
    }

    pub fn n_features(&self) -> usize {
        self.data.cols()
    }
}

fn check_arity<M: ModelFunction + ?Sized>(model: &M, bg: &BackgroundSet) -> Result<usize> {
    let p = model.arity();
    if bg.n_features() != p {
        return Err(Error::dim(format!(
            "model takes {p} features but background has {}",
            bg.n_features()
        )));
    }
    Ok(p)
}

fn check_instance(p: usize, instance: &[f64]) -> Result<()> {
    if instance.len() != p {
        return Err(Error::dim(format!(
            "instance has {} features, model takes {p}",
            instance.len()
        )));
    }
    Ok(())
}

/// Mean prediction of `rows` (row-major, `p` wide), written through `scratch`.
fn mean_prediction<M: ModelFunction + ?Sized>(
    model: &M,
    rows: &[f64],
    p: usize,
    scratch: &mut [f64],
) -> f64 {
    for (out, row) in scratch.iter_mut().zip(rows.chunks_exact(p)) {
        *out = model.eval(row);
    }
    compensated_sum(scratch.iter().copied()) / scratch.len() as f64
}

/// Mean model output over the background rows.
pub fn baseline<M: ModelFunction + ?Sized>(model: &M, background: &BackgroundSet) -> Result<f64> {
    let p = check_arity(model, background)?;
    let mut scratch = vec![0.0; background.len()];
    Ok(mean_prediction(
        model,
        background.data().as_slice(),
        p,
        &mut scratch,
    ))
}

/// Attribution of a single instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapRow {
    pub values: Vec<f64>,
    pub baseline: f64,
    pub prediction: f64,
}

/// `ln k!` for `k = 0..=p`.
fn ln_factorials(p: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(p + 1);
    let mut acc = 0.0_f64;
    out.push(0.0);
    for k in 1..=p {
        acc += (k as f64).ln();
        out.push(acc);
    }
    out
}

/// Shapley kernel `|S|! (p - |S| - 1)! / p!` indexed by coalition size.
pub fn shapley_weights(p: usize) -> Vec<f64> {
    let lf = ln_factorials(p);
    (0..p)
        .map(|s| (lf[s] + lf[p - s - 1] - lf[p]).exp())
        .collect()
}

/// Exact Shapley attribution by full coalition enumeration.
#[derive(Debug, Clone, Copy)]
pub struct ExactShapley {
    enum_limit: usize,
}

impl Default for ExactShapley {
    fn default() -> Self {
        Self {
            enum_limit: DEFAULT_ENUM_LIMIT,
        }
    }
}

impl ExactShapley {
    pub fn with_limit(enum_limit: usize) -> Self {
        Self { enum_limit }
    }

    pub fn limit(&self) -> usize {
        self.enum_limit
    }

    /// Value of every coalition, indexed by bit mask.
    ///
    /// Coalitions are visited in Gray-code order so each step flips one
    /// column of the spliced background block.
    pub fn coalition_values<M: ModelFunction + ?Sized>(
        &self,
        model: &M,
        instance: &[f64],
        background: &BackgroundSet,
    ) -> Result<Vec<f64>> {
        let p = check_arity(model, background)?;
        check_instance(p, instance)?;
        if p > self.enum_limit {
            return Err(Error::EnumerationLimit {
                features: p,
                limit: self.enum_limit,
            });
        }
        let bg = background.data();
        let m = bg.rows();
        let mut work = bg.as_slice().to_vec();
        let mut scratch = vec![0.0; m];
        let n_coalitions = 1usize << p;
        let mut values = vec![0.0; n_coalitions];
        values[0] = mean_prediction(model, &work, p, &mut scratch);
        for step in 1..n_coalitions {
            let j = step.trailing_zeros() as usize;
            let mask = step ^ (step >> 1);
            if mask & (1 << j) != 0 {
                for row in work.chunks_exact_mut(p) {
                    row[j] = instance[j];
                }
            } else {
                for (row, src) in work.chunks_exact_mut(p).zip(bg.iter_rows()) {
                    row[j] = src[j];
                }
            }
            values[mask] = mean_prediction(model, &work, p, &mut scratch);
        }
        Ok(values)
    }

    pub fn explain_row<M: ModelFunction + ?Sized>(
        &self,
        model: &M,
        instance: &[f64],
        background: &BackgroundSet,
    ) -> Result<ShapRow> {
        let v = self.coalition_values(model, instance, background)?;
        let p = instance.len();
        let weights = shapley_weights(p);
        let values =
            (0..p)
                .map(|j| {
                    let bit = 1usize << j;
                    compensated_sum((0..v.len()).filter(|mask| mask & bit == 0).map(|mask| {
                        weights[mask.count_ones() as usize] * (v[mask | bit] - v[mask])
                    }))
                })
                .collect();
        Ok(ShapRow {
            values,
            baseline: v[0],
            prediction: model.eval(instance),
        })
    }

    /// Explains every row of `instances`; rows are processed in parallel and
    /// the result does not depend on the thread count.
    pub fn explain<M: ModelFunction + ?Sized>(
        &self,
        model: &M,
        instances: &Matrix,
        background: &BackgroundSet,
    ) -> Result<ShapExplanation> {
        let rows = (0..instances.rows())
            .into_par_iter()
            .map(|i| self.explain_row(model, instances.row(i), background))
            .collect::<Result<Vec<_>>>()?;
        assemble(rows, instances.cols(), background, model)
    }
}

fn assemble<M: ModelFunction + ?Sized>(
    rows: Vec<ShapRow>,
    p: usize,
    background: &BackgroundSet,
    model: &M,
) -> Result<ShapExplanation> {
    let base = match rows.first() {
        Some(r) => r.baseline,
        None => baseline(model, background)?,
    };
    let mut values = Matrix::zeros(rows.len(), p);
    let mut predictions = Vec::with_capacity(rows.len());
    for (i, r) in rows.into_iter().enumerate() {
        values.row_mut(i).copy_from_slice(&r.values);
        predictions.push(r.prediction);
    }
    ShapExplanation::new(values, base, predictions, None)
}

/// Exact Shapley values of one instance with the default enumeration limit.
pub fn exact_shapley<M: ModelFunction + ?Sized>(
    model: &M,
    instance: &[f64],
    background: &BackgroundSet,
) -> Result<ShapRow> {
    ExactShapley::default().explain_row(model, instance, background)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingEstimate {
    pub values: Vec<f64>,
    /// Standard error of each estimate; zero when every ordering was used.
    pub std_errors: Vec<f64>,
    pub baseline: f64,
    pub prediction: f64,
    pub permutations: usize,
    pub exhaustive: bool,
}

impl SamplingEstimate {
    pub fn into_row(self) -> ShapRow {
        ShapRow {
            values: self.values,
            baseline: self.baseline,
            prediction: self.prediction,
        }
    }
}

/// Lexicographic successor of `perm`; false once the last ordering is reached.
fn next_permutation(perm: &mut [usize]) -> bool {
    let Some(i) = perm.windows(2).rposition(|w| w[0] < w[1]) else {
        return false;
    };
    let j = perm
        .iter()
        .rposition(|&x| x > perm[i])
        .expect("pivot has a successor");
    perm.swap(i, j);
    perm[i + 1..].reverse();
    true
}

fn factorial(p: usize) -> Option<usize> {
    (1..=p).try_fold(1usize, |acc, k| acc.checked_mul(k))
}

/// Running mean and variance per feature (Welford).
struct Moments {
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn new(p: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; p],
            m2: vec![0.0; p],
        }
    }

    fn push(&mut self, sample: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for ((mean, m2), &x) in self.mean.iter_mut().zip(&mut self.m2).zip(sample) {
            let delta = x - *mean;
            *mean += delta / n;
            *m2 += delta * (x - *mean);
        }
    }

    fn std_errors(&self) -> Vec<f64> {
        if self.count < 2 {
            return vec![0.0; self.mean.len()];
        }
        let n = self.count as f64;
        self.m2
            .iter()
            .map(|m2| (m2 / (n - 1.0)).max(0.0).sqrt() / n.sqrt())
            .collect()
    }
}

/// Permutation-sampling Shapley estimate.
///
/// Each sampled ordering adds features one at a time to the spliced
/// background block and credits every feature with the change in the
/// background-mean prediction. Orderings are drawn by Fisher-Yates shuffles
/// from a ChaCha8 stream seeded with `seed`. When `n_permutations >= p!`
/// every ordering is visited once instead, which reproduces the exact values.
pub fn sampling_shapley<M: ModelFunction + ?Sized>(
    model: &M,
    instance: &[f64],
    background: &BackgroundSet,
    n_permutations: usize,
    seed: u64,
) -> Result<SamplingEstimate> {
    let p = check_arity(model, background)?;
    check_instance(p, instance)?;
    if n_permutations == 0 {
        return Err(Error::InvalidInput(
            "n_permutations must be at least 1".into(),
        ));
    }
    let bg = background.data();
    let m = bg.rows();
    let mut scratch = vec![0.0; m];
    let base = mean_prediction(model, bg.as_slice(), p, &mut scratch);
    let mut work = vec![0.0; m * p];
    let mut contrib = vec![0.0; p];
    let mut moments = Moments::new(p);

    let mut walk = |order: &[usize], moments: &mut Moments| {
        work.copy_from_slice(bg.as_slice());
        let mut prev = base;
        for &j in order {
            for row in work.chunks_exact_mut(p) {
                row[j] = instance[j];
            }
            let cur = mean_prediction(model, &work, p, &mut scratch);
            contrib[j] = cur - prev;
            prev = cur;
        }
        moments.push(&contrib);
    };

    let mut order: Vec<usize> = (0..p).collect();
    let exhaustive = factorial(p).is_some_and(|total| n_permutations >= total);
    if exhaustive {
        loop {
            walk(&order, &mut moments);
            if !next_permutation(&mut order) {
                break;
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..n_permutations {
            order.shuffle(&mut rng);
            walk(&order, &mut moments);
        }
    }

    let std_errors = if exhaustive {
        vec![0.0; p]
    } else {
        moments.std_errors()
    };
    Ok(SamplingEstimate {
        values: moments.mean,
        std_errors,
        baseline: base,
        prediction: model.eval(instance),
        permutations: moments.count,
        exhaustive,
    })
}

/// Runs [`sampling_shapley`] over every row of `instances`, seeding row `i`
/// with `seed + i`.
pub fn sampling_explain<M: ModelFunction + ?Sized>(
    model: &M,
    instances: &Matrix,
    background: &BackgroundSet,
    n_permutations: usize,
    seed: u64,
) -> Result<ShapExplanation> {
    let rows = (0..instances.rows())
        .into_par_iter()
        .map(|i| {
            sampling_shapley(
                model,
                instances.row(i),
                background,
                n_permutations,
                seed.wrapping_add(i as u64),
            )
            .map(SamplingEstimate::into_row)
        })
        .collect::<Result<Vec<_>>>()?;
    assemble(rows, instances.cols(), background, model)
}
