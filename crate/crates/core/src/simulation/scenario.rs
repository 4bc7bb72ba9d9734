use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::response::{
    eval_response, CovariateSpec, ResponseFunction, ResponseModel, MAX_RESAMPLES,
};
use crate::error::{Error, Result};
use crate::explanation::{validate_local_accuracy, Attribution, ShapExplanation};
use crate::matrix::Matrix;
use crate::numeric::compensated_sum;
use crate::scoring::{score_matrices, ScoreBreakdown, ScoreParams};
use crate::shapley::{
    sampling_explain, BackgroundSet, ExactShapley, ModelFunction, ProductModel, DEFAULT_ENUM_LIMIT,
};
use crate::two_part::{combine, AlphaMethod};

/// One simulation cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub y1: ResponseFunction,
    pub y2: ResponseFunction,
    pub theta1: f64,
    pub theta2: f64,
    pub n: usize,
    pub covariates: CovariateSpec,
    pub seed: u64,
    pub background_size: usize,
    /// Above this many covariates, attributions come from permutation sampling.
    pub enum_limit: usize,
    /// Orderings per row when sampling is used.
    pub permutations: usize,
}

impl ScenarioSpec {
    /// Three-variable cell with the default covariate boxes, `n = 100` and
    /// the full sample as background.
    pub fn new(
        y1: ResponseFunction,
        y2: ResponseFunction,
        theta1: f64,
        theta2: f64,
        seed: u64,
    ) -> Self {
        Self {
            y1,
            y2,
            theta1,
            theta2,
            n: 100,
            covariates: CovariateSpec::three_variable(),
            seed,
            background_size: 100,
            enum_limit: DEFAULT_ENUM_LIMIT,
            permutations: 200,
        }
    }

    pub fn n_features(&self) -> usize {
        self.covariates.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !ResponseFunction::FIRST_PARTS.contains(&self.y1) {
            return Err(Error::InvalidInput(format!(
                "{} is not a first-part response",
                self.y1
            )));
        }
        if !(ResponseFunction::SECOND_PARTS.contains(&self.y2) || self.y2 == ResponseFunction::Unit)
        {
            return Err(Error::InvalidInput(format!(
                "{} is not a second-part response",
                self.y2
            )));
        }
        ScoreParams::new(self.theta1, self.theta2)?;
        if self.n < 10 {
            return Err(Error::InvalidInput(format!(
                "n must be at least 10, got {}",
                self.n
            )));
        }
        if self.background_size == 0 || self.background_size > self.n {
            return Err(Error::InvalidInput(format!(
                "background size {} must be in 1..={}",
                self.background_size, self.n
            )));
        }
        if self.permutations == 0 {
            return Err(Error::InvalidInput("permutations must be positive".into()));
        }
        self.covariates.validate()?;
        if self.n_features() < 3 {
            return Err(Error::InvalidInput(format!(
                "response functions read three covariates, spec has {}",
                self.n_features()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodScore {
    pub method: AlphaMethod,
    pub breakdown: ScoreBreakdown,
    pub fallback_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioResult {
    pub spec: ScenarioSpec,
    /// One entry per [`AlphaMethod`], in [`AlphaMethod::ALL`] order.
    pub methods: Vec<MethodScore>,
    /// Generated rows redrawn by the denominator guard.
    pub resampled_rows: usize,
    /// Whether the reference came from exact enumeration.
    pub exact_reference: bool,
    /// Largest `|h(x) - mu_h - sum phi|` over rows of the reference.
    pub reference_max_residual: f64,
    /// Largest gap between an mSHAP row total and the reference row total.
    pub max_total_gap: f64,
}

impl ScenarioResult {
    pub fn score(&self, method: AlphaMethod) -> &ScoreBreakdown {
        &self
            .methods
            .iter()
            .find(|m| m.method == method)
            .expect("every method is scored")
            .breakdown
    }
}

/// Draws `n` rows, redrawing any row that trips a denominator guard.
fn draw_guarded(spec: &ScenarioSpec, rng: &mut ChaCha8Rng) -> Result<(Matrix, usize)> {
    let mut m = Matrix::zeros(spec.n, spec.n_features());
    let mut resampled = 0;
    for i in 0..spec.n {
        let mut attempts = 0;
        loop {
            spec.covariates.draw_row(rng, m.row_mut(i));
            let ok = eval_response(spec.y1, m.row(i))?.is_some()
                && eval_response(spec.y2, m.row(i))?.is_some();
            if ok {
                break;
            }
            attempts += 1;
            resampled += 1;
            if attempts >= MAX_RESAMPLES {
                return Err(Error::Resample {
                    attempts,
                    reason: format!("{} / {} denominator guard", spec.y1, spec.y2),
                });
            }
        }
    }
    Ok((m, resampled))
}

fn explain<M: ModelFunction>(
    spec: &ScenarioSpec,
    model: &M,
    rows: &Matrix,
    background: &BackgroundSet,
    stream: u64,
) -> Result<ShapExplanation> {
    if spec.n_features() <= spec.enum_limit {
        ExactShapley::with_limit(spec.enum_limit).explain(model, rows, background)
    } else {
        sampling_explain(
            model,
            rows,
            background,
            spec.permutations,
            derive_seed(spec.seed, stream),
        )
    }
}

/// Simulates one cell: draws covariates, explains both parts and the
/// product, composes the part explanations with every [`AlphaMethod`] and
/// scores each composition against the product's own attributions.
pub fn run_scenario(spec: &ScenarioSpec) -> Result<ScenarioResult> {
    spec.validate()?;
    let p = spec.n_features();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (rows, resampled_rows) = draw_guarded(spec, &mut rng)?;

    let mut picked = index::sample(&mut rng, spec.n, spec.background_size).into_vec();
    picked.sort_unstable();
    let background = BackgroundSet::new(rows.select_rows(&picked))?;

    let f = ResponseModel {
        func: spec.y1,
        arity: p,
    };
    let g = ResponseModel {
        func: spec.y2,
        arity: p,
    };
    let h = ProductModel { f, g };

    let reference = explain(spec, &h, &rows, &background, 0)?;
    let expl_f = explain(spec, &f, &rows, &background, 1)?;
    let expl_g = explain(spec, &g, &rows, &background, 2)?;
    let mu_h = reference.baseline();
    let reference_max_residual = validate_local_accuracy(&reference, 0.0).max_residual;
    let params = ScoreParams::new(spec.theta1, spec.theta2)?;

    let mut methods = Vec::with_capacity(4);
    let mut max_total_gap: f64 = 0.0;
    for method in AlphaMethod::ALL {
        let composed = combine(&expl_f, &expl_g, mu_h, method)?;
        for i in 0..rows.rows() {
            let ours = compensated_sum(composed.values.row(i).iter().copied());
            let theirs = compensated_sum(reference.values().row(i).iter().copied());
            max_total_gap = max_total_gap.max((ours - theirs).abs() / theirs.abs().max(1.0));
        }
        methods.push(MethodScore {
            method,
            breakdown: score_matrices(&composed.values, reference.values(), params)?,
            fallback_rows: composed.fallback_rows.len(),
        });
    }
    Ok(ScenarioResult {
        spec: spec.clone(),
        methods,
        resampled_rows,
        exact_reference: p <= spec.enum_limit,
        reference_max_residual,
        max_total_gap,
    })
}

/// SplitMix64 finaliser.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for cell `index` of a grid seeded with `grid_seed`.
pub fn derive_seed(grid_seed: u64, index: u64) -> u64 {
    mix(mix(grid_seed) ^ index)
}

/// Axes of a scenario grid; every combination becomes one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub y1: Vec<ResponseFunction>,
    pub y2: Vec<ResponseFunction>,
    pub theta1: Vec<f64>,
    pub theta2: Vec<f64>,
    pub n: usize,
    pub background_size: usize,
    pub covariates: CovariateSpec,
    pub seed: u64,
    pub enum_limit: usize,
    pub permutations: usize,
}

impl GridSpec {
    /// 2 x 6 response pairs with theta1 in {1.5, 10.5, 20.5} and theta2 in
    /// {1, 21, 46}: 108 cells of 100 rows.
    pub fn desk_scale(seed: u64) -> Self {
        Self {
            y1: ResponseFunction::FIRST_PARTS.to_vec(),
            y2: ResponseFunction::SECOND_PARTS.to_vec(),
            theta1: vec![1.5, 10.5, 20.5],
            theta2: vec![1.0, 21.0, 46.0],
            n: 100,
            background_size: 100,
            covariates: CovariateSpec::three_variable(),
            seed,
            enum_limit: DEFAULT_ENUM_LIMIT,
            permutations: 200,
        }
    }

    /// Full sweep: theta1 = 1.5, 2.5, ..., 20.5 and theta2 = 1, 6, ..., 46.
    pub fn full(seed: u64) -> Self {
        Self {
            theta1: (0..20).map(|k| 1.5 + k as f64).collect(),
            theta2: (0..10).map(|k| 1.0 + 5.0 * k as f64).collect(),
            ..Self::desk_scale(seed)
        }
    }

    pub fn cells(&self) -> Vec<ScenarioSpec> {
        let mut out = Vec::new();
        for &y1 in &self.y1 {
            for &y2 in &self.y2 {
                for &theta1 in &self.theta1 {
                    for &theta2 in &self.theta2 {
                        let seed = derive_seed(self.seed, out.len() as u64);
                        out.push(ScenarioSpec {
                            y1,
                            y2,
                            theta1,
                            theta2,
                            n: self.n,
                            covariates: self.covariates.clone(),
                            seed,
                            background_size: self.background_size,
                            enum_limit: self.enum_limit,
                            permutations: self.permutations,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridRow {
    pub cell: usize,
    pub spec: ScenarioSpec,
    pub method: AlphaMethod,
    pub breakdown: ScoreBreakdown,
    pub fallback_rows: usize,
    pub resampled_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridFailure {
    pub cell: usize,
    pub spec: ScenarioSpec,
    pub message: String,
    /// The cell hit an enumeration or resampling limit.
    pub resource_limit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridTable {
    pub rows: Vec<GridRow>,
    pub failures: Vec<GridFailure>,
}

impl GridTable {
    /// Cell-averaged breakdown per method over every successful cell.
    pub fn method_means(&self) -> Vec<(AlphaMethod, ScoreBreakdown)> {
        AlphaMethod::ALL
            .into_iter()
            .filter_map(|m| {
                let picked: Vec<&ScoreBreakdown> = self
                    .rows
                    .iter()
                    .filter(|r| r.method == m)
                    .map(|r| &r.breakdown)
                    .collect();
                if picked.is_empty() {
                    return None;
                }
                let mean = |f: fn(&ScoreBreakdown) -> f64| {
                    compensated_sum(picked.iter().map(|b| f(b))) / picked.len() as f64
                };
                Some((
                    m,
                    ScoreBreakdown {
                        score: mean(|b| b.score),
                        direction_score: mean(|b| b.direction_score),
                        relative_value_score: mean(|b| b.relative_value_score),
                        rank_score: mean(|b| b.rank_score),
                        pct_same_sign: mean(|b| b.pct_same_sign),
                        pct_same_rank: mean(|b| b.pct_same_rank),
                    },
                ))
            })
            .collect()
    }
}

/// Runs every cell independently (in parallel); failed cells are recorded
/// and do not stop the grid. Output order follows the input order.
pub fn run_grid(grid: &[ScenarioSpec]) -> Result<GridTable> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty scenario grid".into()));
    }
    let results: Vec<Result<ScenarioResult>> = grid.par_iter().map(run_scenario).collect();
    let mut rows = Vec::with_capacity(grid.len() * 4);
    let mut failures = Vec::new();
    for (cell, (spec, res)) in grid.iter().zip(results).enumerate() {
        match res {
            Ok(r) => rows.extend(r.methods.iter().map(|m| GridRow {
                cell,
                spec: spec.clone(),
                method: m.method,
                breakdown: m.breakdown,
                fallback_rows: m.fallback_rows,
                resampled_rows: r.resampled_rows,
            })),
            Err(e) => failures.push(GridFailure {
                cell,
                spec: spec.clone(),
                message: e.to_string(),
                resource_limit: matches!(
                    e,
                    Error::EnumerationLimit { .. } | Error::Resample { .. }
                ),
            }),
        }
    }
    Ok(GridTable { rows, failures })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_second_part_scores_perfectly() {
        let spec = ScenarioSpec::new(ResponseFunction::Y1A, ResponseFunction::Unit, 1.5, 1.0, 5);
        let result = run_scenario(&spec).unwrap();
        assert_eq!(result.methods.len(), 4);
        for m in &result.methods {
            assert_eq!(m.breakdown.score, 3.0, "{}", m.method);
            assert_eq!(m.breakdown.pct_same_rank, 1.0);
        }
    }

    #[test]
    fn default_cell_scores_in_range_and_totals_agree() {
        for y2 in ResponseFunction::SECOND_PARTS {
            let spec = ScenarioSpec::new(ResponseFunction::Y1B, y2, 10.5, 21.0, 77);
            let r = run_scenario(&spec).unwrap();
            assert!(r.exact_reference);
            for m in &r.methods {
                assert!(m.breakdown.score > 0.0 && m.breakdown.score <= 3.0);
            }
            assert!(r.max_total_gap < 1e-6, "{y2}: {}", r.max_total_gap);
        }
    }

    #[test]
    fn reference_is_efficient() {
        let spec = ScenarioSpec::new(ResponseFunction::Y1A, ResponseFunction::Y2C, 1.5, 1.0, 3);
        let r = run_scenario(&spec).unwrap();
        // h stays below ~1e5 for these covariates
        assert!(
            r.reference_max_residual < 1e-9 * 1e5,
            "{}",
            r.reference_max_residual
        );
    }

    #[test]
    fn wide_covariates_use_sampling_reference() {
        let mut spec = ScenarioSpec::new(ResponseFunction::Y1A, ResponseFunction::Y2C, 1.5, 1.0, 3);
        spec.covariates = CovariateSpec::symmetric_unit(5);
        spec.n = 12;
        spec.background_size = 6;
        spec.enum_limit = 4;
        spec.permutations = 8;
        let r = run_scenario(&spec).unwrap();
        assert!(!r.exact_reference);
        assert_eq!(r.methods.len(), 4);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let base = ScenarioSpec::new(ResponseFunction::Y1A, ResponseFunction::Y2A, 1.5, 1.0, 1);
        let mut s = base.clone();
        s.y1 = ResponseFunction::Y2C;
        assert!(run_scenario(&s).is_err());
        let mut s = base.clone();
        s.n = 5;
        assert!(run_scenario(&s).is_err());
        let mut s = base.clone();
        s.theta2 = 0.0;
        assert!(run_scenario(&s).is_err());
        let mut s = base;
        s.background_size = 101;
        assert!(run_scenario(&s).is_err());
    }

    #[test]
    fn grid_is_order_independent() {
        let mut grid = GridSpec::desk_scale(11);
        grid.y2 = vec![ResponseFunction::Y2C, ResponseFunction::Y2E];
        grid.theta1 = vec![1.5];
        grid.n = 20;
        grid.background_size = 20;
        let cells = grid.cells();
        assert_eq!(cells.len(), 2 * 2 * 3);
        let table = run_grid(&cells).unwrap();
        assert_eq!(table.rows.len(), cells.len() * 4);

        let mut reversed = cells.clone();
        reversed.reverse();
        let back = run_grid(&reversed).unwrap();
        for row in &table.rows {
            let twin = back
                .rows
                .iter()
                .find(|r| r.spec == row.spec && r.method == row.method)
                .unwrap();
            assert_eq!(twin.breakdown, row.breakdown);
        }
        assert_eq!(run_grid(&cells[..1]).unwrap().rows.len(), 4);
        assert!(run_grid(&[]).is_err());
    }

    #[test]
    fn failing_cells_do_not_stop_the_grid() {
        let good = ScenarioSpec::new(ResponseFunction::Y1A, ResponseFunction::Y2A, 1.5, 1.0, 1);
        let mut bad = good.clone();
        bad.n = 3;
        let table = run_grid(&[bad, good]).unwrap();
        assert_eq!(table.failures.len(), 1);
        assert_eq!(table.failures[0].cell, 0);
        assert_eq!(table.rows.len(), 4);
    }

    #[test]
    fn full_grid_shape() {
        let g = GridSpec::full(0);
        assert_eq!(g.theta1.first(), Some(&1.5));
        assert_eq!(g.theta1.last(), Some(&20.5));
        assert_eq!(g.theta2.last(), Some(&46.0));
        assert_eq!(g.cells().len(), 2 * 6 * 20 * 10);
    }
}
