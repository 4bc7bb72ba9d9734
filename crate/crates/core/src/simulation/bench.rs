use std::fmt;
use std::hint::black_box;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::response::{gen_covariates, CovariateSpec};
use super::scenario::derive_seed;
use crate::error::{Error, Result};
use crate::explanation::Attribution;
use crate::shapley::{
    sampling_explain, BackgroundSet, ExactShapley, FnModel, ModelFunction, ProductModel,
    DEFAULT_ENUM_LIMIT,
};
use crate::two_part::{combine, mean_product_baseline, AlphaMethod};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMethod {
    Composition,
    ExactEnumeration,
    PermutationSampling,
}

impl BenchMethod {
    pub const ALL: [BenchMethod; 3] = [
        BenchMethod::Composition,
        BenchMethod::ExactEnumeration,
        BenchMethod::PermutationSampling,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BenchMethod::Composition => "composition",
            BenchMethod::ExactEnumeration => "exact_enumeration",
            BenchMethod::PermutationSampling => "permutation_sampling",
        }
    }
}

impl fmt::Display for BenchMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BenchMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BenchMethod::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown bench method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub p: usize,
    pub n: usize,
    pub method: BenchMethod,
    /// Median time to explain all `n` rows.
    pub wall_seconds: f64,
    pub per_observation_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchFailure {
    pub p: usize,
    pub n: usize,
    pub method: BenchMethod,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub records: Vec<BenchRecord>,
    pub failures: Vec<BenchFailure>,
    pub machine: String,
}

impl BenchReport {
    pub fn find(&self, p: usize, n: usize, method: BenchMethod) -> Option<&BenchRecord> {
        self.records
            .iter()
            .find(|r| r.p == p && r.n == n && r.method == method)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchOptions {
    /// Timed repetitions per record; the median is reported.
    pub repetitions: usize,
    /// Orderings per row for the sampling estimator.
    pub permutations: usize,
    pub enum_limit: usize,
    /// Each repetition loops the workload until at least this much time passes.
    pub min_rep_seconds: f64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            repetitions: 5,
            permutations: 16,
            enum_limit: DEFAULT_ENUM_LIMIT,
            min_rep_seconds: 0.005,
        }
    }
}

impl BenchOptions {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions < 5 {
            return Err(Error::Config(format!(
                "bench repetitions must be at least 5, got {}",
                self.repetitions
            )));
        }
        if self.permutations == 0 {
            return Err(Error::Config("bench permutations must be positive".into()));
        }
        if !(self.min_rep_seconds.is_finite() && self.min_rep_seconds >= 0.0) {
            return Err(Error::Config(
                "min_rep_seconds must be a non-negative number".into(),
            ));
        }
        Ok(())
    }
}

/// OS, architecture, logical CPU count and (on Linux) the CPU model.
pub fn machine_descriptor() -> String {
    let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
    let model = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".into());
    format!(
        "{}-{}; {} logical cpus; {}",
        std::env::consts::OS,
        std::env::consts::ARCH,
        cpus,
        model
    )
}

/// Seconds per call of `work`: one discarded warm-up call, then the median
/// of `reps` repetitions, each looping until `min_secs` has elapsed.
fn time_median<T>(reps: usize, min_secs: f64, mut work: impl FnMut() -> Result<T>) -> Result<f64> {
    black_box(work()?);
    let mut samples = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        let mut iters = 0u32;
        loop {
            black_box(work()?);
            iters += 1;
            let elapsed = start.elapsed().as_secs_f64();
            if elapsed >= min_secs {
                samples.push(elapsed / f64::from(iters));
                break;
            }
        }
    }
    samples.sort_by(f64::total_cmp);
    Ok(samples[samples.len() / 2])
}

fn bench_models(p: usize) -> (impl ModelFunction, impl ModelFunction) {
    // f is linear, g is smooth and strictly positive
    let f = FnModel::new(p, |x: &[f64]| {
        x.iter()
            .enumerate()
            .map(|(j, v)| (j as f64 + 1.0) * v)
            .sum::<f64>()
    });
    let g = FnModel::new(p, |x: &[f64]| {
        let s: f64 = x.iter().sum();
        (s / x.len() as f64).exp()
    });
    (f, g)
}

fn bench_one(
    p: usize,
    n: usize,
    background_size: usize,
    seed: u64,
    opts: &BenchOptions,
) -> Vec<std::result::Result<BenchRecord, BenchFailure>> {
    let fail = |method, e: Error| BenchFailure {
        p,
        n,
        method,
        message: e.to_string(),
    };
    let spec = CovariateSpec::symmetric_unit(p);
    let data = gen_covariates(&spec, n, derive_seed(seed, 2 * p as u64)).and_then(|rows| {
        let bg = gen_covariates(&spec, background_size, derive_seed(seed, 2 * p as u64 + 1))?;
        Ok((rows, BackgroundSet::new(bg)?))
    });
    let (rows, background) = match data {
        Ok(d) => d,
        Err(e) => {
            let msg = e.to_string();
            return BenchMethod::ALL
                .into_iter()
                .map(|m| Err(fail(m, Error::InvalidInput(msg.clone()))))
                .collect();
        }
    };
    let (f, g) = bench_models(p);
    let h = ProductModel { f: &f, g: &g };
    let exact = ExactShapley::with_limit(opts.enum_limit);
    let record = |method, secs: f64| BenchRecord {
        p,
        n,
        method,
        wall_seconds: secs,
        per_observation_seconds: secs / n as f64,
    };

    let mut out = Vec::with_capacity(3);

    // composition: the part explanations are inputs, not part of the timing
    let parts = if p <= opts.enum_limit {
        exact
            .explain(&f, &rows, &background)
            .and_then(|ef| Ok((ef, exact.explain(&g, &rows, &background)?)))
    } else {
        sampling_explain(&f, &rows, &background, opts.permutations, seed).and_then(|ef| {
            Ok((
                ef,
                sampling_explain(&g, &rows, &background, opts.permutations, seed)?,
            ))
        })
    };
    out.push(
        parts
            .and_then(|(ef, eg)| {
                let mu_h = mean_product_baseline(ef.predictions(), eg.predictions())?;
                time_median(opts.repetitions, opts.min_rep_seconds, || {
                    combine(&ef, &eg, mu_h, AlphaMethod::AbsoluteWeights)
                })
                .map(|s| record(BenchMethod::Composition, s))
            })
            .map_err(|e| fail(BenchMethod::Composition, e)),
    );

    out.push(
        time_median(opts.repetitions, opts.min_rep_seconds, || {
            exact.explain(&h, &rows, &background)
        })
        .map(|s| record(BenchMethod::ExactEnumeration, s))
        .map_err(|e| fail(BenchMethod::ExactEnumeration, e)),
    );

    out.push(
        time_median(opts.repetitions, opts.min_rep_seconds, || {
            sampling_explain(&h, &rows, &background, opts.permutations, seed)
        })
        .map(|s| record(BenchMethod::PermutationSampling, s))
        .map_err(|e| fail(BenchMethod::PermutationSampling, e)),
    );
    out
}

/// Times composition, exact enumeration and permutation sampling for every
/// `(p, n)` pair. The timed work runs on a single thread. Failures such as
/// an exceeded enumeration limit are recorded and the run continues.
pub fn bench_scaling(
    p_values: &[usize],
    n_values: &[usize],
    background_size: usize,
    seed: u64,
    opts: &BenchOptions,
) -> Result<BenchReport> {
    opts.validate()?;
    if p_values.is_empty() || n_values.is_empty() {
        return Err(Error::InvalidInput(
            "bench needs at least one p and one n".into(),
        ));
    }
    if let Some(&bad) = p_values.iter().chain(n_values).find(|&&v| v == 0) {
        return Err(Error::InvalidInput(format!(
            "bench sizes must be positive, got {bad}"
        )));
    }
    if background_size == 0 {
        return Err(Error::InvalidInput(
            "background size must be positive".into(),
        ));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::Config(format!("cannot build timing pool: {e}")))?;
    let mut report = BenchReport {
        records: Vec::new(),
        failures: Vec::new(),
        machine: machine_descriptor(),
    };
    for &p in p_values {
        for &n in n_values {
            for entry in pool.install(|| bench_one(p, n, background_size, seed, opts)) {
                match entry {
                    Ok(r) => report.records.push(r),
                    Err(f) => report.failures.push(f),
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> BenchOptions {
        BenchOptions {
            min_rep_seconds: 0.0,
            ..BenchOptions::default()
        }
    }

    #[test]
    fn records_cover_every_method() {
        let report = bench_scaling(&[2, 3], &[4], 8, 1, &quick()).unwrap();
        assert_eq!(report.records.len(), 6);
        assert!(report.failures.is_empty());
        for r in &report.records {
            assert!(r.wall_seconds > 0.0);
            assert_eq!(r.per_observation_seconds, r.wall_seconds / r.n as f64);
        }
        assert!(!report.machine.is_empty());
    }

    #[test]
    fn enumeration_limit_is_recorded_not_fatal() {
        let opts = BenchOptions {
            enum_limit: 3,
            ..quick()
        };
        let report = bench_scaling(&[3, 4], &[3], 5, 1, &opts).unwrap();
        assert_eq!(report.failures.len(), 1);
        assert_eq!(report.failures[0].method, BenchMethod::ExactEnumeration);
        assert_eq!(report.failures[0].p, 4);
        // composition falls back to sampled parts above the limit
        assert!(report.find(4, 3, BenchMethod::Composition).is_some());
        assert_eq!(report.records.len(), 5);
    }

    #[test]
    fn bad_options() {
        assert!(bench_scaling(&[], &[3], 5, 1, &quick()).is_err());
        assert!(bench_scaling(&[2], &[0], 5, 1, &quick()).is_err());
        let few = BenchOptions {
            repetitions: 2,
            ..quick()
        };
        assert!(bench_scaling(&[2], &[3], 5, 1, &few).is_err());
    }

    #[test]
    fn median_of_repetitions() {
        let mut calls = 0;
        let t = time_median(5, 0.0, || {
            calls += 1;
            Ok(calls)
        })
        .unwrap();
        assert!(t >= 0.0);
        assert_eq!(calls, 6);
    }

    #[test]
    fn method_names() {
        for m in BenchMethod::ALL {
            assert_eq!(m.as_str().parse::<BenchMethod>().unwrap(), m);
        }
    }
}
