//! The `mshap` command line.
//!
//! Exit codes: 0 success, 2 usage or config error, 3 data or validation
//! error, 4 resource limit (enumeration limit, resampling cap).

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{GridPreset, MuH, RunConfig, DEFAULT_THETA1, DEFAULT_THETA2, RESOLVED_CONFIG};
use crate::error::{Error, Result};
use crate::explanation::Attribution;
use crate::scoring::{score_matrices, ScoreBreakdown, ScoreParams};
use crate::simulation::bench::{bench_scaling, BenchReport};
use crate::simulation::scenario::{run_grid, GridTable};
use crate::table::{self, write_atomic, ShapTable};
use crate::two_part::{combine, mean_product_baseline, AlphaMethod, MshapExplanation};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_RESOURCE: i32 = 4;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        Error::EnumerationLimit { .. } | Error::Resample { .. } => EXIT_RESOURCE,
        Error::GridFailed {
            resource_limit: true,
            ..
        } => EXIT_RESOURCE,
        _ => EXIT_DATA,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "mshap",
    version,
    about = "Attributions for two-part models h = f * g"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true, env = "MSHAP_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, env = "MSHAP_OUT_DIR")]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true, env = "MSHAP_SEED")]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "MSHAP_THREADS")]
    pub threads: Option<usize>,
    /// Largest feature count explained by exact enumeration.
    #[arg(long, global = true, env = "MSHAP_ENUM_LIMIT")]
    pub enum_limit: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Combine SHAP tables of f and g into attributions of f * g.
    Combine(CombineArgs),
    /// Score a candidate attribution table against a reference.
    Score(ScoreArgs),
    /// Run a scenario grid.
    Simulate(SimulateArgs),
    /// Time composition against enumeration and sampling.
    Bench(BenchArgs),
    /// Importance and per-observation tables for plotting.
    SummaryData(SummaryArgs),
}

#[derive(Debug, Args)]
pub struct CombineArgs {
    #[arg(long, env = "MSHAP_F_SHAP")]
    pub f_shap: Option<PathBuf>,
    #[arg(long, env = "MSHAP_G_SHAP")]
    pub g_shap: Option<PathBuf>,
    /// Product-model baseline, or "auto" for the mean of prediction products.
    #[arg(long, env = "MSHAP_MU_H", allow_hyphen_values = true)]
    pub mu_h: Option<String>,
    /// uniform, raw, absolute or squared.
    #[arg(long, env = "MSHAP_METHOD")]
    pub method: Option<String>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long, env = "MSHAP_CANDIDATE")]
    pub candidate: Option<PathBuf>,
    #[arg(long, env = "MSHAP_REFERENCE")]
    pub reference: Option<PathBuf>,
    #[arg(long, env = "MSHAP_THETA1")]
    pub theta1: Option<f64>,
    #[arg(long, env = "MSHAP_THETA2")]
    pub theta2: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// desk (108 cells) or full (2400 cells).
    #[arg(long, env = "MSHAP_PRESET")]
    pub preset: Option<String>,
    /// Rows per cell.
    #[arg(long, env = "MSHAP_N")]
    pub n: Option<usize>,
    #[arg(long, env = "MSHAP_BACKGROUND_SIZE")]
    pub background_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Comma-separated feature counts.
    #[arg(long, env = "MSHAP_P_VALUES", value_delimiter = ',')]
    pub p_values: Option<Vec<usize>>,
    /// Comma-separated row counts.
    #[arg(long, env = "MSHAP_N_VALUES", value_delimiter = ',')]
    pub n_values: Option<Vec<usize>>,
    #[arg(long, env = "MSHAP_BACKGROUND_SIZE")]
    pub background_size: Option<usize>,
    #[arg(long, env = "MSHAP_REPETITIONS")]
    pub repetitions: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SummaryArgs {
    /// mSHAP table written by `combine`.
    #[arg(long, env = "MSHAP_MSHAP")]
    pub mshap: Option<PathBuf>,
    /// Covariate values with the same header names.
    #[arg(long, env = "MSHAP_COVARIATES")]
    pub covariates: Option<PathBuf>,
}

fn parse_flag<T: std::str::FromStr>(flag: &str, v: Option<String>) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    v.map(|s| {
        s.parse::<T>()
            .map_err(|e| Error::Config(format!("--{flag}: {e}")))
    })
    .transpose()
}

/// Flags as a config layer.
fn flags_config(cli: Cli) -> Result<(RunConfig, Option<PathBuf>, Kind)> {
    let g = cli.global;
    let mut c = RunConfig {
        out_dir: g.out_dir,
        seed: g.seed,
        threads: g.threads,
        enum_limit: g.enum_limit,
        ..Default::default()
    };
    let kind = match cli.command {
        Command::Combine(a) => {
            c.combine.f_shap = a.f_shap;
            c.combine.g_shap = a.g_shap;
            c.combine.mu_h = parse_flag::<MuH>("mu-h", a.mu_h)?;
            c.combine.method = parse_flag::<AlphaMethod>("method", a.method)?;
            Kind::Combine
        }
        Command::Score(a) => {
            c.score.candidate = a.candidate;
            c.score.reference = a.reference;
            c.score.theta1 = a.theta1;
            c.score.theta2 = a.theta2;
            Kind::Score
        }
        Command::Simulate(a) => {
            c.simulate.preset = a
                .preset
                .map(|p| match p.to_ascii_lowercase().as_str() {
                    "desk" => Ok(GridPreset::Desk),
                    "full" => Ok(GridPreset::Full),
                    other => Err(Error::Config(format!(
                        "--preset: expected desk or full, got {other:?}"
                    ))),
                })
                .transpose()?;
            c.simulate.n = a.n;
            c.simulate.background_size = a.background_size;
            Kind::Simulate
        }
        Command::Bench(a) => {
            c.bench.p_values = a.p_values;
            c.bench.n_values = a.n_values;
            c.bench.background_size = a.background_size;
            c.bench.repetitions = a.repetitions;
            Kind::Bench
        }
        Command::SummaryData(a) => {
            c.summary.mshap = a.mshap;
            c.summary.covariates = a.covariates;
            Kind::Summary
        }
    };
    Ok((c, g.config, kind))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Combine,
    Score,
    Simulate,
    Bench,
    Summary,
}

fn required(p: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    p.clone()
        .ok_or_else(|| Error::Config(format!("missing {what} (flag or config)")))
}

/// Keeps only the section that belongs to the command being run.
fn retain_section(c: &mut RunConfig, kind: Kind) {
    if kind != Kind::Combine {
        c.combine = Default::default();
    }
    if kind != Kind::Score {
        c.score = Default::default();
    }
    if kind != Kind::Simulate {
        c.simulate = Default::default();
    }
    if kind != Kind::Bench {
        c.bench = Default::default();
    }
    if kind != Kind::Summary {
        c.summary = Default::default();
    }
}

/// Combines two part tables. With `MuH::Auto` both tables must carry
/// prediction columns.
pub fn combine_tables(
    f: &ShapTable,
    g: &ShapTable,
    mu_h: MuH,
    method: AlphaMethod,
) -> Result<MshapExplanation> {
    let ef = f.to_explanation()?;
    let eg = g.to_explanation()?;
    let mu_h = match mu_h {
        MuH::Value(v) => v,
        MuH::Auto => {
            if f.predictions.is_none() || g.predictions.is_none() {
                return Err(Error::InvalidInput(
                    "mu_h = auto needs a prediction column in both tables".into(),
                ));
            }
            mean_product_baseline(ef.predictions(), eg.predictions())?
        }
    };
    combine(&ef, &eg, mu_h, method)
}

fn check_names(a: &[String], b: &[String]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::dim(format!("{} columns vs {}", a.len(), b.len())));
    }
    if let Some(j) = (0..a.len()).find(|&j| a[j] != b[j]) {
        return Err(Error::dim(format!(
            "feature column {} differs: {:?} vs {:?}",
            j + 1,
            a[j],
            b[j]
        )));
    }
    Ok(())
}

pub fn score_tables(
    candidate: &ShapTable,
    reference: &ShapTable,
    params: ScoreParams,
) -> Result<ScoreBreakdown> {
    check_names(&candidate.feature_names, &reference.feature_names)?;
    score_matrices(&candidate.values, &reference.values, params)
}

/// The two summary-data outputs: importance and long-format observations.
pub fn summary_outputs(
    mshap: &ShapTable,
    cov_names: &[String],
    cov: &crate::matrix::Matrix,
) -> Result<(String, String)> {
    if cov.rows() != mshap.values.rows() {
        return Err(Error::dim(format!(
            "{} attribution rows vs {} covariate rows",
            mshap.values.rows(),
            cov.rows()
        )));
    }
    let aligned = table::align_covariates(&mshap.feature_names, cov_names, cov)?;
    let imp = table::importance(&mshap.feature_names, &mshap.values);
    Ok((
        table::render_importance(&imp),
        table::render_observations(&mshap.feature_names, &mshap.values, &aligned)?,
    ))
}

/// Output file names inside the out dir.
pub mod files {
    pub const MSHAP: &str = "mshap.csv";
    pub const SCORE: &str = "score.json";
    pub const SIMULATION: &str = "simulation.csv";
    pub const SIMULATION_SUMMARY: &str = "simulation_summary.csv";
    pub const SIMULATION_FAILURES: &str = "simulation_failures.csv";
    pub const BENCH: &str = "bench.csv";
    pub const BENCH_META: &str = "bench.meta.json";
    pub const BENCH_FAILURES: &str = "bench_failures.csv";
    pub const IMPORTANCE: &str = "importance.csv";
    pub const OBSERVATIONS: &str = "observations.csv";
}

fn write_out(dir: &Path, name: &str, text: &str) -> Result<()> {
    write_atomic(&dir.join(name), text.as_bytes())
}

/// Deferred command body, run once the output directory exists.
type Job = Box<dyn FnOnce(&Path, &mut String) -> Result<()> + Send>;

fn execute(mut cfg: RunConfig, kind: Kind) -> Result<String> {
    cfg.resolve_globals()?;
    retain_section(&mut cfg, kind);
    let out = cfg.out_dir();

    // resolve and validate everything before touching the output directory
    let mut report = String::new();
    let job: Job = match kind {
        Kind::Combine => {
            let f_path = required(&cfg.combine.f_shap, "--f-shap")?;
            let g_path = required(&cfg.combine.g_shap, "--g-shap")?;
            let mu_h = *cfg.combine.mu_h.get_or_insert(MuH::Auto);
            let method = *cfg
                .combine
                .method
                .get_or_insert(AlphaMethod::AbsoluteWeights);
            Box::new(move |out, report| {
                let f = ShapTable::read(&f_path)?;
                let g = ShapTable::read(&g_path)?;
                check_names(&f.feature_names, &g.feature_names)?;
                let m = combine_tables(&f, &g, mu_h, method)?;
                let t = ShapTable::from_mshap(&m);
                t.write(&out.join(files::MSHAP))?;
                *report = format!(
                    "wrote {} ({} rows, {} features, method {}, mu_h {}, alpha {}, {} advisories)\n",
                    out.join(files::MSHAP).display(),
                    m.values.rows(),
                    m.values.cols(),
                    method,
                    m.mu_h,
                    m.alpha,
                    m.fallback_rows.len()
                );
                Ok(())
            })
        }
        Kind::Score => {
            let c_path = required(&cfg.score.candidate, "--candidate")?;
            let r_path = required(&cfg.score.reference, "--reference")?;
            let theta1 = *cfg.score.theta1.get_or_insert(DEFAULT_THETA1);
            let theta2 = *cfg.score.theta2.get_or_insert(DEFAULT_THETA2);
            let params =
                ScoreParams::new(theta1, theta2).map_err(|e| Error::Config(e.to_string()))?;
            Box::new(move |out, report| {
                let cand = ShapTable::read(&c_path)?;
                let refr = ShapTable::read(&r_path)?;
                let b = score_tables(&cand, &refr, params)?;
                let text = table::render_score(&b);
                write_out(out, files::SCORE, &text)?;
                *report = text;
                Ok(())
            })
        }
        Kind::Simulate => {
            let grid = cfg.resolve_grid()?;
            Box::new(move |out, report| {
                let t: GridTable = run_grid(&grid.cells())?;
                if t.rows.is_empty() {
                    let first = &t.failures[0];
                    return Err(Error::GridFailed {
                        cells: t.failures.len(),
                        first: first.message.clone(),
                        resource_limit: first.resource_limit,
                    });
                }
                write_out(out, files::SIMULATION, &table::render_grid(&t))?;
                write_out(
                    out,
                    files::SIMULATION_FAILURES,
                    &table::render_grid_failures(&t),
                )?;
                let summary = table::render_grid_summary(&t);
                write_out(out, files::SIMULATION_SUMMARY, &summary)?;
                *report = format!(
                    "{} cells, {} failed\n{summary}",
                    grid.cells().len(),
                    t.failures.len()
                );
                Ok(())
            })
        }
        Kind::Bench => {
            let (p_values, n_values, bg, opts) = cfg.resolve_bench()?;
            let seed = cfg.seed();
            Box::new(move |out, report| {
                let r: BenchReport = bench_scaling(&p_values, &n_values, bg, seed, &opts)?;
                let text = table::render_bench(&r);
                write_out(out, files::BENCH, &text)?;
                write_out(
                    out,
                    files::BENCH_FAILURES,
                    &table::render_bench_failures(&r),
                )?;
                write_out(
                    out,
                    files::BENCH_META,
                    &table::render_json(
                        &serde_json::json!({ "machine": r.machine, "failures": r.failures.len() }),
                    ),
                )?;
                *report = text;
                Ok(())
            })
        }
        Kind::Summary => {
            let m_path = required(&cfg.summary.mshap, "--mshap")?;
            let c_path = required(&cfg.summary.covariates, "--covariates")?;
            Box::new(move |out, report| {
                let m = ShapTable::read(&m_path)?;
                let (cov_names, cov) = table::read_numeric_csv(&c_path)?;
                let (imp, obs) = summary_outputs(&m, &cov_names, &cov)?;
                write_out(out, files::IMPORTANCE, &imp)?;
                write_out(out, files::OBSERVATIONS, &obs)?;
                *report = imp;
                Ok(())
            })
        }
    };

    let threads = cfg.threads.unwrap_or(0);
    let echo = cfg.to_toml()?;
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    write_out(&out, RESOLVED_CONFIG, &echo)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {threads} threads: {e}")))?;
    pool.install(|| job(&out, &mut report))?;
    Ok(report)
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(report) => {
            print!("{report}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: Cli) -> Result<String> {
    let (flags, config_path, kind) = flags_config(cli)?;
    let base = match &config_path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    execute(base.overlay(flags), kind)
}
