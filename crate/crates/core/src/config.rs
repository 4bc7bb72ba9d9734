//! Run configuration, read from TOML and overridden by command-line flags.
//!
//! Relative paths inside a config file are resolved against the file's
//! directory. The resolved config that a run echoes into its output
//! directory carries absolute paths, so it can be fed back from anywhere.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::shapley::DEFAULT_ENUM_LIMIT;
use crate::simulation::bench::BenchOptions;
use crate::simulation::response::{CovariateSpec, ResponseFunction};
use crate::simulation::scenario::GridSpec;
use crate::two_part::AlphaMethod;

pub const RESOLVED_CONFIG: &str = "resolved_config.toml";

/// `mu_h` for the combine command: a number, or `"auto"` for the mean of
/// rowwise prediction products.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MuH {
    Value(f64),
    Auto,
}

impl Serialize for MuH {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            MuH::Value(v) => s.serialize_f64(*v),
            MuH::Auto => s.serialize_str("auto"),
        }
    }
}

impl<'de> Deserialize<'de> for MuH {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Int(i64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(MuH::Value(v)),
            Raw::Int(v) => Ok(MuH::Value(v as f64)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

impl FromStr for MuH {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(MuH::Auto);
        }
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(MuH::Value(v)),
            _ => Err(Error::Config(format!(
                "mu_h must be a finite number or \"auto\", got {s:?}"
            ))),
        }
    }
}

impl fmt::Display for MuH {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MuH::Value(v) => write!(f, "{v}"),
            MuH::Auto => f.write_str("auto"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CombineSection {
    pub f_shap: Option<PathBuf>,
    pub g_shap: Option<PathBuf>,
    pub mu_h: Option<MuH>,
    pub method: Option<AlphaMethod>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreSection {
    pub candidate: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub theta1: Option<f64>,
    pub theta2: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridPreset {
    /// 108 cells.
    Desk,
    /// 2400 cells.
    Full,
}

/// Grid axes; anything left out comes from the preset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub preset: Option<GridPreset>,
    pub y1: Option<Vec<ResponseFunction>>,
    pub y2: Option<Vec<ResponseFunction>>,
    pub theta1: Option<Vec<f64>>,
    pub theta2: Option<Vec<f64>>,
    pub n: Option<usize>,
    pub background_size: Option<usize>,
    pub covariates: Option<CovariateSpec>,
    pub permutations: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    pub p_values: Option<Vec<usize>>,
    pub n_values: Option<Vec<usize>>,
    pub background_size: Option<usize>,
    pub repetitions: Option<usize>,
    pub permutations: Option<usize>,
    pub min_rep_seconds: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummarySection {
    pub mshap: Option<PathBuf>,
    pub covariates: Option<PathBuf>,
}

/// Everything a run can be configured with. Every field is optional so
/// that a file and the command line can each supply part of it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    /// Worker threads; 0 or absent uses every core.
    pub threads: Option<usize>,
    pub enum_limit: Option<usize>,
    #[serde(default, skip_serializing_if = "is_default")]
    pub combine: CombineSection,
    #[serde(default, skip_serializing_if = "is_default")]
    pub score: ScoreSection,
    #[serde(default, skip_serializing_if = "is_default")]
    pub simulate: SimulateSection,
    #[serde(default, skip_serializing_if = "is_default")]
    pub bench: BenchSection,
    #[serde(default, skip_serializing_if = "is_default")]
    pub summary: SummarySection,
}

fn is_default<T: Default + PartialEq>(v: &T) -> bool {
    *v == T::default()
}

pub const DEFAULT_SEED: u64 = 20_210_000;
pub const DEFAULT_OUT_DIR: &str = "mshap-out";
pub const DEFAULT_THETA1: f64 = 1.5;
pub const DEFAULT_THETA2: f64 = 1.0;

fn rebase(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

fn absolute(p: &mut Option<PathBuf>) -> Result<()> {
    if let Some(path) = p {
        if path.is_relative() {
            let cwd = std::env::current_dir().map_err(|e| Error::io(".", e))?;
            *path = cwd.join(&*path);
        }
    }
    Ok(())
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Loads a config file, resolving its relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.for_each_path(|p| {
            rebase(base, p);
            Ok(())
        })?;
        Ok(cfg)
    }

    fn for_each_path(
        &mut self,
        mut f: impl FnMut(&mut Option<PathBuf>) -> Result<()>,
    ) -> Result<()> {
        f(&mut self.out_dir)?;
        f(&mut self.combine.f_shap)?;
        f(&mut self.combine.g_shap)?;
        f(&mut self.score.candidate)?;
        f(&mut self.score.reference)?;
        f(&mut self.summary.mshap)?;
        f(&mut self.summary.covariates)
    }

    /// Fields set in `other` replace those in `self`.
    pub fn overlay(mut self, other: RunConfig) -> Self {
        fn set<T>(dst: &mut Option<T>, src: Option<T>) {
            if src.is_some() {
                *dst = src;
            }
        }
        set(&mut self.out_dir, other.out_dir);
        set(&mut self.seed, other.seed);
        set(&mut self.threads, other.threads);
        set(&mut self.enum_limit, other.enum_limit);
        let (c, o) = (&mut self.combine, other.combine);
        set(&mut c.f_shap, o.f_shap);
        set(&mut c.g_shap, o.g_shap);
        set(&mut c.mu_h, o.mu_h);
        set(&mut c.method, o.method);
        let (s, o) = (&mut self.score, other.score);
        set(&mut s.candidate, o.candidate);
        set(&mut s.reference, o.reference);
        set(&mut s.theta1, o.theta1);
        set(&mut s.theta2, o.theta2);
        let (s, o) = (&mut self.simulate, other.simulate);
        set(&mut s.preset, o.preset);
        set(&mut s.y1, o.y1);
        set(&mut s.y2, o.y2);
        set(&mut s.theta1, o.theta1);
        set(&mut s.theta2, o.theta2);
        set(&mut s.n, o.n);
        set(&mut s.background_size, o.background_size);
        set(&mut s.covariates, o.covariates);
        set(&mut s.permutations, o.permutations);
        let (b, o) = (&mut self.bench, other.bench);
        set(&mut b.p_values, o.p_values);
        set(&mut b.n_values, o.n_values);
        set(&mut b.background_size, o.background_size);
        set(&mut b.repetitions, o.repetitions);
        set(&mut b.permutations, o.permutations);
        set(&mut b.min_rep_seconds, o.min_rep_seconds);
        let (s, o) = (&mut self.summary, other.summary);
        set(&mut s.mshap, o.mshap);
        set(&mut s.covariates, o.covariates);
        self
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn enum_limit(&self) -> usize {
        self.enum_limit.unwrap_or(DEFAULT_ENUM_LIMIT)
    }

    /// Fills global defaults and makes every path absolute.
    pub fn resolve_globals(&mut self) -> Result<()> {
        self.out_dir = Some(self.out_dir());
        self.seed = Some(self.seed());
        self.enum_limit = Some(self.enum_limit());
        self.threads = Some(self.threads.unwrap_or(0));
        self.for_each_path(absolute)
    }

    /// Grid for the simulate command; also writes the resolved axes back.
    pub fn resolve_grid(&mut self) -> Result<GridSpec> {
        let s = &mut self.simulate;
        let preset = s.preset.unwrap_or(GridPreset::Desk);
        let base = match preset {
            GridPreset::Desk => GridSpec::desk_scale(0),
            GridPreset::Full => GridSpec::full(0),
        };
        let n = s.n.unwrap_or(base.n);
        let grid = GridSpec {
            y1: s.y1.clone().unwrap_or(base.y1),
            y2: s.y2.clone().unwrap_or(base.y2),
            theta1: s.theta1.clone().unwrap_or(base.theta1),
            theta2: s.theta2.clone().unwrap_or(base.theta2),
            n,
            background_size: s.background_size.unwrap_or(n.min(base.background_size)),
            covariates: s.covariates.clone().unwrap_or(base.covariates),
            seed: self.seed.unwrap_or(DEFAULT_SEED),
            enum_limit: self.enum_limit.unwrap_or(DEFAULT_ENUM_LIMIT),
            permutations: s.permutations.unwrap_or(base.permutations),
        };
        if grid.y1.is_empty()
            || grid.y2.is_empty()
            || grid.theta1.is_empty()
            || grid.theta2.is_empty()
        {
            return Err(Error::Config(
                "every grid axis needs at least one value".into(),
            ));
        }
        grid.covariates
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        // validate each cell up front so a bad config fails before any work
        for cell in grid.cells() {
            cell.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        *s = SimulateSection {
            preset: Some(preset),
            y1: Some(grid.y1.clone()),
            y2: Some(grid.y2.clone()),
            theta1: Some(grid.theta1.clone()),
            theta2: Some(grid.theta2.clone()),
            n: Some(grid.n),
            background_size: Some(grid.background_size),
            covariates: Some(grid.covariates.clone()),
            permutations: Some(grid.permutations),
        };
        Ok(grid)
    }

    /// Bench sizes and options, written back in resolved form.
    pub fn resolve_bench(&mut self) -> Result<(Vec<usize>, Vec<usize>, usize, BenchOptions)> {
        let d = BenchOptions::default();
        let b = &mut self.bench;
        let opts = BenchOptions {
            repetitions: b.repetitions.unwrap_or(d.repetitions),
            permutations: b.permutations.unwrap_or(d.permutations),
            enum_limit: self.enum_limit.unwrap_or(DEFAULT_ENUM_LIMIT),
            min_rep_seconds: b.min_rep_seconds.unwrap_or(d.min_rep_seconds),
        };
        opts.validate()?;
        let p_values = b.p_values.clone().unwrap_or_else(|| (2..=12).collect());
        let n_values = b.n_values.clone().unwrap_or_else(|| vec![50]);
        let background = b.background_size.unwrap_or(100);
        if p_values.is_empty()
            || n_values.is_empty()
            || p_values.contains(&0)
            || n_values.contains(&0)
            || background == 0
        {
            return Err(Error::Config(
                "bench sizes must be non-empty lists of positive counts".into(),
            ));
        }
        *b = BenchSection {
            p_values: Some(p_values.clone()),
            n_values: Some(n_values.clone()),
            background_size: Some(background),
            repetitions: Some(opts.repetitions),
            permutations: Some(opts.permutations),
            min_rep_seconds: Some(opts.min_rep_seconds),
        };
        Ok((p_values, n_values, background, opts))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("sead = 3").is_err());
        assert!(RunConfig::parse("[combine]\nmu = 3").is_err());
        assert!(RunConfig::parse("[simulate]\nn = 50\nextra = 1").is_err());
    }

    #[test]
    fn mu_h_forms() {
        let c = RunConfig::parse("[combine]\nmu_h = \"auto\"\nmethod = \"raw\"").unwrap();
        assert_eq!(c.combine.mu_h, Some(MuH::Auto));
        assert_eq!(c.combine.method, Some(AlphaMethod::RawWeights));
        let c = RunConfig::parse("[combine]\nmu_h = 2.5").unwrap();
        assert_eq!(c.combine.mu_h, Some(MuH::Value(2.5)));
        assert!(RunConfig::parse("[combine]\nmu_h = \"soon\"").is_err());
        assert_eq!("AUTO".parse::<MuH>().unwrap(), MuH::Auto);
        assert_eq!("-1e3".parse::<MuH>().unwrap(), MuH::Value(-1000.0));
        assert!("inf".parse::<MuH>().is_err());
    }

    #[test]
    fn overlay_prefers_later_values() {
        let file = RunConfig::parse("seed = 1\n[score]\ntheta1 = 2.0\ntheta2 = 3.0").unwrap();
        let flags = RunConfig {
            seed: Some(9),
            score: ScoreSection {
                theta2: Some(7.0),
                ..Default::default()
            },
            ..Default::default()
        };
        let c = file.overlay(flags);
        assert_eq!(c.seed, Some(9));
        assert_eq!(c.score.theta1, Some(2.0));
        assert_eq!(c.score.theta2, Some(7.0));
    }

    #[test]
    fn resolved_grid_round_trips() {
        let mut c = RunConfig::parse(
            "seed = 4\n[simulate]\ny2 = [\"Y2C\"]\ntheta1 = [1.5]\ntheta2 = [1.0]\nn = 20",
        )
        .unwrap();
        c.resolve_globals().unwrap();
        let grid = c.resolve_grid().unwrap();
        assert_eq!(grid.cells().len(), 2);
        assert_eq!(grid.background_size, 20);
        let echoed = RunConfig::parse(&c.to_toml().unwrap()).unwrap();
        assert_eq!(echoed, c);
        let mut again = echoed;
        assert_eq!(again.resolve_grid().unwrap(), grid);
    }

    #[test]
    fn invalid_grid_fails_early() {
        let mut c = RunConfig::parse("[simulate]\nn = 5").unwrap();
        assert!(matches!(c.resolve_grid(), Err(Error::Config(_))));
        let mut c = RunConfig::parse("[simulate]\ny1 = [\"Y2C\"]").unwrap();
        assert!(c.resolve_grid().is_err());
        assert!(RunConfig::parse("[simulate]\ny1 = [\"Y9\"]").is_err());
    }

    #[test]
    fn bench_defaults() {
        let mut c = RunConfig::default();
        let (p, n, bg, opts) = c.resolve_bench().unwrap();
        assert_eq!(p, (2..=12).collect::<Vec<_>>());
        assert_eq!(n, vec![50]);
        assert_eq!(bg, 100);
        assert_eq!(opts.repetitions, 5);
        let mut c = RunConfig::parse("[bench]\nrepetitions = 3").unwrap();
        assert!(c.resolve_bench().is_err());
    }

    #[test]
    fn config_paths_are_relative_to_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "out_dir = \"out\"\n[combine]\nf_shap = \"f.csv\"\ng_shap = \"/abs/g.csv\"",
        )
        .unwrap();
        let c = RunConfig::load(&path).unwrap();
        assert_eq!(c.out_dir.unwrap(), dir.path().join("out"));
        assert_eq!(c.combine.f_shap.unwrap(), dir.path().join("f.csv"));
        assert_eq!(c.combine.g_shap.unwrap(), PathBuf::from("/abs/g.csv"));
    }
}
