//! File formats: attribution tables with a JSON sidecar, and the flat
//! outputs of the score, simulate, bench and summary-data commands.
//!
//! Every writer here renders to a string first, so callers can compare the
//! bytes a command wrote with the bytes the library would produce.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explanation::{Attribution, ShapExplanation};
use crate::matrix::Matrix;
use crate::scoring::ScoreBreakdown;
use crate::simulation::bench::BenchReport;
use crate::simulation::scenario::GridTable;
use crate::two_part::{AlphaMethod, MshapExplanation};

/// Column name used for predictions when a table is written by this crate.
pub const PREDICTION_COLUMN: &str = "prediction";

/// 17 significant digits: enough to round-trip any f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// `dir/name.csv` -> `dir/name.meta.json`.
pub fn meta_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    let result = fs::File::create(&tmp)
        .and_then(|mut f| {
            f.write_all(bytes)?;
            f.sync_all()
        })
        .and_then(|_| fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

/// Extra sidecar fields written alongside an mSHAP table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MshapMeta {
    pub method: AlphaMethod,
    pub mu_f: f64,
    pub mu_g: f64,
    pub alpha: f64,
    /// Number of rows whose weighting fell back to uniform.
    pub advisories: usize,
    pub fallback_rows: Vec<usize>,
}

/// Contents of `<basename>.meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableMeta {
    pub baseline: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction_column: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mshap: Option<MshapMeta>,
}

impl TableMeta {
    pub fn new(baseline: f64) -> Self {
        Self {
            baseline,
            prediction_column: None,
            mshap: None,
        }
    }
}

/// An attribution matrix as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapTable {
    pub feature_names: Vec<String>,
    pub values: Matrix,
    pub predictions: Option<Vec<f64>>,
    pub meta: TableMeta,
}

fn default_names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("x{j}")).collect()
}

fn csv_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

impl ShapTable {
    /// Table for a part explanation, including its prediction column.
    pub fn from_explanation(expl: &ShapExplanation) -> Self {
        let names = expl
            .feature_names()
            .map(<[String]>::to_vec)
            .unwrap_or_else(|| default_names(expl.n_features()));
        Self {
            feature_names: names,
            values: expl.values().clone(),
            predictions: Some(expl.predictions().to_vec()),
            meta: TableMeta {
                baseline: expl.baseline(),
                prediction_column: Some(PREDICTION_COLUMN.into()),
                mshap: None,
            },
        }
    }

    pub fn from_mshap(expl: &MshapExplanation) -> Self {
        let names = expl
            .feature_names
            .clone()
            .unwrap_or_else(|| default_names(expl.values.cols()));
        Self {
            feature_names: names,
            values: expl.values.clone(),
            predictions: Some(expl.predictions.clone()),
            meta: TableMeta {
                baseline: expl.mu_h,
                prediction_column: Some(PREDICTION_COLUMN.into()),
                mshap: Some(MshapMeta {
                    method: expl.method,
                    mu_f: expl.mu_f,
                    mu_g: expl.mu_g,
                    alpha: expl.alpha,
                    advisories: expl.fallback_rows.len(),
                    fallback_rows: expl.fallback_rows.clone(),
                }),
            },
        }
    }

    /// Predictions come from the stored column when present, otherwise they
    /// are reconstructed as baseline plus row sum.
    pub fn to_explanation(&self) -> Result<ShapExplanation> {
        let names = Some(self.feature_names.clone());
        match &self.predictions {
            Some(pred) => {
                ShapExplanation::new(self.values.clone(), self.meta.baseline, pred.clone(), names)
            }
            None => ShapExplanation::from_values(self.values.clone(), self.meta.baseline, names),
        }
    }

    /// The CSV body and the sidecar JSON.
    pub fn render(&self) -> Result<(String, String)> {
        let p = self.values.cols();
        if self.feature_names.len() != p {
            return Err(Error::dim(format!(
                "{} names for {p} columns",
                self.feature_names.len()
            )));
        }
        let pred_name = self.meta.prediction_column.as_deref();
        if self.predictions.is_some() && pred_name.is_none() {
            return Err(Error::InvalidInput(
                "prediction values need a column name".into(),
            ));
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        if self.predictions.is_some() {
            header.extend(pred_name);
        }
        let werr = |e: csv::Error| Error::InvalidInput(format!("cannot render table: {e}"));
        w.write_record(&header).map_err(werr)?;
        for (i, row) in self.values.iter_rows().enumerate() {
            let mut cells: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
            if let Some(pred) = &self.predictions {
                cells.push(fmt_f64(pred[i]));
            }
            w.write_record(&cells).map_err(werr)?;
        }
        let body = w
            .into_inner()
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        let body = String::from_utf8(body).expect("csv output is utf-8");
        Ok((body, render_json(&self.meta)))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let (body, meta) = self.render()?;
        write_atomic(path, body.as_bytes())?;
        write_atomic(&meta_path(path), meta.as_bytes())
    }

    /// Reads `path` and its sidecar.
    pub fn read(path: &Path) -> Result<Self> {
        let mp = meta_path(path);
        let meta_text = fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
        let meta: TableMeta = serde_json::from_str(&meta_text).map_err(|e| csv_err(&mp, e))?;
        let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&body, meta, path)
    }

    /// Parses CSV text; `origin` is only used in error messages.
    pub fn parse(body: &str, meta: TableMeta, origin: &Path) -> Result<Self> {
        let (header, data) = parse_numeric_csv(body, origin)?;
        let pred_col = match &meta.prediction_column {
            Some(name) => Some(header.iter().position(|h| h == name).ok_or_else(|| {
                csv_err(origin, format!("prediction column {name:?} not in header"))
            })?),
            None => None,
        };
        let feature_cols: Vec<usize> = (0..header.len()).filter(|&c| Some(c) != pred_col).collect();
        if feature_cols.is_empty() {
            return Err(csv_err(origin, "no feature columns"));
        }
        let feature_names = feature_cols.iter().map(|&c| header[c].clone()).collect();
        let values = data.select_columns(&feature_cols);
        let predictions = pred_col.map(|c| data.column(c));
        Ok(Self {
            feature_names,
            values,
            predictions,
            meta,
        })
    }
}

/// A headered CSV of finite numbers, e.g. a covariate file.
pub fn read_numeric_csv(path: &Path) -> Result<(Vec<String>, Matrix)> {
    let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_numeric_csv(&body, path)
}

pub fn parse_numeric_csv(body: &str, origin: &Path) -> Result<(Vec<String>, Matrix)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(body.as_bytes());
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_err(origin, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().any(String::is_empty) {
        return Err(csv_err(origin, "header must name every column"));
    }
    for (j, h) in header.iter().enumerate() {
        if header[..j].contains(h) {
            return Err(csv_err(origin, format!("duplicate column {h:?}")));
        }
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(origin, e))?;
        let row = rec
            .iter()
            .enumerate()
            .map(|(j, cell)| {
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| {
                        csv_err(
                            origin,
                            format!(
                                "row {}, column {:?}: {cell:?} is not a finite number",
                                i + 1,
                                header[j]
                            ),
                        )
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(csv_err(origin, "no data rows"));
    }
    Ok((header, Matrix::from_rows(&rows)?))
}

pub fn render_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}

/// Output of the score command.
pub fn render_score(score: &ScoreBreakdown) -> String {
    render_json(score)
}

fn push_line(out: &mut String, cells: &[String]) {
    out.push_str(&cells.join(","));
    out.push('\n');
}

const BREAKDOWN_COLUMNS: [&str; 6] = [
    "score",
    "direction_score",
    "relative_value_score",
    "rank_score",
    "pct_same_sign",
    "pct_same_rank",
];

fn breakdown_cells(b: &ScoreBreakdown) -> [String; 6] {
    [
        fmt_f64(b.score),
        fmt_f64(b.direction_score),
        fmt_f64(b.relative_value_score),
        fmt_f64(b.rank_score),
        fmt_f64(b.pct_same_sign),
        fmt_f64(b.pct_same_rank),
    ]
}

/// One row per (scenario, method).
pub fn render_grid(table: &GridTable) -> String {
    let mut out = String::new();
    let mut header: Vec<String> = [
        "cell",
        "y1",
        "y2",
        "theta1",
        "theta2",
        "n",
        "p",
        "background_size",
        "seed",
        "method",
    ]
    .map(String::from)
    .to_vec();
    header.extend(BREAKDOWN_COLUMNS.map(String::from));
    header.extend(["fallback_rows", "resampled_rows"].map(String::from));
    push_line(&mut out, &header);
    for r in &table.rows {
        let s = &r.spec;
        let mut cells = vec![
            r.cell.to_string(),
            s.y1.to_string(),
            s.y2.to_string(),
            fmt_f64(s.theta1),
            fmt_f64(s.theta2),
            s.n.to_string(),
            s.n_features().to_string(),
            s.background_size.to_string(),
            s.seed.to_string(),
            r.method.to_string(),
        ];
        cells.extend(breakdown_cells(&r.breakdown));
        cells.push(r.fallback_rows.to_string());
        cells.push(r.resampled_rows.to_string());
        push_line(&mut out, &cells);
    }
    out
}

/// Cells that failed, with their error messages.
pub fn render_grid_failures(table: &GridTable) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["cell", "y1", "y2", "theta1", "theta2", "seed", "message"])
        .expect("in-memory write");
    for f in &table.failures {
        w.write_record([
            f.cell.to_string(),
            f.spec.y1.to_string(),
            f.spec.y2.to_string(),
            fmt_f64(f.spec.theta1),
            fmt_f64(f.spec.theta2),
            f.spec.seed.to_string(),
            f.message.clone(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8")
}

/// Per-method means over the grid.
pub fn render_grid_summary(table: &GridTable) -> String {
    let mut out = String::new();
    let mut header = vec!["method".to_string()];
    header.extend(BREAKDOWN_COLUMNS.map(String::from));
    push_line(&mut out, &header);
    for (m, b) in table.method_means() {
        let mut cells = vec![m.to_string()];
        cells.extend(breakdown_cells(&b));
        push_line(&mut out, &cells);
    }
    out
}

pub fn render_bench(report: &BenchReport) -> String {
    let mut out = String::from("p,n,method,wall_seconds,per_observation_seconds\n");
    for r in &report.records {
        push_line(
            &mut out,
            &[
                r.p.to_string(),
                r.n.to_string(),
                r.method.to_string(),
                fmt_f64(r.wall_seconds),
                fmt_f64(r.per_observation_seconds),
            ],
        );
    }
    out
}

pub fn render_bench_failures(report: &BenchReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["p", "n", "method", "message"])
        .expect("in-memory write");
    for f in &report.failures {
        w.write_record([
            f.p.to_string(),
            f.n.to_string(),
            f.method.to_string(),
            f.message.clone(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8")
}

/// Mean absolute attribution per feature, largest first; ties by name.
pub fn importance(names: &[String], values: &Matrix) -> Vec<(String, f64)> {
    let n = values.rows() as f64;
    let mut out: Vec<(String, f64)> = names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let s = crate::numeric::compensated_sum(values.iter_rows().map(|r| r[j].abs()));
            (name.clone(), s / n)
        })
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

fn quote(s: &str) -> String {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record([s]).expect("in-memory write");
    let mut text = String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8");
    text.truncate(text.trim_end_matches(['\n', '\r']).len());
    text
}

pub fn render_importance(rows: &[(String, f64)]) -> String {
    let mut out = String::from("rank,feature,mean_abs_value\n");
    for (k, (name, v)) in rows.iter().enumerate() {
        push_line(&mut out, &[(k + 1).to_string(), quote(name), fmt_f64(*v)]);
    }
    out
}

/// Long format: one record per (row, feature), rows numbered from 1.
pub fn render_observations(
    names: &[String],
    values: &Matrix,
    covariates: &Matrix,
) -> Result<String> {
    if values.shape() != covariates.shape() || names.len() != values.cols() {
        return Err(Error::dim(format!(
            "attributions are {:?}, covariates {:?}, {} names",
            values.shape(),
            covariates.shape(),
            names.len()
        )));
    }
    let quoted: Vec<String> = names.iter().map(|n| quote(n)).collect();
    let mut out = String::from("row,feature,covariate_value,shap_value\n");
    for i in 0..values.rows() {
        for (j, name) in quoted.iter().enumerate() {
            push_line(
                &mut out,
                &[
                    (i + 1).to_string(),
                    name.clone(),
                    fmt_f64(covariates.get(i, j)),
                    fmt_f64(values.get(i, j)),
                ],
            );
        }
    }
    Ok(out)
}

/// Reorders covariate columns to match `names`; errors name the first
/// feature with no covariate column.
pub fn align_covariates(names: &[String], cov_names: &[String], cov: &Matrix) -> Result<Matrix> {
    let order = names
        .iter()
        .map(|n| {
            cov_names
                .iter()
                .position(|c| c == n)
                .ok_or_else(|| Error::dim(format!("no covariate column for feature {n:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(cov.select_columns(&order))
}
