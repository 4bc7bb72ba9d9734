//! Regenerates the CLI test fixtures under `tests/fixtures`.
//!
//! cargo run --example gen_fixtures

use std::fs;
use std::path::Path;

use mshap::shapley::{BackgroundSet, ExactShapley, ProductModel};
use mshap::simulation::{gen_covariates, CovariateSpec, ResponseFunction, ResponseModel};
use mshap::table::{fmt_f64, ShapTable};
use mshap::{Matrix, ShapExplanation};

fn names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("x{j}")).collect()
}

fn write_covariates(path: &Path, x: &Matrix) {
    let mut text = names(x.cols()).join(",");
    text.push('\n');
    for row in x.iter_rows() {
        text.push_str(
            &row.iter()
                .map(|&v| fmt_f64(v))
                .collect::<Vec<_>>()
                .join(","),
        );
        text.push('\n');
    }
    fs::write(path, text).unwrap();
}

fn named(e: ShapExplanation) -> ShapExplanation {
    let (v, b, pred, _) = e.into_parts();
    let p = v.cols();
    ShapExplanation::new(v, b, pred, Some(names(p))).unwrap()
}

fn scenario(dir: &Path, y1: ResponseFunction, y2: ResponseFunction, seed: u64) {
    fs::create_dir_all(dir).unwrap();
    let spec = CovariateSpec::three_variable();
    let x = loop_guarded(&spec, y2, seed);
    let bg = BackgroundSet::new(x.clone()).unwrap();
    let f = ResponseModel { func: y1, arity: 3 };
    let g = ResponseModel { func: y2, arity: 3 };
    let ex = ExactShapley::default();
    let ef = named(ex.explain(&f, &x, &bg).unwrap());
    let eg = named(ex.explain(&g, &x, &bg).unwrap());
    let eh = named(ex.explain(&ProductModel { f, g }, &x, &bg).unwrap());
    ShapTable::from_explanation(&ef)
        .write(&dir.join("f.csv"))
        .unwrap();
    ShapTable::from_explanation(&eg)
        .write(&dir.join("g.csv"))
        .unwrap();
    ShapTable::from_explanation(&eh)
        .write(&dir.join("reference.csv"))
        .unwrap();
    write_covariates(&dir.join("covariates.csv"), &x);
    fs::write(
        dir.join("simulate.toml"),
        format!(
            "seed = {seed}\n\n[simulate]\ny1 = [\"{y1}\"]\ny2 = [\"{y2}\"]\ntheta1 = [1.5, 20.5]\ntheta2 = [1.0]\nn = 20\n"
        ),
    )
    .unwrap();
}

/// 24 rows clear of the denominator guard.
fn loop_guarded(spec: &CovariateSpec, y2: ResponseFunction, seed: u64) -> Matrix {
    let raw = gen_covariates(spec, 200, seed).unwrap();
    let keep: Vec<Vec<f64>> = raw
        .iter_rows()
        .filter(|r| y2.denominator(r).is_none_or(|d| d.abs() >= 1e-3))
        .take(24)
        .map(<[f64]>::to_vec)
        .collect();
    Matrix::from_rows(&keep).unwrap()
}

/// Single feature: the product attribution is forced to x_hat * y_hat - mu_h.
fn single_feature(dir: &Path) {
    fs::create_dir_all(dir).unwrap();
    let x = gen_covariates(&CovariateSpec::new(vec![(-2.0, 3.0)]).unwrap(), 15, 7).unwrap();
    let bg = BackgroundSet::new(x.clone()).unwrap();
    let f = mshap::FnModel::new(1, |v: &[f64]| 1.0 + 0.5 * v[0]);
    let g = mshap::FnModel::new(1, |v: &[f64]| (0.3 * v[0]).exp());
    let ex = ExactShapley::default();
    let ef = named(ex.explain(&f, &x, &bg).unwrap());
    let eg = named(ex.explain(&g, &x, &bg).unwrap());
    let eh = named(ex.explain(&ProductModel { f: &f, g: &g }, &x, &bg).unwrap());
    ShapTable::from_explanation(&ef)
        .write(&dir.join("f.csv"))
        .unwrap();
    ShapTable::from_explanation(&eg)
        .write(&dir.join("g.csv"))
        .unwrap();
    ShapTable::from_explanation(&eh)
        .write(&dir.join("reference.csv"))
        .unwrap();
    write_covariates(&dir.join("covariates.csv"), &x);
    fs::write(
        dir.join("simulate.toml"),
        "seed = 3\n\n[simulate]\ny1 = [\"Y1A\"]\ny2 = [\"ONE\"]\ntheta1 = [1.5]\ntheta2 = [1.0]\nn = 10\n",
    )
    .unwrap();
}

/// g is the constant 1: zero attributions, baseline 1.
fn unit_second_part(dir: &Path) {
    fs::create_dir_all(dir).unwrap();
    let x = gen_covariates(&CovariateSpec::symmetric_unit(4), 12, 11).unwrap();
    let bg = BackgroundSet::new(x.clone()).unwrap();
    let f = mshap::FnModel::new(4, |v: &[f64]| v[0] - 2.0 * v[1] * v[2] + v[3].powi(2));
    let ex = ExactShapley::default();
    let ef = named(ex.explain(&f, &x, &bg).unwrap());
    let eg = named(ShapExplanation::from_values(Matrix::zeros(12, 4), 1.0, None).unwrap());
    ShapTable::from_explanation(&ef)
        .write(&dir.join("f.csv"))
        .unwrap();
    ShapTable::from_explanation(&eg)
        .write(&dir.join("g.csv"))
        .unwrap();
    ShapTable::from_explanation(&ef)
        .write(&dir.join("reference.csv"))
        .unwrap();
    write_covariates(&dir.join("covariates.csv"), &x);
    fs::write(
        dir.join("simulate.toml"),
        "seed = 5\n\n[simulate]\ny1 = [\"Y1B\"]\ny2 = [\"ONE\"]\ntheta1 = [10.5]\ntheta2 = [21.0]\nn = 12\n",
    )
    .unwrap();
}

fn main() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    scenario(
        &root.join("y1a_y2c"),
        ResponseFunction::Y1A,
        ResponseFunction::Y2C,
        101,
    );
    scenario(
        &root.join("y1b_y2e"),
        ResponseFunction::Y1B,
        ResponseFunction::Y2E,
        202,
    );
    scenario(
        &root.join("y1a_y2f"),
        ResponseFunction::Y1A,
        ResponseFunction::Y2F,
        303,
    );
    single_feature(&root.join("single_feature"));
    unit_second_part(&root.join("unit_second_part"));
    println!("fixtures written to {}", root.display());
}
