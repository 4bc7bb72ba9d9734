use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mshap::cli::{
    combine_tables, score_tables, summary_outputs, EXIT_DATA, EXIT_RESOURCE, EXIT_USAGE,
};
use mshap::config::{MuH, RunConfig, RESOLVED_CONFIG};
use mshap::simulation::run_grid;
use mshap::table::{self, ShapTable};
use mshap::{AlphaMethod, ScoreParams};

const FIXTURES: [&str; 5] = [
    "y1a_y2c",
    "y1b_y2e",
    "y1a_y2f",
    "single_feature",
    "unit_second_part",
];

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn mshap(args: &[&str]) -> Output {
    mshap_env(args, &[])
}

fn mshap_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mshap"));
    cmd.args(args);
    for (k, _) in std::env::vars() {
        if k.starts_with("MSHAP_") {
            cmd.env_remove(k);
        }
    }
    cmd.envs(env.iter().copied());
    cmd.output().expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: &Path) -> String {
    fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn run_combine(dir: &Path, fx: &Path, method: AlphaMethod) -> PathBuf {
    let out = dir.join(format!("combine-{method}"));
    ok(&mshap(&[
        "combine",
        "--f-shap",
        s(&fx.join("f.csv")),
        "--g-shap",
        s(&fx.join("g.csv")),
        "--mu-h",
        "auto",
        "--method",
        method.as_str(),
        "--out-dir",
        s(&out),
    ]));
    out
}

#[test]
fn combine_matches_library_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    for name in FIXTURES {
        let fx = fixture(name);
        let f = ShapTable::read(&fx.join("f.csv")).unwrap();
        let g = ShapTable::read(&fx.join("g.csv")).unwrap();
        for method in AlphaMethod::ALL {
            let out = run_combine(&tmp.path().join(name), &fx, method);
            let lib = combine_tables(&f, &g, MuH::Auto, method).unwrap();
            let (body, meta) = ShapTable::from_mshap(&lib).render().unwrap();
            assert_eq!(read(&out.join("mshap.csv")), body, "{name} {method}");
            assert_eq!(read(&out.join("mshap.meta.json")), meta, "{name} {method}");
        }
    }
}

#[test]
fn score_matches_library_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    for name in FIXTURES {
        let fx = fixture(name);
        let comb = run_combine(&tmp.path().join(name), &fx, AlphaMethod::AbsoluteWeights);
        let out = tmp.path().join(name).join("score");
        let res = mshap(&[
            "score",
            "--candidate",
            s(&comb.join("mshap.csv")),
            "--reference",
            s(&fx.join("reference.csv")),
            "--theta1",
            "10.5",
            "--theta2",
            "21",
            "--out-dir",
            s(&out),
        ]);
        ok(&res);
        let cand = ShapTable::read(&comb.join("mshap.csv")).unwrap();
        let refr = ShapTable::read(&fx.join("reference.csv")).unwrap();
        let lib = score_tables(&cand, &refr, ScoreParams::new(10.5, 21.0).unwrap()).unwrap();
        let text = table::render_score(&lib);
        assert_eq!(read(&out.join("score.json")), text, "{name}");
        assert_eq!(String::from_utf8(res.stdout).unwrap(), text);
    }
}

#[test]
fn simulate_matches_library_bytes_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    for name in FIXTURES {
        let cfg_path = fixture(name).join("simulate.toml");
        let out = tmp.path().join(name).join("sim");
        ok(&mshap(&[
            "simulate",
            "--config",
            s(&cfg_path),
            "--out-dir",
            s(&out),
        ]));

        let mut cfg = RunConfig::load(&cfg_path).unwrap();
        cfg.resolve_globals().unwrap();
        let grid = cfg.resolve_grid().unwrap();
        let lib = run_grid(&grid.cells()).unwrap();
        assert_eq!(
            read(&out.join("simulation.csv")),
            table::render_grid(&lib),
            "{name}"
        );
        assert_eq!(
            read(&out.join("simulation_summary.csv")),
            table::render_grid_summary(&lib)
        );
        let rows = read(&out.join("simulation.csv")).lines().count() - 1;
        assert_eq!(rows, grid.cells().len() * 4);

        // re-feeding the echoed config reproduces the run
        let again = tmp.path().join(name).join("sim-again");
        ok(&mshap(&[
            "simulate",
            "--config",
            s(&out.join(RESOLVED_CONFIG)),
            "--out-dir",
            s(&again),
        ]));
        assert_eq!(
            read(&again.join("simulation.csv")),
            read(&out.join("simulation.csv"))
        );
    }
}

#[test]
fn single_cell_config_gives_four_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("one.toml");
    fs::write(
        &cfg,
        "[simulate]\ny1 = [\"Y1A\"]\ny2 = [\"Y2D\"]\ntheta1 = [1.5]\ntheta2 = [1.0]\n",
    )
    .unwrap();
    ok(&mshap(&[
        "simulate",
        "--config",
        s(&cfg),
        "--out-dir",
        s(&tmp.path().join("o")),
    ]));
    let text = read(&tmp.path().join("o/simulation.csv"));
    assert_eq!(text.lines().count(), 5);
    for m in ["uniform", "raw", "absolute", "squared"] {
        assert!(text.contains(&format!(",{m},")), "{m} missing");
    }
}

#[test]
fn summary_data_matches_library_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    for name in FIXTURES {
        let fx = fixture(name);
        let comb = run_combine(&tmp.path().join(name), &fx, AlphaMethod::SquaredWeights);
        let out = tmp.path().join(name).join("summary");
        ok(&mshap(&[
            "summary-data",
            "--mshap",
            s(&comb.join("mshap.csv")),
            "--covariates",
            s(&fx.join("covariates.csv")),
            "--out-dir",
            s(&out),
        ]));
        let m = ShapTable::read(&comb.join("mshap.csv")).unwrap();
        let (names, cov) = table::read_numeric_csv(&fx.join("covariates.csv")).unwrap();
        let (imp, obs) = summary_outputs(&m, &names, &cov).unwrap();
        assert_eq!(read(&out.join("importance.csv")), imp);
        assert_eq!(read(&out.join("observations.csv")), obs);
    }
}

#[test]
fn importance_order_agrees_with_scoring_ranks() {
    let fx = fixture("y1a_y2c");
    let f = ShapTable::read(&fx.join("f.csv")).unwrap();
    let g = ShapTable::read(&fx.join("g.csv")).unwrap();
    let m = combine_tables(&f, &g, MuH::Auto, AlphaMethod::AbsoluteWeights).unwrap();
    let names: Vec<String> = (1..=3).map(|j| format!("x{j}")).collect();
    let imp = table::importance(&names, &m.values);
    let means: Vec<f64> = (0..3)
        .map(|j| m.values.column(j).iter().map(|v| v.abs()).sum::<f64>() / m.values.rows() as f64)
        .collect();
    let ranks = mshap::scoring::importance_ranks(&means);
    for (pos, (name, _)) in imp.iter().enumerate() {
        let j = names.iter().position(|n| n == name).unwrap();
        assert_eq!(ranks[j], pos + 1, "{name}");
    }
}

#[test]
fn single_row_observations_add_up_to_the_prediction() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("m.csv"), "a,b,prediction\n1.5,-0.25,3.25\n").unwrap();
    fs::write(
        dir.join("m.meta.json"),
        "{\"baseline\": 2.0, \"prediction_column\": \"prediction\"}",
    )
    .unwrap();
    fs::write(dir.join("cov.csv"), "b,a\n7,8\n").unwrap();
    ok(&mshap(&[
        "summary-data",
        "--mshap",
        s(&dir.join("m.csv")),
        "--covariates",
        s(&dir.join("cov.csv")),
        "--out-dir",
        s(&dir.join("o")),
    ]));
    let obs = read(&dir.join("o/observations.csv"));
    let lines: Vec<&str> = obs.lines().skip(1).collect();
    assert_eq!(lines.len(), 2);
    let total: f64 = lines
        .iter()
        .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
        .sum();
    assert_eq!(2.0 + total, 3.25);
    assert!(lines[0].starts_with("1,a,8.0"));
}

#[test]
fn unit_second_part_returns_the_first_part() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = fixture("unit_second_part");
    for method in AlphaMethod::ALL {
        let out = run_combine(tmp.path(), &fx, method);
        let m = ShapTable::read(&out.join("mshap.csv")).unwrap();
        let f = ShapTable::read(&fx.join("f.csv")).unwrap();
        for (a, b) in m.values.as_slice().iter().zip(f.values.as_slice()) {
            assert!(
                (a - b).abs() <= 1e-12 * b.abs().max(1.0),
                "{method}: {a} vs {b}"
            );
        }
    }
}

#[test]
fn single_feature_output_is_forced() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = fixture("single_feature");
    let out = run_combine(tmp.path(), &fx, AlphaMethod::RawWeights);
    let m = ShapTable::read(&out.join("mshap.csv")).unwrap();
    let f = ShapTable::read(&fx.join("f.csv")).unwrap();
    let g = ShapTable::read(&fx.join("g.csv")).unwrap();
    let (pf, pg) = (f.predictions.unwrap(), g.predictions.unwrap());
    for i in 0..m.values.rows() {
        let want = pf[i] * pg[i] - m.meta.baseline;
        assert!((m.values.get(i, 0) - want).abs() <= 1e-12 * want.abs().max(1.0));
    }
}

#[test]
fn round_trip_through_files_is_exact() {
    let tmp = tempfile::tempdir().unwrap();
    for name in FIXTURES {
        let t = ShapTable::read(&fixture(name).join("f.csv")).unwrap();
        let p = tmp.path().join(format!("{name}.csv"));
        t.write(&p).unwrap();
        let back = ShapTable::read(&p).unwrap();
        assert_eq!(back, t);
        assert_eq!(read(&p), read(&fixture(name).join("f.csv")));
    }
}

#[test]
fn env_overrides_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = fixture("y1b_y2e");
    let via_flag = run_combine(tmp.path(), &fx, AlphaMethod::RawWeights);
    let via_env = tmp.path().join("env");
    ok(&mshap_env(
        &["combine"],
        &[
            ("MSHAP_F_SHAP", s(&fx.join("f.csv"))),
            ("MSHAP_G_SHAP", s(&fx.join("g.csv"))),
            ("MSHAP_METHOD", "raw"),
            ("MSHAP_MU_H", "auto"),
            ("MSHAP_OUT_DIR", s(&via_env)),
        ],
    ));
    assert_eq!(
        read(&via_env.join("mshap.csv")),
        read(&via_flag.join("mshap.csv"))
    );
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let fx = fixture("y1a_y2c");

    // mismatched headers
    let g = ShapTable::read(&fx.join("g.csv")).unwrap();
    let mut renamed = g.clone();
    renamed.feature_names[1] = "other".into();
    renamed.write(&dir.join("g2.csv")).unwrap();
    let out = mshap(&[
        "combine",
        "--f-shap",
        s(&fx.join("f.csv")),
        "--g-shap",
        s(&dir.join("g2.csv")),
        "--out-dir",
        s(&dir.join("o")),
    ]);
    assert_eq!(out.status.code(), Some(EXIT_DATA));
    assert!(String::from_utf8_lossy(&out.stderr).contains("feature column 2"));

    // usage and config errors
    assert_eq!(
        mshap(&["combine", "--method", "weird"]).status.code(),
        Some(EXIT_USAGE)
    );
    assert_eq!(mshap(&["nonsense"]).status.code(), Some(EXIT_USAGE));
    fs::write(dir.join("bad.toml"), "[simulate]\nrows = 3\n").unwrap();
    let out = mshap(&[
        "simulate",
        "--config",
        s(&dir.join("bad.toml")),
        "--out-dir",
        s(&dir.join("b")),
    ]);
    assert_eq!(out.status.code(), Some(EXIT_USAGE));
    assert!(!dir.join("b").exists(), "no work before config validation");

    // inaccurate input explanation
    let mut broken = g;
    let v = broken.values.get(0, 0);
    broken.values.set(0, 0, v + 1.0);
    broken.write(&dir.join("g3.csv")).unwrap();
    let out = mshap(&[
        "combine",
        "--f-shap",
        s(&fx.join("f.csv")),
        "--g-shap",
        s(&dir.join("g3.csv")),
        "--out-dir",
        s(&dir.join("o3")),
    ]);
    assert_eq!(out.status.code(), Some(EXIT_DATA));

    // auto mu_h without prediction columns
    fs::write(dir.join("np.csv"), "a\n1\n").unwrap();
    fs::write(dir.join("np.meta.json"), "{\"baseline\": 0.0}").unwrap();
    let out = mshap(&[
        "combine",
        "--f-shap",
        s(&dir.join("np.csv")),
        "--g-shap",
        s(&dir.join("np.csv")),
        "--out-dir",
        s(&dir.join("o4")),
    ]);
    assert_eq!(out.status.code(), Some(EXIT_DATA));
    let out = mshap(&[
        "combine",
        "--f-shap",
        s(&dir.join("np.csv")),
        "--g-shap",
        s(&dir.join("np.csv")),
        "--mu-h",
        "-0.5",
        "--out-dir",
        s(&dir.join("o5")),
    ]);
    ok(&out);

    // every cell exhausts the resampling cap
    fs::write(
        dir.join("stuck.toml"),
        "[simulate]\ny1 = [\"Y1A\"]\ny2 = [\"Y2E\"]\ntheta1 = [1.5]\ntheta2 = [1.0]\nn = 10\ncovariates = [[0.0, 1e-5], [0.0, 1e-5], [0.0, 1e-5]]\n",
    )
    .unwrap();
    let out = mshap(&[
        "simulate",
        "--config",
        s(&dir.join("stuck.toml")),
        "--out-dir",
        s(&dir.join("s")),
    ]);
    assert_eq!(out.status.code(), Some(EXIT_RESOURCE));
}

#[test]
fn bench_records_and_echo() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("b");
    ok(&mshap(&[
        "bench",
        "--p-values",
        "2,3",
        "--n-values",
        "4",
        "--background-size",
        "6",
        "--out-dir",
        s(&out),
    ]));
    let text = read(&out.join("bench.csv"));
    assert_eq!(text.lines().count(), 1 + 6);
    assert!(read(&out.join("bench.meta.json")).contains("machine"));
    let echo = RunConfig::load(&out.join(RESOLVED_CONFIG)).unwrap();
    assert_eq!(echo.bench.p_values, Some(vec![2, 3]));
    assert_eq!(echo.bench.repetitions, Some(5));
}
