use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nonstat-geo"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn demo(name: &str) -> PathBuf {
    root().join("data/demo").join(name)
}

fn config(name: &str) -> PathBuf {
    root().join("configs").join(name)
}

fn fit_demo(cfg: &str, out: &Path) -> Output {
    run(&["fit", "--config", path(&config(cfg)), "--data", path(&demo("observations.csv")), "--out", path(out)])
}

fn comparison(out: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(out.join("comparison.csv")).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(str::to_string).collect()).collect()
}

#[test]
fn demo_fits_report_one_row_per_estimated_parameter_and_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    for (cfg, k) in [("demo_stationary.json", 8), ("demo_partial_sum.json", 10)] {
        let a = dir.path().join(format!("{cfg}.a"));
        let b = dir.path().join(format!("{cfg}.b"));
        let out = fit_demo(cfg, &a);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        let table = String::from_utf8(out.stdout).unwrap();
        let rows = table.lines().filter(|l| l.contains(" (")).count();
        assert_eq!(rows, k, "{table}");
        assert_eq!(fit_demo(cfg, &b).status.code(), Some(0));
        assert_eq!(fs::read(a.join("fit.json")).unwrap(), fs::read(b.join("fit.json")).unwrap());
    }
}

#[test]
fn usage_and_data_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&[]).status.code(), Some(2));
    assert_eq!(run(&["fit", "--config", "x.json"]).status.code(), Some(2));
    let bad = dir.path().join("obs.csv");
    fs::write(&bad, "lon,lat,y\n0,0,1\n").unwrap();
    let out = run(&["fit", "--config", path(&config("demo_stationary.json")), "--data", path(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("altitude"));
}

#[test]
fn predict_writes_one_row_per_grid_cell() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(fit_demo("demo_partial_sum.json", dir.path()).status.code(), Some(0));
    let out = run(&[
        "predict",
        "--fit",
        path(&dir.path().join("fit.json")),
        "--data",
        path(&demo("observations.csv")),
        "--grid",
        path(&demo("grid.csv")),
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = nonstat_geo::io::read_predictions(&dir.path().join("predictions.csv")).unwrap();
    let grid_rows = fs::read_to_string(demo("grid.csv")).unwrap().lines().count() - 1;
    assert_eq!(rows.len(), grid_rows);
    assert!(dir.path().join("config.resolved.json").exists());
}

#[test]
fn study_tables_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let mut outs = Vec::new();
    for threads in ["1", "2"] {
        let out = dir.path().join(threads);
        let o = run(&["study", "--config", path(&config("study_smoke.json")), "--out", path(&out), "--threads", threads]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        outs.push(out);
    }
    for f in ["study_parameters.csv", "study_prediction.csv", "study_failures.csv"] {
        assert_eq!(fs::read(outs[0].join(f)).unwrap(), fs::read(outs[1].join(f)).unwrap(), "{f}");
    }
}

#[test]
fn simulate_writes_observed_and_heldout() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["simulate", "--config", path(&config("simulate_scenario2.json")), "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let header = fs::read_to_string(dir.path().join("observed.csv")).unwrap();
    assert!(header.starts_with("lon,lat,y,"));
    assert!(dir.path().join("heldout.csv").exists());
}

#[test]
fn identical_configs_compare_equal() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("demo_stationary.json");
    let o = run(&[
        "compare",
        "--config",
        path(&cfg),
        "--config",
        path(&cfg),
        "--data",
        path(&demo("observations.csv")),
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = comparison(dir.path());
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][1..5], rows[1][1..5]);
}

#[test]
fn nested_model_never_beats_its_extension() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "compare",
        "--config",
        path(&config("demo_stationary.json")),
        "--config",
        path(&config("demo_partial_sum.json")),
        "--data",
        path(&demo("observations.csv")),
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = comparison(dir.path());
    let ll = |label: &str| -> f64 { rows.iter().find(|r| r[0] == label).unwrap()[1].parse().unwrap() };
    assert!(ll("partial_sum_alt_temp") >= ll("stationary") - 1e-6, "{rows:?}");
    // Ranked by AIC.
    let aic: Vec<f64> = rows.iter().map(|r| r[3].parse().unwrap()).collect();
    assert!(aic.windows(2).all(|w| w[0] <= w[1]));
}
