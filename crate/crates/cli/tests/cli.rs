use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use didcurve::data::write_panel;
use didcurve::simulation::PanelDgp;
use tempfile::TempDir;

fn didcurve(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_didcurve"))
        .args(args)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn error_json(o: &Output) -> serde_json::Value {
    let text = stderr(o);
    assert_eq!(text.trim().lines().count(), 1, "{text}");
    serde_json::from_str(text.trim()).unwrap()
}

/// Panel file with periods 1..=2m and a config that points to it.
fn workspace(effects: Vec<f64>, n: usize, extra: &str) -> (TempDir, PathBuf) {
    let dir = TempDir::new().unwrap();
    let data: didcurve::PanelDataset = PanelDgp::new(effects).generate(n, 17, 0).unwrap();
    write_panel(&data, dir.path().join("panel.csv"), b',').unwrap();
    let config = format!(
        "seed = 5\n\n[data]\npath = \"panel.csv\"\ncovariates = [\"x1\", \"x2\", \"x3\", \"x4\"]\n\n{extra}"
    );
    let path = dir.path().join("run.toml");
    fs::write(&path, config).unwrap();
    (dir, path)
}

fn run(command: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        command,
        "--config",
        config.to_str().unwrap(),
        "--output",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    didcurve(&args)
}

fn files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

const ESTIMATE: &str = "[estimate]\nmethods = [\"MR\", \"OR\", \"NAIVE\"]\ngrid_points = 8\n\n[inference]\nsandwich = \"base\"\nbootstrap = 10\n";

#[test]
fn estimate_is_deterministic() {
    let (dir, config) = workspace(vec![1.0], 300, ESTIMATE);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let first = run("estimate", &config, &a, &[]);
    assert!(first.status.success(), "{}", stderr(&first));
    let second = run("estimate", &config, &b, &["--set", "workers=1"]);
    assert!(second.status.success(), "{}", stderr(&second));
    assert_eq!(
        files(&a),
        [
            "bootstrap_MR.csv",
            "curve_MR.csv",
            "curve_NAIVE.csv",
            "curve_OR.csv",
            "manifest.toml"
        ]
    );
    for name in files(&a).iter().filter(|n| n.ends_with(".csv")) {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
    let curve = fs::read_to_string(a.join("curve_MR.csv")).unwrap();
    let lines: Vec<&str> = curve.lines().collect();
    assert_eq!(
        lines[0],
        "delta,psi,theta,ci_lower,ci_upper,method,bandwidth"
    );
    assert_eq!(lines.len(), 9);
    let row: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(row.len(), 7);
    assert!(row[3].parse::<f64>().is_ok() && row[4].parse::<f64>().is_ok());
    assert_eq!(row[5], "MR");
}

#[test]
fn existing_output_needs_force() {
    let (dir, config) = workspace(vec![1.0], 200, "[estimate]\nmethods = [\"NAIVE\"]\n");
    let out = dir.path().join("out");
    assert!(run("estimate", &config, &out, &[]).status.success());
    let again = run("estimate", &config, &out, &[]);
    assert!(!again.status.success());
    assert_eq!(error_json(&again)["error"], "io");
    assert!(run("estimate", &config, &out, &["--force"])
        .status
        .success());
}

#[test]
fn missing_covariate_column_fails_without_output() {
    let (dir, config) = workspace(vec![1.0], 100, "");
    let out = dir.path().join("out");
    let o = run(
        "estimate",
        &config,
        &out,
        &["--set", "data.covariates=[\"x1\", \"income\"]"],
    );
    assert!(!o.status.success());
    let e = error_json(&o);
    assert_eq!(e["error"], "schema");
    assert!(e["message"].as_str().unwrap().contains("income"), "{e}");
    assert!(!out.exists());
    assert_eq!(files(dir.path()), ["panel.csv", "run.toml"]);
}

#[test]
fn config_problems_are_reported_together() {
    let (dir, config) = workspace(
        vec![1.0],
        100,
        "[estimate]\nmethods = [\"MR\", \"KERNEL\"]\nextrapolation = \"guess\"\n",
    );
    let o = run(
        "estimate",
        &config,
        &dir.path().join("out"),
        &["--set", "inference.sandwich=\"full\""],
    );
    assert!(!o.status.success());
    let e = error_json(&o);
    assert_eq!(e["error"], "config");
    let problems = e["problems"].as_array().unwrap();
    assert!(problems.len() >= 3, "{e}");
    let unknown = run(
        "estimate",
        &config,
        &dir.path().join("out"),
        &["--set", "estimate.colour=1"],
    );
    assert_eq!(error_json(&unknown)["error"], "config");
}

#[test]
fn usage_errors_are_json() {
    let o = didcurve(&["estimate", "--bogus"]);
    assert!(!o.status.success());
    assert_eq!(error_json(&o)["error"], "usage");
    let o = didcurve(&["estimate", "--output", "/tmp/never"]);
    assert_eq!(error_json(&o)["error"], "usage");
}

#[test]
fn manifest_reproduces_the_run() {
    let (dir, config) = workspace(vec![1.0, 2.0], 300, "[pairing]\npairs = [[1, 3], [2, 4]]\n\n[estimate]\nmethods = [\"MR\"]\ngrid_points = 6\n\n[svg]\nenabled = true\n");
    let first = dir.path().join("first");
    assert!(run("estimate", &config, &first, &[]).status.success());
    assert_eq!(
        files(&first),
        [
            "curve_MR.csv",
            "curve_MR.svg",
            "curve_MR_1_3.csv",
            "curve_MR_2_4.csv",
            "manifest.toml"
        ]
    );
    let manifest = fs::read_to_string(first.join("manifest.toml")).unwrap();
    assert!(
        manifest.contains("[run]") && manifest.contains("command = \"estimate\""),
        "{manifest}"
    );
    let second = dir.path().join("second");
    let o = run("estimate", &first.join("manifest.toml"), &second, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    for name in [
        "curve_MR.csv",
        "curve_MR_1_3.csv",
        "curve_MR_2_4.csv",
        "curve_MR.svg",
    ] {
        assert_eq!(
            fs::read(first.join(name)).unwrap(),
            fs::read(second.join(name)).unwrap(),
            "{name}"
        );
    }
    let svg = fs::read_to_string(first.join("curve_MR.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("<polyline"));
}

#[test]
fn panels_with_many_periods_need_pairs() {
    let (dir, config) = workspace(vec![1.0, 1.0], 100, "");
    let o = run("estimate", &config, &dir.path().join("out"), &[]);
    assert_eq!(error_json(&o)["error"], "config");
}

#[test]
fn placebo_writes_one_curve_per_post_period() {
    let extra = "[placebo]\nbaseline = 1\nposts = [2, 3]\nintervention = 4\n\n[estimate]\nmethods = [\"MR\", \"NAIVE\"]\ngrid_points = 5\n";
    let (dir, config) = workspace(vec![1.0, 1.0, 1.0], 400, extra);
    let out = dir.path().join("out");
    let o = run("placebo", &config, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        files(&out),
        [
            "manifest.toml",
            "placebo_MR_1_2.csv",
            "placebo_MR_1_3.csv",
            "placebo_NAIVE_1_2.csv",
            "placebo_NAIVE_1_3.csv"
        ]
    );
    let bad = run(
        "placebo",
        &config,
        &dir.path().join("bad"),
        &["--set", "placebo.posts=[2, 5]"],
    );
    assert_eq!(error_json(&bad)["error"], "config");
}

#[test]
fn simulate_writes_a_report() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("sim.toml");
    fs::write(
        &config,
        "seed = 3\n\n[estimate]\nmethods = [\"MR\", \"OR\"]\n\n[scenario]\nn = 200\nreplicates = 3\nsuper_n = 10000\ngrid_points = 5\npermutations = [\"none\", \"mu1+mu0\"]\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = run("simulate", &config, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(files(&out), ["manifest.toml", "report.csv", "report.json"]);
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 2);
}

#[test]
fn truth_runs_without_a_config_file() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("truth");
    let o = didcurve(&[
        "truth",
        "--output",
        out.to_str().unwrap(),
        "--set",
        "scenario.super_n=20000",
        "--set",
        "scenario.grid_points=7",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("truth.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "delta,psi,density_weight");
    assert_eq!(lines.len(), 8);
    let small = didcurve(&[
        "truth",
        "--output",
        dir.path().join("x").to_str().unwrap(),
        "--set",
        "scenario.super_n=10",
    ]);
    assert_eq!(error_json(&small)["error"], "config");
}

#[test]
fn validate_reports_and_sets_the_exit_code() {
    let (dir, config) = workspace(vec![1.0], 150, "");
    let out = dir.path().join("ok");
    let o = run("validate", &config, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("validation.json")).unwrap()).unwrap();
    assert_eq!(report["valid"], true);
    assert_eq!(report["n"], 150);
    assert_eq!(report["periods"], serde_json::json!([1, 2]));

    let csv = fs::read_to_string(dir.path().join("panel.csv")).unwrap();
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    let a = header.split(',').position(|h| h == "a").unwrap();
    let treated: Vec<&str> = lines.filter(|l| l.split(',').nth(a) == Some("1")).collect();
    let lines = [vec![header], treated].concat();
    fs::write(dir.path().join("panel.csv"), lines.join("\n") + "\n").unwrap();
    let bad = dir.path().join("bad");
    let o = run("validate", &config, &bad, &[]);
    assert!(!o.status.success());
    assert_eq!(error_json(&o)["error"], "validation");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(bad.join("validation.json")).unwrap()).unwrap();
    assert_eq!(report["valid"], false);

    let mut cells: Vec<String> = lines[1].split(',').map(String::from).collect();
    cells[a] = "0".into();
    fs::write(
        dir.path().join("panel.csv"),
        format!("{header}\n{}\n", cells.join(",")),
    )
    .unwrap();
    let dosed = dir.path().join("dosed");
    let o = run("validate", &config, &dosed, &[]);
    assert_eq!(error_json(&o)["error"], "validation");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dosed.join("validation.json")).unwrap()).unwrap();
    assert_eq!(report["violations"][0]["fatal"], true);
}
