//! Batch command-line interface: estimate, simulate, placebo, truth and
//! validate runs driven by a TOML configuration.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use didcurve::data::{load_panel, validate};
use didcurve::inference::BootstrapConfig;
use didcurve::panel::{estimate_repeated, placebo_curves, scale_by_pre_mean, PanelInference};
use didcurve::simulation::{
    all_permutations, ground_truth_with_points, run_permutation_study, ScenarioConfig,
    ScenarioReport,
};
use didcurve::{EffectCurveEstimate, Method, PanelDataset};
use serde_json::json;

use config::{ConfigErrors, RunConfig};
use output::{bands_csv, curve_csv, curve_svg, Staging};

#[derive(Parser)]
#[command(
    name = "didcurve",
    version,
    about = "Dose-effect curves for difference-in-differences with a continuous exposure"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// TOML run configuration (a previous run's manifest.toml works too).
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set estimate.bandwidth=0.8`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory; overrides `output_dir`.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Replace an existing output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate curves on a panel file.
    Estimate(Common),
    /// Run a simulation study.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Every misspecification permutation at n = 200, 1000 and 5000 with
        /// 1000 replicates each; takes hours.
        #[arg(long)]
        long_run: bool,
    },
    /// Placebo curves between pre-intervention periods.
    Placebo(Common),
    /// Ground-truth curve of the simulation design.
    Truth(Common),
    /// Check a panel file and report problems.
    Validate(Common),
}

enum Failure {
    Usage(String),
    Config(Vec<String>),
    Data(didcurve::Error),
    Estimation(String),
    Invalid(String),
    Io(String),
}

impl Failure {
    fn report(&self) -> (u8, serde_json::Value) {
        match self {
            Failure::Usage(m) => (2, json!({"error": "usage", "message": m})),
            Failure::Config(p) => (
                2,
                json!({"error": "config", "message": p.join("; "), "problems": p}),
            ),
            Failure::Data(e) => (3, json!({"error": data_class(e), "message": e.to_string()})),
            Failure::Estimation(m) => (4, json!({"error": "estimation", "message": m})),
            Failure::Invalid(m) => (5, json!({"error": "validation", "message": m})),
            Failure::Io(m) => (6, json!({"error": "io", "message": m})),
        }
    }
}

fn data_class(e: &didcurve::Error) -> &'static str {
    match e {
        didcurve::Error::Schema(_) => "schema",
        didcurve::Error::Parse { .. } => "parse",
        didcurve::Error::Io(_) => "io",
        _ => "validation",
    }
}

impl From<ConfigErrors> for Failure {
    fn from(e: ConfigErrors) -> Self {
        Failure::Config(e.0)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

fn estimation(context: impl std::fmt::Display) -> impl Fn(didcurve::Error) -> Failure {
    move |e| Failure::Estimation(format!("{context}: {e}"))
}

type Outcome = Result<PathBuf, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.to_string();
            let first = message
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ")
                .to_string();
            return fail(Failure::Usage(first));
        }
    };
    let result = match &cli.command {
        Command::Estimate(c) => {
            load(c, "estimate").and_then(|(cfg, out)| run_estimate(cfg, out, c.force))
        }
        Command::Simulate { common, long_run } => load(common, "simulate")
            .and_then(|(cfg, out)| run_simulate(cfg, out, common.force, *long_run)),
        Command::Placebo(c) => {
            load(c, "placebo").and_then(|(cfg, out)| run_placebo(cfg, out, c.force))
        }
        Command::Truth(c) => load(c, "truth").and_then(|(cfg, out)| run_truth(cfg, out, c.force)),
        Command::Validate(c) => {
            load(c, "validate").and_then(|(cfg, out)| run_validate(cfg, out, c.force))
        }
    };
    match result {
        Ok(dir) => {
            println!(
                "{}",
                json!({"status": "ok", "output_dir": dir.display().to_string()})
            );
            ExitCode::SUCCESS
        }
        Err(f) => fail(f),
    }
}

fn fail(f: Failure) -> ExitCode {
    let (code, value) = f.report();
    eprintln!("{value}");
    ExitCode::from(code)
}

/// Reads the configuration, applies overrides and the output flag.
fn load(common: &Common, command: &str) -> Result<(RunConfig, PathBuf), Failure> {
    let needs_file = matches!(command, "estimate" | "placebo" | "validate");
    let (text, base) = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Io(format!("cannot read {}: {e}", path.display())))?;
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (text, base)
        }
        None if needs_file => return Err(Failure::Usage(format!("{command} needs --config"))),
        None => (String::new(), PathBuf::new()),
    };
    let mut cfg = config::parse(&text, &common.overrides)?;
    cfg.anchor_paths(&base);
    if let Some(o) = &common.output {
        cfg.output_dir = Some(o.clone());
    }
    let out = cfg
        .output_dir
        .clone()
        .ok_or_else(|| Failure::Config(vec!["output_dir is not set (use --output)".into()]))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build_global()
        .map_err(|e| Failure::Io(format!("thread pool: {e}")))?;
    Ok((cfg, out))
}

fn manifest(cfg: &RunConfig, command: &str, extra: serde_json::Value) -> Result<String, Failure> {
    let mut table =
        toml::Table::try_from(cfg).map_err(|e| Failure::Io(format!("manifest: {e}")))?;
    let mut run = toml::Table::new();
    run.insert("command".into(), command.into());
    run.insert("version".into(), env!("CARGO_PKG_VERSION").into());
    let extra: toml::Value =
        toml::Value::try_from(extra).map_err(|e| Failure::Io(format!("manifest: {e}")))?;
    if let toml::Value::Table(t) = extra {
        run.extend(t);
    }
    table.insert("run".into(), toml::Value::Table(run));
    toml::to_string(&table).map_err(|e| Failure::Io(format!("manifest: {e}")))
}

fn load_data(cfg: &RunConfig) -> Result<PanelDataset, Failure> {
    let mut problems = Vec::new();
    let schema = cfg.schema(&mut problems);
    if !problems.is_empty() {
        return Err(Failure::Config(problems));
    }
    let schema = schema.expect("schema present");
    let path = &cfg.data.as_ref().expect("data present").path;
    let data: PanelDataset = load_panel(path, &schema).map_err(Failure::Data)?;
    let report = validate(&data);
    if report.is_fatal() {
        let msgs: Vec<String> = report
            .violations
            .iter()
            .filter(|v| v.fatal)
            .map(|v| v.message.clone())
            .collect();
        return Err(Failure::Invalid(msgs.join("; ")));
    }
    match &cfg.data.as_ref().and_then(|d| d.scale_by_pre.clone()) {
        Some(periods) => scale_by_pre_mean(&data, periods).map_err(Failure::Data),
        None => Ok(data),
    }
}

fn diagnostics(curve: &EffectCurveEstimate) -> serde_json::Value {
    let d = &curve.diagnostics;
    json!({
        "method": curve.method.name(),
        "bandwidth": curve.bandwidth,
        "clamped": d.clamped,
        "propensity_converged": d.propensity_converged,
        "ridge_applied": d.ridge_applied,
        "bandwidth_selected": d.bandwidth_selected,
        "variance_floored": d.variance_floored,
    })
}

fn strip_nulls(v: serde_json::Value) -> serde_json::Value {
    match v {
        serde_json::Value::Object(map) => serde_json::Value::Object(
            map.into_iter()
                .filter(|(_, v)| !v.is_null())
                .map(|(k, v)| (k, strip_nulls(v)))
                .collect(),
        ),
        serde_json::Value::Array(a) => {
            serde_json::Value::Array(a.into_iter().map(strip_nulls).collect())
        }
        other => other,
    }
}

fn run_estimate(cfg: RunConfig, out: PathBuf, force: bool) -> Outcome {
    let mut problems = Vec::new();
    let p = cfg.data.as_ref().map(|d| d.covariates.len());
    cfg.schema(&mut problems);
    let resolved = cfg.resolve(p, &mut problems);
    if cfg.pairing.as_ref().is_some_and(|pr| pr.pairs.is_empty()) {
        problems.push("pairing.pairs is empty".into());
    }
    if !problems.is_empty() {
        return Err(Failure::Config(problems));
    }
    let data = load_data(&cfg)?;
    let pairs = match &cfg.pairing {
        Some(pr) => pr.pairs.clone(),
        None => match data.period_labels() {
            [pre, post] => vec![(*pre, *post)],
            labels => {
                return Err(Failure::Config(vec![format!(
                    "the panel has {} periods; list the (pre, post) pairs under [pairing]",
                    labels.len()
                )]))
            }
        },
    };
    let staging = Staging::new(&out, force)?;
    let mut diag = Vec::new();
    for &method in &resolved.methods {
        let estimator = resolved.estimator.with_method(method);
        let inference = PanelInference {
            sandwich: resolved.sandwich.filter(|_| method == Method::Mr),
            bootstrap: resolved
                .bootstrap
                .map(|b| BootstrapConfig::new(b, cfg.seed)),
        };
        let est =
            estimate_repeated(&data, &pairs, &estimator, &inference).map_err(estimation(method))?;
        let name = method.name();
        staging.write(&format!("curve_{name}.csv"), &curve_csv(&est.averaged))?;
        if pairs.len() > 1 {
            for (curve, (pre, post)) in est.per_m.iter().zip(&pairs) {
                staging.write(&format!("curve_{name}_{pre}_{post}.csv"), &curve_csv(curve))?;
            }
        }
        let mut entry = diagnostics(&est.averaged);
        if let Some(boot) = &est.bootstrap {
            if est.sandwich.is_some() {
                staging.write(
                    &format!("bootstrap_{name}.csv"),
                    &bands_csv(&boot.grid, &boot.lower, &boot.upper),
                )?;
            }
            entry["bootstrap_failures"] = json!(boot.failures);
            entry["bootstrap_flagged"] = json!(boot.flagged);
        }
        entry["per_pair"] = serde_json::Value::Array(est.per_m.iter().map(diagnostics).collect());
        diag.push(entry);
        if cfg.svg.enabled {
            let title = format!("{name} dose-effect curve");
            staging.write(
                &format!("curve_{name}.svg"),
                &curve_svg(&est.averaged, &title, cfg.svg.width, cfg.svg.height),
            )?;
        }
    }
    let extra = strip_nulls(json!({"pairs": pairs, "diagnostics": diag}));
    staging.write("manifest.toml", &manifest(&cfg, "estimate", extra)?)?;
    staging.commit()?;
    Ok(out)
}

fn run_placebo(cfg: RunConfig, out: PathBuf, force: bool) -> Outcome {
    let mut problems = Vec::new();
    let p = cfg.data.as_ref().map(|d| d.covariates.len());
    cfg.schema(&mut problems);
    let resolved = cfg.resolve(p, &mut problems);
    let Some(placebo) = cfg.placebo.clone() else {
        problems.push("missing [placebo] section".into());
        return Err(Failure::Config(problems));
    };
    if placebo.posts.is_empty() {
        problems.push("placebo.posts is empty".into());
    }
    if placebo.posts.contains(&placebo.baseline) {
        problems.push("placebo.baseline is also listed in placebo.posts".into());
    }
    if let Some(t) = std::iter::once(&placebo.baseline)
        .chain(&placebo.posts)
        .find(|&&t| t >= placebo.intervention)
    {
        problems.push(format!(
            "placebo period {t} is not before the intervention at {}",
            placebo.intervention
        ));
    }
    if !problems.is_empty() {
        return Err(Failure::Config(problems));
    }
    let data = load_data(&cfg)?;
    let staging = Staging::new(&out, force)?;
    let mut diag = Vec::new();
    for &method in &resolved.methods {
        let estimator = resolved.estimator.with_method(method);
        let curves = placebo_curves(
            &data,
            placebo.baseline,
            &placebo.posts,
            placebo.intervention,
            &estimator,
        )
        .map_err(estimation(method))?;
        for (curve, post) in curves.iter().zip(&placebo.posts) {
            let stem = format!("placebo_{}_{}_{post}", method.name(), placebo.baseline);
            staging.write(&format!("{stem}.csv"), &curve_csv(curve))?;
            if cfg.svg.enabled {
                let title = format!(
                    "{} placebo, periods {} to {post}",
                    method.name(),
                    placebo.baseline
                );
                staging.write(
                    &format!("{stem}.svg"),
                    &curve_svg(curve, &title, cfg.svg.width, cfg.svg.height),
                )?;
            }
            diag.push(diagnostics(curve));
        }
    }
    let extra = strip_nulls(json!({"diagnostics": diag}));
    staging.write("manifest.toml", &manifest(&cfg, "placebo", extra)?)?;
    staging.commit()?;
    Ok(out)
}

fn report_csv(reports: &[ScenarioReport]) -> String {
    let mut s = String::from(
        "scenario,robustness,n,replicates,method,successes,failures,flagged,integrated_bias,integrated_rmse,\
         integrated_sd,sandwich_coverage,sandwich_width,bootstrap_coverage,bootstrap_width\n",
    );
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for r in reports {
        let robustness = serde_json::to_value(r.robustness).ok();
        let robustness = robustness.as_ref().and_then(|v| v.as_str()).unwrap_or("");
        for m in &r.methods {
            s.push_str(&format!(
                "{},{robustness},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.label,
                r.n,
                r.replicates,
                m.method,
                m.successes,
                m.failures,
                m.flagged,
                m.integrated_bias,
                m.integrated_rmse,
                m.integrated_sd,
                opt(m.sandwich.as_ref().map(|i| i.coverage)),
                opt(m.sandwich.as_ref().map(|i| i.width)),
                opt(m.bootstrap.as_ref().map(|i| i.coverage)),
                opt(m.bootstrap.as_ref().map(|i| i.width)),
            ));
        }
    }
    s
}

fn run_simulate(cfg: RunConfig, out: PathBuf, force: bool, long_run: bool) -> Outcome {
    let mut problems = Vec::new();
    let (config, perms) = cfg.scenario(&mut problems);
    if !problems.is_empty() {
        return Err(Failure::Config(problems));
    }
    let runs: Vec<(ScenarioConfig, Vec<_>)> = if long_run {
        [200, 1000, 5000]
            .into_iter()
            .map(|n| {
                let mut c = config.clone();
                c.n = n;
                c.replicates = 1000;
                (c, all_permutations())
            })
            .collect()
    } else {
        vec![(config, perms)]
    };
    let staging = Staging::new(&out, force)?;
    let mut reports = Vec::new();
    for (c, perms) in &runs {
        reports.extend(run_permutation_study(c, perms).map_err(estimation("simulation"))?);
    }
    staging.write("report.csv", &report_csv(&reports))?;
    let summary = serde_json::to_string_pretty(&reports).map_err(|e| Failure::Io(e.to_string()))?;
    staging.write("report.json", &(summary + "\n"))?;
    let extra = json!({"long_run": long_run, "scenarios": reports.len()});
    staging.write("manifest.toml", &manifest(&cfg, "simulate", extra)?)?;
    staging.commit()?;
    Ok(out)
}

fn run_truth(cfg: RunConfig, out: PathBuf, force: bool) -> Outcome {
    let mut problems = Vec::new();
    let block = cfg.scenario.clone().unwrap_or_default();
    let dgp = RunConfig::dgp(&block.dgp, &mut problems);
    if block.super_n < didcurve::simulation::truth::MIN_SUPER_N {
        problems.push(format!(
            "scenario.super_n must be at least {}",
            didcurve::simulation::truth::MIN_SUPER_N
        ));
    }
    if block.grid_points < 2 {
        problems.push("scenario.grid_points must be at least 2".into());
    }
    if !problems.is_empty() {
        return Err(Failure::Config(problems));
    }
    let truth = ground_truth_with_points(&dgp, cfg.seed, block.super_n, block.grid_points)
        .map_err(estimation("truth"))?;
    let staging = Staging::new(&out, force)?;
    let mut s = String::from("delta,psi,density_weight\n");
    for k in 0..truth.grid.len() {
        s.push_str(&format!(
            "{},{},{}\n",
            truth.grid[k], truth.psi[k], truth.density_weights[k]
        ));
    }
    staging.write("truth.csv", &s)?;
    staging.write("manifest.toml", &manifest(&cfg, "truth", json!({}))?)?;
    staging.commit()?;
    Ok(out)
}

fn run_validate(cfg: RunConfig, out: PathBuf, force: bool) -> Outcome {
    let mut problems = Vec::new();
    let schema = cfg.schema(&mut problems);
    if !problems.is_empty() {
        return Err(Failure::Config(problems));
    }
    let path = &cfg.data.as_ref().expect("data present").path;
    let data: PanelDataset = match load_panel(path, &schema.expect("schema present")) {
        Ok(d) => d,
        Err(didcurve::Error::Validation(message)) => {
            let value =
                json!({"valid": false, "violations": [{"fatal": true, "message": message}]});
            let staging = Staging::new(&out, force)?;
            let text =
                serde_json::to_string_pretty(&value).map_err(|e| Failure::Io(e.to_string()))?;
            staging.write("validation.json", &(text + "\n"))?;
            staging.commit()?;
            return Err(Failure::Invalid(message));
        }
        Err(e) => return Err(Failure::Data(e)),
    };
    let report = validate(&data);
    let value = json!({
        "valid": !report.is_fatal(),
        "n": report.n,
        "n_treated": report.n_treated,
        "n_control": report.n_control,
        "periods": data.period_labels(),
        "dose_range": report.dose_range,
        "violations": report.violations.iter().map(|v| json!({"fatal": v.fatal, "message": v.message})).collect::<Vec<_>>(),
    });
    let staging = Staging::new(&out, force)?;
    let text = serde_json::to_string_pretty(&value).map_err(|e| Failure::Io(e.to_string()))?;
    staging.write("validation.json", &(text + "\n"))?;
    staging.write("manifest.toml", &manifest(&cfg, "validate", json!({}))?)?;
    staging.commit()?;
    if report.is_fatal() {
        let msgs: Vec<String> = report
            .violations
            .iter()
            .filter(|v| v.fatal)
            .map(|v| v.message.clone())
            .collect();
        return Err(Failure::Invalid(msgs.join("; ")));
    }
    Ok(out)
}
