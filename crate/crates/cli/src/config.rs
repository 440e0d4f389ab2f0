//! Run configuration: TOML schema, `--set` overrides and validation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use didcurve::curves::{EstimatorConfig, GridSpec};
use didcurve::data::PanelSchema;
use didcurve::inference::SandwichMode;
use didcurve::nuisance::{
    CovariateMap, DensityForm, ExtrapolationPolicy, Learner, NuisanceKind, NuisanceSpec,
    NuisanceSpecs, TermSpec,
};
use didcurve::simulation::{all_permutations, Dgp, Misspecification, ScenarioConfig};
use didcurve::Method;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; 0 uses every available core.
    #[serde(default)]
    pub workers: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<DataConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairing: Option<PairingConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub placebo: Option<PlaceboConfig>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub nuisance: BTreeMap<String, NuisanceConfig>,
    #[serde(default)]
    pub estimate: EstimateConfig,
    #[serde(default)]
    pub inference: InferenceConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioBlock>,
    #[serde(default)]
    pub svg: SvgConfig,
    /// Written to manifests; ignored on input.
    #[serde(default, skip_serializing, rename = "run")]
    _run: Option<toml::Value>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub path: PathBuf,
    #[serde(default = "default_id")]
    pub id: String,
    pub covariates: Vec<String>,
    #[serde(default = "default_treatment")]
    pub treatment: String,
    #[serde(default = "default_dose")]
    pub dose: String,
    #[serde(default = "default_prefix")]
    pub outcome_prefix: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub periods: Option<Vec<i64>>,
    #[serde(default = "default_delimiter")]
    pub delimiter: String,
    /// Divide each unit's outcomes by its mean over these periods.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale_by_pre: Option<Vec<i64>>,
}

fn default_id() -> String {
    "id".into()
}
fn default_treatment() -> String {
    "a".into()
}
fn default_dose() -> String {
    "d".into()
}
fn default_prefix() -> String {
    "y_".into()
}
fn default_delimiter() -> String {
    ",".into()
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PairingConfig {
    /// `(pre, post)` period pairs; the curve is averaged over them.
    pub pairs: Vec<(i64, i64)>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PlaceboConfig {
    pub baseline: i64,
    pub posts: Vec<i64>,
    pub intervention: i64,
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct NuisanceConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learner: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub covariate_map: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub terms: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variance_terms: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub density: Option<String>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    #[serde(default = "default_points")]
    pub grid_points: usize,
    #[serde(default = "default_lower")]
    pub grid_lower: f64,
    #[serde(default = "default_upper")]
    pub grid_upper: f64,
    /// Explicit grid; overrides the quantile grid.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bandwidth_candidates: Option<Vec<f64>>,
    #[serde(default = "default_powers")]
    pub parametric_powers: Vec<u32>,
    #[serde(default = "default_extrapolation")]
    pub extrapolation: String,
}

fn default_methods() -> Vec<String> {
    vec!["MR".into()]
}
fn default_points() -> usize {
    50
}
fn default_lower() -> f64 {
    0.1
}
fn default_upper() -> f64 {
    0.9
}
fn default_powers() -> Vec<u32> {
    vec![1, 3]
}
fn default_extrapolation() -> String {
    "clamp".into()
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            methods: default_methods(),
            grid_points: default_points(),
            grid_lower: default_lower(),
            grid_upper: default_upper(),
            grid: None,
            bandwidth: None,
            bandwidth_candidates: None,
            parametric_powers: default_powers(),
            extrapolation: default_extrapolation(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceConfig {
    /// `base` or `augmented`; MR only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sandwich: Option<String>,
    /// Bootstrap replicates.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<usize>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioBlock {
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    /// `benchmark`, `null` or `shift:<c>`.
    #[serde(default = "default_dgp")]
    pub dgp: String,
    /// Misspecified nuisances of a single scenario.
    #[serde(default)]
    pub misspecified: Vec<String>,
    /// Several scenarios: labels such as `none` or `mu1+mu0`, or `all`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub permutations: Option<Vec<String>>,
    #[serde(default = "default_super_n")]
    pub super_n: usize,
    #[serde(default = "default_points")]
    pub grid_points: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    /// Methods that receive intervals; all simulated methods by default.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interval_methods: Option<Vec<String>>,
}

fn default_n() -> usize {
    1000
}
fn default_replicates() -> usize {
    200
}
fn default_dgp() -> String {
    "benchmark".into()
}
fn default_super_n() -> usize {
    didcurve::simulation::truth::DEFAULT_SUPER_N
}

impl Default for ScenarioBlock {
    fn default() -> Self {
        Self {
            n: default_n(),
            replicates: default_replicates(),
            dgp: default_dgp(),
            misspecified: Vec::new(),
            permutations: None,
            super_n: default_super_n(),
            grid_points: default_points(),
            bandwidth: None,
            interval_methods: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SvgConfig {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_width")]
    pub width: u32,
    #[serde(default = "default_height")]
    pub height: u32,
}

fn default_width() -> u32 {
    640
}
fn default_height() -> u32 {
    400
}

impl Default for SvgConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            width: default_width(),
            height: default_height(),
        }
    }
}

/// Problems found while reading or checking a configuration.
#[derive(Debug)]
pub struct ConfigErrors(pub Vec<String>);

impl std::fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0.join("; "))
    }
}

/// Parses `text`, applies `key=value` overrides and deserializes.
pub fn parse(text: &str, overrides: &[String]) -> Result<RunConfig, ConfigErrors> {
    let mut table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| ConfigErrors(vec![one_line(&e)]))?;
    let mut problems = Vec::new();
    for o in overrides {
        if let Err(e) = apply_override(&mut table, o) {
            problems.push(e);
        }
    }
    if !problems.is_empty() {
        return Err(ConfigErrors(problems));
    }
    toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| ConfigErrors(vec![one_line(&e)]))
}

fn one_line(e: &toml::de::Error) -> String {
    e.message().split_whitespace().collect::<Vec<_>>().join(" ")
}

fn apply_override(table: &mut toml::Table, item: &str) -> Result<(), String> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| format!("override '{item}' is not key=value"))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(format!("override '{item}' has an empty key"));
    }
    let value = match format!("v = {}", raw.trim()).parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let mut cur = table;
    for part in &path[..path.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| format!("override '{item}': '{part}' is not a section"))?;
    }
    cur.insert(path[path.len() - 1].to_string(), value);
    Ok(())
}

/// Settings resolved into library types.
pub struct Resolved {
    pub methods: Vec<Method>,
    pub estimator: EstimatorConfig<f64>,
    pub sandwich: Option<SandwichMode>,
    pub bootstrap: Option<usize>,
}

impl RunConfig {
    /// Makes the data path absolute relative to `base`.
    pub fn anchor_paths(&mut self, base: &Path) {
        if let Some(d) = &mut self.data {
            if d.path.is_relative() {
                d.path = base.join(&d.path);
            }
            if let Ok(abs) = std::path::absolute(&d.path) {
                d.path = abs;
            }
        }
    }

    pub fn schema(&self, problems: &mut Vec<String>) -> Option<PanelSchema> {
        let Some(d) = &self.data else {
            problems.push("missing [data] section".into());
            return None;
        };
        if d.covariates.is_empty() {
            problems.push("data.covariates is empty".into());
        }
        let delimiter = match d.delimiter.as_bytes() {
            [b] => *b,
            _ if d.delimiter == "\\t" || d.delimiter == "tab" => b'\t',
            _ => {
                problems.push(format!(
                    "data.delimiter '{}' is not a single character",
                    d.delimiter
                ));
                b','
            }
        };
        Some(PanelSchema {
            id: d.id.clone(),
            covariates: d.covariates.clone(),
            treatment: d.treatment.clone(),
            dose: d.dose.clone(),
            periods: d.periods.clone(),
            outcome_prefix: d.outcome_prefix.clone(),
            delimiter,
        })
    }

    /// Nuisance specifications: library defaults overridden per block.
    pub fn specs(&self, p: Option<usize>, problems: &mut Vec<String>) -> NuisanceSpecs {
        let mut specs = NuisanceSpecs::parametric();
        for name in self.nuisance.keys() {
            if name.parse::<NuisanceKind>().is_err() {
                problems.push(format!(
                    "nuisance.{name}: unknown nuisance (expected pi_a, pi_d, mu1 or mu0)"
                ));
            }
        }
        for kind in NuisanceKind::ALL {
            let Some(block) = self.nuisance.get(kind.name()) else {
                continue;
            };
            let mut spec = NuisanceSpec::parametric(kind);
            let mut field = |what: &str, e: didcurve::Error| {
                problems.push(format!("nuisance.{kind}.{what}: {e}"))
            };
            if let Some(l) = &block.learner {
                match l.parse::<Learner>() {
                    Ok(l) => spec.learner = l,
                    Err(e) => field("learner", e),
                }
            }
            if let Some(m) = &block.covariate_map {
                match m.parse::<CovariateMap>() {
                    Ok(m) => spec.covariate_map = m,
                    Err(e) => field("covariate_map", e),
                }
            }
            if let Some(t) = &block.terms {
                match t.iter().map(|s| s.parse::<TermSpec>()).collect() {
                    Ok(t) => spec.terms = Some(t),
                    Err(e) => field("terms", e),
                }
            }
            if let Some(t) = &block.variance_terms {
                match t.iter().map(|s| s.parse::<TermSpec>()).collect() {
                    Ok(t) => spec.variance_terms = Some(t),
                    Err(e) => field("variance_terms", e),
                }
            }
            if let Some(d) = &block.density {
                match d.parse::<DensityForm>() {
                    Ok(d) => spec.density = d,
                    Err(e) => field("density", e),
                }
            }
            if let Some(p) = p {
                if let Err(e) = spec.validate(p) {
                    problems.push(format!("nuisance.{kind}: {e}"));
                }
            }
            *specs.get_mut(kind) = Some(spec);
        }
        specs
    }

    pub fn methods(names: &[String], key: &str, problems: &mut Vec<String>) -> Vec<Method> {
        if names.is_empty() {
            problems.push(format!("{key} is empty"));
        }
        let mut out = Vec::new();
        for name in names {
            match name.parse::<Method>() {
                Ok(m) if !out.contains(&m) => out.push(m),
                Ok(_) => problems.push(format!("{key}: '{name}' listed twice")),
                Err(e) => problems.push(format!("{key}: {e}")),
            }
        }
        out
    }

    /// Estimator settings shared by `estimate` and `placebo`.
    pub fn resolve(&self, p: Option<usize>, problems: &mut Vec<String>) -> Resolved {
        let e = &self.estimate;
        let methods = Self::methods(&e.methods, "estimate.methods", problems);
        let specs = self.specs(p, problems);
        let mut estimator = EstimatorConfig::new(Method::Mr, specs);
        estimator.grid = match &e.grid {
            Some(g) => {
                if g.is_empty()
                    || g.windows(2).any(|w| !(w[0] < w[1]))
                    || g.iter().any(|v| !v.is_finite())
                {
                    problems.push("estimate.grid must be finite and strictly increasing".into());
                }
                GridSpec::Explicit(g.clone())
            }
            None => {
                if e.grid_points < 2 {
                    problems.push("estimate.grid_points must be at least 2".into());
                }
                if !(0.0 <= e.grid_lower && e.grid_lower < e.grid_upper && e.grid_upper <= 1.0) {
                    problems.push(
                        "estimate.grid_lower and grid_upper must satisfy 0 <= lower < upper <= 1"
                            .into(),
                    );
                }
                GridSpec::Quantiles {
                    points: e.grid_points,
                    lower: e.grid_lower,
                    upper: e.grid_upper,
                }
            }
        };
        if let Some(h) = e.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                problems.push(format!("estimate.bandwidth must be positive, got {h}"));
            }
        }
        if let Some(c) = &e.bandwidth_candidates {
            if c.is_empty() || c.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
                problems.push("estimate.bandwidth_candidates must be positive".into());
            }
        }
        if e.parametric_powers.is_empty() || e.parametric_powers.contains(&0) {
            problems.push("estimate.parametric_powers must be positive integers".into());
        }
        estimator.bandwidth = e.bandwidth;
        estimator.bandwidth_candidates = e.bandwidth_candidates.clone();
        estimator.parametric_powers = e.parametric_powers.clone();
        estimator.extrapolation = match e.extrapolation.as_str() {
            "clamp" => ExtrapolationPolicy::Clamp,
            "error" => ExtrapolationPolicy::Error,
            other => {
                problems.push(format!(
                    "estimate.extrapolation '{other}' is not clamp or error"
                ));
                ExtrapolationPolicy::Clamp
            }
        };
        let sandwich =
            self.inference
                .sandwich
                .as_ref()
                .and_then(|s| match s.parse::<SandwichMode>() {
                    Ok(m) => Some(m),
                    Err(e) => {
                        problems.push(format!("inference.sandwich: {e}"));
                        None
                    }
                });
        if sandwich.is_some() && !methods.contains(&Method::Mr) {
            problems.push(
                "inference.sandwich applies to MR only, which is not among the methods".into(),
            );
        }
        if self.inference.bootstrap.is_some_and(|b| b < 2) {
            problems.push("inference.bootstrap needs at least 2 replicates".into());
        }
        if let Some(p) = p {
            for &m in &methods {
                if let Err(e) = estimator.with_method(m).validate(p) {
                    problems.push(format!("{m}: {e}"));
                }
            }
        }
        Resolved {
            methods,
            estimator,
            sandwich,
            bootstrap: self.inference.bootstrap,
        }
    }

    pub fn dgp(text: &str, problems: &mut Vec<String>) -> Dgp {
        match text.trim() {
            "benchmark" => Dgp::benchmark(),
            "null" => Dgp::null(),
            other => match other
                .strip_prefix("shift:")
                .map(|c| c.trim().parse::<f64>())
            {
                Some(Ok(c)) if c.is_finite() => Dgp::shift(c),
                _ => {
                    problems.push(format!(
                        "scenario.dgp '{other}' is not benchmark, null or shift:<number>"
                    ));
                    Dgp::benchmark()
                }
            },
        }
    }

    /// Scenario configuration and the permutations to run.
    pub fn scenario(&self, problems: &mut Vec<String>) -> (ScenarioConfig, Vec<Misspecification>) {
        let block = self.scenario.clone().unwrap_or_default();
        let mut config = ScenarioConfig::new(block.n, block.replicates, self.seed);
        config.methods = Self::methods(&self.estimate.methods, "estimate.methods", problems);
        config.dgp = Self::dgp(&block.dgp, problems);
        config.super_n = block.super_n;
        config.grid_points = block.grid_points;
        config.bandwidth = block.bandwidth;
        config.misspecified = parse_permutation(&block.misspecified, problems);
        config.inference.sandwich =
            self.inference
                .sandwich
                .as_ref()
                .and_then(|s| match s.parse() {
                    Ok(m) => Some(m),
                    Err(e) => {
                        problems.push(format!("inference.sandwich: {e}"));
                        None
                    }
                });
        config.inference.bootstrap = self.inference.bootstrap;
        config.inference.methods = match &block.interval_methods {
            Some(m) => Self::methods(m, "scenario.interval_methods", problems),
            None => config.methods.clone(),
        };
        if let Err(e) = config.validate() {
            problems.push(format!("scenario: {e}"));
        }
        if config.super_n < didcurve::simulation::truth::MIN_SUPER_N {
            problems.push(format!(
                "scenario.super_n must be at least {}",
                didcurve::simulation::truth::MIN_SUPER_N
            ));
        }
        let perms = match &block.permutations {
            None => vec![config.misspecified.clone()],
            Some(list) if list.len() == 1 && list[0] == "all" => all_permutations(),
            Some(list) => list
                .iter()
                .map(|label| {
                    let kinds: Vec<String> = if label == "none" {
                        Vec::new()
                    } else {
                        label.split('+').map(|s| s.trim().to_string()).collect()
                    };
                    parse_permutation(&kinds, problems)
                })
                .collect(),
        };
        if perms.is_empty() {
            problems.push("scenario.permutations is empty".into());
        }
        (config, perms)
    }
}

fn parse_permutation(names: &[String], problems: &mut Vec<String>) -> Misspecification {
    let mut out = Misspecification::new();
    for name in names {
        match name.parse::<NuisanceKind>() {
            Ok(k) => {
                out.insert(k);
            }
            Err(e) => problems.push(format!("scenario: {e}")),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_nested_keys() {
        let cfg = parse(
            "seed = 1\n[estimate]\nmethods = [\"MR\"]\n",
            &[
                "seed=7".into(),
                "estimate.bandwidth=0.5".into(),
                "scenario.dgp=null".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.estimate.bandwidth, Some(0.5));
        assert_eq!(cfg.scenario.unwrap().dgp, "null");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(parse("sede = 1\n", &[]).is_err());
        assert!(parse("[estimate]\nmethod = \"MR\"\n", &[]).is_err());
        assert!(parse("", &["novalue".into()]).is_err());
    }

    #[test]
    fn all_problems_are_reported() {
        let cfg = parse(
            "[estimate]\nmethods = [\"MR\", \"XX\"]\nbandwidth = -1\nextrapolation = \"wrap\"\n\
             [inference]\nsandwich = \"fancy\"\nbootstrap = 1\n[nuisance.pi_a]\nlearner = \"linear\"\n",
            &[],
        )
        .unwrap();
        let mut problems = Vec::new();
        cfg.resolve(Some(4), &mut problems);
        assert!(problems.len() >= 6, "{problems:?}");
    }

    #[test]
    fn permutation_labels_parse() {
        let cfg = parse("[scenario]\npermutations = [\"none\", \"mu1+mu0\"]\n", &[]).unwrap();
        let mut problems = Vec::new();
        let (_, perms) = cfg.scenario(&mut problems);
        assert!(problems.is_empty(), "{problems:?}");
        assert_eq!(perms.len(), 2);
        assert!(perms[0].is_empty());
        assert_eq!(perms[1].len(), 2);
    }
}
