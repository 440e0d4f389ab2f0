//! Observed panel data, file ingestion, validation and period pairing.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// One unit of the panel. `d` is present exactly when `a` is true.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitRecord<T> {
    pub id: String,
    pub x: Vec<T>,
    pub a: bool,
    pub d: Option<T>,
    pub y: BTreeMap<i64, T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset<T> {
    units: Vec<UnitRecord<T>>,
    covariate_names: Vec<String>,
    period_labels: Vec<i64>,
}

impl<T: Real> PanelDataset<T> {
    /// Checks the structural invariants: a common covariate dimension
    /// `p >= 1`, an outcome for every listed period, and a dose exactly for
    /// treated units. Non-finite values are left for [`validate`].
    pub fn new(
        units: Vec<UnitRecord<T>>,
        covariate_names: Vec<String>,
        period_labels: Vec<i64>,
    ) -> Result<Self> {
        let p = covariate_names.len();
        if p == 0 {
            return Err(Error::Schema("at least one covariate is required".into()));
        }
        if period_labels.is_empty() {
            return Err(Error::Schema("at least one period is required".into()));
        }
        let mut sorted = period_labels.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != period_labels.len() {
            return Err(Error::Schema("duplicate period labels".into()));
        }
        for (row, u) in units.iter().enumerate() {
            if u.x.len() != p {
                return Err(Error::Validation(format!(
                    "unit '{}' (row {}) has {} covariates, expected {p}",
                    u.id,
                    row + 1,
                    u.x.len()
                )));
            }
            if u.a != u.d.is_some() {
                let what = if u.a {
                    "treated unit without a dose"
                } else {
                    "control unit with a dose"
                };
                return Err(Error::Validation(format!(
                    "{what}: unit '{}' (row {})",
                    u.id,
                    row + 1
                )));
            }
            if let Some(t) = period_labels.iter().find(|t| !u.y.contains_key(t)) {
                return Err(Error::Validation(format!(
                    "unit '{}' (row {}) has no outcome for period {t}",
                    u.id,
                    row + 1
                )));
            }
            if u.y.len() != period_labels.len() {
                return Err(Error::Validation(format!(
                    "unit '{}' (row {}) has outcomes for unlisted periods",
                    u.id,
                    row + 1
                )));
            }
        }
        Ok(Self {
            units,
            covariate_names,
            period_labels,
        })
    }

    pub fn units(&self) -> &[UnitRecord<T>] {
        &self.units
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn period_labels(&self) -> &[i64] {
        &self.period_labels
    }

    pub fn n(&self) -> usize {
        self.units.len()
    }

    pub fn p(&self) -> usize {
        self.covariate_names.len()
    }

    /// Returns a copy with every outcome replaced by `f(unit, period, y)`.
    pub fn map_outcomes(&self, mut f: impl FnMut(&UnitRecord<T>, i64, T) -> T) -> Self {
        let units = self
            .units
            .iter()
            .map(|u| {
                let y = u.y.iter().map(|(&t, &v)| (t, f(u, t, v))).collect();
                UnitRecord { y, ..u.clone() }
            })
            .collect();
        Self {
            units,
            covariate_names: self.covariate_names.clone(),
            period_labels: self.period_labels.clone(),
        }
    }
}

/// Binds column names in a delimited file to the panel fields.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelSchema {
    pub id: String,
    pub covariates: Vec<String>,
    pub treatment: String,
    pub dose: String,
    /// Period labels to read. `None` reads every `<prefix><integer>` column.
    pub periods: Option<Vec<i64>>,
    pub outcome_prefix: String,
    pub delimiter: u8,
}

impl PanelSchema {
    pub fn new(id: &str, covariates: &[&str], treatment: &str, dose: &str) -> Self {
        Self {
            id: id.to_string(),
            covariates: covariates.iter().map(|s| s.to_string()).collect(),
            treatment: treatment.to_string(),
            dose: dose.to_string(),
            periods: None,
            outcome_prefix: "y_".to_string(),
            delimiter: b',',
        }
    }

    pub fn outcome_column(&self, period: i64) -> String {
        format!("{}{period}", self.outcome_prefix)
    }
}

fn column_index(header: &csv::StringRecord, name: &str) -> Option<usize> {
    header.iter().position(|h| h.trim() == name)
}

fn parse_value<T: Real>(text: &str, row: usize, column: &str) -> Result<T> {
    text.trim().parse::<T>().map_err(|_| Error::Parse {
        row,
        column: column.to_string(),
        message: format!("'{text}' is not a number"),
    })
}

fn parse_flag(text: &str, row: usize, column: &str) -> Result<bool> {
    match text.trim() {
        "1" | "true" | "TRUE" | "True" => Ok(true),
        "0" | "false" | "FALSE" | "False" => Ok(false),
        other => Err(Error::Parse {
            row,
            column: column.to_string(),
            message: format!("'{other}' is not a 0/1 treatment indicator"),
        }),
    }
}

/// Reads a delimited panel file. Rows keep their file order; `row` in
/// errors counts data rows from 1.
pub fn load_panel<T: Real>(
    path: impl AsRef<Path>,
    schema: &PanelSchema,
) -> Result<PanelDataset<T>> {
    let file = File::open(path.as_ref())
        .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .has_headers(true)
        .from_reader(file);
    let header = reader
        .headers()
        .map_err(|e| Error::Io(e.to_string()))?
        .clone();

    let periods: Vec<i64> = match &schema.periods {
        Some(p) => p.clone(),
        None => {
            let mut found: Vec<i64> = header
                .iter()
                .filter_map(|h| h.trim().strip_prefix(schema.outcome_prefix.as_str()))
                .filter_map(|rest| rest.parse::<i64>().ok())
                .collect();
            found.sort_unstable();
            found
        }
    };
    if periods.is_empty() {
        return Err(Error::Schema(format!(
            "no outcome columns named '{}<period>'",
            schema.outcome_prefix
        )));
    }

    let mut missing = Vec::new();
    let mut find = |name: &str| {
        let idx = column_index(&header, name);
        if idx.is_none() {
            missing.push(name.to_string());
        }
        idx
    };
    let id_col = find(&schema.id);
    let cov_cols: Vec<Option<usize>> = schema.covariates.iter().map(|c| find(c)).collect();
    let a_col = find(&schema.treatment);
    let d_col = find(&schema.dose);
    let y_cols: Vec<Option<usize>> = periods
        .iter()
        .map(|&t| find(&schema.outcome_column(t)))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Schema(format!(
            "missing column(s): {}",
            missing.join(", ")
        )));
    }
    let (id_col, a_col, d_col) = (id_col.unwrap(), a_col.unwrap(), d_col.unwrap());
    let cov_cols: Vec<usize> = cov_cols.into_iter().flatten().collect();
    let y_cols: Vec<usize> = y_cols.into_iter().flatten().collect();

    let mut units = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let row = k + 1;
        let record = record.map_err(|e| Error::Io(format!("row {row}: {e}")))?;
        let cell = |i: usize| record.get(i).unwrap_or("");
        let x = cov_cols
            .iter()
            .zip(&schema.covariates)
            .map(|(&i, name)| parse_value::<T>(cell(i), row, name))
            .collect::<Result<Vec<T>>>()?;
        let a = parse_flag(cell(a_col), row, &schema.treatment)?;
        let dose_text = cell(d_col).trim();
        let d = if dose_text.is_empty() {
            None
        } else {
            Some(parse_value::<T>(dose_text, row, &schema.dose)?)
        };
        let id = cell(id_col).trim().to_string();
        match (a, d.is_some()) {
            (true, false) => {
                return Err(Error::Validation(format!(
                    "treated unit '{id}' at row {row} has no dose"
                )))
            }
            (false, true) => {
                return Err(Error::Validation(format!(
                    "control unit '{id}' at row {row} has a dose"
                )))
            }
            _ => {}
        }
        let mut y = BTreeMap::new();
        for (&t, &i) in periods.iter().zip(&y_cols) {
            let name = schema.outcome_column(t);
            y.insert(t, parse_value::<T>(cell(i), row, &name)?);
        }
        units.push(UnitRecord { id, x, a, d, y });
    }
    PanelDataset::new(units, schema.covariates.clone(), periods)
}

/// Writes a panel in the layout read by [`load_panel`] with
/// [`PanelSchema::new`]`("id", covariates, "a", "d")`.
pub fn write_panel<T: Real>(
    data: &PanelDataset<T>,
    path: impl AsRef<Path>,
    delimiter: u8,
) -> Result<()> {
    let file = File::create(path.as_ref())
        .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
    let mut w = csv::WriterBuilder::new()
        .delimiter(delimiter)
        .from_writer(file);
    let io = |e: csv::Error| Error::Io(e.to_string());
    let mut header = vec!["id".to_string()];
    header.extend(data.covariate_names.iter().cloned());
    header.push("a".into());
    header.push("d".into());
    header.extend(data.period_labels.iter().map(|t| format!("y_{t}")));
    w.write_record(&header).map_err(io)?;
    for u in &data.units {
        let mut rec = vec![u.id.clone()];
        rec.extend(u.x.iter().map(|v| v.to_string()));
        rec.push(if u.a { "1" } else { "0" }.into());
        rec.push(u.d.map(|d| d.to_string()).unwrap_or_default());
        rec.extend(data.period_labels.iter().map(|t| u.y[t].to_string()));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub fatal: bool,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub n: usize,
    pub n_treated: usize,
    pub n_control: usize,
    pub dose_range: Option<(f64, f64)>,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_fatal(&self) -> bool {
        self.violations.iter().any(|v| v.fatal)
    }
}

/// Summarizes a panel and lists problems without failing.
pub fn validate<T: Real>(data: &PanelDataset<T>) -> ValidationReport {
    let mut violations = Vec::new();
    let mut fatal = |message: String| {
        violations.push(Violation {
            fatal: true,
            message,
        })
    };
    let n = data.n();
    let n_treated = data.units.iter().filter(|u| u.a).count();
    if n_treated == 0 {
        fatal("no treated units".into());
    }
    if n_treated == n {
        fatal("no control units".into());
    }
    for u in &data.units {
        if let Some((t, _)) = u.y.iter().find(|(_, v)| !v.is_finite()) {
            fatal(format!(
                "unit '{}' has a non-finite outcome in period {t}",
                u.id
            ));
        }
        if u.x.iter().any(|v| !v.is_finite()) {
            fatal(format!("unit '{}' has a non-finite covariate", u.id));
        }
        if u.d.is_some_and(|d| !d.is_finite()) {
            fatal(format!("unit '{}' has a non-finite dose", u.id));
        }
    }
    let mut seen = std::collections::HashSet::new();
    for u in &data.units {
        if !seen.insert(u.id.as_str()) {
            violations.push(Violation {
                fatal: false,
                message: format!("duplicate unit id '{}'", u.id),
            });
        }
    }
    let doses: Vec<f64> = data
        .units
        .iter()
        .filter_map(|u| u.d)
        .map(Real::as_f64)
        .filter(|d| d.is_finite())
        .collect();
    let dose_range = if doses.is_empty() {
        None
    } else {
        Some(
            doses
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &d| {
                    (a.min(d), b.max(d))
                }),
        )
    };
    ValidationReport {
        n,
        n_treated,
        n_control: n - n_treated,
        dose_range,
        violations,
    }
}

/// Two observation times of the panel, stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoPeriodDataset<T> {
    ids: Vec<String>,
    covariate_names: Vec<String>,
    /// Row-major `n x p`.
    x: Vec<T>,
    a: Vec<bool>,
    d: Vec<Option<T>>,
    y0: Vec<T>,
    y1: Vec<T>,
    source_pair: (i64, i64),
}

impl<T: Real> TwoPeriodDataset<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ids: Vec<String>,
        covariate_names: Vec<String>,
        x: Vec<T>,
        a: Vec<bool>,
        d: Vec<Option<T>>,
        y0: Vec<T>,
        y1: Vec<T>,
        source_pair: (i64, i64),
    ) -> Result<Self> {
        let n = ids.len();
        let p = covariate_names.len();
        if p == 0 {
            return Err(Error::Schema("at least one covariate is required".into()));
        }
        if x.len() != n * p || a.len() != n || d.len() != n || y0.len() != n || y1.len() != n {
            return Err(Error::Dimension(
                "two-period columns differ in length".into(),
            ));
        }
        for i in 0..n {
            if a[i] != d[i].is_some() {
                return Err(Error::Validation(format!(
                    "unit '{}': dose present iff treated",
                    ids[i]
                )));
            }
            if !y0[i].is_finite() || !y1[i].is_finite() {
                return Err(Error::Validation(format!(
                    "unit '{}' has a non-finite outcome",
                    ids[i]
                )));
            }
            if d[i].is_some_and(|v| !v.is_finite())
                || x[i * p..(i + 1) * p].iter().any(|v| !v.is_finite())
            {
                return Err(Error::Validation(format!(
                    "unit '{}' has a non-finite dose or covariate",
                    ids[i]
                )));
            }
        }
        let n_treated = a.iter().filter(|&&v| v).count();
        if n_treated == 0 || n_treated == n {
            return Err(Error::Validation(
                "need at least one treated and one control unit".into(),
            ));
        }
        Ok(Self {
            ids,
            covariate_names,
            x,
            a,
            d,
            y0,
            y1,
            source_pair,
        })
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn p(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn n_treated(&self) -> usize {
        self.a.iter().filter(|&&v| v).count()
    }

    pub fn n_control(&self) -> usize {
        self.n() - self.n_treated()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn covariates(&self) -> &[T] {
        &self.x
    }

    #[inline]
    pub fn x_row(&self, i: usize) -> &[T] {
        let p = self.p();
        &self.x[i * p..(i + 1) * p]
    }

    #[inline]
    pub fn treated(&self, i: usize) -> bool {
        self.a[i]
    }

    pub fn treatment(&self) -> &[bool] {
        &self.a
    }

    #[inline]
    pub fn dose(&self, i: usize) -> Option<T> {
        self.d[i]
    }

    pub fn doses(&self) -> &[Option<T>] {
        &self.d
    }

    pub fn y0(&self) -> &[T] {
        &self.y0
    }

    pub fn y1(&self) -> &[T] {
        &self.y1
    }

    /// `Y1 - Y0` of unit `i`.
    #[inline]
    pub fn trend(&self, i: usize) -> T {
        self.y1[i] - self.y0[i]
    }

    pub fn source_pair(&self) -> (i64, i64) {
        self.source_pair
    }

    pub fn treated_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.a[i]).collect()
    }

    pub fn control_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| !self.a[i]).collect()
    }

    /// Doses of treated units in unit order.
    pub fn treated_doses(&self) -> Vec<T> {
        self.d.iter().flatten().copied().collect()
    }

    /// Copy with `Y1` replaced; used to build placebo and scaled datasets.
    pub fn with_outcomes(&self, y0: Vec<T>, y1: Vec<T>) -> Result<Self> {
        Self::new(
            self.ids.clone(),
            self.covariate_names.clone(),
            self.x.clone(),
            self.a.clone(),
            self.d.clone(),
            y0,
            y1,
            self.source_pair,
        )
    }

    /// Panel view with the two outcomes under periods `source_pair`.
    pub fn to_panel(&self) -> Result<PanelDataset<T>> {
        let (pre, post) = self.source_pair;
        let units = (0..self.n())
            .map(|i| UnitRecord {
                id: self.ids[i].clone(),
                x: self.x_row(i).to_vec(),
                a: self.a[i],
                d: self.d[i],
                y: BTreeMap::from([(pre, self.y0[i]), (post, self.y1[i])]),
            })
            .collect();
        PanelDataset::new(units, self.covariate_names.clone(), vec![pre, post])
    }
}

/// Extracts the outcomes at `pre` and `post` as a two-period dataset.
pub fn pair_periods<T: Real>(
    data: &PanelDataset<T>,
    pre: i64,
    post: i64,
) -> Result<TwoPeriodDataset<T>> {
    for t in [pre, post] {
        if !data.period_labels.contains(&t) {
            return Err(Error::UnknownPeriod(t));
        }
    }
    if pre == post {
        return Err(Error::InvalidArgument(format!(
            "pre and post periods are both {pre}"
        )));
    }
    let n = data.n();
    let mut ids = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n * data.p());
    let mut a = Vec::with_capacity(n);
    let mut d = Vec::with_capacity(n);
    let mut y0 = Vec::with_capacity(n);
    let mut y1 = Vec::with_capacity(n);
    for u in &data.units {
        ids.push(u.id.clone());
        x.extend_from_slice(&u.x);
        a.push(u.a);
        d.push(u.d);
        y0.push(u.y[&pre]);
        y1.push(u.y[&post]);
    }
    TwoPeriodDataset::new(
        ids,
        data.covariate_names.clone(),
        x,
        a,
        d,
        y0,
        y1,
        (pre, post),
    )
}
