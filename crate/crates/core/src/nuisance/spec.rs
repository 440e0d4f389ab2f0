//! Nuisance model specifications and the regressor-term grammar.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NuisanceKind {
    /// Treatment propensity `P(A = 1 | x)`.
    PiA,
    /// Conditional dose density among the treated.
    PiD,
    /// Treated outcome trend `E[Y1 - Y0 | A = 1, D = d, x]`.
    Mu1,
    /// Control outcome trend `E[Y1 - Y0 | A = 0, x]`.
    Mu0,
}

impl NuisanceKind {
    pub const ALL: [NuisanceKind; 4] = [
        NuisanceKind::PiA,
        NuisanceKind::PiD,
        NuisanceKind::Mu1,
        NuisanceKind::Mu0,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NuisanceKind::PiA => "pi_a",
            NuisanceKind::PiD => "pi_d",
            NuisanceKind::Mu1 => "mu1",
            NuisanceKind::Mu0 => "mu0",
        }
    }

    fn allows_dose(self) -> bool {
        self == NuisanceKind::Mu1
    }
}

impl fmt::Display for NuisanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NuisanceKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        NuisanceKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidSpec(format!("unknown nuisance '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Learner {
    /// Least squares on the configured terms.
    Linear,
    /// Logistic regression on the configured terms (propensity only).
    Logistic,
    /// Intercept plus a natural cubic spline in each covariate (and in the
    /// dose for `mu1`), fit by least squares or logistic regression.
    FlexibleAdditive,
}

impl Learner {
    pub fn name(self) -> &'static str {
        match self {
            Learner::Linear => "linear",
            Learner::Logistic => "logistic",
            Learner::FlexibleAdditive => "flexible-additive",
        }
    }
}

impl FromStr for Learner {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Learner::Linear),
            "logistic" => Ok(Learner::Logistic),
            "flexible-additive" | "flexible" => Ok(Learner::FlexibleAdditive),
            _ => Err(Error::InvalidSpec(format!("unknown learner '{s}'"))),
        }
    }
}

/// Transformation applied to the covariates before building regressors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovariateMap {
    #[default]
    Identity,
    /// `(exp(x1/2), x2/(1+exp(x1)) + 10, (x1 x3/25 + 0.6)^3, (x2 + x4 + 20)^2)`;
    /// requires exactly four covariates.
    KangSchafer,
}

impl CovariateMap {
    pub fn name(self) -> &'static str {
        match self {
            CovariateMap::Identity => "identity",
            CovariateMap::KangSchafer => "kang_schafer",
        }
    }

    pub fn output_dim(self, p: usize) -> Result<usize> {
        match self {
            CovariateMap::Identity => Ok(p),
            CovariateMap::KangSchafer if p == 4 => Ok(4),
            CovariateMap::KangSchafer => Err(Error::InvalidSpec(format!(
                "kang_schafer map needs 4 covariates, data has {p}"
            ))),
        }
    }

    /// Writes the mapped covariates into `out`.
    #[inline]
    pub fn apply_into<T: Real>(self, x: &[T], out: &mut Vec<T>) {
        out.clear();
        match self {
            CovariateMap::Identity => out.extend_from_slice(x),
            CovariateMap::KangSchafer => out.extend_from_slice(&kang_schafer_map(x)),
        }
    }

    pub fn apply<T: Real>(self, x: &[T]) -> Vec<T> {
        let mut out = Vec::with_capacity(x.len());
        self.apply_into(x, &mut out);
        out
    }
}

impl FromStr for CovariateMap {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(CovariateMap::Identity),
            "kang_schafer" | "kang-schafer" => Ok(CovariateMap::KangSchafer),
            _ => Err(Error::InvalidSpec(format!("unknown covariate map '{s}'"))),
        }
    }
}

/// Nonlinear covariate transform used to misspecify working models.
pub fn kang_schafer_map<T: Real>(x: &[T]) -> [T; 4] {
    let (x1, x2, x3, x4) = (x[0], x[1], x[2], x[3]);
    let half = T::lit(0.5);
    let w3 = x1 * x3 / T::lit(25.0) + T::lit(0.6);
    let w4 = x2 + x4 + T::lit(20.0);
    [
        (x1 * half).exp(),
        x2 / (T::one() + x1.exp()) + T::lit(10.0),
        w3 * w3 * w3,
        w4 * w4,
    ]
}

/// Parametric form of the dose density given covariates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DensityForm {
    /// Mean model, squared-residual scale model, and a kernel density of
    /// the standardized residuals.
    #[default]
    Kde,
    /// Gaussian with a linear mean and constant variance. Fully
    /// parametric, as the augmented sandwich requires.
    Normal,
}

impl DensityForm {
    pub fn name(self) -> &'static str {
        match self {
            DensityForm::Kde => "kde",
            DensityForm::Normal => "normal",
        }
    }
}

impl FromStr for DensityForm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kde" => Ok(DensityForm::Kde),
            "normal" => Ok(DensityForm::Normal),
            _ => Err(Error::InvalidSpec(format!("unknown density form '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DoseFactor {
    One,
    Power(u32),
    Spline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovariateFactor {
    One,
    /// Zero-based covariate index (after mapping).
    Power {
        index: usize,
        power: u32,
    },
    Spline {
        index: usize,
    },
}

/// One regressor: a dose factor times a covariate factor. Spline factors
/// expand into several columns when the design is built.
///
/// Written as `1`, `x3`, `x3^2`, `d`, `d^3`, `d*x1`, `d^2*x1`, `s(x2)`,
/// `s(d)`, with one-based covariate indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TermSpec {
    pub dose: DoseFactor,
    pub covariate: CovariateFactor,
}

impl TermSpec {
    pub const INTERCEPT: TermSpec = TermSpec {
        dose: DoseFactor::One,
        covariate: CovariateFactor::One,
    };

    pub fn covariate(index: usize) -> Self {
        TermSpec {
            dose: DoseFactor::One,
            covariate: CovariateFactor::Power { index, power: 1 },
        }
    }

    pub fn dose_power(power: u32) -> Self {
        TermSpec {
            dose: DoseFactor::Power(power),
            covariate: CovariateFactor::One,
        }
    }

    pub fn dose_times(power: u32, index: usize) -> Self {
        TermSpec {
            dose: DoseFactor::Power(power),
            covariate: CovariateFactor::Power { index, power: 1 },
        }
    }

    pub fn uses_dose(&self) -> bool {
        self.dose != DoseFactor::One
    }

    /// Parses a comma-free list of terms.
    pub fn parse_list(items: &[&str]) -> Result<Vec<TermSpec>> {
        items.iter().map(|s| s.parse()).collect()
    }
}

fn parse_power(text: &str, whole: &str) -> Result<u32> {
    let p: u32 = text
        .parse()
        .map_err(|_| Error::InvalidSpec(format!("bad exponent in term '{whole}'")))?;
    if p == 0 {
        return Err(Error::InvalidSpec(format!(
            "zero exponent in term '{whole}'"
        )));
    }
    Ok(p)
}

fn parse_index(text: &str, whole: &str) -> Result<usize> {
    let j: usize = text
        .parse()
        .map_err(|_| Error::InvalidSpec(format!("bad covariate index in term '{whole}'")))?;
    if j == 0 {
        return Err(Error::InvalidSpec(format!(
            "covariate indices start at 1 in term '{whole}'"
        )));
    }
    Ok(j - 1)
}

impl FromStr for TermSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let whole = s.trim();
        let mut term = TermSpec::INTERCEPT;
        let mut seen_dose = false;
        let mut seen_cov = false;
        for factor in whole.split('*').map(str::trim) {
            let (base, power) = match factor.split_once('^') {
                Some((b, p)) => (b.trim(), parse_power(p.trim(), whole)?),
                None => (factor, 1),
            };
            if base == "1" && power == 1 {
                continue;
            }
            let dup = || Error::InvalidSpec(format!("term '{whole}' repeats a factor kind"));
            if base == "d" {
                if seen_dose {
                    return Err(dup());
                }
                seen_dose = true;
                term.dose = DoseFactor::Power(power);
            } else if base == "s(d)" && power == 1 {
                if seen_dose {
                    return Err(dup());
                }
                seen_dose = true;
                term.dose = DoseFactor::Spline;
            } else if let Some(idx) = base.strip_prefix("s(x").and_then(|r| r.strip_suffix(')')) {
                if seen_cov || power != 1 {
                    return Err(dup());
                }
                seen_cov = true;
                term.covariate = CovariateFactor::Spline {
                    index: parse_index(idx, whole)?,
                };
            } else if let Some(idx) = base.strip_prefix('x') {
                if seen_cov {
                    return Err(dup());
                }
                seen_cov = true;
                term.covariate = CovariateFactor::Power {
                    index: parse_index(idx, whole)?,
                    power,
                };
            } else {
                return Err(Error::InvalidSpec(format!("cannot parse term '{whole}'")));
            }
        }
        Ok(term)
    }
}

impl fmt::Display for TermSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dose = match self.dose {
            DoseFactor::One => None,
            DoseFactor::Power(1) => Some("d".to_string()),
            DoseFactor::Power(p) => Some(format!("d^{p}")),
            DoseFactor::Spline => Some("s(d)".to_string()),
        };
        let cov = match self.covariate {
            CovariateFactor::One => None,
            CovariateFactor::Power { index, power: 1 } => Some(format!("x{}", index + 1)),
            CovariateFactor::Power { index, power } => Some(format!("x{}^{power}", index + 1)),
            CovariateFactor::Spline { index } => Some(format!("s(x{})", index + 1)),
        };
        match (dose, cov) {
            (None, None) => f.write_str("1"),
            (Some(d), None) => f.write_str(&d),
            (None, Some(c)) => f.write_str(&c),
            (Some(d), Some(c)) => write!(f, "{d}*{c}"),
        }
    }
}

/// How one nuisance function is learned.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceSpec {
    pub which: NuisanceKind,
    pub learner: Learner,
    pub covariate_map: CovariateMap,
    /// Regressors for the (mean) model; `None` selects the defaults.
    pub terms: Option<Vec<TermSpec>>,
    /// Regressors of the squared-residual model of `pi_d`; `None` reuses
    /// the mean-model terms.
    pub variance_terms: Option<Vec<TermSpec>>,
    /// Only read for `pi_d`.
    pub density: DensityForm,
}

impl NuisanceSpec {
    /// Parametric default: logistic for `pi_a`, least squares otherwise.
    pub fn parametric(which: NuisanceKind) -> Self {
        Self {
            which,
            learner: if which == NuisanceKind::PiA {
                Learner::Logistic
            } else {
                Learner::Linear
            },
            covariate_map: CovariateMap::Identity,
            terms: None,
            variance_terms: None,
            density: DensityForm::Kde,
        }
    }

    pub fn flexible(which: NuisanceKind) -> Self {
        Self {
            learner: Learner::FlexibleAdditive,
            ..Self::parametric(which)
        }
    }

    pub fn with_terms(mut self, terms: Vec<TermSpec>) -> Self {
        self.terms = Some(terms);
        self
    }

    pub fn with_map(mut self, map: CovariateMap) -> Self {
        self.covariate_map = map;
        self
    }

    pub fn with_density(mut self, density: DensityForm) -> Self {
        self.density = density;
        self
    }

    pub fn is_parametric(&self) -> bool {
        self.learner != Learner::FlexibleAdditive
    }

    /// Regressors actually used for `p` raw covariates.
    pub fn resolved_terms(&self, p: usize) -> Result<Vec<TermSpec>> {
        let q = self.covariate_map.output_dim(p)?;
        let terms = match (&self.terms, self.learner) {
            (Some(t), _) => t.clone(),
            (None, Learner::FlexibleAdditive) => {
                let mut t = vec![TermSpec::INTERCEPT];
                t.extend((0..q).map(|index| TermSpec {
                    dose: DoseFactor::One,
                    covariate: CovariateFactor::Spline { index },
                }));
                if self.which.allows_dose() {
                    t.push(TermSpec {
                        dose: DoseFactor::Spline,
                        covariate: CovariateFactor::One,
                    });
                }
                t
            }
            (None, _) => default_terms(self.which, q),
        };
        self.check_terms(&terms, q)?;
        Ok(terms)
    }

    pub fn resolved_variance_terms(&self, p: usize) -> Result<Vec<TermSpec>> {
        match &self.variance_terms {
            Some(t) => {
                let q = self.covariate_map.output_dim(p)?;
                self.check_terms(t, q)?;
                Ok(t.clone())
            }
            None => self.resolved_terms(p),
        }
    }

    fn check_terms(&self, terms: &[TermSpec], q: usize) -> Result<()> {
        if terms.is_empty() {
            return Err(Error::InvalidSpec(format!(
                "{}: empty term list",
                self.which
            )));
        }
        for t in terms {
            if t.uses_dose() && !self.which.allows_dose() {
                return Err(Error::InvalidSpec(format!(
                    "{}: dose term '{t}' not allowed",
                    self.which
                )));
            }
            let index = match t.covariate {
                CovariateFactor::One => None,
                CovariateFactor::Power { index, .. } | CovariateFactor::Spline { index } => {
                    Some(index)
                }
            };
            if let Some(j) = index.filter(|&j| j >= q) {
                return Err(Error::InvalidSpec(format!(
                    "{}: term '{t}' refers to covariate {} of {q}",
                    self.which,
                    j + 1
                )));
            }
        }
        Ok(())
    }

    /// Checks learner compatibility and term validity for `p` covariates.
    pub fn validate(&self, p: usize) -> Result<()> {
        match (self.which, self.learner) {
            (NuisanceKind::PiA, Learner::Linear) => {
                return Err(Error::InvalidSpec(
                    "pi_a needs a binary-outcome learner".into(),
                ))
            }
            (k, Learner::Logistic) if k != NuisanceKind::PiA => {
                return Err(Error::InvalidSpec(format!(
                    "{k}: logistic learner is only valid for pi_a"
                )))
            }
            _ => {}
        }
        self.resolved_terms(p)?;
        if self.which == NuisanceKind::PiD {
            self.resolved_variance_terms(p)?;
        }
        Ok(())
    }
}

/// Default parametric regressors for `q` (mapped) covariates.
pub fn default_terms(which: NuisanceKind, q: usize) -> Vec<TermSpec> {
    let mut t = vec![TermSpec::INTERCEPT];
    t.extend((0..q).map(TermSpec::covariate));
    if which == NuisanceKind::Mu1 {
        t.push(TermSpec::dose_power(1));
        t.push(TermSpec::dose_power(2));
        t.extend((0..q).map(|j| TermSpec::dose_times(1, j)));
    }
    t
}

/// Specifications of all four nuisance functions; absent entries are
/// allowed for methods that do not need them.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NuisanceSpecs {
    pub pi_a: Option<NuisanceSpec>,
    pub pi_d: Option<NuisanceSpec>,
    pub mu1: Option<NuisanceSpec>,
    pub mu0: Option<NuisanceSpec>,
}

impl NuisanceSpecs {
    pub fn parametric() -> Self {
        Self {
            pi_a: Some(NuisanceSpec::parametric(NuisanceKind::PiA)),
            pi_d: Some(NuisanceSpec::parametric(NuisanceKind::PiD)),
            mu1: Some(NuisanceSpec::parametric(NuisanceKind::Mu1)),
            mu0: Some(NuisanceSpec::parametric(NuisanceKind::Mu0)),
        }
    }

    pub fn flexible() -> Self {
        Self {
            pi_a: Some(NuisanceSpec::flexible(NuisanceKind::PiA)),
            pi_d: Some(NuisanceSpec::flexible(NuisanceKind::PiD)),
            mu1: Some(NuisanceSpec::flexible(NuisanceKind::Mu1)),
            mu0: Some(NuisanceSpec::flexible(NuisanceKind::Mu0)),
        }
    }

    pub fn get(&self, which: NuisanceKind) -> Option<&NuisanceSpec> {
        match which {
            NuisanceKind::PiA => self.pi_a.as_ref(),
            NuisanceKind::PiD => self.pi_d.as_ref(),
            NuisanceKind::Mu1 => self.mu1.as_ref(),
            NuisanceKind::Mu0 => self.mu0.as_ref(),
        }
    }

    pub fn get_mut(&mut self, which: NuisanceKind) -> &mut Option<NuisanceSpec> {
        match which {
            NuisanceKind::PiA => &mut self.pi_a,
            NuisanceKind::PiD => &mut self.pi_d,
            NuisanceKind::Mu1 => &mut self.mu1,
            NuisanceKind::Mu0 => &mut self.mu0,
        }
    }

    pub fn require(&self, which: NuisanceKind) -> Result<&NuisanceSpec> {
        self.get(which)
            .ok_or_else(|| Error::MissingSpec(which.name().into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kang_schafer_at_origin() {
        let w = kang_schafer_map(&[0.0_f64; 4]);
        assert_eq!(w[0], 1.0);
        assert_eq!(w[1], 10.0);
        assert!((w[2] - 0.216).abs() < 1e-15);
        assert_eq!(w[3], 400.0);
    }

    #[test]
    fn term_grammar_roundtrip() {
        for s in [
            "1", "x3", "x3^2", "d", "d^3", "d*x1", "d^2*x1", "s(x2)", "s(d)", "s(d)*x4",
        ] {
            let t: TermSpec = s.parse().unwrap();
            assert_eq!(t.to_string(), s);
        }
        assert_eq!("x1*d".parse::<TermSpec>().unwrap().to_string(), "d*x1");
        assert!("x0".parse::<TermSpec>().is_err());
        assert!("d*d".parse::<TermSpec>().is_err());
        assert!("z".parse::<TermSpec>().is_err());
    }

    #[test]
    fn validation_rules() {
        let mut s = NuisanceSpec::parametric(NuisanceKind::PiA);
        s.learner = Learner::Linear;
        assert!(s.validate(3).is_err());
        let s = NuisanceSpec::parametric(NuisanceKind::Mu0).with_terms(vec!["d".parse().unwrap()]);
        assert!(s.validate(3).is_err());
        let s = NuisanceSpec::parametric(NuisanceKind::Mu1).with_terms(vec!["x5".parse().unwrap()]);
        assert!(s.validate(4).is_err());
        let s = NuisanceSpec::parametric(NuisanceKind::Mu1).with_map(CovariateMap::KangSchafer);
        assert!(s.validate(3).is_err());
        assert!(s.validate(4).is_ok());
    }

    #[test]
    fn defaults() {
        let t = NuisanceSpec::parametric(NuisanceKind::Mu1)
            .resolved_terms(2)
            .unwrap();
        let names: Vec<String> = t.iter().map(|t| t.to_string()).collect();
        assert_eq!(names, ["1", "x1", "x2", "d", "d^2", "d*x1", "d*x2"]);
        let t = NuisanceSpec::flexible(NuisanceKind::Mu0)
            .resolved_terms(2)
            .unwrap();
        let names: Vec<String> = t.iter().map(|t| t.to_string()).collect();
        assert_eq!(names, ["1", "s(x1)", "s(x2)"]);
    }
}
