//! Flat `key = value` scenario files.
//!
//! Every key corresponds to a named field of the trial design, the truth
//! parameters, or the scenario; the echo written next to each run's outputs
//! is itself a valid config, and floats are printed with Rust's shortest
//! round-trip formatting so a parse-echo cycle is bit-exact.

use crate::domain::{DomainError, ExpPHParams, ModelParams, PiecewiseParams, Term, TermSet};
use crate::inference::{CovariateProfile, Method};
use crate::montecarlo::{Axis, Hypothesis, Scenario};
use crate::simulate::TrialDesign;
use std::collections::HashMap;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Malformed { line: usize, text: String },
    #[error("duplicate key `{0}`")]
    DuplicateKey(String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("missing key `{0}`")]
    MissingKey(&'static str),
    #[error("invalid value for `{key}`: {reason}")]
    InvalidValue { key: String, reason: String },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

impl ConfigError {
    /// The offending key, for CLI error messages.
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::DuplicateKey(k) | ConfigError::UnknownKey(k) => Some(k),
            ConfigError::MissingKey(k) => Some(k),
            ConfigError::InvalidValue { key, .. } => Some(key),
            ConfigError::Domain(d) => Some(d.field()),
            ConfigError::Malformed { .. } => None,
        }
    }
}

/// A sweep request: one report per value along the axis.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub axis: Axis,
    pub values: Vec<f64>,
}

/// Resolved run configuration: scenario, optional sweep, output options.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub sweep: Option<SweepSpec>,
    pub dump_z: bool,
    pub workers: Option<usize>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), DomainError> {
        self.scenario.validate()?;
        if let Some(sweep) = &self.sweep {
            self.scenario.axis_applicable(sweep.axis)?;
            if sweep.values.is_empty() {
                return Err(DomainError::invalid("axis_values", "at least one value required"));
            }
            for v in &sweep.values {
                if !v.is_finite() {
                    return Err(DomainError::invalid("axis_values", format!("non-finite value {v}")));
                }
                if sweep.axis != Axis::Beta3 && *v <= 0.0 {
                    return Err(DomainError::invalid(
                        "axis_values",
                        format!("{} values must be positive, got {v}", sweep.axis.name()),
                    ));
                }
            }
        }
        if self.workers == Some(0) {
            return Err(DomainError::invalid("workers", "must be at least 1"));
        }
        Ok(())
    }
}

fn beta_line(out: &mut String, params: &ExpPHParams, suffix: &str) {
    for (term, b) in params.terms().terms().iter().zip(params.beta()) {
        writeln!(out, "beta_{}{} = {}", term.name(), suffix, b).unwrap();
    }
}

/// Render a config in canonical key order.
pub fn to_kv(config: &RunConfig) -> String {
    let mut out = String::new();
    let s = &config.scenario;
    let d = &s.design;

    match &d.truth {
        ModelParams::Exponential(p) => {
            writeln!(out, "model = exponential").unwrap();
            writeln!(out, "terms = {}", terms_csv(p.terms())).unwrap();
            writeln!(out, "lambda = {}", p.lambda()).unwrap();
            beta_line(&mut out, p, "");
        }
        ModelParams::Piecewise(p) => {
            writeln!(out, "model = piecewise").unwrap();
            writeln!(out, "terms = {}", terms_csv(p.terms())).unwrap();
            writeln!(out, "knot = {}", p.knot()).unwrap();
            writeln!(out, "lambda_a = {}", p.before().lambda()).unwrap();
            beta_line(&mut out, p.before(), "_a");
            writeln!(out, "lambda_b = {}", p.after().lambda()).unwrap();
            beta_line(&mut out, p.after(), "_b");
        }
    }

    writeln!(out, "n_subjects = {}", d.n_subjects).unwrap();
    writeln!(out, "accrual_window = {}", d.accrual_window).unwrap();
    writeln!(out, "analysis_time = {}", d.analysis_time).unwrap();
    writeln!(out, "censor_rate = {}", d.censor_rate).unwrap();
    writeln!(out, "covariate_prob = {}", d.covariate_prob).unwrap();
    writeln!(out, "seed = {}", d.seed).unwrap();

    writeln!(out, "t_star = {}", s.t_star).unwrap();
    let methods: Vec<&str> = s.methods.iter().map(|m| m.name()).collect();
    writeln!(out, "methods = {}", methods.join(",")).unwrap();
    if let Some(k) = s.assumed_knot {
        writeln!(out, "assumed_knot = {k}").unwrap();
    }
    writeln!(out, "hypothesis = {}", s.hypothesis.name()).unwrap();
    writeln!(out, "replications = {}", s.replications).unwrap();
    let profile = match s.profile {
        CovariateProfile::Averaged => "averaged".to_string(),
        CovariateProfile::Fixed { inherit, sex } => {
            format!("fixed:{},{}", u8::from(inherit), u8::from(sex))
        }
    };
    writeln!(out, "profile = {profile}").unwrap();

    if let Some(sweep) = &config.sweep {
        writeln!(out, "axis = {}", sweep.axis.name()).unwrap();
        let values: Vec<String> = sweep.values.iter().map(|v| format!("{v}")).collect();
        writeln!(out, "axis_values = {}", values.join(",")).unwrap();
    }
    writeln!(out, "dump_z = {}", config.dump_z).unwrap();
    if let Some(w) = config.workers {
        writeln!(out, "workers = {w}").unwrap();
    }
    out
}

fn terms_csv(terms: &TermSet) -> String {
    terms.terms().iter().map(|t| t.name()).collect::<Vec<_>>().join(",")
}

struct Kv {
    map: HashMap<String, String>,
}

impl Kv {
    fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut map = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Malformed {
                line: i + 1,
                text: line.to_string(),
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if map.insert(key.clone(), value).is_some() {
                return Err(ConfigError::DuplicateKey(key));
            }
        }
        Ok(Kv { map })
    }

    fn take(&mut self, key: &'static str) -> Result<String, ConfigError> {
        self.map.remove(key).ok_or(ConfigError::MissingKey(key))
    }

    fn take_opt(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    fn take_f64(&mut self, key: &'static str) -> Result<f64, ConfigError> {
        parse_f64(key, &self.take(key)?)
    }

    fn take_usize(&mut self, key: &'static str) -> Result<usize, ConfigError> {
        let raw = self.take(key)?;
        raw.parse().map_err(|_| ConfigError::InvalidValue {
            key: key.to_string(),
            reason: format!("expected a non-negative integer, got `{raw}`"),
        })
    }
}

fn parse_f64(key: &str, raw: &str) -> Result<f64, ConfigError> {
    raw.parse().map_err(|_| ConfigError::InvalidValue {
        key: key.to_string(),
        reason: format!("expected a number, got `{raw}`"),
    })
}

fn parse_terms(raw: &str) -> Result<TermSet, ConfigError> {
    if raw.is_empty() {
        return Ok(TermSet::empty());
    }
    let mut terms = Vec::new();
    for part in raw.split(',') {
        let part = part.trim();
        let term = Term::parse(part).ok_or_else(|| ConfigError::InvalidValue {
            key: "terms".to_string(),
            reason: format!("unknown term `{part}`"),
        })?;
        terms.push(term);
    }
    TermSet::new(terms).map_err(ConfigError::from)
}

fn parse_params(kv: &mut Kv, terms: &TermSet, suffix: &str) -> Result<ExpPHParams, ConfigError> {
    let lambda_key = format!("lambda{suffix}");
    let raw = kv
        .take_opt(&lambda_key)
        .ok_or(ConfigError::MissingKey(match suffix {
            "" => "lambda",
            "_a" => "lambda_a",
            _ => "lambda_b",
        }))?;
    let lambda = parse_f64(&lambda_key, &raw)?;
    let mut beta = Vec::with_capacity(terms.len());
    for term in terms.terms() {
        let key = format!("beta_{}{}", term.name(), suffix);
        let raw = kv.take_opt(&key).ok_or_else(|| ConfigError::InvalidValue {
            key: key.clone(),
            reason: "missing coefficient for a declared term".to_string(),
        })?;
        beta.push(parse_f64(&key, &raw)?);
    }
    ExpPHParams::new(lambda, terms.clone(), beta).map_err(ConfigError::from)
}

/// Parse a config file body.
pub fn from_kv(text: &str) -> Result<RunConfig, ConfigError> {
    let mut kv = Kv::parse(text)?;

    let model = kv.take("model")?;
    let terms = parse_terms(&kv.take("terms")?)?;
    let truth = match model.as_str() {
        "exponential" => ModelParams::Exponential(parse_params(&mut kv, &terms, "")?),
        "piecewise" => {
            let knot = kv.take_f64("knot")?;
            let before = parse_params(&mut kv, &terms, "_a")?;
            let after = parse_params(&mut kv, &terms, "_b")?;
            ModelParams::Piecewise(PiecewiseParams::new(knot, before, after)?)
        }
        other => {
            return Err(ConfigError::InvalidValue {
                key: "model".to_string(),
                reason: format!("expected `exponential` or `piecewise`, got `{other}`"),
            })
        }
    };

    let design = TrialDesign {
        n_subjects: kv.take_usize("n_subjects")?,
        accrual_window: kv.take_f64("accrual_window")?,
        analysis_time: kv.take_f64("analysis_time")?,
        censor_rate: kv.take_f64("censor_rate")?,
        covariate_prob: kv.take_f64("covariate_prob")?,
        truth,
        seed: {
            let raw = kv.take("seed")?;
            raw.parse().map_err(|_| ConfigError::InvalidValue {
                key: "seed".to_string(),
                reason: format!("expected an unsigned 64-bit integer, got `{raw}`"),
            })?
        },
    };

    let t_star = kv.take_f64("t_star")?;
    let methods_raw = kv.take("methods")?;
    let mut methods = Vec::new();
    for part in methods_raw.split(',') {
        let part = part.trim();
        let m = Method::parse(part).ok_or_else(|| ConfigError::InvalidValue {
            key: "methods".to_string(),
            reason: format!("unknown method `{part}`"),
        })?;
        methods.push(m);
    }
    let assumed_knot = kv.take_opt("assumed_knot").map(|raw| parse_f64("assumed_knot", &raw)).transpose()?;
    let hypothesis_raw = kv.take("hypothesis")?;
    let hypothesis = Hypothesis::parse(&hypothesis_raw).ok_or_else(|| ConfigError::InvalidValue {
        key: "hypothesis".to_string(),
        reason: format!("expected `alternative` or `null`, got `{hypothesis_raw}`"),
    })?;
    let replications = kv.take_usize("replications")?;
    let profile = match kv.take_opt("profile") {
        None => CovariateProfile::Averaged,
        Some(raw) => parse_profile(&raw)?,
    };

    let sweep = match kv.take_opt("axis") {
        None => {
            if kv.take_opt("axis_values").is_some() {
                return Err(ConfigError::InvalidValue {
                    key: "axis_values".to_string(),
                    reason: "axis_values given without axis".to_string(),
                });
            }
            None
        }
        Some(raw) => {
            let axis = Axis::parse(&raw).ok_or_else(|| ConfigError::InvalidValue {
                key: "axis".to_string(),
                reason: format!("expected t_star, beta3 or assumed_knot, got `{raw}`"),
            })?;
            let values_raw = kv.take("axis_values")?;
            let mut values = Vec::new();
            for part in values_raw.split(',') {
                values.push(parse_f64("axis_values", part.trim())?);
            }
            Some(SweepSpec { axis, values })
        }
    };

    let dump_z = match kv.take_opt("dump_z") {
        None => false,
        Some(raw) => parse_bool("dump_z", &raw)?,
    };
    let workers = kv
        .take_opt("workers")
        .map(|raw| {
            raw.parse::<usize>().map_err(|_| ConfigError::InvalidValue {
                key: "workers".to_string(),
                reason: format!("expected a positive integer, got `{raw}`"),
            })
        })
        .transpose()?;

    if let Some(key) = kv.map.keys().next() {
        return Err(ConfigError::UnknownKey(key.clone()));
    }

    Ok(RunConfig {
        scenario: Scenario {
            design,
            t_star,
            methods,
            assumed_knot,
            hypothesis,
            replications,
            profile,
        },
        sweep,
        dump_z,
        workers,
    })
}

fn parse_profile(raw: &str) -> Result<CovariateProfile, ConfigError> {
    if raw == "averaged" {
        return Ok(CovariateProfile::Averaged);
    }
    if let Some(rest) = raw.strip_prefix("fixed:") {
        if let Some((a, b)) = rest.split_once(',') {
            let bit = |s: &str| match s.trim() {
                "0" => Some(false),
                "1" => Some(true),
                _ => None,
            };
            if let (Some(inherit), Some(sex)) = (bit(a), bit(b)) {
                return Ok(CovariateProfile::Fixed { inherit, sex });
            }
        }
    }
    Err(ConfigError::InvalidValue {
        key: "profile".to_string(),
        reason: format!("expected `averaged` or `fixed:<0|1>,<0|1>`, got `{raw}`"),
    })
}

fn parse_bool(key: &str, raw: &str) -> Result<bool, ConfigError> {
    match raw {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(ConfigError::InvalidValue {
            key: key.to_string(),
            reason: format!("expected `true` or `false`, got `{raw}`"),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use proptest::prelude::*;

    #[test]
    fn presets_round_trip_bit_exactly() {
        for name in presets::preset_names() {
            let config = presets::preset(name).unwrap();
            let text = to_kv(&config);
            let back = from_kv(&text).expect(name);
            assert_eq!(back, config, "round trip of preset {name}");
            // a second cycle is byte-stable
            assert_eq!(to_kv(&back), text);
        }
    }

    #[test]
    fn unknown_key_is_rejected() {
        let config = presets::preset("cgd-power").unwrap();
        let text = format!("{}gamma = 1\n", to_kv(&config));
        assert_eq!(from_kv(&text).unwrap_err(), ConfigError::UnknownKey("gamma".into()));
    }

    #[test]
    fn missing_lambda_is_named() {
        let config = presets::preset("cgd-power").unwrap();
        let text: String = to_kv(&config)
            .lines()
            .filter(|l| !l.starts_with("lambda"))
            .map(|l| format!("{l}\n"))
            .collect();
        let err = from_kv(&text).unwrap_err();
        assert_eq!(err.key(), Some("lambda"));
    }

    #[test]
    fn malformed_line_reports_position() {
        let err = from_kv("model exponential\n").unwrap_err();
        assert!(matches!(err, ConfigError::Malformed { line: 1, .. }));
    }

    #[test]
    fn axis_values_without_axis_rejected() {
        let config = presets::preset("cgd-power").unwrap();
        let text = format!("{}axis_values = 1,2\n", to_kv(&config));
        let err = from_kv(&text).unwrap_err();
        assert_eq!(err.key(), Some("axis_values"));
    }

    proptest! {
        /// Any valid parameter set survives a write-parse cycle bit-exactly.
        #[test]
        fn parameter_round_trip_is_bit_exact(
            lambda in 1e-6f64..10.0,
            b1 in -5.0f64..5.0,
            b2 in -5.0f64..5.0,
            b3 in -5.0f64..5.0,
            b12 in -5.0f64..5.0,
            knot in 1.0f64..100.0,
            piecewise in any::<bool>(),
            seed in any::<u64>(),
        ) {
            let mk = |lam: f64, shift: f64| ExpPHParams::new(
                lam,
                TermSet::full(),
                vec![b1 + shift, b2, b3, b12],
            ).unwrap();
            let truth = if piecewise {
                ModelParams::Piecewise(PiecewiseParams::new(knot, mk(lambda, 0.0), mk(lambda * 1.3, 0.25)).unwrap())
            } else {
                ModelParams::Exponential(mk(lambda, 0.0))
            };
            let mut config = presets::preset("cgd-power").unwrap();
            config.scenario.design.truth = truth;
            config.scenario.design.seed = seed;
            if piecewise {
                config.scenario.methods = vec![Method::NonParametric, Method::CrossingParametric];
                config.scenario.assumed_knot = Some(knot);
            }
            let back = from_kv(&to_kv(&config)).unwrap();
            // bit-exact float recovery
            prop_assert_eq!(back, config);
        }
    }
}
