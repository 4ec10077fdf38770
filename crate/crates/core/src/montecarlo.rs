//! Replication engine: power and type-I-error estimation for every
//! estimator, with per-method exclusion bookkeeping and Z-statistic
//! diagnostics.
//!
//! Determinism: replication `k` always draws from the `(seed, k)` stream, so
//! a report is byte-identical across runs and worker counts. Sweeps reuse
//! the same streams across axis values (common random numbers), which makes
//! sweep curves smooth and per-trial comparisons paired.

use crate::domain::{DomainError, SubjectRecord, Term, TermSet};
use crate::inference::{
    critical_value, delta_crossing, delta_full, delta_misspec, delta_nonparametric,
    CovariateProfile, InferenceError, Method,
};
use crate::kaplan_meier::fmt_sig6;
use crate::mle::{fit_exponential, fit_piecewise, FitConfig};
use crate::simulate::{generate_trial, null_design, TrialDesign};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};
use std::io::{self, Write};

/// One-sided test level used by the engine.
pub const DEFAULT_ALPHA: f64 = 0.025;

/// Retention cap for the per-method Z-statistic sample.
pub const Z_SAMPLE_CAP: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hypothesis {
    /// Simulate under the design's truth.
    Alternative,
    /// Zero the treatment main effect and interaction before generating.
    Null,
}

impl Hypothesis {
    pub fn name(self) -> &'static str {
        match self {
            Hypothesis::Alternative => "alternative",
            Hypothesis::Null => "null",
        }
    }

    pub fn parse(s: &str) -> Option<Hypothesis> {
        match s {
            "alternative" => Some(Hypothesis::Alternative),
            "null" => Some(Hypothesis::Null),
            _ => None,
        }
    }
}

/// Sweep axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    TStar,
    Beta3,
    AssumedKnot,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::TStar => "t_star",
            Axis::Beta3 => "beta3",
            Axis::AssumedKnot => "assumed_knot",
        }
    }

    pub fn parse(s: &str) -> Option<Axis> {
        match s {
            "t_star" => Some(Axis::TStar),
            "beta3" => Some(Axis::Beta3),
            "assumed_knot" => Some(Axis::AssumedKnot),
            _ => None,
        }
    }
}

/// A complete Monte Carlo experiment at one configuration point.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub design: TrialDesign,
    pub t_star: f64,
    pub methods: Vec<Method>,
    /// Knot the crossing estimator assumes at fitting time; may differ from
    /// the generating knot in misspecification studies.
    pub assumed_knot: Option<f64>,
    pub hypothesis: Hypothesis,
    pub replications: usize,
    /// Covariate profile for the parametric contrasts.
    pub profile: CovariateProfile,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), DomainError> {
        self.design.validate()?;
        if self.replications == 0 {
            return Err(DomainError::invalid("replications", "must be at least 1"));
        }
        if !self.t_star.is_finite() || self.t_star <= 0.0 {
            return Err(DomainError::invalid(
                "t_star",
                format!("must be finite and positive, got {}", self.t_star),
            ));
        }
        if self.methods.is_empty() {
            return Err(DomainError::invalid("methods", "at least one estimator required"));
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].contains(m) {
                return Err(DomainError::invalid("methods", format!("duplicate method `{m}`")));
            }
        }
        if self.methods.contains(&Method::CrossingParametric) {
            match self.assumed_knot {
                Some(k) if k.is_finite() && k > 0.0 => {}
                Some(k) => {
                    return Err(DomainError::invalid(
                        "assumed_knot",
                        format!("must be finite and positive, got {k}"),
                    ))
                }
                None => {
                    return Err(DomainError::invalid(
                        "assumed_knot",
                        "required by the crossing estimator",
                    ))
                }
            }
        }
        Ok(())
    }

    fn with_axis(&self, axis: Axis, value: f64) -> Scenario {
        let mut out = self.clone();
        match axis {
            Axis::TStar => out.t_star = value,
            Axis::Beta3 => match &mut out.design.truth {
                crate::domain::ModelParams::Exponential(p) => p.set_beta(Term::Sex, value),
                crate::domain::ModelParams::Piecewise(p) => {
                    let (before, after) = p.pieces_mut();
                    before.set_beta(Term::Sex, value);
                    after.set_beta(Term::Sex, value);
                }
            },
            Axis::AssumedKnot => out.assumed_knot = Some(value),
        }
        out
    }

    /// Whether an axis makes sense for this scenario.
    pub fn axis_applicable(&self, axis: Axis) -> Result<(), DomainError> {
        match axis {
            Axis::TStar => Ok(()),
            Axis::Beta3 => {
                if self.design.truth.terms().contains(Term::Sex) {
                    Ok(())
                } else {
                    Err(DomainError::invalid("axis", "beta3 sweep needs `sex` among the truth's terms"))
                }
            }
            Axis::AssumedKnot => {
                if self.methods.contains(&Method::CrossingParametric) {
                    Ok(())
                } else {
                    Err(DomainError::invalid(
                        "axis",
                        "assumed_knot sweep needs the crossing estimator",
                    ))
                }
            }
        }
    }
}

/// Per-method tally over all replications.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodReport {
    pub method: Method,
    pub replications: usize,
    pub evaluable: usize,
    /// Replications excluded because the horizon was not evaluable for the
    /// Kaplan-Meier estimator.
    pub excluded_km: usize,
    /// Replications excluded because a maximum-likelihood fit failed.
    pub excluded_fit: usize,
    pub rejections: usize,
    pub mean_delta: f64,
    pub mean_se: f64,
    pub z_sample: Vec<f64>,
}

impl MethodReport {
    pub fn rejection_rate(&self) -> f64 {
        self.rejections as f64 / self.evaluable as f64
    }

    pub fn mc_stderr(&self) -> f64 {
        let p = self.rejection_rate();
        (p * (1.0 - p) / self.evaluable as f64).sqrt()
    }

    pub fn excluded(&self) -> usize {
        self.excluded_km + self.excluded_fit
    }
}

/// Report for one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloReport {
    pub hypothesis: Hypothesis,
    pub t_star: f64,
    pub replications: usize,
    pub methods: Vec<MethodReport>,
}

impl MonteCarloReport {
    pub fn method(&self, method: Method) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.method == method)
    }
}

enum Outcome {
    Accepted { delta: f64, se: f64, z: f64, reject: bool },
    ExcludedKm,
    ExcludedFit,
}

fn evaluate_method(
    method: Method,
    records: &[SubjectRecord],
    scenario: &Scenario,
    config: &FitConfig,
    crit: f64,
) -> Outcome {
    let result = match method {
        Method::NonParametric => delta_nonparametric(records, scenario.t_star),
        Method::FullParametric => fit_exponential(records, &TermSet::full(), config)
            .map_err(InferenceError::from)
            .and_then(|fit| delta_full(&fit, scenario.t_star, scenario.profile)),
        Method::MisspecParametric => fit_exponential(records, &TermSet::misspecified(), config)
            .map_err(InferenceError::from)
            .and_then(|fit| delta_misspec(&fit, scenario.t_star, scenario.profile)),
        Method::CrossingParametric => {
            let knot = scenario.assumed_knot.expect("validated scenario");
            fit_piecewise(records, &TermSet::full(), knot, config)
                .map_err(InferenceError::from)
                .and_then(|fit| delta_crossing(&fit, scenario.t_star, scenario.profile))
        }
    };
    match result {
        Ok(diff) => Outcome::Accepted {
            delta: diff.delta_hat,
            se: diff.std_err,
            z: diff.z,
            reject: diff.z > crit,
        },
        Err(InferenceError::NonEvaluable(_) | InferenceError::EmptyArm) => Outcome::ExcludedKm,
        Err(InferenceError::Fit(_) | InferenceError::WrongModel { .. }) => Outcome::ExcludedFit,
    }
}

/// Kahan-compensated accumulator; keeps the sequential reduction exact
/// enough to be reproducible bit-for-bit.
#[derive(Default)]
struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }
}

/// Run one scenario to completion on the current rayon pool.
///
/// Per replication every requested estimator is computed on the same
/// generated trial; replications where a method errors are excluded from
/// that method's denominator only.
pub fn run_scenario(scenario: &Scenario) -> MonteCarloReport {
    scenario.validate().expect("scenario must be validated before running");
    let design = match scenario.hypothesis {
        Hypothesis::Alternative => scenario.design.clone(),
        Hypothesis::Null => null_design(&scenario.design),
    };
    let config = FitConfig::default();
    let crit = critical_value(DEFAULT_ALPHA);
    let methods = &scenario.methods;

    let per_replication: Vec<Vec<Outcome>> = (0..scenario.replications as u64)
        .into_par_iter()
        .map(|k| {
            let records = generate_trial(&design, k);
            methods
                .iter()
                .map(|m| evaluate_method(*m, &records, scenario, &config, crit))
                .collect()
        })
        .collect();

    let reports = methods
        .iter()
        .enumerate()
        .map(|(j, method)| {
            let mut evaluable = 0usize;
            let mut excluded_km = 0usize;
            let mut excluded_fit = 0usize;
            let mut rejections = 0usize;
            let mut delta_sum = KahanSum::default();
            let mut se_sum = KahanSum::default();
            let mut z_sample = Vec::new();
            for outcomes in &per_replication {
                match &outcomes[j] {
                    Outcome::Accepted { delta, se, z, reject } => {
                        evaluable += 1;
                        if *reject {
                            rejections += 1;
                        }
                        delta_sum.add(*delta);
                        se_sum.add(*se);
                        if z_sample.len() < Z_SAMPLE_CAP {
                            z_sample.push(*z);
                        }
                    }
                    Outcome::ExcludedKm => excluded_km += 1,
                    Outcome::ExcludedFit => excluded_fit += 1,
                }
            }
            MethodReport {
                method: *method,
                replications: scenario.replications,
                evaluable,
                excluded_km,
                excluded_fit,
                rejections,
                mean_delta: delta_sum.sum / evaluable as f64,
                mean_se: se_sum.sum / evaluable as f64,
                z_sample,
            }
        })
        .collect();

    MonteCarloReport {
        hypothesis: scenario.hypothesis,
        t_star: scenario.t_star,
        replications: scenario.replications,
        methods: reports,
    }
}

/// Run on a dedicated pool of `workers` threads. Results do not depend on
/// the worker count; this exists for resource control and for verifying
/// exactly that.
pub fn run_scenario_with_workers(scenario: &Scenario, workers: usize) -> MonteCarloReport {
    assert!(workers >= 1, "worker count must be at least 1");
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("failed to build worker pool")
        .install(|| run_scenario(scenario))
}

/// One report per axis value, all sharing the base scenario's seed and
/// replication streams (common random numbers).
pub fn sweep(base: &Scenario, axis: Axis, values: &[f64]) -> Vec<MonteCarloReport> {
    base.axis_applicable(axis).expect("axis must fit the scenario");
    values.iter().map(|v| run_scenario(&base.with_axis(axis, *v))).collect()
}

/// Like [`sweep`] on a dedicated pool.
pub fn sweep_with_workers(
    base: &Scenario,
    axis: Axis,
    values: &[f64],
    workers: usize,
) -> Vec<MonteCarloReport> {
    assert!(workers >= 1, "worker count must be at least 1");
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("failed to build worker pool")
        .install(|| sweep(base, axis, values))
}

/// Histogram and Q-Q summary of a Z sample.
#[derive(Debug, Clone)]
pub struct ZDiagnostics {
    /// Left edge of the first bin.
    pub bin_lo: f64,
    /// Bin width.
    pub bin_width: f64,
    /// Counts over `[-5, 5]` in 40 bins of width 0.25.
    pub bins: Vec<usize>,
    pub underflow: usize,
    pub overflow: usize,
    /// `(standard normal quantile at k/(m+1), k-th order statistic)` pairs.
    pub qq: Vec<(f64, f64)>,
    /// One-sample Kolmogorov-Smirnov distance to the standard normal.
    pub ks_normal: f64,
}

impl ZDiagnostics {
    /// Least-squares slope of the Q-Q scatter; 1 for a perfectly normal sample.
    pub fn qq_slope(&self) -> f64 {
        let m = self.qq.len() as f64;
        let mean_x = self.qq.iter().map(|p| p.0).sum::<f64>() / m;
        let mean_y = self.qq.iter().map(|p| p.1).sum::<f64>() / m;
        let mut sxy = 0.0;
        let mut sxx = 0.0;
        for (x, y) in &self.qq {
            sxy += (x - mean_x) * (y - mean_y);
            sxx += (x - mean_x) * (x - mean_x);
        }
        sxy / sxx
    }
}

/// Build the fixed-bin histogram, Q-Q pairs, and KS distance for one
/// method's Z sample.
pub fn z_diagnostics(report: &MethodReport) -> ZDiagnostics {
    assert!(!report.z_sample.is_empty(), "z diagnostics need a non-empty sample");
    let (bin_lo, bin_width, n_bins) = (-5.0, 0.25, 40usize);
    let mut bins = vec![0usize; n_bins];
    let mut underflow = 0usize;
    let mut overflow = 0usize;
    for z in &report.z_sample {
        if *z < bin_lo {
            underflow += 1;
        } else {
            let idx = ((z - bin_lo) / bin_width) as usize;
            if idx >= n_bins {
                overflow += 1;
            } else {
                bins[idx] += 1;
            }
        }
    }

    let mut sorted = report.z_sample.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite z in sample"));
    let m = sorted.len();
    let normal = Normal::new(0.0, 1.0).unwrap();
    let qq = sorted
        .iter()
        .enumerate()
        .map(|(k, z)| (normal.inverse_cdf((k as f64 + 1.0) / (m as f64 + 1.0)), *z))
        .collect();

    let mut ks = 0.0f64;
    for (k, z) in sorted.iter().enumerate() {
        let c = normal.cdf(*z);
        ks = ks.max((k as f64 + 1.0) / m as f64 - c).max(c - k as f64 / m as f64);
    }

    ZDiagnostics { bin_lo, bin_width, bins, underflow, overflow, qq, ks_normal: ks }
}

/// Serialize reports as CSV, one row per (axis value, method):
/// `axis_value,method,hypothesis,replications,evaluable,excluded_km,excluded_fit,rejections,rate,mc_stderr,mean_delta,mean_se`.
pub fn write_report_csv<W: Write>(
    out: &mut W,
    rows: &[(f64, &MonteCarloReport)],
) -> io::Result<()> {
    writeln!(
        out,
        "axis_value,method,hypothesis,replications,evaluable,excluded_km,excluded_fit,rejections,rate,mc_stderr,mean_delta,mean_se"
    )?;
    for (axis_value, report) in rows {
        for m in &report.methods {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{:.6},{:.6},{},{}",
                fmt_sig6(*axis_value),
                m.method,
                report.hypothesis.name(),
                m.replications,
                m.evaluable,
                m.excluded_km,
                m.excluded_fit,
                m.rejections,
                m.rejection_rate(),
                m.mc_stderr(),
                fmt_sig6(m.mean_delta),
                fmt_sig6(m.mean_se),
            )?;
        }
    }
    Ok(())
}

/// Dump retained Z statistics: `method,z`, replication order.
pub fn write_z_csv<W: Write>(out: &mut W, reports: &[&MonteCarloReport]) -> io::Result<()> {
    writeln!(out, "method,z")?;
    for report in reports {
        for m in &report.methods {
            for z in &m.z_sample {
                writeln!(out, "{},{z}", m.method)?;
            }
        }
    }
    Ok(())
}
