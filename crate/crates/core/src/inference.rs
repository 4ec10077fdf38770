//! RMST-difference estimators and the one-sided Z-test.
//!
//! Four estimators share the [`RmstDifference`] output: the non-parametric
//! (Kaplan-Meier) difference with Greenwood variance, the fully specified
//! and misspecified exponential-model differences, and the crossing-curves
//! (piecewise) difference. Parametric standard errors come from the delta
//! method over the fitted covariance; the exponential gradient is analytic,
//! the piecewise gradient uses central finite differences.

use crate::domain::{CovariateVector, ExpPHParams, FitResult, ModelParams, PiecewiseParams, SubjectRecord, TermSet};
use crate::kaplan_meier::{km_evaluable, km_fit, KmError};
use crate::mle::FitError;
use crate::models::rmst_piecewise;
use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

/// Relative step for the production finite-difference gradient
/// (`h_j = FD_STEP * max(1, |theta_j|)`).
const FD_STEP: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error("horizon not evaluable: {0}")]
    NonEvaluable(#[from] KmError),
    #[error("one arm has no subjects")]
    EmptyArm,
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error("estimator expects {expected}")]
    WrongModel { expected: &'static str },
}

/// Which estimator produced a difference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    NonParametric,
    FullParametric,
    MisspecParametric,
    CrossingParametric,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::NonParametric,
        Method::FullParametric,
        Method::MisspecParametric,
        Method::CrossingParametric,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::NonParametric => "nonparametric",
            Method::FullParametric => "full",
            Method::MisspecParametric => "misspec",
            Method::CrossingParametric => "crossing",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.name() == s)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Covariate profile at which a parametric arm contrast is evaluated.
///
/// `Averaged` weights the four (inherit, sex) patterns equally, matching the
/// Bernoulli(1/2) assignment of the trial generator; it summarizes the
/// treatment main effect and the interaction into one marginal contrast.
/// `Fixed` plugs in a single reference patient instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovariateProfile {
    #[default]
    Averaged,
    Fixed { inherit: bool, sex: bool },
}

impl CovariateProfile {
    /// (weight, covariates-at-treatment) pairs of the profile.
    fn cells(self, treatment: bool) -> Vec<(f64, CovariateVector)> {
        match self {
            CovariateProfile::Averaged => {
                let mut cells = Vec::with_capacity(4);
                for inherit in [false, true] {
                    for sex in [false, true] {
                        cells.push((0.25, CovariateVector::new(treatment, inherit, sex)));
                    }
                }
                cells
            }
            CovariateProfile::Fixed { inherit, sex } => {
                vec![(1.0, CovariateVector::new(treatment, inherit, sex))]
            }
        }
    }
}

/// An estimated RMST difference (treatment minus control) with its
/// delta-method or Greenwood standard error and Z statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct RmstDifference {
    pub delta_hat: f64,
    pub std_err: f64,
    pub z: f64,
    pub method: Method,
    pub t_star: f64,
    pub assumed_knot: Option<f64>,
    /// Set when a numerically negative delta-method quadratic form was
    /// clipped to zero.
    pub variance_clamped: bool,
}

fn difference(
    delta_hat: f64,
    std_err: f64,
    method: Method,
    t_star: f64,
    assumed_knot: Option<f64>,
    variance_clamped: bool,
) -> RmstDifference {
    let z = if std_err > 0.0 { delta_hat / std_err } else { f64::NAN };
    RmstDifference { delta_hat, std_err, z, method, t_star, assumed_knot, variance_clamped }
}

/// Marginal Kaplan-Meier difference: per-arm RMST with covariates pooled,
/// variance the sum of the two Greenwood variances.
///
/// Errors with [`InferenceError::NonEvaluable`] when either arm was not
/// observed to `t_star`; the Monte Carlo engine excludes such replications.
pub fn delta_nonparametric(
    records: &[SubjectRecord],
    t_star: f64,
) -> Result<RmstDifference, InferenceError> {
    let (treated, control): (Vec<_>, Vec<_>) =
        records.iter().partition(|r| r.covariates.treatment);
    if treated.is_empty() || control.is_empty() {
        return Err(InferenceError::EmptyArm);
    }
    let treated: Vec<SubjectRecord> = treated.into_iter().copied().collect();
    let control: Vec<SubjectRecord> = control.into_iter().copied().collect();
    let curve_t = km_fit(&treated)?;
    let curve_c = km_fit(&control)?;
    if !km_evaluable(&curve_t, &curve_c, t_star) {
        let last = curve_t.last_observed().min(curve_c.last_observed());
        return Err(KmError::NotEvaluable { t_star, last_observed: last }.into());
    }
    let delta = curve_t.rmst(t_star)? - curve_c.rmst(t_star)?;
    let var = curve_t.rmst_variance(t_star)? + curve_c.rmst_variance(t_star)?;
    Ok(difference(delta, var.sqrt(), Method::NonParametric, t_star, None, false))
}

/// RMST difference and its analytic gradient for an exponential model at
/// one covariate cell. Gradient is over `theta = (log lambda, beta)`:
/// `d mu / d log lambda = a * dmu/da`, `d mu / d beta_j = a x_j * dmu/da`
/// with `a = lambda e^eta`.
fn exp_cell_mu_grad(params: &ExpPHParams, x: &CovariateVector, t_star: f64) -> (f64, DVector<f64>) {
    let a = params.rate(x);
    let one_minus = -(-a * t_star).exp_m1();
    let mu = one_minus / a;
    let dmu_da = (t_star * (-a * t_star).exp() * a - one_minus) / (a * a);
    let p = params.terms().len() + 1;
    let mut grad = DVector::zeros(p);
    grad[0] = dmu_da * a;
    for (j, term) in params.terms().terms().iter().enumerate() {
        grad[j + 1] = dmu_da * a * x.term_value(*term);
    }
    (mu, grad)
}

fn exp_delta_and_gradient(
    params: &ExpPHParams,
    t_star: f64,
    profile: CovariateProfile,
) -> (f64, DVector<f64>) {
    let mut delta = 0.0;
    let mut grad = DVector::zeros(params.terms().len() + 1);
    // per-cell differences so a null treatment contrast is exactly zero
    for ((w, x1), (_, x0)) in profile.cells(true).into_iter().zip(profile.cells(false)) {
        let (mu1, g1) = exp_cell_mu_grad(params, &x1, t_star);
        let (mu0, g0) = exp_cell_mu_grad(params, &x0, t_star);
        delta += w * (mu1 - mu0);
        grad += w * (g1 - g0);
    }
    (delta, grad)
}

fn delta_exponential(
    fit: &FitResult,
    t_star: f64,
    profile: CovariateProfile,
    expected_terms: &TermSet,
    method: Method,
) -> Result<RmstDifference, InferenceError> {
    assert!(t_star.is_finite() && t_star > 0.0, "t_star must be finite and positive");
    let params = match &fit.params {
        ModelParams::Exponential(p) => p,
        ModelParams::Piecewise(_) => {
            return Err(InferenceError::WrongModel { expected: "an exponential-model fit" })
        }
    };
    if params.terms() != expected_terms {
        return Err(InferenceError::WrongModel {
            expected: match method {
                Method::FullParametric => "the full term-set {treatment, inherit, sex, interaction}",
                _ => "the sex-free term-set {treatment, inherit, interaction}",
            },
        });
    }
    let (delta, grad) = exp_delta_and_gradient(params, t_star, profile);
    let (se, clamped) = delta_method_se_from_gradient(&grad, &fit.covariance);
    Ok(difference(delta, se, method, t_star, None, clamped))
}

/// Fully specified parametric difference: treatment 1 vs 0 plugged into the
/// closed-form RMST at the fitted `(lambda, beta)`, holding the remaining
/// covariates at `profile`.
pub fn delta_full(
    fit: &FitResult,
    t_star: f64,
    profile: CovariateProfile,
) -> Result<RmstDifference, InferenceError> {
    delta_exponential(fit, t_star, profile, &TermSet::full(), Method::FullParametric)
}

/// Misspecified parametric difference: same construction with the sex
/// covariate neglected during fitting.
pub fn delta_misspec(
    fit: &FitResult,
    t_star: f64,
    profile: CovariateProfile,
) -> Result<RmstDifference, InferenceError> {
    delta_exponential(fit, t_star, profile, &TermSet::misspecified(), Method::MisspecParametric)
}

fn piecewise_from_theta(theta: &[f64], terms: &TermSet, knot: f64) -> PiecewiseParams {
    let block = terms.len() + 1;
    let make = |slice: &[f64]| {
        ExpPHParams::new(slice[0].exp(), terms.clone(), slice[1..].to_vec())
            .expect("finite optimizer point")
    };
    PiecewiseParams::new(knot, make(&theta[..block]), make(&theta[block..]))
        .expect("valid knot from fit")
}

/// Crossing-curves parametric difference at the fitted piecewise parameters.
/// The assumed knot is whatever the fit used, which may deliberately differ
/// from the generating knot in misspecification studies.
pub fn delta_crossing(
    fit: &FitResult,
    t_star: f64,
    profile: CovariateProfile,
) -> Result<RmstDifference, InferenceError> {
    assert!(t_star.is_finite() && t_star > 0.0, "t_star must be finite and positive");
    let params = match &fit.params {
        ModelParams::Piecewise(p) => p,
        ModelParams::Exponential(_) => {
            return Err(InferenceError::WrongModel { expected: "a piecewise-model fit" })
        }
    };
    let knot = params.knot();
    let terms = params.terms().clone();
    let theta = fit.theta();

    let delta_at = |th: &[f64]| -> f64 {
        let p = piecewise_from_theta(th, &terms, knot);
        let mut d = 0.0;
        for ((w, x1), (_, x0)) in profile.cells(true).into_iter().zip(profile.cells(false)) {
            d += w * (rmst_piecewise(t_star, &p, &x1) - rmst_piecewise(t_star, &p, &x0));
        }
        d
    };
    let delta = delta_at(&theta);
    let (se, clamped) = delta_method_se(delta_at, &theta, &fit.covariance);
    Ok(difference(delta, se, Method::CrossingParametric, t_star, Some(knot), clamped))
}

/// Delta-method standard error from an explicit gradient:
/// `sqrt(grad' Sigma grad)`. A numerically negative quadratic form is
/// clipped to zero and flagged.
pub fn delta_method_se_from_gradient(grad: &DVector<f64>, covariance: &DMatrix<f64>) -> (f64, bool) {
    let quad = (grad.transpose() * covariance * grad)[(0, 0)];
    if quad < 0.0 {
        (0.0, true)
    } else {
        (quad.sqrt(), false)
    }
}

/// Delta-method standard error of a scalar map of the fitted parameters,
/// with the gradient taken by central finite differences at
/// `h_j = 1e-6 * max(1, |theta_j|)`.
pub fn delta_method_se<F: Fn(&[f64]) -> f64>(
    delta_fn: F,
    theta: &[f64],
    covariance: &DMatrix<f64>,
) -> (f64, bool) {
    let mut grad = DVector::zeros(theta.len());
    let mut work = theta.to_vec();
    for j in 0..theta.len() {
        let h = FD_STEP * theta[j].abs().max(1.0);
        work[j] = theta[j] + h;
        let up = delta_fn(&work);
        work[j] = theta[j] - h;
        let down = delta_fn(&work);
        work[j] = theta[j];
        grad[j] = (up - down) / (2.0 * h);
    }
    delta_method_se_from_gradient(&grad, covariance)
}

/// One-sided critical value: `Phi^{-1}(1 - alpha)`.
pub fn critical_value(alpha: f64) -> f64 {
    assert!(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
    Normal::new(0.0, 1.0).unwrap().inverse_cdf(1.0 - alpha)
}

/// Reject H0 iff `z > Phi^{-1}(1 - alpha)`, strictly. A non-finite Z (zero
/// standard error) never rejects.
pub fn z_test(diff: &RmstDifference, alpha: f64) -> bool {
    diff.z > critical_value(alpha)
}
