//! Core data types shared by every module: covariate coding, subject
//! records, and model parameter vectors.
//!
//! Covariate coding is fixed once and for all: control / X-linked / male are
//! the zero levels, so every coefficient is the log hazard ratio of the
//! non-reference level. The treatment-by-inheritance interaction is always
//! derived on demand from the two base covariates and never stored.

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("invalid value for `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
}

impl DomainError {
    pub fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        DomainError::Invalid {
            field,
            reason: reason.into(),
        }
    }

    /// Name of the offending field, used by the CLI for exit messages.
    pub fn field(&self) -> &'static str {
        match self {
            DomainError::Invalid { field, .. } => field,
        }
    }
}

/// One model term of the proportional-hazards linear predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Term {
    Treatment,
    Inherit,
    Sex,
    /// Derived treatment-by-inheritance product.
    Interaction,
}

impl Term {
    pub const ALL: [Term; 4] = [Term::Treatment, Term::Inherit, Term::Sex, Term::Interaction];

    pub fn name(self) -> &'static str {
        match self {
            Term::Treatment => "treatment",
            Term::Inherit => "inherit",
            Term::Sex => "sex",
            Term::Interaction => "interaction",
        }
    }

    pub fn parse(s: &str) -> Option<Term> {
        Term::ALL.into_iter().find(|t| t.name() == s)
    }
}

impl std::fmt::Display for Term {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Ordered, duplicate-free declaration of which terms a model uses.
///
/// The fully specified and misspecified models share one code path; they
/// differ only by this declaration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TermSet(Vec<Term>);

impl TermSet {
    pub fn new(terms: Vec<Term>) -> Result<Self, DomainError> {
        for (i, t) in terms.iter().enumerate() {
            if terms[..i].contains(t) {
                return Err(DomainError::invalid("terms", format!("duplicate term `{t}`")));
            }
        }
        Ok(TermSet(terms))
    }

    /// All four terms: treatment, inherit, sex, interaction.
    pub fn full() -> Self {
        TermSet(Term::ALL.to_vec())
    }

    /// The sex-free set used by the misspecified estimator.
    pub fn misspecified() -> Self {
        TermSet(vec![Term::Treatment, Term::Inherit, Term::Interaction])
    }

    /// No covariates at all (baseline hazard only).
    pub fn empty() -> Self {
        TermSet(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn terms(&self) -> &[Term] {
        &self.0
    }

    pub fn contains(&self, term: Term) -> bool {
        self.0.contains(&term)
    }

    pub fn index_of(&self, term: Term) -> Option<usize> {
        self.0.iter().position(|t| *t == term)
    }
}

/// One subject's binary covariates. The interaction is computed, not stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CovariateVector {
    pub treatment: bool,
    pub inherit: bool,
    pub sex: bool,
}

impl CovariateVector {
    pub fn new(treatment: bool, inherit: bool, sex: bool) -> Self {
        CovariateVector { treatment, inherit, sex }
    }

    /// Value of a model term for this subject, as 0.0 or 1.0.
    pub fn term_value(&self, term: Term) -> f64 {
        let bit = match term {
            Term::Treatment => self.treatment,
            Term::Inherit => self.inherit,
            Term::Sex => self.sex,
            Term::Interaction => self.treatment && self.inherit,
        };
        if bit {
            1.0
        } else {
            0.0
        }
    }

    /// Copy with the treatment bit replaced; used to form arm contrasts.
    pub fn with_treatment(mut self, treatment: bool) -> Self {
        self.treatment = treatment;
        self
    }
}

/// Observed follow-up for one subject: time on study (weeks) and whether the
/// event was observed (`event`) or the subject was censored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubjectRecord {
    pub time: f64,
    pub event: bool,
    pub covariates: CovariateVector,
}

impl SubjectRecord {
    pub fn new(time: f64, event: bool, covariates: CovariateVector) -> Result<Self, DomainError> {
        if !time.is_finite() || time < 0.0 {
            return Err(DomainError::invalid(
                "time",
                format!("must be a finite non-negative number, got {time}"),
            ));
        }
        Ok(SubjectRecord { time, event, covariates })
    }
}

/// Single-interval exponential proportional-hazards parameters: baseline
/// hazard `lambda` (per week) and one coefficient per declared term.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpPHParams {
    lambda: f64,
    terms: TermSet,
    beta: Vec<f64>,
}

impl ExpPHParams {
    pub fn new(lambda: f64, terms: TermSet, beta: Vec<f64>) -> Result<Self, DomainError> {
        if !lambda.is_finite() || lambda <= 0.0 {
            return Err(DomainError::invalid(
                "lambda",
                format!("baseline hazard must be finite and positive, got {lambda}"),
            ));
        }
        if beta.len() != terms.len() {
            return Err(DomainError::invalid(
                "beta",
                format!("{} coefficients for {} declared terms", beta.len(), terms.len()),
            ));
        }
        if let Some(b) = beta.iter().find(|b| !b.is_finite()) {
            return Err(DomainError::invalid("beta", format!("non-finite coefficient {b}")));
        }
        Ok(ExpPHParams { lambda, terms, beta })
    }

    /// Baseline-only model, no covariates.
    pub fn baseline(lambda: f64) -> Result<Self, DomainError> {
        ExpPHParams::new(lambda, TermSet::empty(), Vec::new())
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn terms(&self) -> &TermSet {
        &self.terms
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn beta_for(&self, term: Term) -> Option<f64> {
        self.terms.index_of(term).map(|i| self.beta[i])
    }

    /// Replace the coefficient of `term` if it is declared; no-op otherwise.
    pub fn set_beta(&mut self, term: Term, value: f64) {
        if let Some(i) = self.terms.index_of(term) {
            self.beta[i] = value;
        }
    }

    pub(crate) fn set_lambda(&mut self, lambda: f64) {
        debug_assert!(lambda.is_finite() && lambda > 0.0);
        self.lambda = lambda;
    }

    /// Linear predictor over the declared terms only: terms absent from the
    /// declaration contribute nothing even when the covariate bit is set.
    pub fn linear_predictor(&self, x: &CovariateVector) -> f64 {
        self.terms
            .terms()
            .iter()
            .zip(&self.beta)
            .map(|(t, b)| b * x.term_value(*t))
            .sum()
    }

    /// Effective event rate for a subject: `lambda * exp(beta' x)`.
    pub fn rate(&self, x: &CovariateVector) -> f64 {
        self.lambda * self.linear_predictor(x).exp()
    }
}

/// Piecewise-exponential parameters: independent hazard and coefficients
/// before and after a single knot point.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseParams {
    knot: f64,
    before: ExpPHParams,
    after: ExpPHParams,
}

impl PiecewiseParams {
    pub fn new(knot: f64, before: ExpPHParams, after: ExpPHParams) -> Result<Self, DomainError> {
        if !knot.is_finite() || knot <= 0.0 {
            return Err(DomainError::invalid(
                "knot",
                format!("knot point must be finite and positive, got {knot}"),
            ));
        }
        if before.terms() != after.terms() {
            return Err(DomainError::invalid(
                "terms",
                "both pieces must declare an identical term-set",
            ));
        }
        Ok(PiecewiseParams { knot, before, after })
    }

    pub fn knot(&self) -> f64 {
        self.knot
    }

    pub fn before(&self) -> &ExpPHParams {
        &self.before
    }

    pub fn after(&self) -> &ExpPHParams {
        &self.after
    }

    pub fn terms(&self) -> &TermSet {
        self.before.terms()
    }

    pub(crate) fn pieces_mut(&mut self) -> (&mut ExpPHParams, &mut ExpPHParams) {
        (&mut self.before, &mut self.after)
    }
}

/// Truth or fitted parameters for either model family.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams {
    Exponential(ExpPHParams),
    Piecewise(PiecewiseParams),
}

impl ModelParams {
    pub fn terms(&self) -> &TermSet {
        match self {
            ModelParams::Exponential(p) => p.terms(),
            ModelParams::Piecewise(p) => p.terms(),
        }
    }

    pub fn as_exponential(&self) -> Option<&ExpPHParams> {
        match self {
            ModelParams::Exponential(p) => Some(p),
            ModelParams::Piecewise(_) => None,
        }
    }

    pub fn as_piecewise(&self) -> Option<&PiecewiseParams> {
        match self {
            ModelParams::Exponential(_) => None,
            ModelParams::Piecewise(p) => Some(p),
        }
    }
}

/// Alias kept for readability at fit-result call sites.
pub type FittedParams = ModelParams;

/// Output of a maximum-likelihood fit.
///
/// `covariance` is the inverse observed information on the `(log lambda,
/// beta)` scale, ordered as the free parameters: `(log lambda, beta...)` for
/// the exponential model, and the pre-knot block followed by the post-knot
/// block for the piecewise model (block-diagonal by construction).
#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: FittedParams,
    pub covariance: DMatrix<f64>,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl FitResult {
    /// Number of free parameters.
    pub fn dim(&self) -> usize {
        match &self.params {
            ModelParams::Exponential(p) => p.terms().len() + 1,
            ModelParams::Piecewise(p) => 2 * (p.terms().len() + 1),
        }
    }

    /// Free parameters on the optimizer scale: `log lambda` first, then the
    /// coefficients, per block for the piecewise model.
    pub fn theta(&self) -> Vec<f64> {
        fn block(p: &ExpPHParams) -> Vec<f64> {
            let mut v = Vec::with_capacity(p.terms().len() + 1);
            v.push(p.lambda().ln());
            v.extend_from_slice(p.beta());
            v
        }
        match &self.params {
            ModelParams::Exponential(p) => block(p),
            ModelParams::Piecewise(p) => {
                let mut v = block(p.before());
                v.extend(block(p.after()));
                v
            }
        }
    }

    /// Covariance transformed to the `(lambda, beta)` scale by the delta
    /// rule for `lambda = exp(log lambda)`.
    pub fn covariance_natural(&self) -> DMatrix<f64> {
        let dim = self.dim();
        let mut jac = DMatrix::<f64>::identity(dim, dim);
        match &self.params {
            ModelParams::Exponential(p) => {
                jac[(0, 0)] = p.lambda();
            }
            ModelParams::Piecewise(p) => {
                let block = p.terms().len() + 1;
                jac[(0, 0)] = p.before().lambda();
                jac[(block, block)] = p.after().lambda();
            }
        }
        &jac * &self.covariance * jac.transpose()
    }
}
