//! Survival-analysis engine built around the restricted mean survival time
//! (RMST) endpoint.
//!
//! The crate provides:
//!
//! - exponential and piecewise-exponential proportional-hazards models with
//!   closed-form survival and RMST ([`models`]),
//! - Kaplan-Meier estimation with Greenwood-based RMST variance
//!   ([`kaplan_meier`]),
//! - Newton-Raphson maximum likelihood fitting ([`mle`]),
//! - RMST-difference estimators with delta-method standard errors and a
//!   one-sided Z-test ([`inference`]),
//! - a randomized-trial generator ([`simulate`]) and a deterministic,
//!   parallel Monte Carlo engine for power and type-I-error studies
//!   ([`montecarlo`]),
//! - plain-text scenario configuration ([`config`]) and the built-in study
//!   presets ([`presets`]).

pub mod config;
pub mod domain;
pub mod inference;
pub mod kaplan_meier;
pub mod mle;
pub mod models;
pub mod montecarlo;
pub mod presets;
pub mod simulate;

pub use domain::{
    CovariateVector, DomainError, ExpPHParams, FitResult, FittedParams, ModelParams,
    PiecewiseParams, SubjectRecord, Term, TermSet,
};
pub use inference::{CovariateProfile, InferenceError, Method, RmstDifference};
pub use kaplan_meier::{KMCurve, KmError};
pub use mle::{FitConfig, FitError, Piece};
pub use montecarlo::{Axis, Hypothesis, MethodReport, MonteCarloReport, Scenario};
pub use simulate::{SimError, TrialDesign};
