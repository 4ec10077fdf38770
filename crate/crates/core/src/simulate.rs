//! Randomized-trial generation: covariate assignment, inverse-CDF event
//! times, random exponential censoring, staggered accrual, administrative
//! censoring.
//!
//! Determinism contract: `generate_trial(design, k)` draws from a ChaCha8
//! stream keyed by `(design.seed, k)`, so any replication is bit-identical
//! across runs, platforms, and worker counts. Per subject the draw order is
//! fixed as (treatment, inherit, sex, event u, censor u, arrival u); editing
//! the truth parameters therefore never reshuffles downstream draws.

use crate::domain::{CovariateVector, DomainError, ModelParams, SubjectRecord, Term};
use crate::models::sample_event_time;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::{self, Write};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("treatment permutation requires a piecewise truth (crossing study)")]
    PermuteRequiresPiecewise,
    #[error("treatment permutation requires `{0}` among the truth's terms")]
    PermuteMissingTerm(Term),
}

/// Complete specification of one simulated trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialDesign {
    pub n_subjects: usize,
    /// Uniform arrival window (weeks from study start).
    pub accrual_window: f64,
    /// Calendar time of the analysis; a subject arriving at `a` is
    /// administratively censored at `analysis_time - a`.
    pub analysis_time: f64,
    /// Rate of the exponential random-censoring clock (per week).
    pub censor_rate: f64,
    /// Success probability of each Bernoulli covariate.
    pub covariate_prob: f64,
    pub truth: ModelParams,
    pub seed: u64,
}

impl TrialDesign {
    pub fn validate(&self) -> Result<(), DomainError> {
        if self.n_subjects == 0 {
            return Err(DomainError::invalid("n_subjects", "must be at least 1"));
        }
        if !self.accrual_window.is_finite() || self.accrual_window <= 0.0 {
            return Err(DomainError::invalid(
                "accrual_window",
                format!("must be finite and positive, got {}", self.accrual_window),
            ));
        }
        if !self.analysis_time.is_finite() || self.analysis_time <= self.accrual_window {
            return Err(DomainError::invalid(
                "analysis_time",
                format!(
                    "must exceed the accrual window {}, got {}",
                    self.accrual_window, self.analysis_time
                ),
            ));
        }
        if !self.censor_rate.is_finite() || self.censor_rate < 0.0 {
            return Err(DomainError::invalid(
                "censor_rate",
                format!("must be finite and non-negative, got {}", self.censor_rate),
            ));
        }
        if !self.covariate_prob.is_finite() || !(0.0..=1.0).contains(&self.covariate_prob) {
            return Err(DomainError::invalid(
                "covariate_prob",
                format!("must lie in [0, 1], got {}", self.covariate_prob),
            ));
        }
        Ok(())
    }
}

/// Uniform draw strictly inside (0, 1); rand's `[0, 1)` output makes the
/// zero endpoint possible, which would map to an infinite event time.
fn draw_open01(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Generate the full subject list for replication `replication_index`.
pub fn generate_trial(design: &TrialDesign, replication_index: u64) -> Vec<SubjectRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(design.seed);
    rng.set_stream(replication_index);
    let p = design.covariate_prob;

    (0..design.n_subjects)
        .map(|_| {
            let treatment = rng.random::<f64>() < p;
            let inherit = rng.random::<f64>() < p;
            let sex = rng.random::<f64>() < p;
            let covariates = CovariateVector::new(treatment, inherit, sex);

            let event_time = sample_event_time(&design.truth, &covariates, draw_open01(&mut rng));
            let censor_u = draw_open01(&mut rng);
            let censor_time = if design.censor_rate > 0.0 {
                -censor_u.ln() / design.censor_rate
            } else {
                f64::INFINITY
            };
            let arrival = rng.random::<f64>() * design.accrual_window;
            let admin_limit = design.analysis_time - arrival;

            let cutoff = censor_time.min(admin_limit);
            let time = event_time.min(cutoff);
            let event = event_time <= cutoff;
            SubjectRecord { time, event, covariates }
        })
        .collect()
}

/// Null-hypothesis version of a design: the treatment main effect and the
/// treatment-by-inheritance interaction are forced to zero (in both pieces
/// for a piecewise truth); everything else is untouched. Idempotent.
pub fn null_design(design: &TrialDesign) -> TrialDesign {
    let mut out = design.clone();
    match &mut out.truth {
        ModelParams::Exponential(p) => {
            p.set_beta(Term::Treatment, 0.0);
            p.set_beta(Term::Interaction, 0.0);
        }
        ModelParams::Piecewise(p) => {
            let (before, after) = p.pieces_mut();
            for piece in [before, after] {
                piece.set_beta(Term::Treatment, 0.0);
                piece.set_beta(Term::Interaction, 0.0);
            }
        }
    }
    out
}

/// Swap the roles of the two arms in a crossing truth, so the control arm is
/// the one with the early advantage. Exact relabeling, per piece:
///
/// `lambda' = lambda e^{b1}`, `b1' = -b1`, `b2' = b2 + b12`, `b12' = -b12`,
///
/// which satisfies `S'(t | trt, inh, sex) = S(t | 1-trt, inh, sex)` for every
/// covariate pattern. An involution by construction.
pub fn permute_treatment(design: &TrialDesign) -> Result<TrialDesign, SimError> {
    let mut out = design.clone();
    let pw = match &mut out.truth {
        ModelParams::Exponential(_) => return Err(SimError::PermuteRequiresPiecewise),
        ModelParams::Piecewise(p) => p,
    };
    let (before, after) = pw.pieces_mut();
    for piece in [before, after] {
        let b1 = piece
            .beta_for(Term::Treatment)
            .ok_or(SimError::PermuteMissingTerm(Term::Treatment))?;
        piece.set_lambda(piece.lambda() * b1.exp());
        piece.set_beta(Term::Treatment, -b1);
        if let Some(b12) = piece.beta_for(Term::Interaction) {
            let b2 = piece
                .beta_for(Term::Inherit)
                .ok_or(SimError::PermuteMissingTerm(Term::Inherit))?;
            piece.set_beta(Term::Inherit, b2 + b12);
            piece.set_beta(Term::Interaction, -b12);
        }
    }
    Ok(out)
}

/// Dump a generated trial as CSV: `time,event,treatment,inherit,sex`,
/// times with 6 decimals.
pub fn write_trial_csv<W: Write>(records: &[SubjectRecord], out: &mut W) -> io::Result<()> {
    writeln!(out, "time,event,treatment,inherit,sex")?;
    for r in records {
        writeln!(
            out,
            "{:.6},{},{},{},{}",
            r.time,
            u8::from(r.event),
            u8::from(r.covariates.treatment),
            u8::from(r.covariates.inherit),
            u8::from(r.covariates.sex),
        )?;
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::domain::{ExpPHParams, PiecewiseParams, TermSet};
    use crate::models::{arm_average_survival, survival};

    pub(crate) fn cgd_truth() -> ModelParams {
        ModelParams::Exponential(
            ExpPHParams::new(
                0.015777,
                TermSet::full(),
                vec![-1.116749, 0.094373, -0.402188, 0.475445],
            )
            .unwrap(),
        )
    }

    pub(crate) fn crossing_truth() -> ModelParams {
        let before = ExpPHParams::new(0.0158, TermSet::full(), vec![-1.117, 0.094, -0.402, 0.475]).unwrap();
        let after = ExpPHParams::new(0.0158, TermSet::full(), vec![0.750, 0.094, -0.402, 0.475]).unwrap();
        ModelParams::Piecewise(PiecewiseParams::new(40.0, before, after).unwrap())
    }

    pub(crate) fn cgd_design(seed: u64) -> TrialDesign {
        TrialDesign {
            n_subjects: 100,
            accrual_window: 20.0,
            analysis_time: 120.0,
            censor_rate: 0.001,
            covariate_prob: 0.5,
            truth: cgd_truth(),
            seed,
        }
    }

    #[test]
    fn design_validation_names_fields() {
        let mut d = cgd_design(1);
        d.accrual_window = 0.0;
        assert_eq!(d.validate().unwrap_err().field(), "accrual_window");
        let mut d = cgd_design(1);
        d.analysis_time = 19.0;
        assert_eq!(d.validate().unwrap_err().field(), "analysis_time");
        let mut d = cgd_design(1);
        d.covariate_prob = 1.5;
        assert_eq!(d.validate().unwrap_err().field(), "covariate_prob");
    }

    #[test]
    fn trials_are_reproducible_per_replication() {
        let d = cgd_design(99);
        let a = generate_trial(&d, 7);
        let b = generate_trial(&d, 7);
        assert_eq!(a, b);
        let c = generate_trial(&d, 8);
        assert_ne!(a, c);
    }

    #[test]
    fn observed_times_positive_and_bounded() {
        let d = cgd_design(3);
        for k in 0..200 {
            for r in generate_trial(&d, k) {
                assert!(r.time > 0.0);
                assert!(r.time <= d.analysis_time);
            }
        }
    }

    #[test]
    fn no_censoring_mechanisms_means_all_events() {
        let mut d = cgd_design(5);
        d.censor_rate = 0.0;
        d.accrual_window = 1e-9;
        d.analysis_time = 1e12; // effectively infinite follow-up
        let recs = generate_trial(&d, 0);
        assert!(recs.iter().all(|r| r.event));
    }

    #[test]
    fn censoring_fractions_match_design_targets() {
        // overall censoring sits near 40%; the random-censoring clock beats
        // the administrative limit for about 10% of subjects
        let d = cgd_design(2024);
        let reps = 2_000u64;
        let mut censored = 0usize;
        let mut total = 0usize;
        for k in 0..reps {
            for r in generate_trial(&d, k) {
                total += 1;
                if !r.event {
                    censored += 1;
                }
            }
        }
        let frac = censored as f64 / total as f64;
        assert!((frac - 0.40).abs() < 0.02, "overall censoring {frac}");

        // random-vs-administrative split, measured directly on the clocks
        let mut rng_check = 0usize;
        let mut n_check = 0usize;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..200_000 {
            let c = -draw_open01(&mut rng).ln() / d.censor_rate;
            let a = rng.random::<f64>() * d.accrual_window;
            if c < d.analysis_time - a {
                rng_check += 1;
            }
            n_check += 1;
        }
        let frac_random = rng_check as f64 / n_check as f64;
        assert!((frac_random - 0.10).abs() < 0.02, "random-censor share {frac_random}");
    }

    #[test]
    fn null_design_zeroes_treatment_terms_and_is_idempotent() {
        let d = cgd_design(1);
        let n1 = null_design(&d);
        let p = n1.truth.as_exponential().unwrap();
        assert_eq!(p.beta_for(Term::Treatment), Some(0.0));
        assert_eq!(p.beta_for(Term::Interaction), Some(0.0));
        assert_eq!(p.beta_for(Term::Inherit), Some(0.094373));
        assert_eq!(p.beta_for(Term::Sex), Some(-0.402188));
        assert_eq!(p.lambda(), 0.015777);
        assert_eq!(null_design(&n1), n1);
    }

    #[test]
    fn null_design_piecewise_zeroes_both_pieces() {
        let mut d = cgd_design(1);
        d.truth = crossing_truth();
        let n = null_design(&d);
        let pw = n.truth.as_piecewise().unwrap();
        for piece in [pw.before(), pw.after()] {
            assert_eq!(piece.beta_for(Term::Treatment), Some(0.0));
            assert_eq!(piece.beta_for(Term::Interaction), Some(0.0));
        }
        // identical pieces after nulling: the curves cannot cross
        let x = CovariateVector::new(false, true, true);
        for t in [10.0, 40.0, 80.0] {
            let s_full = survival(t, &n.truth, &x);
            let s_exp = (-pw.before().rate(&x) * t).exp();
            assert!((s_full - s_exp).abs() < 1e-12);
        }
    }

    #[test]
    fn permute_treatment_swaps_arm_curves_exactly() {
        let mut d = cgd_design(1);
        d.truth = crossing_truth();
        let perm = permute_treatment(&d).unwrap();
        for inherit in [false, true] {
            for sex in [false, true] {
                for t in [5.0, 20.0, 40.0, 77.0, 120.0] {
                    let orig = survival(t, &d.truth, &CovariateVector::new(false, inherit, sex));
                    let swapped = survival(t, &perm.truth, &CovariateVector::new(true, inherit, sex));
                    assert!((orig - swapped).abs() < 1e-12);
                }
            }
        }
        // involution up to float round-off
        let back = permute_treatment(&perm).unwrap();
        let orig = d.truth.as_piecewise().unwrap();
        let restored = back.truth.as_piecewise().unwrap();
        assert!((orig.before().lambda() - restored.before().lambda()).abs() < 1e-15);
        for term in Term::ALL {
            let a = orig.before().beta_for(term).unwrap();
            let b = restored.before().beta_for(term).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn permuted_truth_puts_treated_arm_below_early() {
        let mut d = cgd_design(1);
        d.truth = crossing_truth();
        let perm = permute_treatment(&d).unwrap();
        let treated = arm_average_survival(20.0, &perm.truth, true);
        let control = arm_average_survival(20.0, &perm.truth, false);
        assert!(treated < control, "treated {treated} should trail control {control} at t=20");
    }

    #[test]
    fn permute_rejects_exponential_truth() {
        let d = cgd_design(1);
        assert_eq!(permute_treatment(&d).unwrap_err(), SimError::PermuteRequiresPiecewise);
    }

    #[test]
    fn trial_csv_has_header_and_rows() {
        let d = cgd_design(11);
        let recs = generate_trial(&d, 0);
        let mut buf = Vec::new();
        write_trial_csv(&recs, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("time,event,treatment,inherit,sex"));
        assert_eq!(lines.count(), 100);
    }

    #[test]
    fn sampled_times_match_analytic_survival() {
        // Kolmogorov-Smirnov distance between the empirical survival of 1e5
        // raw draws and the closed-form S(t|x) stays under 0.01
        let truth = cgd_truth();
        let x = CovariateVector::new(true, false, false);
        let mut rng = ChaCha8Rng::seed_from_u64(88);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| sample_event_time(&truth, &x, draw_open01(&mut rng)))
            .collect();
        let cdf = |t: f64| 1.0 - survival(t, &truth, &x);
        let ks = rmst_testkit::ks_statistic(&draws, cdf);
        assert!(ks < 0.01, "KS distance {ks}");
    }
}
