//! Closed-form hazard, survival, and RMST for the exponential and
//! piecewise-exponential proportional-hazards models, plus inverse-CDF
//! event-time sampling.
//!
//! Everything here is a pure function of validated parameters; the
//! preconditions on `t`, `t_star` and `u` are enforced with assertions.

use crate::domain::{CovariateVector, ExpPHParams, ModelParams, PiecewiseParams};

/// `S(t|x) = exp(-lambda t e^eta)` for the single-interval model.
pub fn survival_exponential(t: f64, params: &ExpPHParams, x: &CovariateVector) -> f64 {
    assert!(t.is_finite() && t >= 0.0, "t must be finite and non-negative");
    (-params.rate(x) * t).exp()
}

/// Cumulative hazard of the piecewise model: linear in `t` with slope
/// `lambda_a e^{eta_a}` before the knot, slope `lambda_b e^{eta_b}` after.
pub fn cumulative_hazard_piecewise(t: f64, params: &PiecewiseParams, x: &CovariateVector) -> f64 {
    assert!(t.is_finite() && t >= 0.0, "t must be finite and non-negative");
    let knot = params.knot();
    if t < knot {
        params.before().rate(x) * t
    } else {
        params.before().rate(x) * knot + params.after().rate(x) * (t - knot)
    }
}

/// `S_cross(t|x) = exp(-H_cross(t|x))`, continuous at the knot.
pub fn survival_piecewise(t: f64, params: &PiecewiseParams, x: &CovariateVector) -> f64 {
    (-cumulative_hazard_piecewise(t, params, x)).exp()
}

/// Area under the exponential survival curve on `[0, t_star]`:
/// `(1 - exp(-a t*)) / a` with `a = lambda e^eta`.
pub fn rmst_exponential(t_star: f64, params: &ExpPHParams, x: &CovariateVector) -> f64 {
    assert!(t_star.is_finite() && t_star > 0.0, "t_star must be finite and positive");
    rmst_rate(t_star, params.rate(x))
}

#[inline]
fn rmst_rate(t_star: f64, rate: f64) -> f64 {
    // -expm1 keeps precision when rate * t_star is small
    -(-rate * t_star).exp_m1() / rate
}

/// Area under the piecewise survival curve on `[0, t_star]`.
///
/// For `t_star < knot` this is the single-exponential formula with the
/// pre-knot parameters. From the knot on, the integral splits into the
/// pre-knot area plus the post-knot area damped by the survival already
/// spent, `exp(-lambda_a t_1 e^{eta_a})`. `t_star == knot` is evaluated by
/// the second branch; continuity makes the two branches agree there.
pub fn rmst_piecewise(t_star: f64, params: &PiecewiseParams, x: &CovariateVector) -> f64 {
    assert!(t_star.is_finite() && t_star > 0.0, "t_star must be finite and positive");
    let knot = params.knot();
    let rate_a = params.before().rate(x);
    if t_star < knot {
        return rmst_rate(t_star, rate_a);
    }
    let rate_b = params.after().rate(x);
    let survival_at_knot = (-rate_a * knot).exp();
    rmst_rate(knot, rate_a) + survival_at_knot * rmst_rate(t_star - knot, rate_b)
}

/// Survival at `t` under either model family.
pub fn survival(t: f64, params: &ModelParams, x: &CovariateVector) -> f64 {
    match params {
        ModelParams::Exponential(p) => survival_exponential(t, p, x),
        ModelParams::Piecewise(p) => survival_piecewise(t, p, x),
    }
}

/// RMST at `t_star` under either model family.
pub fn rmst(t_star: f64, params: &ModelParams, x: &CovariateVector) -> f64 {
    match params {
        ModelParams::Exponential(p) => rmst_exponential(t_star, p, x),
        ModelParams::Piecewise(p) => rmst_piecewise(t_star, p, x),
    }
}

/// Inverse-CDF event time: solve `S(T|x) = u` for `T`, i.e. invert the
/// cumulative hazard at `-log u`.
///
/// Exponential case: `T = -log(u) / (lambda e^eta)`. Piecewise case: if the
/// target cumulative hazard is reached before the knot, solve in the first
/// piece, otherwise push the remainder through the post-knot slope.
///
/// Panics if `u` is not strictly inside `(0, 1)`; the endpoints would map to
/// an infinite or zero time.
pub fn sample_event_time(params: &ModelParams, x: &CovariateVector, u: f64) -> f64 {
    assert!(u > 0.0 && u < 1.0, "u must lie strictly in (0, 1), got {u}");
    let target = -u.ln();
    match params {
        ModelParams::Exponential(p) => target / p.rate(x),
        ModelParams::Piecewise(p) => {
            let knot = p.knot();
            let hazard_at_knot = p.before().rate(x) * knot;
            if target < hazard_at_knot {
                target / p.before().rate(x)
            } else {
                knot + (target - hazard_at_knot) / p.after().rate(x)
            }
        }
    }
}

/// Survival of one trial arm averaged over the covariate distribution:
/// equal weights on the four (inherit, sex) patterns with treatment fixed.
///
/// This is the model-based curve drawn alongside Kaplan-Meier estimates.
pub fn arm_average_survival(t: f64, params: &ModelParams, treatment: bool) -> f64 {
    average_over_profiles(treatment, |x| survival(t, params, &x))
}

/// Arm-level RMST averaged over the same covariate distribution.
pub fn arm_average_rmst(t_star: f64, params: &ModelParams, treatment: bool) -> f64 {
    average_over_profiles(treatment, |x| rmst(t_star, params, &x))
}

fn average_over_profiles(treatment: bool, mut f: impl FnMut(CovariateVector) -> f64) -> f64 {
    let mut acc = 0.0;
    for inherit in [false, true] {
        for sex in [false, true] {
            acc += f(CovariateVector::new(treatment, inherit, sex));
        }
    }
    acc * 0.25
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::TermSet;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rmst_testkit::adaptive_simpson;

    fn cgd() -> ExpPHParams {
        ExpPHParams::new(
            0.015777,
            TermSet::full(),
            vec![-1.116749, 0.094373, -0.402188, 0.475445],
        )
        .unwrap()
    }

    fn cgd_cross() -> PiecewiseParams {
        let before = ExpPHParams::new(
            0.0158,
            TermSet::full(),
            vec![-1.117, 0.094, -0.402, 0.475],
        )
        .unwrap();
        let after = ExpPHParams::new(
            0.0158,
            TermSet::full(),
            vec![0.750, 0.094, -0.402, 0.475],
        )
        .unwrap();
        PiecewiseParams::new(40.0, before, after).unwrap()
    }

    const REF: CovariateVector = CovariateVector { treatment: false, inherit: false, sex: false };

    #[test]
    fn rmst_exponential_unit_example() {
        // lambda = 0.01, eta = 0, t* = 100 -> (1 - e^-1) / 0.01
        let p = ExpPHParams::baseline(0.01).unwrap();
        let got = rmst_exponential(100.0, &p, &REF);
        assert_relative_eq!(got, 63.212055882855765, max_relative = 1e-12);
        // quadrature of the survival curve agrees
        let quad = adaptive_simpson(&|t| survival_exponential(t, &p, &REF), 0.0, 100.0, 1e-12);
        assert_relative_eq!(got, quad, max_relative = 1e-10);
    }

    #[test]
    fn rmst_exponential_cgd_baseline_vs_quadrature() {
        let p = cgd();
        let got = rmst_exponential(100.0, &p, &REF);
        let quad = adaptive_simpson(&|t| (-0.015777 * t).exp(), 0.0, 100.0, 1e-13);
        assert!((got - quad).abs() / quad < 1e-10, "got {got}, quad {quad}");
        assert_relative_eq!(got, 50.2979409169796, max_relative = 1e-12);
    }

    #[test]
    fn rmst_small_window_approaches_t_star() {
        // slope at zero is S(0) = 1, so rmst(t*) ~ t* for tiny windows
        let p = cgd();
        let t = 1e-9;
        let got = rmst_exponential(t, &p, &REF);
        assert_relative_eq!(got, t, max_relative = 1e-6);
    }

    #[test]
    fn rmst_piecewise_cross_table_vs_quadrature() {
        let p = cgd_cross();
        let x = CovariateVector::new(true, false, false);
        let got = rmst_piecewise(120.0, &p, &x);
        let quad = adaptive_simpson(&|t| survival_piecewise(t, &p, &x), 0.0, 120.0, 1e-13);
        assert!((got - quad).abs() / quad < 1e-8, "got {got}, quad {quad}");
        assert_relative_eq!(got, 58.77148431319847, max_relative = 1e-10);
    }

    #[test]
    fn degenerate_piecewise_equals_exponential() {
        let exp = cgd();
        let p = PiecewiseParams::new(40.0, exp.clone(), exp.clone()).unwrap();
        let x = CovariateVector::new(true, true, true);
        for t_star in [5.0, 40.0, 75.0, 200.0] {
            assert_relative_eq!(
                rmst_piecewise(t_star, &p, &x),
                rmst_exponential(t_star, &exp, &x),
                max_relative = 1e-14
            );
        }
    }

    #[test]
    fn piecewise_branches_agree_at_knot() {
        let p = cgd_cross();
        let x = CovariateVector::new(true, true, false);
        let at = rmst_piecewise(40.0, &p, &x);
        let below = rmst_piecewise(40.0 - 1e-9, &p, &x);
        assert!((at - below).abs() < 1e-8);
    }

    #[test]
    fn survival_piecewise_basics() {
        let p = cgd_cross();
        let x = CovariateVector::new(true, false, true);
        assert_eq!(survival_piecewise(0.0, &p, &x), 1.0);
        let lo = survival_piecewise(40.0 - 1e-10, &p, &x);
        let hi = survival_piecewise(40.0 + 1e-10, &p, &x);
        assert!((lo - hi).abs() < 1e-10, "discontinuous at knot: {lo} vs {hi}");
    }

    #[test]
    fn averaged_arm_curves_cross_between_50_and_60() {
        let p = ModelParams::Piecewise(cgd_cross());
        let diff_at = |t: f64| arm_average_survival(t, &p, true) - arm_average_survival(t, &p, false);
        assert!(diff_at(50.0) > 0.0, "treatment still ahead at t=50");
        assert!(diff_at(60.0) < 0.0, "control ahead by t=60");
    }

    #[test]
    fn sample_event_time_closed_form_point() {
        // u = e^-1 forces -log(u) = 1, so T = 1 / (lambda e^eta)
        let p = ModelParams::Exponential(ExpPHParams::baseline(0.01).unwrap());
        let t = sample_event_time(&p, &REF, (-1.0f64).exp());
        assert_relative_eq!(t, 100.0, max_relative = 1e-12);
    }

    #[test]
    #[should_panic(expected = "strictly in (0, 1)")]
    fn sample_event_time_rejects_endpoints() {
        let p = ModelParams::Exponential(ExpPHParams::baseline(0.01).unwrap());
        sample_event_time(&p, &REF, 1.0);
    }

    #[test]
    fn degenerate_piecewise_sampler_agrees_with_exponential() {
        let exp = cgd();
        let pw = ModelParams::Piecewise(PiecewiseParams::new(40.0, exp.clone(), exp.clone()).unwrap());
        let exp = ModelParams::Exponential(exp);
        let x = CovariateVector::new(true, true, false);
        for i in 1..200 {
            let u = i as f64 / 200.0;
            let a = sample_event_time(&pw, &x, u);
            let b = sample_event_time(&exp, &x, u);
            assert!((a - b).abs() <= 1e-12 * b, "u={u}: {a} vs {b}");
        }
    }

    proptest! {
        #[test]
        fn exponential_rmst_matches_quadrature(
            lambda in 1e-4f64..0.5,
            beta in -2.0f64..2.0,
            t_star in 0.5f64..200.0,
            trt in any::<bool>(),
        ) {
            let p = ExpPHParams::new(lambda, TermSet::new(vec![crate::domain::Term::Treatment]).unwrap(), vec![beta]).unwrap();
            let x = CovariateVector::new(trt, false, false);
            let got = rmst_exponential(t_star, &p, &x);
            let quad = adaptive_simpson(&|t| survival_exponential(t, &p, &x), 0.0, t_star, 1e-12);
            prop_assert!((got - quad).abs() <= 1e-8 * quad.abs().max(1e-12));
            prop_assert!(got > 0.0 && got < t_star * (1.0 + 1e-12));
        }

        #[test]
        fn inverse_cdf_round_trip(
            lambda in 1e-4f64..0.2,
            knot in 5.0f64..80.0,
            b_pre in -1.5f64..1.5,
            b_post in -1.5f64..1.5,
            u in 1e-6f64..0.999999,
            trt in any::<bool>(),
        ) {
            let terms = TermSet::new(vec![crate::domain::Term::Treatment]).unwrap();
            let before = ExpPHParams::new(lambda, terms.clone(), vec![b_pre]).unwrap();
            let after = ExpPHParams::new(lambda * 1.7, terms, vec![b_post]).unwrap();
            let p = ModelParams::Piecewise(PiecewiseParams::new(knot, before, after).unwrap());
            let x = CovariateVector::new(trt, false, false);
            let t = sample_event_time(&p, &x, u);
            prop_assert!(t > 0.0);
            let s = survival(t, &p, &x);
            prop_assert!((s - u).abs() < 1e-12, "S(T)={s} vs u={u}");
        }

        #[test]
        fn sampler_strictly_decreasing_in_u(
            u1 in 0.01f64..0.49,
            u2 in 0.51f64..0.99,
        ) {
            let p = ModelParams::Piecewise(cgd_cross());
            let x = CovariateVector::new(true, false, false);
            prop_assert!(sample_event_time(&p, &x, u1) > sample_event_time(&p, &x, u2));
        }

        #[test]
        fn rmst_monotone_in_beta(
            beta in -1.0f64..1.0,
            bump in 0.01f64..1.0,
        ) {
            // larger coefficient on an active covariate -> higher hazard -> lower RMST
            let terms = TermSet::new(vec![crate::domain::Term::Treatment]).unwrap();
            let lo = ExpPHParams::new(0.02, terms.clone(), vec![beta]).unwrap();
            let hi = ExpPHParams::new(0.02, terms, vec![beta + bump]).unwrap();
            let x = CovariateVector::new(true, false, false);
            prop_assert!(rmst_exponential(80.0, &hi, &x) < rmst_exponential(80.0, &lo, &x));
        }
    }
}
