//! Built-in study presets.
//!
//! Two families:
//!
//! - `cgd-*`: the Gamma-interferon working model, a single-interval
//!   exponential PH truth fitted from the chronic granulomatous disease
//!   trial (baseline hazard 0.015777/week; treatment −1.116749, inherit
//!   0.094373, sex −0.402188, treatment:inherit 0.475445), n = 100,
//!   accrual 20 weeks, analysis at 120 weeks, random censoring at rate
//!   0.001.
//! - `crossing-*`: the crossing-curves variant with a knot at 40 weeks and
//!   an exaggerated post-knot treatment reversal (+0.750), n = 130.

use crate::config::{RunConfig, SweepSpec};
use crate::domain::{ExpPHParams, ModelParams, PiecewiseParams, TermSet};
use crate::inference::{CovariateProfile, Method};
use crate::montecarlo::{Axis, Hypothesis, Scenario};
use crate::simulate::{permute_treatment, TrialDesign};

pub const DEFAULT_SEED: u64 = 42;

/// Exponential truth for the `cgd-*` presets.
pub fn cgd_truth() -> ModelParams {
    ModelParams::Exponential(
        ExpPHParams::new(
            0.015777,
            TermSet::full(),
            vec![-1.116749, 0.094373, -0.402188, 0.475445],
        )
        .expect("static parameters are valid"),
    )
}

/// Piecewise truth for the `crossing-*` presets: identical covariate
/// effects in both pieces, treatment effect flipping from −1.117 to +0.750
/// at the 40-week knot.
pub fn crossing_truth() -> ModelParams {
    let before = ExpPHParams::new(0.0158, TermSet::full(), vec![-1.117, 0.094, -0.402, 0.475])
        .expect("static parameters are valid");
    let after = ExpPHParams::new(0.0158, TermSet::full(), vec![0.750, 0.094, -0.402, 0.475])
        .expect("static parameters are valid");
    ModelParams::Piecewise(PiecewiseParams::new(40.0, before, after).expect("matching term sets"))
}

/// Shared design shell: accrual over 20 weeks, analysis at week 120,
/// exponential random censoring at 0.001/week, Bernoulli(1/2) covariates.
fn base_design(n_subjects: usize, truth: ModelParams, seed: u64) -> TrialDesign {
    TrialDesign {
        n_subjects,
        accrual_window: 20.0,
        analysis_time: 120.0,
        censor_rate: 0.001,
        covariate_prob: 0.5,
        truth,
        seed,
    }
}

pub fn cgd_design(seed: u64) -> TrialDesign {
    base_design(100, cgd_truth(), seed)
}

pub fn crossing_design(seed: u64) -> TrialDesign {
    base_design(130, crossing_truth(), seed)
}

fn cgd_scenario(hypothesis: Hypothesis) -> Scenario {
    Scenario {
        design: cgd_design(DEFAULT_SEED),
        t_star: 100.0,
        methods: vec![
            Method::NonParametric,
            Method::FullParametric,
            Method::MisspecParametric,
        ],
        assumed_knot: None,
        hypothesis,
        replications: 100_000,
        profile: CovariateProfile::Averaged,
    }
}

fn crossing_scenario(hypothesis: Hypothesis) -> Scenario {
    Scenario {
        design: crossing_design(DEFAULT_SEED),
        t_star: 40.0,
        methods: vec![Method::NonParametric, Method::CrossingParametric],
        assumed_knot: Some(40.0),
        hypothesis,
        replications: 10_000,
        profile: CovariateProfile::Averaged,
    }
}

fn plain(scenario: Scenario) -> RunConfig {
    RunConfig { scenario, sweep: None, dump_z: false, workers: None }
}

fn with_sweep(scenario: Scenario, axis: Axis, values: Vec<f64>) -> RunConfig {
    RunConfig {
        scenario,
        sweep: Some(SweepSpec { axis, values }),
        dump_z: false,
        workers: None,
    }
}

fn tstar_grid(from: u32, to: u32, step: u32) -> Vec<f64> {
    (from..=to).step_by(step as usize).map(f64::from).collect()
}

pub fn preset_names() -> &'static [&'static str] {
    &[
        "cgd-power",
        "cgd-null",
        "cgd-beta3-sweep",
        "cgd-tstar-sweep",
        "crossing-power",
        "crossing-null",
        "crossing-tstar-sweep",
        "crossing-knot-sweep",
        "crossing-permuted",
    ]
}

/// Look up a preset by name.
pub fn preset(name: &str) -> Option<RunConfig> {
    let config = match name {
        "cgd-power" => plain(cgd_scenario(Hypothesis::Alternative)),
        "cgd-null" => plain(cgd_scenario(Hypothesis::Null)),
        "cgd-beta3-sweep" => with_sweep(
            cgd_scenario(Hypothesis::Alternative),
            Axis::Beta3,
            (-10..=10).map(|i| f64::from(i) / 5.0).collect(),
        ),
        "cgd-tstar-sweep" => {
            let mut values = vec![1.0];
            values.extend(tstar_grid(10, 150, 10));
            with_sweep(cgd_scenario(Hypothesis::Alternative), Axis::TStar, values)
        }
        "crossing-power" => plain(crossing_scenario(Hypothesis::Alternative)),
        "crossing-null" => plain(crossing_scenario(Hypothesis::Null)),
        "crossing-tstar-sweep" => with_sweep(
            crossing_scenario(Hypothesis::Alternative),
            Axis::TStar,
            tstar_grid(10, 120, 10),
        ),
        "crossing-knot-sweep" => with_sweep(
            crossing_scenario(Hypothesis::Alternative),
            Axis::AssumedKnot,
            (4..=12).map(|i| f64::from(i) * 5.0).collect(),
        ),
        "crossing-permuted" => {
            let mut scenario = crossing_scenario(Hypothesis::Alternative);
            scenario.design =
                permute_treatment(&scenario.design).expect("crossing truth is piecewise");
            with_sweep(scenario, Axis::TStar, tstar_grid(10, 120, 10))
        }
        _ => return None,
    };
    Some(config)
}
