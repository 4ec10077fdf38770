//! Non-parametric survival estimation: Kaplan-Meier product-limit curve,
//! RMST as the area under the step function, and the Greenwood plug-in
//! variance for that area.

use crate::domain::SubjectRecord;
use std::io::{self, Write};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KmError {
    #[error("cannot fit a Kaplan-Meier curve to an empty arm")]
    EmptyInput,
    #[error("t_star = {t_star} exceeds the last observed time {last_observed}")]
    NotEvaluable { t_star: f64, last_observed: f64 },
}

/// Kaplan-Meier product-limit estimate for one arm.
///
/// Stores only the distinct event times; the curve is the right-continuous
/// step function taking value `survival[i]` on `[event_times[i],
/// event_times[i+1])` and 1 before the first event. Censored subjects at a
/// tied time stay in the risk set for that time's events.
#[derive(Debug, Clone)]
pub struct KMCurve {
    event_times: Vec<f64>,
    at_risk: Vec<usize>,
    events: Vec<usize>,
    survival: Vec<f64>,
    last_observed: f64,
    n_subjects: usize,
}

/// Fit the product-limit estimate to one arm's records.
pub fn km_fit(records: &[SubjectRecord]) -> Result<KMCurve, KmError> {
    if records.is_empty() {
        return Err(KmError::EmptyInput);
    }
    let mut times: Vec<(f64, bool)> = records.iter().map(|r| (r.time, r.event)).collect();
    times.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("non-finite time"));
    let n = times.len();
    let last_observed = times[n - 1].0;

    let mut event_times = Vec::new();
    let mut at_risk = Vec::new();
    let mut events = Vec::new();
    let mut survival = Vec::new();
    let mut s = 1.0f64;

    let mut i = 0;
    while i < n {
        let t = times[i].0;
        let mut d = 0usize;
        let mut j = i;
        while j < n && times[j].0 == t {
            if times[j].1 {
                d += 1;
            }
            j += 1;
        }
        if d > 0 {
            let risk = n - i; // everyone with observed time >= t
            s *= (risk - d) as f64 / risk as f64;
            event_times.push(t);
            at_risk.push(risk);
            events.push(d);
            survival.push(s);
        }
        i = j;
    }

    Ok(KMCurve {
        event_times,
        at_risk,
        events,
        survival,
        last_observed,
        n_subjects: n,
    })
}

impl KMCurve {
    pub fn event_times(&self) -> &[f64] {
        &self.event_times
    }

    pub fn at_risk(&self) -> &[usize] {
        &self.at_risk
    }

    pub fn events(&self) -> &[usize] {
        &self.events
    }

    pub fn survival_values(&self) -> &[f64] {
        &self.survival
    }

    pub fn last_observed(&self) -> f64 {
        self.last_observed
    }

    pub fn n_subjects(&self) -> usize {
        self.n_subjects
    }

    /// Step-function value at `t`.
    pub fn survival_at(&self, t: f64) -> f64 {
        match self.event_times.iter().rposition(|et| *et <= t) {
            Some(i) => self.survival[i],
            None => 1.0,
        }
    }

    /// A horizon is usable when the arm was observed that far, or when the
    /// curve already reached exactly zero (everyone had the event, so the
    /// area is determined with no extrapolation).
    pub fn evaluable_at(&self, t_star: f64) -> bool {
        assert!(t_star.is_finite() && t_star > 0.0, "t_star must be finite and positive");
        self.last_observed >= t_star || self.survival.last() == Some(&0.0)
    }

    fn check_evaluable(&self, t_star: f64) -> Result<(), KmError> {
        if !self.evaluable_at(t_star) {
            return Err(KmError::NotEvaluable {
                t_star,
                last_observed: self.last_observed,
            });
        }
        Ok(())
    }

    /// Area under the step function on `[0, t_star]`: the strip between
    /// consecutive event times carries the survival value on its left edge,
    /// with S = 1 before the first event.
    pub fn rmst(&self, t_star: f64) -> Result<f64, KmError> {
        self.check_evaluable(t_star)?;
        Ok(self.areas(t_star).0)
    }

    /// Greenwood plug-in variance of [`KMCurve::rmst`]: terms
    /// `A_i^2 d_i / (n_i (n_i - d_i))` over event times up to `t_star`, with
    /// `A_i` the remaining area from `t_i` to `t_star`. Times where the risk
    /// set is wiped out (`n_i == d_i`) are dropped.
    pub fn rmst_variance(&self, t_star: f64) -> Result<f64, KmError> {
        self.check_evaluable(t_star)?;
        let (_, strips, k) = self.areas_with_strips(t_star);
        let mut var = 0.0;
        let mut remaining = 0.0;
        for i in (0..k).rev() {
            remaining += strips[i + 1];
            let n_i = self.at_risk[i] as f64;
            let d_i = self.events[i] as f64;
            if self.at_risk[i] > self.events[i] {
                var += remaining * remaining * d_i / (n_i * (n_i - d_i));
            }
        }
        Ok(var)
    }

    fn areas(&self, t_star: f64) -> (f64, usize) {
        let (total, _, k) = self.areas_with_strips(t_star);
        (total, k)
    }

    /// Strip areas of the partition of `[0, t_star]` by the event times
    /// `<= t_star`. `strips[0]` is the `[0, t_1)` strip at S = 1; `strips[i]`
    /// for `i >= 1` run from event time `i-1` at its survival value.
    fn areas_with_strips(&self, t_star: f64) -> (f64, Vec<f64>, usize) {
        let k = self.event_times.partition_point(|t| *t <= t_star);
        let mut strips = Vec::with_capacity(k + 1);
        let mut prev_t = 0.0;
        let mut prev_s = 1.0;
        let mut total = 0.0;
        for i in 0..k {
            let strip = prev_s * (self.event_times[i] - prev_t);
            strips.push(strip);
            total += strip;
            prev_t = self.event_times[i];
            prev_s = self.survival[i];
        }
        let tail = prev_s * (t_star - prev_t);
        strips.push(tail);
        total += tail;
        (total, strips, k)
    }

    /// Export as CSV (`time,survival,at_risk,events`), starting with the
    /// t = 0 anchor row.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "time,survival,at_risk,events")?;
        writeln!(out, "{},{},{},0", fmt_sig6(0.0), fmt_sig6(1.0), self.n_subjects)?;
        for i in 0..self.event_times.len() {
            writeln!(
                out,
                "{},{},{},{}",
                fmt_sig6(self.event_times[i]),
                fmt_sig6(self.survival[i]),
                self.at_risk[i],
                self.events[i]
            )?;
        }
        Ok(())
    }
}

/// The pre-specified horizon is usable only when both arms were observed to
/// `t_star` or beyond (or had their curves reach zero before it).
pub fn km_evaluable(arm_a: &KMCurve, arm_b: &KMCurve, t_star: f64) -> bool {
    arm_a.evaluable_at(t_star) && arm_b.evaluable_at(t_star)
}

/// Format with 6 significant digits, trailing zeros trimmed (printf `%g`).
pub(crate) fn fmt_sig6(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        trim_zeros(s)
    } else {
        let s = format!("{x:.5e}");
        // normalize "1.23000e-7" -> "1.23e-07"-style without zero padding
        match s.split_once('e') {
            Some((mant, e)) => format!("{}e{}", trim_zeros(mant.to_string()), e),
            None => s,
        }
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}
