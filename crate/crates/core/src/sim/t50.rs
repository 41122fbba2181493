use serde::{Deserialize, Serialize};

use super::engine::BuildingRuntime;
use super::scenario::{BuildingConfig, Scenario, SignalSpec};
use super::signal::{generate_t50, T50Profile};
use crate::capability::{long_term_bound, qualification_limit, T50_PEAK_ACCUMULATION};
use crate::error::{Error, Result};
use crate::tracking::control_law;

/// Tracking tolerance as a fraction of `R_r`.
pub const T50_TOLERANCE: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum T50Failure {
    /// Lost the signal while it was ramping.
    RateOfResponse,
    /// Lost the signal while it was holding.
    SustainedResponse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct T50Outcome {
    pub building: String,
    pub r_r: f64,
    pub passed: bool,
    pub rate_of_response_ok: bool,
    pub sustained_response_ok: bool,
    /// Largest `|C x - (R_b + R)|` over the test (kW).
    pub max_error: f64,
    pub first_failure_min: Option<f64>,
    pub first_failure: Option<T50Failure>,
}

/// Judges an achieved consumption trace against the T-50 target.
pub fn evaluate_t50(
    building: &str,
    times: &[f64],
    achieved: &[f64],
    target: &[f64],
    r_r: f64,
    profile: &T50Profile,
) -> T50Outcome {
    let scale = target.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let tol = (T50_TOLERANCE * r_r).max(1e-9 * scale);
    let mut out = T50Outcome {
        building: building.to_string(),
        r_r,
        passed: true,
        rate_of_response_ok: true,
        sustained_response_ok: true,
        max_error: 0.0,
        first_failure_min: None,
        first_failure: None,
    };
    for ((&t, &y), &r) in times.iter().zip(achieved).zip(target) {
        let err = (y - r).abs();
        out.max_error = out.max_error.max(err);
        if err > tol {
            let kind = if profile.is_ramping(t) { T50Failure::RateOfResponse } else { T50Failure::SustainedResponse };
            match kind {
                T50Failure::RateOfResponse => out.rate_of_response_ok = false,
                T50Failure::SustainedResponse => out.sustained_response_ok = false,
            }
            if out.first_failure.is_none() {
                out.first_failure = Some(kind);
                out.first_failure_min = Some(t);
            }
        }
    }
    out.passed = out.rate_of_response_ok && out.sustained_response_ok;
    out
}

fn profile_of(scenario: &Scenario) -> Result<T50Profile> {
    match &scenario.signal {
        SignalSpec::T50 { profile: Some(knots) } => T50Profile::new(knots.clone()),
        _ => Ok(T50Profile::default()),
    }
}

fn run_one(cfg: &BuildingConfig, r_r: f64, profile: &T50Profile, dt: f64) -> Result<T50Outcome> {
    let cfg = BuildingConfig { capacity: Some(r_r), ..cfg.clone() };
    let mut b = BuildingRuntime::new(&cfg)?;
    let signal = generate_t50(r_r, profile, dt)?;
    let kw = b.params.rated_power;
    let base = b.params.baseline();
    let n = signal.len();
    let mut times = Vec::with_capacity(n);
    let mut achieved = Vec::with_capacity(n);
    let mut target = Vec::with_capacity(n);
    for k in 0..n {
        times.push(signal.samples[k].0);
        achieved.push(b.output_kw());
        target.push(base * kw + signal.value(k));
        if k + 1 == n {
            break;
        }
        let goal = base + signal.value(k) / kw;
        let goal_dot = (signal.value(k + 1) - signal.value(k)) / dt / kw;
        let iv = b.control_interval(dt)?;
        let out = control_law(b.control_state(), goal, goal_dot, &b.mats, &b.controller, &iv);
        let u = if out.singular { iv.clamp(0.0) } else { out.u };
        b.advance(u, dt).map_err(|e| Error::Tick { tick: k, building: b.id.clone(), source: Box::new(e) })?;
    }
    Ok(evaluate_t50(&b.id, &times, &achieved, &target, r_r, profile))
}

/// Runs the T-50 test on every building of the scenario with sold capacity `r_r` kW.
pub fn run_t50(scenario: &Scenario, r_r: f64) -> Result<Vec<T50Outcome>> {
    if !(r_r >= 0.0 && r_r.is_finite()) {
        return Err(Error::Config(format!("R_r must be >= 0, got {r_r}")));
    }
    let profile = profile_of(scenario)?;
    scenario.buildings.iter().map(|b| run_one(b, r_r, &profile, scenario.dt_min())).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub r_r: f64,
    pub outcomes: Vec<T50Outcome>,
}

/// T-50 results over `steps` evenly spaced capacities in `[from, to]`.
pub fn sweep_rr(scenario: &Scenario, from: f64, to: f64, steps: usize) -> Result<Vec<SweepPoint>> {
    if steps == 0 || !(from >= 0.0) || !(to >= from) {
        return Err(Error::Config(format!("bad sweep range [{from}, {to}] with {steps} steps")));
    }
    (0..steps)
        .map(|i| {
            let r_r = if steps == 1 { from } else { from + (to - from) * i as f64 / (steps - 1) as f64 };
            Ok(SweepPoint { r_r, outcomes: run_t50(scenario, r_r)? })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualificationRow {
    pub building: String,
    pub k_min: f64,
    /// Energy-limited part, `S_max / 10` (kW).
    pub long_term: f64,
    /// Ramp-limited part, `k N_c / max(t_on, t_off)` (kW).
    pub short_term: f64,
    pub limit: f64,
}

pub fn qualify(scenario: &Scenario, k: f64) -> Result<Vec<QualificationRow>> {
    scenario
        .buildings
        .iter()
        .map(|b| {
            let p = &b.params;
            let kw = p.rated_power;
            let limit = qualification_limit(p, k)? * kw;
            Ok(QualificationRow {
                building: b.id.clone(),
                k_min: k,
                long_term: long_term_bound(p) / T50_PEAK_ACCUMULATION * kw,
                short_term: k * p.population / p.t_on.max(p.t_off) * kw,
                limit,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluator_classifies_failures() {
        let p = T50Profile::default();
        let times: Vec<f64> = (0..=50).map(f64::from).collect();
        let target: Vec<f64> = times.iter().map(|&t| 100.0 + 10.0 * p.fraction(t)).collect();
        let ok = evaluate_t50("a", &times, &target, &target, 10.0, &p);
        assert!(ok.passed && ok.max_error == 0.0);

        let mut held = target.clone();
        held[7] -= 1.0; // minute 7 is on the +R_r plateau
        let out = evaluate_t50("a", &times, &held, &target, 10.0, &p);
        assert!(!out.passed && out.rate_of_response_ok && !out.sustained_response_ok);
        assert_eq!(out.first_failure, Some(T50Failure::SustainedResponse));
        assert_eq!(out.first_failure_min, Some(7.0));

        let mut lagged = target.clone();
        lagged[3] -= 0.5;
        let out = evaluate_t50("a", &times, &lagged, &target, 10.0, &p);
        assert_eq!(out.first_failure, Some(T50Failure::RateOfResponse));

        // within 2% of R_r is a pass
        let mut close = target;
        close[20] += 0.19;
        assert!(evaluate_t50("a", &times, &close, &times.iter().map(|&t| 100.0 + 10.0 * p.fraction(t)).collect::<Vec<_>>(), 10.0, &p).passed);
    }
}
