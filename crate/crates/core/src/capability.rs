//! How much regulation a building can provide.
//!
//! Long-term capability is limited by how far the set point may drift
//! (accumulated regulation `S(t)` shifts the set point by `S T_g / (tau N_c)`),
//! short-term capability by the mass sitting in the two boundary bins. The
//! product `tau / T_g` pushes the two in opposite directions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fleet::{admissible_control_interval, BuildingParams, RateSet, StateVector};

/// T-50 rate-of-response window (minutes).
pub const DEFAULT_RESPONSE_MINUTES: f64 = 5.0;

/// Peak accumulated regulation of the T-50 test, in units of `R_r * min`.
pub const T50_PEAK_ACCUMULATION: f64 = 10.0;

/// Per-tick capability message a building sends to the ISO.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapabilityReport {
    /// Long-term accumulated-regulation bound (appliance·min).
    pub s_max: f64,
    pub ramp_lo: f64,
    pub ramp_hi: f64,
    pub dr_min: f64,
    pub dr_max: f64,
    /// Largest capacity that still passes the T-50 test.
    pub r_qual: f64,
}

/// Bound on the accumulated regulation `S(t)`: `N_c tau Delta_set / (2 T_g)`.
pub fn long_term_bound(params: &BuildingParams) -> f64 {
    params.population * params.tau * params.set_band_width / (2.0 * params.t_gain)
}

/// Whether an accumulated regulation stays inside `[-s_max, s_max]`.
///
/// Only the upper side is a stated result; the lower side follows from the
/// symmetric set-point band.
pub fn within_long_term_bound(accumulated: f64, params: &BuildingParams) -> bool {
    accumulated.abs() <= long_term_bound(params)
}

/// One-period ramp bounds in thermal form, `-+ N x N_c T_g / (tau Delta_band)`.
pub fn short_term_bounds(x: &StateVector, params: &BuildingParams, rates: &RateSet) -> (f64, f64) {
    let n = params.n_bins as f64;
    let scale = n * params.population * params.t_gain / (params.tau * params.band_width);
    let (lo, hi) = (-x.x_2n() * scale, x.x_n() * scale);
    debug_assert!({
        let (mlo, mhi) = markov_ramp_bounds(x, params.population, rates);
        (lo - mlo).abs() <= 1e-9 * (1.0 + mlo.abs()) && (hi - mhi).abs() <= 1e-9 * (1.0 + mhi.abs())
    });
    (lo, hi)
}

/// The same bounds expressed through the transition rates, `[-N_c (a+b) x_2N, N_c (a+b) x_N]`.
pub fn markov_ramp_bounds(x: &StateVector, population: f64, rates: &RateSet) -> (f64, f64) {
    let total = rates.alpha + rates.beta;
    (-population * total * x.x_2n(), population * total * x.x_n())
}

/// Consumption ramp `C xdot` produced by control `u`.
pub fn ramp_for_control(x: &StateVector, u: f64, population: f64, rates: &RateSet) -> f64 {
    population * ((rates.alpha * x.x_n() - rates.beta * x.x_2n()) - u * x.boundary_mass())
}

/// Provision thresholds `(dr_min, dr_max)`: the image of the admissible control
/// interval under [`ramp_for_control`], which is decreasing in `u`.
pub fn provision_thresholds(
    x: &StateVector,
    current_set_point: f64,
    params: &BuildingParams,
    rates: &RateSet,
    dt: f64,
) -> Result<(f64, f64)> {
    let iv = admissible_control_interval(params, rates, current_set_point, dt)?;
    let dr_max = ramp_for_control(x, iv.lo, params.population, rates);
    let dr_min = ramp_for_control(x, iv.hi, params.population, rates);
    Ok((dr_min, dr_max))
}

/// Spinning reserve needed when the demand ramp leaves `[dr_min, dr_max]`.
pub fn spinning_reserve(delta_p: f64, dr_min: f64, dr_max: f64) -> f64 {
    debug_assert!(dr_min <= dr_max);
    if delta_p > dr_max {
        delta_p - dr_max
    } else if delta_p < dr_min {
        delta_p - dr_min
    } else {
        0.0
    }
}

/// Maximum capacity that passes a T-50 test with a `k`-minute rate of response.
pub fn qualification_limit(params: &BuildingParams, k: f64) -> Result<f64> {
    if !(k > 0.0 && k <= DEFAULT_RESPONSE_MINUTES) {
        return Err(Error::Parameter(format!("response window k must lie in (0, 5] minutes, got {k}")));
    }
    // the T-50 profile accumulates at most 10 R_r·min of regulation
    let long_term = long_term_bound(params) / T50_PEAK_ACCUMULATION;
    let short_term = (k * params.population / params.t_on).min(k * params.population / params.t_off);
    Ok(long_term.min(short_term))
}

pub fn report(
    x: &StateVector,
    current_set_point: f64,
    params: &BuildingParams,
    rates: &RateSet,
    dt: f64,
    k: f64,
) -> Result<CapabilityReport> {
    let (ramp_lo, ramp_hi) = short_term_bounds(x, params, rates);
    let (dr_min, dr_max) = provision_thresholds(x, current_set_point, params, rates, dt)?;
    Ok(CapabilityReport {
        s_max: long_term_bound(params),
        ramp_lo,
        ramp_hi,
        dr_min,
        dr_max,
        r_qual: qualification_limit(params, k)?,
    })
}
