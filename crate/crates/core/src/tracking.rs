//! Building-level tracking controller.
//!
//! The output `y = C x` has relative degree one, so choosing
//! `u = (-CAx - K (y - R) + Rdot) / CBx` turns the tracking error into
//! `edot = -K e`. The control enters only through the two boundary bins
//! (`CBx = -N_c (x_N + x_2N)`), so the law is undefined on the set where
//! those bins are empty.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fleet::{ControlInterval, StateVector, SystemMatrices};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    /// Error decay rate `K` (1/min).
    #[serde(default = "default_gain")]
    pub gain: f64,
    /// Boundary mass below which the state is treated as singular.
    #[serde(default = "default_x_floor")]
    pub x_floor: f64,
}

fn default_gain() -> f64 {
    1.0
}

fn default_x_floor() -> f64 {
    1e-9
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig { gain: default_gain(), x_floor: default_x_floor() }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gain > 0.0 && self.gain.is_finite()) {
            return Err(Error::Parameter(format!("controller gain must be > 0, got {}", self.gain)));
        }
        if !(self.x_floor > 0.0) {
            return Err(Error::Parameter(format!("x_floor must be > 0, got {}", self.x_floor)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlOutcome {
    pub u: f64,
    pub saturated: bool,
    pub singular: bool,
    pub requested_u: f64,
}

impl ControlOutcome {
    fn clamped(requested_u: f64, admissible: &ControlInterval) -> Self {
        let u = admissible.clamp(requested_u);
        let tol = 1e-12 * (1.0 + requested_u.abs());
        ControlOutcome { u, saturated: !admissible.contains(requested_u, tol), singular: false, requested_u }
    }

    fn singular() -> Self {
        ControlOutcome { u: 0.0, saturated: false, singular: true, requested_u: 0.0 }
    }
}

/// Forward difference of a sampled signal.
pub fn signal_derivative(r_now: f64, r_next: f64, dt: f64) -> f64 {
    debug_assert!(dt > 0.0);
    (r_next - r_now) / dt
}

/// Feedback-linearizing law driving `C x` toward `target` with error dynamics `edot = -K e`.
pub fn control_law(
    x: &StateVector,
    target: f64,
    target_dot: f64,
    mats: &SystemMatrices,
    cfg: &ControllerConfig,
    admissible: &ControlInterval,
) -> ControlOutcome {
    if x.boundary_mass() < cfg.x_floor {
        return ControlOutcome::singular();
    }
    let xs = x.as_slice();
    let cax = mats.ca_x(xs);
    let cbx = mats.cb_x(xs);
    let error = mats.output(xs) - target;
    let requested = (-cax - cfg.gain * error + target_dot) / cbx;
    ControlOutcome::clamped(requested, admissible)
}

/// The unique control that makes the one-step consumption ramp `C xdot` equal `delta_r`.
pub fn control_for_ramp(x: &StateVector, delta_r: f64, mats: &SystemMatrices) -> Result<f64> {
    let mass = x.boundary_mass();
    if mass <= 0.0 {
        return Err(Error::SingularState(mass));
    }
    // C A x is the natural drift N_c (alpha x_N - beta x_2N); -C B x = N_c (x_N + x_2N)
    let xs = x.as_slice();
    Ok((mats.ca_x(xs) - delta_r) / -mats.cb_x(xs))
}

/// [`control_for_ramp`] clamped to an admissible interval, with saturation and singularity flags.
pub fn ramp_outcome(
    x: &StateVector,
    delta_r: f64,
    mats: &SystemMatrices,
    cfg: &ControllerConfig,
    admissible: &ControlInterval,
) -> ControlOutcome {
    if x.boundary_mass() < cfg.x_floor {
        return ControlOutcome::singular();
    }
    match control_for_ramp(x, delta_r, mats) {
        Ok(u) => ControlOutcome::clamped(u, admissible),
        Err(_) => ControlOutcome::singular(),
    }
}
