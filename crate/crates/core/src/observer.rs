//! Output-injection observer for the bin occupancies.
//!
//! Only the aggregate consumption `y = C x` is measured. The estimate evolves as
//! `x̃' = x̃ + dt [(A + B u) x̃ + L (y - C x̃)]` with the injection gain `L`
//! nonzero only in the last on-bin. `L` is re-chosen every tick from the
//! current control so that `Ã = A + B u - L C + ε I` has a determinant of
//! the sign a Hurwitz-like matrix of its dimension must have.

use std::collections::HashMap;

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fleet::{check_step_guard, project_simplex, RateSet, StateVector, SystemMatrices};

/// Relative distance past the determinant root at which the gain is placed.
pub const GAIN_ROOT_MARGIN: f64 = 0.1;
const DEGENERATE_SENSITIVITY: f64 = 1e-14;
const CACHE_QUANTUM: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserverConfig {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Saturation margin `ε̃`; defaults to `0.05 min(alpha, beta)`.
    #[serde(default)]
    pub margin: Option<f64>,
    /// Initial estimate; defaults to the uniform distribution.
    #[serde(default)]
    pub initial_estimate: Option<Vec<f64>>,
    /// Feed the controller the estimate rather than the true state.
    #[serde(default = "default_true")]
    pub control_from_estimate: bool,
}

fn default_gamma() -> f64 {
    0.5
}

fn default_true() -> bool {
    true
}

impl Default for ObserverConfig {
    fn default() -> Self {
        ObserverConfig {
            enabled: false,
            gamma: default_gamma(),
            margin: None,
            initial_estimate: None,
            control_from_estimate: true,
        }
    }
}

impl ObserverConfig {
    pub fn margin_for(&self, rates: &RateSet) -> f64 {
        self.margin.unwrap_or(0.05 * rates.alpha.min(rates.beta))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObserverState {
    pub x_hat: StateVector,
    /// Current injection gain on the last on-bin.
    pub l_gain: f64,
    pub gamma: f64,
    pub margin: f64,
    /// Guaranteed decay rate `ε(t)` at the last step.
    pub epsilon_t: f64,
}

impl ObserverState {
    pub fn new(x_hat: StateVector, gamma: f64, margin: f64, rates: &RateSet) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::Parameter(format!("gamma must lie in (0, 1), got {gamma}")));
        }
        let cap = 0.5 * rates.alpha.min(rates.beta);
        if !(margin > 0.0 && margin <= cap) {
            return Err(Error::Parameter(format!("observer margin must lie in (0, {cap}], got {margin}")));
        }
        Ok(ObserverState { x_hat, l_gain: 0.0, gamma, margin, epsilon_t: epsilon_rate(0.0, rates, gamma) })
    }

    pub fn from_config(cfg: &ObserverConfig, n_bins: usize, rates: &RateSet) -> Result<Self> {
        let x_hat = match &cfg.initial_estimate {
            Some(v) => {
                if v.len() != 2 * n_bins {
                    return Err(Error::Parameter(format!(
                        "initial estimate has {} entries, expected {}",
                        v.len(),
                        2 * n_bins
                    )));
                }
                StateVector::new(v.clone())?
            }
            None => StateVector::uniform(n_bins),
        };
        ObserverState::new(x_hat, cfg.gamma, cfg.margin_for(rates), rates)
    }
}

/// Clamps `u` into `[-beta + margin, alpha - margin]`.
pub fn restricted_control(u: f64, rates: &RateSet, margin: f64) -> f64 {
    debug_assert!(margin > 0.0);
    u.clamp(-rates.beta + margin, rates.alpha - margin)
}

/// `γ min(beta + u, alpha - u)`.
pub fn epsilon_rate(u: f64, rates: &RateSet, gamma: f64) -> f64 {
    gamma * (rates.beta + u).min(rates.alpha - u)
}

/// `A + B u - l e_{2N} C + eps I`.
pub fn closed_error_matrix(mats: &SystemMatrices, u: f64, l_gain: f64, eps: f64) -> DMatrix<f64> {
    let dim = mats.dim();
    let mut m = mats.generator(u);
    for j in 0..dim {
        m[(dim - 1, j)] -= l_gain * mats.c_row[j];
        m[(j, j)] += eps;
    }
    m
}

/// Signs of the leading principal minors: `true` where `(-1)^i det(Ã_i) > 0`.
pub fn leading_minor_signs(m: &DMatrix<f64>) -> Vec<bool> {
    (1..=m.nrows())
        .map(|i| {
            let det = m.view((0, 0), (i, i)).clone_owned().lu().determinant();
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            sign * det > 0.0
        })
        .collect()
}

/// Injection gain placing `det(Ã)` strictly on the correct side of zero.
///
/// `det(Ã)` is affine in the gain because the gain perturbs a single row,
/// so two determinant evaluations locate the root exactly.
pub fn select_gain(mats: &SystemMatrices, u: f64, eps: f64) -> Result<f64> {
    let dim = mats.dim();
    let a = closed_error_matrix(mats, u, 0.0, eps).lu().determinant();
    let b = closed_error_matrix(mats, u, 1.0, eps).lu().determinant() - a;
    if !(b.abs() >= DEGENERATE_SENSITIVITY) {
        return Err(Error::GainSelection(format!("determinant insensitive to the gain (slope {b:e}) at u = {u}")));
    }
    let root = -a / b;
    let l_gain = root + b.signum() * GAIN_ROOT_MARGIN * root.abs();
    let signs = leading_minor_signs(&closed_error_matrix(mats, u, l_gain, eps));
    if let Some(i) = signs.iter().position(|ok| !ok) {
        return Err(Error::GainSelection(format!(
            "leading minor {} of dimension {dim} has the wrong sign at u = {u}, gain {l_gain}",
            i + 1
        )));
    }
    Ok(l_gain)
}

/// A building's observer: state plus a gain cache keyed by the quantized control.
#[derive(Debug, Clone)]
pub struct Observer {
    pub state: ObserverState,
    gain_cache: HashMap<i64, f64>,
}

impl Observer {
    pub fn new(state: ObserverState) -> Self {
        Observer { state, gain_cache: HashMap::new() }
    }

    pub fn estimate(&self) -> &StateVector {
        &self.state.x_hat
    }

    /// Advances the estimate one tick given the applied control and measured output.
    pub fn step(&mut self, u: f64, y_measured: f64, mats: &SystemMatrices, rates: &RateSet, dt: f64) -> Result<()> {
        check_step_guard(dt, rates)?;
        let lo = -rates.beta + self.state.margin;
        let hi = rates.alpha - self.state.margin;
        let tol = 1e-12 * (1.0 + u.abs());
        if u < lo - tol || u > hi + tol {
            return Err(Error::ControlSaturation { u, lo, hi });
        }
        let eps = epsilon_rate(u, rates, self.state.gamma);
        let key = (u / CACHE_QUANTUM).round() as i64;
        let l_gain = match self.gain_cache.get(&key) {
            Some(&l) => l,
            None => {
                let l = select_gain(mats, key as f64 * CACHE_QUANTUM, eps)?;
                self.gain_cache.insert(key, l);
                l
            }
        };
        let xs = self.state.x_hat.as_slice();
        let innovation = y_measured - mats.output(xs);
        let deriv = mats.apply(xs, u);
        let mut next: Vec<f64> = xs.iter().zip(deriv.iter()).map(|(v, d)| v + dt * d).collect();
        let last = next.len() - 1;
        next[last] += dt * l_gain * innovation;
        let min = project_simplex(&mut next);
        if min < -0.5 {
            warn!("observer estimate left the simplex by {min:e} before projection");
        }
        self.state.x_hat = StateVector::projected(next);
        self.state.l_gain = l_gain;
        self.state.epsilon_t = eps;
        Ok(())
    }
}

/// Largest sampled Rayleigh quotient `eᵀ(A + B u - L C)e` over `samples` random unit vectors.
pub fn sampled_quadratic_sup<R: rand::Rng>(
    mats: &SystemMatrices,
    u: f64,
    l_gain: f64,
    samples: usize,
    rng: &mut R,
) -> f64 {
    use rand_distr::{Distribution, StandardNormal};
    let m = closed_error_matrix(mats, u, l_gain, 0.0);
    let dim = mats.dim();
    let mut sup = f64::NEG_INFINITY;
    for _ in 0..samples {
        let e = nalgebra::DVector::<f64>::from_fn(dim, |_, _| StandardNormal.sample(rng));
        let e = &e / e.norm();
        sup = sup.max(e.dot(&(&m * &e)));
    }
    sup
}
