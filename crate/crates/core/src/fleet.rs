//! Markov jump population model of one building's appliance fleet.
//!
//! States `0..N` are the off bins ordered from the bottom of the comfort band
//! upward, states `N..2N` the on bins ordered from the top downward. Mass moves
//! around the ring at rate `alpha - u` through the off half and `beta + u`
//! through the on half, where `u` is the normalized set-point shift rate.

use log::warn;
use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance of the `T_g / tau = band * (1/t_on + 1/t_off)` identity.
pub const CONSISTENCY_RTOL: f64 = 1e-6;

/// Euler steps must keep every one-step transition probability below this.
pub const STEP_GUARD: f64 = 0.5;

/// Simplex tolerance used when validating state vectors.
pub const SIMPLEX_TOL: f64 = 1e-9;

const CLAMP_LOG_THRESHOLD: f64 = -1e-12;
const RATE_SLACK: f64 = 1e-12;

/// Physical and user parameters of one homogeneous appliance fleet.
///
/// Temperatures are in °C, durations in minutes. `population` is the number of
/// appliances `N_c`; the model's internal power unit is "running appliances",
/// `rated_power` (kW per appliance) only scales reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BuildingSpec", into = "BuildingSpec")]
pub struct BuildingParams {
    pub n_bins: usize,
    pub bin_width: f64,
    pub band_width: f64,
    pub set_band_width: f64,
    pub set_point: f64,
    pub t_on: f64,
    pub t_off: f64,
    pub population: f64,
    pub tau: f64,
    pub t_gain: f64,
    pub rated_power: f64,
}

/// User-facing parameter closure: either `bin_width` or `band_width` must be
/// given, and `t_gain` is derived from the duty cycle unless supplied (in which
/// case it is checked).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildingSpec {
    pub n_bins: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bin_width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band_width: Option<f64>,
    pub set_band_width: f64,
    pub set_point: f64,
    pub t_on: f64,
    pub t_off: f64,
    pub population: f64,
    pub tau: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_gain: Option<f64>,
    #[serde(default = "default_rated_power")]
    pub rated_power: f64,
}

fn default_rated_power() -> f64 {
    1.0
}

impl BuildingSpec {
    pub fn build(self) -> Result<BuildingParams> {
        if self.n_bins == 0 {
            return Err(Error::Parameter("n_bins must be at least 1".into()));
        }
        let n = self.n_bins as f64;
        let (bin_width, band_width) = match (self.bin_width, self.band_width) {
            (Some(d), None) => (d, d * n),
            (None, Some(b)) => (b / n, b),
            (Some(d), Some(b)) => {
                if (d * n - b).abs() > CONSISTENCY_RTOL * b.abs().max(f64::MIN_POSITIVE) {
                    return Err(Error::Parameter(format!(
                        "band_width {b} != n_bins * bin_width = {}",
                        d * n
                    )));
                }
                (d, b)
            }
            (None, None) => {
                return Err(Error::Parameter("one of bin_width or band_width is required".into()))
            }
        };
        let required_gain = self.tau * band_width * (1.0 / self.t_on + 1.0 / self.t_off);
        let params = BuildingParams {
            n_bins: self.n_bins,
            bin_width,
            band_width,
            set_band_width: self.set_band_width,
            set_point: self.set_point,
            t_on: self.t_on,
            t_off: self.t_off,
            population: self.population,
            tau: self.tau,
            t_gain: self.t_gain.unwrap_or(required_gain),
            rated_power: self.rated_power,
        };
        params.validate()?;
        Ok(params)
    }
}

impl TryFrom<BuildingSpec> for BuildingParams {
    type Error = Error;

    fn try_from(spec: BuildingSpec) -> Result<Self> {
        spec.build()
    }
}

impl From<BuildingParams> for BuildingSpec {
    fn from(p: BuildingParams) -> Self {
        BuildingSpec {
            n_bins: p.n_bins,
            bin_width: Some(p.bin_width),
            band_width: Some(p.band_width),
            set_band_width: p.set_band_width,
            set_point: p.set_point,
            t_on: p.t_on,
            t_off: p.t_off,
            population: p.population,
            tau: p.tau,
            t_gain: Some(p.t_gain),
            rated_power: p.rated_power,
        }
    }
}

impl BuildingParams {
    /// Builds a parameter set with `T_g` derived from `tau` and the duty cycle.
    #[allow(clippy::too_many_arguments)]
    pub fn with_derived_gain(
        n_bins: usize,
        band_width: f64,
        set_band_width: f64,
        set_point: f64,
        t_on: f64,
        t_off: f64,
        population: f64,
        tau: f64,
    ) -> Result<Self> {
        BuildingSpec {
            n_bins,
            bin_width: None,
            band_width: Some(band_width),
            set_band_width,
            set_point,
            t_on,
            t_off,
            population,
            tau,
            t_gain: None,
            rated_power: 1.0,
        }
        .build()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("bin_width", self.bin_width),
            ("band_width", self.band_width),
            ("t_on", self.t_on),
            ("t_off", self.t_off),
            ("population", self.population),
            ("tau", self.tau),
            ("t_gain", self.t_gain),
            ("rated_power", self.rated_power),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Parameter(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        if self.n_bins == 0 {
            return Err(Error::Parameter("n_bins must be at least 1".into()));
        }
        if !(self.set_band_width.is_finite() && self.set_band_width >= 0.0) {
            return Err(Error::Parameter(format!(
                "set_band_width must be finite and >= 0, got {}",
                self.set_band_width
            )));
        }
        if !self.set_point.is_finite() {
            return Err(Error::Parameter("set_point must be finite".into()));
        }
        let n = self.n_bins as f64;
        if (self.band_width - n * self.bin_width).abs() > CONSISTENCY_RTOL * self.band_width {
            return Err(Error::Parameter(format!(
                "band_width = n_bins * bin_width violated: {} vs {}",
                self.band_width,
                n * self.bin_width
            )));
        }
        let lhs = self.t_gain / self.tau;
        let rhs = self.band_width * (1.0 / self.t_on + 1.0 / self.t_off);
        if (lhs - rhs).abs() > CONSISTENCY_RTOL * rhs {
            return Err(Error::Parameter(format!(
                "r_on + r_off = T_g / tau violated: T_g/tau = {lhs}, band*(1/t_on + 1/t_off) = {rhs} \
                 (T_g should be {})",
                rhs * self.tau
            )));
        }
        Ok(())
    }

    pub fn set_point_min(&self) -> f64 {
        self.set_point - 0.5 * self.set_band_width
    }

    pub fn set_point_max(&self) -> f64 {
        self.set_point + 0.5 * self.set_band_width
    }

    /// Fraction-of-fleet-on at the uncontrolled equilibrium times `N_c`.
    pub fn baseline(&self) -> f64 {
        self.population * self.t_on / (self.t_on + self.t_off)
    }
}

/// Transition rates (1/min) and warming/cooling rates (°C/min).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateSet {
    pub alpha: f64,
    pub beta: f64,
    pub r_on: f64,
    pub r_off: f64,
}

impl RateSet {
    /// The Markov-rate interval `[-beta, alpha]`.
    pub fn markov_interval(&self) -> ControlInterval {
        ControlInterval { lo: -self.beta, hi: self.alpha }
    }
}

pub fn derive_rates(params: &BuildingParams) -> Result<RateSet> {
    params.validate()?;
    let n = params.n_bins as f64;
    Ok(RateSet {
        alpha: n / params.t_off,
        beta: n / params.t_on,
        r_on: params.band_width / params.t_on,
        r_off: params.band_width / params.t_off,
    })
}

/// Closed interval of control rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInterval {
    pub lo: f64,
    pub hi: f64,
}

impl ControlInterval {
    pub fn clamp(&self, u: f64) -> f64 {
        u.max(self.lo).min(self.hi)
    }

    pub fn contains(&self, u: f64, tol: f64) -> bool {
        u >= self.lo - tol && u <= self.hi + tol
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn intersect(&self, other: &ControlInterval) -> Option<ControlInterval> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo <= hi).then_some(ControlInterval { lo, hi })
    }
}

/// `xdot = (A + B u) x`, `y = C x`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemMatrices {
    pub a_mat: DMatrix<f64>,
    pub b_mat: DMatrix<f64>,
    pub c_row: RowDVector<f64>,
    pub n_bins: usize,
    pub population: f64,
}

impl SystemMatrices {
    pub fn dim(&self) -> usize {
        2 * self.n_bins
    }

    /// `A + B u`.
    pub fn generator(&self, u: f64) -> DMatrix<f64> {
        &self.a_mat + &self.b_mat * u
    }

    pub fn apply(&self, x: &[f64], u: f64) -> DVector<f64> {
        let v = DVector::from_column_slice(x);
        &self.a_mat * &v + (&self.b_mat * &v) * u
    }

    pub fn ca_x(&self, x: &[f64]) -> f64 {
        (&self.c_row * (&self.a_mat * DVector::from_column_slice(x)))[0]
    }

    pub fn cb_x(&self, x: &[f64]) -> f64 {
        (&self.c_row * (&self.b_mat * DVector::from_column_slice(x)))[0]
    }

    pub fn output(&self, x: &[f64]) -> f64 {
        self.c_row.iter().zip(x).map(|(c, v)| c * v).sum()
    }
}

pub fn build_matrices(params: &BuildingParams, rates: &RateSet) -> SystemMatrices {
    let n = params.n_bins;
    let dim = 2 * n;
    let mut a = DMatrix::zeros(dim, dim);
    let mut b = DMatrix::zeros(dim, dim);
    for j in 0..dim {
        let next = (j + 1) % dim;
        if j < n {
            a[(j, j)] = -rates.alpha;
            a[(next, j)] = rates.alpha;
            b[(j, j)] = 1.0;
            b[(next, j)] = -1.0;
        } else {
            a[(j, j)] = -rates.beta;
            a[(next, j)] = rates.beta;
            b[(j, j)] = -1.0;
            b[(next, j)] = 1.0;
        }
    }
    let c_row = RowDVector::from_fn(dim, |_, j| if j >= n { params.population } else { 0.0 });
    SystemMatrices { a_mat: a, b_mat: b, c_row, n_bins: n, population: params.population }
}

/// Probability distribution over the `2N` ring states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct StateVector {
    probs: Vec<f64>,
}

impl TryFrom<Vec<f64>> for StateVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        StateVector::new(v)
    }
}

impl From<StateVector> for Vec<f64> {
    fn from(s: StateVector) -> Self {
        s.probs
    }
}

impl StateVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.len() % 2 != 0 {
            return Err(Error::Parameter(format!(
                "state vector length must be a positive even number, got {}",
                probs.len()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Parameter(format!("state entry {p} outside [0, 1]")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Parameter(format!("state entries sum to {total}, expected 1")));
        }
        Ok(StateVector { probs })
    }

    pub fn uniform(n_bins: usize) -> Self {
        StateVector { probs: vec![1.0 / (2 * n_bins) as f64; 2 * n_bins] }
    }

    /// All mass in ring state `index` (zero-based).
    pub fn point_mass(n_bins: usize, index: usize) -> Self {
        let mut probs = vec![0.0; 2 * n_bins];
        probs[index] = 1.0;
        StateVector { probs }
    }

    /// Projects an arbitrary vector onto the simplex by clamping negatives and renormalizing.
    pub fn projected(mut values: Vec<f64>) -> Self {
        project_simplex(&mut values);
        StateVector { probs: values }
    }

    pub fn n_bins(&self) -> usize {
        self.probs.len() / 2
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    /// Top off bin (about to switch on).
    pub fn x_n(&self) -> f64 {
        self.probs[self.n_bins() - 1]
    }

    /// Bottom on bin (about to switch off).
    pub fn x_2n(&self) -> f64 {
        self.probs[self.probs.len() - 1]
    }

    pub fn boundary_mass(&self) -> f64 {
        self.x_n() + self.x_2n()
    }

    pub fn on_fraction(&self) -> f64 {
        self.probs[self.n_bins()..].iter().sum()
    }

    pub fn distance_inf(&self, other: &StateVector) -> f64 {
        self.probs.iter().zip(&other.probs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// Clamps negative entries to zero and rescales to unit sum. Returns the most
/// negative entry seen before clamping (or the minimum entry if none were negative).
pub fn project_simplex(values: &mut [f64]) -> f64 {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    for v in values.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let total: f64 = values.iter().sum();
    if total > 0.0 {
        for v in values.iter_mut() {
            *v /= total;
        }
    } else {
        let k = values.len() as f64;
        values.iter_mut().for_each(|v| *v = 1.0 / k);
    }
    min
}

/// Structured `(A + B u) x` evaluated in O(N) without forming matrices.
pub fn drift(x: &[f64], u: f64, rates: &RateSet) -> Vec<f64> {
    let dim = x.len();
    let n = dim / 2;
    let off = rates.alpha - u;
    let on = rates.beta + u;
    let flux = |j: usize| if j < n { off * x[j] } else { on * x[j] };
    (0..dim)
        .map(|i| {
            let prev = (i + dim - 1) % dim;
            flux(prev) - flux(i)
        })
        .collect()
}

/// `(xdot_N, xdot_2N)`: the drift of the two boundary bins only.
pub fn boundary_drift(x: &[f64], u: f64, rates: &RateSet) -> (f64, f64) {
    let dim = x.len();
    let n = dim / 2;
    let rate = |j: usize| if j < n { rates.alpha - u } else { rates.beta + u };
    let bin = |i: usize| {
        let prev = (i + dim - 1) % dim;
        rate(prev) * x[prev] - rate(i) * x[i]
    };
    (bin(n - 1), bin(dim - 1))
}

/// Result of one Euler step.
#[derive(Debug, Clone, PartialEq)]
pub struct Stepped {
    pub state: StateVector,
    /// Smallest entry before clamping to the simplex.
    pub min_pre_clamp: f64,
    /// Sum of the unclamped update (1 up to rounding).
    pub pre_clamp_sum: f64,
}

pub fn check_step_guard(dt: f64, rates: &RateSet) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Config(format!("time step must be positive, got {dt}")));
    }
    let p = dt * (rates.alpha + rates.beta);
    if p >= STEP_GUARD {
        return Err(Error::Config(format!(
            "dt * (alpha + beta) = {p} must stay below {STEP_GUARD}; reduce dt or n_bins"
        )));
    }
    Ok(())
}

pub fn check_markov_rate(u: f64, rates: &RateSet) -> Result<()> {
    if !u.is_finite() || u < -rates.beta - RATE_SLACK || u > rates.alpha + RATE_SLACK {
        return Err(Error::ControlSaturation { u, lo: -rates.beta, hi: rates.alpha });
    }
    Ok(())
}

/// Forward-Euler step `x' = x + dt (A + B u) x`, projected back onto the simplex.
pub fn step(
    x: &StateVector,
    u: f64,
    dt: f64,
    mats: &SystemMatrices,
    rates: &RateSet,
) -> Result<Stepped> {
    check_markov_rate(u, rates)?;
    check_step_guard(dt, rates)?;
    let deriv = mats.apply(x.as_slice(), u);
    let mut next: Vec<f64> = x.as_slice().iter().zip(deriv.iter()).map(|(v, d)| v + dt * d).collect();
    let pre_clamp_sum = next.iter().sum();
    let min_pre_clamp = project_simplex(&mut next);
    if min_pre_clamp < CLAMP_LOG_THRESHOLD {
        warn!("euler step produced negative probability {min_pre_clamp:e}; clamped");
    }
    Ok(Stepped { state: StateVector { probs: next }, min_pre_clamp, pre_clamp_sum })
}

/// Aggregate consumption `y = C x` in running appliances.
pub fn output(x: &StateVector, mats: &SystemMatrices) -> f64 {
    mats.output(x.as_slice())
}

/// Uncontrolled equilibrium: off bins share `beta/(alpha+beta)`, on bins `alpha/(alpha+beta)`.
pub fn steady_state(rates: &RateSet, n_bins: usize) -> StateVector {
    let n = n_bins as f64;
    let total = rates.alpha + rates.beta;
    let off = rates.beta / (n * total);
    let on = rates.alpha / (n * total);
    let probs = (0..2 * n_bins).map(|i| if i < n_bins { off } else { on }).collect();
    StateVector { probs }
}

/// Control rates that keep both the Markov rates non-negative and the next
/// set point `T + dt * bin_width * u` inside the user's allowed band.
pub fn admissible_control_interval(
    params: &BuildingParams,
    rates: &RateSet,
    current_set_point: f64,
    dt: f64,
) -> Result<ControlInterval> {
    let (t_min, t_max) = (params.set_point_min(), params.set_point_max());
    let tol = 1e-9 * (1.0 + params.set_point.abs());
    if current_set_point < t_min - tol || current_set_point > t_max + tol {
        return Err(Error::Parameter(format!(
            "set point {current_set_point} outside allowed range [{t_min}, {t_max}]"
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::Config(format!("time step must be positive, got {dt}")));
    }
    let scale = dt * params.bin_width;
    let lo = ((t_min - current_set_point) / scale).min(0.0).max(-rates.beta);
    let hi = ((t_max - current_set_point) / scale).max(0.0).min(rates.alpha);
    assert!(lo <= 0.0 && 0.0 <= hi, "admissible interval must contain zero");
    Ok(ControlInterval { lo, hi })
}
