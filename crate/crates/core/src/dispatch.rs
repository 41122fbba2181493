//! ISO-side real-time dispatch.
//!
//! Each tick the ISO splits the demand ramp `delta_p` between the buildings
//! (`delta_r^i`) and spinning reserve, maximizing the summed capability width
//! the buildings will report at the next tick minus `M * p_spin^2`.
//!
//! Per building the dispatched ramp is affine in the building's control,
//! `delta_r(u) = a - b u`, and the next-tick width is
//! `N_c s(u) (m1(u) + m2(u))` with `s` affine (the next boundary mass) and
//! `m1`, `m2` the clipped set-point slacks. Eliminating `m1`/`m2` at their
//! minima leaves a box-constrained, piecewise-quadratic, nonconvex problem
//! in the controls alone.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::capability::provision_thresholds;
use crate::error::{Error, Result};
use crate::fleet::{admissible_control_interval, boundary_drift, BuildingParams, ControlInterval, RateSet, StateVector};

const RANDOM_STARTS: usize = 8;
const CONVERGENCE_TOL: f64 = 1e-9;
const MAX_SWEEPS: usize = 10_000;
const ORACLE_MAX_BUILDINGS: usize = 3;

/// What the ISO knows about one building at the current tick.
///
/// Power quantities (`baseline`, `capacity`, `output`) are in kW, i.e.
/// appliance counts scaled by the building's rated power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingSnapshot {
    pub id: String,
    pub params: BuildingParams,
    pub rates: RateSet,
    /// Reported bin occupancies; only the boundary bins and their feeders matter.
    pub state: StateVector,
    pub set_point: f64,
    pub baseline: f64,
    /// Sold regulation capacity `R_r`.
    pub capacity: f64,
    /// Measured consumption `C x`.
    pub output: f64,
    /// Distance kept from the Markov-rate limits (nonzero when an observer runs).
    #[serde(default)]
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchProblem {
    pub buildings: Vec<BuildingSnapshot>,
    pub delta_p: f64,
    pub penalty: f64,
    pub dt: f64,
    /// Seed for the random multi-starts.
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DispatchMethod {
    Optimized,
    Proportional,
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub u: f64,
    pub delta_r: f64,
    /// Capability width the building will report at the next tick.
    pub width: f64,
    pub m1: f64,
    pub m2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchSolution {
    pub allocations: Vec<Allocation>,
    pub p_spin: f64,
    pub objective: f64,
    pub method: DispatchMethod,
}

/// `10^3 / (max_i dr_max^i)^2`, so that a unit of spinning reserve outweighs any width gain.
pub fn default_penalty(buildings: &[BuildingSnapshot], dt: f64) -> Result<f64> {
    let mut scale: f64 = 0.0;
    for b in buildings {
        let (_, dr_max) = provision_thresholds(&b.state, b.set_point, &b.params, &b.rates, dt)?;
        scale = scale.max(dr_max * b.params.rated_power);
    }
    if scale <= 0.0 {
        // no building can ramp up; fall back to the widest downward ramp
        for b in buildings {
            let (dr_min, _) = provision_thresholds(&b.state, b.set_point, &b.params, &b.rates, dt)?;
            scale = scale.max(dr_min.abs() * b.params.rated_power);
        }
    }
    Ok(1e3 / scale.max(1e-9).powi(2))
}

impl DispatchProblem {
    /// Builds a problem, deriving the default penalty when none is given.
    pub fn new(buildings: Vec<BuildingSnapshot>, delta_p: f64, penalty: Option<f64>, dt: f64, seed: u64) -> Result<Self> {
        let penalty = match penalty {
            Some(m) => m,
            None => default_penalty(&buildings, dt)?,
        };
        let problem = DispatchProblem { buildings, delta_p, penalty, dt, seed };
        problem.validate()?;
        Ok(problem)
    }

    pub fn validate(&self) -> Result<()> {
        if self.buildings.is_empty() {
            return Err(Error::Config("dispatch needs at least one building".into()));
        }
        if !(self.penalty > 0.0 && self.penalty.is_finite()) {
            return Err(Error::Config(format!("penalty must be positive, got {}", self.penalty)));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !self.delta_p.is_finite() {
            return Err(Error::Config("delta_p must be finite".into()));
        }
        for b in &self.buildings {
            b.params.validate()?;
            admissible_control_interval(&b.params, &b.rates, b.set_point, self.dt)?;
        }
        Ok(())
    }
}

/// Per-building closed forms used by every solver.
#[derive(Debug, Clone)]
struct BuildingModel {
    /// `delta_r(u) = ramp0 - ramp_slope * u`.
    ramp0: f64,
    ramp_slope: f64,
    /// Next-tick boundary mass `s(u) = mass0 + mass_slope * u`.
    mass0: f64,
    mass_slope: f64,
    population: f64,
    /// Set-point slacks in control units and the rate caps of `m1`, `m2`.
    slack_down: f64,
    slack_up: f64,
    alpha: f64,
    beta: f64,
    feasible: ControlInterval,
}

impl BuildingModel {
    fn new(b: &BuildingSnapshot, dt: f64) -> Result<Self> {
        let iv = admissible_control_interval(&b.params, &b.rates, b.set_point, dt)?;
        let admissible = ControlInterval { lo: iv.lo.max(-b.rates.beta + b.margin), hi: iv.hi.min(b.rates.alpha - b.margin) };
        let x = &b.state;
        // everything the ISO sees is in kW
        let nc = b.params.population * b.params.rated_power;
        let ramp0 = nc * (b.rates.alpha * x.x_n() - b.rates.beta * x.x_2n());
        let ramp_slope = nc * x.boundary_mass();
        let mass_at = |u: f64| {
            let (dn, d2n) = boundary_drift(x.as_slice(), u, &b.rates);
            x.boundary_mass() + dt * (dn + d2n)
        };
        let mass0 = mass_at(0.0);
        let mass_slope = mass_at(1.0) - mass0;
        let scale = dt * b.params.bin_width;
        // allowable regulation range: output after one tick stays within R_b +- R_r
        let feasible = if ramp_slope > 0.0 {
            let ramp_lo = (b.baseline - b.capacity - b.output) / dt;
            let ramp_hi = (b.baseline + b.capacity - b.output) / dt;
            let band = ControlInterval { lo: (ramp0 - ramp_hi) / ramp_slope, hi: (ramp0 - ramp_lo) / ramp_slope };
            admissible.intersect(&band).unwrap_or_else(|| {
                let u = if band.hi < admissible.lo { admissible.lo } else { admissible.hi };
                ControlInterval { lo: u, hi: u }
            })
        } else {
            admissible
        };
        Ok(BuildingModel {
            ramp0,
            ramp_slope,
            mass0,
            mass_slope,
            population: nc,
            slack_down: (b.set_point - b.params.set_point_min()) / scale,
            slack_up: (b.params.set_point_max() - b.set_point) / scale,
            alpha: b.rates.alpha,
            beta: b.rates.beta,
            feasible,
        })
    }

    fn delta_r(&self, u: f64) -> f64 {
        self.ramp0 - self.ramp_slope * u
    }

    fn m_terms(&self, u: f64) -> (f64, f64) {
        ((self.slack_down + u).min(self.beta), (self.slack_up - u).min(self.alpha))
    }

    fn width(&self, u: f64) -> f64 {
        let (m1, m2) = self.m_terms(u);
        self.population * (self.mass0 + self.mass_slope * u) * (m1 + m2)
    }

    /// Controls where `m1` or `m2` switch between their two branches.
    fn kinks(&self) -> [f64; 2] {
        [self.beta - self.slack_down, self.slack_up - self.alpha]
    }

    fn allocation(&self, u: f64) -> Allocation {
        let (m1, m2) = self.m_terms(u);
        Allocation { u, delta_r: self.delta_r(u), width: self.width(u), m1, m2 }
    }
}

/// Next-tick capability width of a building under control `u`.
pub fn capability_width(snapshot: &BuildingSnapshot, u: f64, dt: f64) -> Result<f64> {
    Ok(BuildingModel::new(snapshot, dt)?.width(u))
}

/// The feasible control box of a building: Markov rates, set-point range and
/// the sold regulation band, intersected.
pub fn feasible_controls(snapshot: &BuildingSnapshot, dt: f64) -> Result<ControlInterval> {
    Ok(BuildingModel::new(snapshot, dt)?.feasible)
}

struct Objective {
    models: Vec<BuildingModel>,
    delta_p: f64,
    penalty: f64,
}

impl Objective {
    fn new(problem: &DispatchProblem) -> Result<Self> {
        problem.validate()?;
        let models = problem
            .buildings
            .iter()
            .map(|b| BuildingModel::new(b, problem.dt))
            .collect::<Result<Vec<_>>>()?;
        Ok(Objective { models, delta_p: problem.delta_p, penalty: problem.penalty })
    }

    fn p_spin(&self, u: &[f64]) -> f64 {
        self.delta_p - self.models.iter().zip(u).map(|(m, &ui)| m.delta_r(ui)).sum::<f64>()
    }

    fn value(&self, u: &[f64]) -> f64 {
        let width: f64 = self.models.iter().zip(u).map(|(m, &ui)| m.width(ui)).sum();
        width - self.penalty * self.p_spin(u).powi(2)
    }

    fn solution(&self, u: &[f64], method: DispatchMethod) -> DispatchSolution {
        DispatchSolution {
            allocations: self.models.iter().zip(u).map(|(m, &ui)| m.allocation(ui)).collect(),
            p_spin: self.p_spin(u),
            objective: self.value(u),
            method,
        }
    }

    fn clamp_into_box(&self, u: &mut [f64]) {
        for (ui, m) in u.iter_mut().zip(&self.models) {
            *ui = m.feasible.clamp(*ui);
        }
    }

    /// Exact maximization of the objective along `u + t d` inside the box.
    fn line_max(&self, u: &[f64], d: &[f64]) -> Option<(f64, f64)> {
        let (mut t_lo, mut t_hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for ((m, &ui), &di) in self.models.iter().zip(u).zip(d) {
            if di == 0.0 {
                continue;
            }
            let a = (m.feasible.lo - ui) / di;
            let b = (m.feasible.hi - ui) / di;
            t_lo = t_lo.max(a.min(b));
            t_hi = t_hi.min(a.max(b));
        }
        if !(t_lo.is_finite() && t_hi.is_finite()) || t_hi - t_lo <= 0.0 {
            return None;
        }
        let t_lo = t_lo.min(0.0);
        let t_hi = t_hi.max(0.0);
        let mut cuts = vec![t_lo, t_hi];
        for ((m, &ui), &di) in self.models.iter().zip(u).zip(d) {
            if di == 0.0 {
                continue;
            }
            for k in m.kinks() {
                let t = (k - ui) / di;
                if t > t_lo && t < t_hi {
                    cuts.push(t);
                }
            }
        }
        cuts.sort_by(|a, b| a.total_cmp(b));
        cuts.dedup();

        let eval = |t: f64| {
            let (mut width, mut ramp) = (0.0, 0.0);
            for ((&ui, &di), m) in u.iter().zip(d).zip(&self.models) {
                let v = m.feasible.clamp(ui + t * di);
                width += m.width(v);
                ramp += m.delta_r(v);
            }
            width - self.penalty * (self.delta_p - ramp).powi(2)
        };
        let mut best = (0.0, eval(0.0));
        let mut consider = |t: f64, v: f64| {
            if v > best.1 {
                best = (t, v);
            }
        };
        for w in cuts.windows(2) {
            let (t0, t1) = (w[0], w[1]);
            let (f0, f1) = (eval(t0), eval(t1));
            consider(t0, f0);
            consider(t1, f1);
            // each piece is a quadratic in t: fit it and visit an interior vertex
            let tm = 0.5 * (t0 + t1);
            let fm = eval(tm);
            let h = 0.5 * (t1 - t0);
            let curvature = (f0 - 2.0 * fm + f1) / (h * h);
            if curvature < 0.0 {
                let slope = (f1 - f0) / (2.0 * h);
                let tv = tm - slope / curvature;
                if tv > t0 && tv < t1 {
                    consider(tv, eval(tv));
                }
            }
        }
        Some(best)
    }

    fn directions(&self) -> Vec<Vec<f64>> {
        let m = self.models.len();
        let mut dirs = Vec::new();
        for i in 0..m {
            let mut d = vec![0.0; m];
            d[i] = 1.0;
            dirs.push(d);
        }
        // exchange moves keep the total dispatched ramp, and so p_spin, fixed
        for i in 0..m {
            for j in i + 1..m {
                let (bi, bj) = (self.models[i].ramp_slope, self.models[j].ramp_slope);
                if bi > 0.0 && bj > 0.0 {
                    let mut d = vec![0.0; m];
                    d[i] = 1.0 / bi;
                    d[j] = -1.0 / bj;
                    let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
                    d.iter_mut().for_each(|v| *v /= norm);
                    dirs.push(d);
                }
            }
        }
        dirs
    }

    fn ascend(&self, mut u: Vec<f64>, dirs: &[Vec<f64>]) -> Result<(Vec<f64>, f64)> {
        self.clamp_into_box(&mut u);
        let mut current = self.value(&u);
        for _ in 0..MAX_SWEEPS {
            let start = current;
            for d in dirs {
                if let Some((t, v)) = self.line_max(&u, d) {
                    if v > current && t != 0.0 {
                        for ((ui, di), m) in u.iter_mut().zip(d).zip(&self.models) {
                            *ui = m.feasible.clamp(*ui + t * di);
                        }
                        current = self.value(&u);
                    }
                }
            }
            if !current.is_finite() {
                return Err(Error::Solver(format!("objective became {current} at iterate {u:?}")));
            }
            if current - start < CONVERGENCE_TOL {
                return Ok((u, current));
            }
        }
        Err(Error::Solver(format!("coordinate ascent did not converge; last iterate {u:?}, objective {current}")))
    }
}

/// Prefers a higher objective; near-ties go to the smaller `sum u^2`.
fn better(candidate: (f64, &[f64]), incumbent: (f64, &[f64])) -> bool {
    let tie = 1e-9 * (1.0 + incumbent.0.abs());
    if candidate.0 > incumbent.0 + tie {
        return true;
    }
    if candidate.0 < incumbent.0 - tie {
        return false;
    }
    let norm = |u: &[f64]| u.iter().map(|v| v * v).sum::<f64>();
    norm(candidate.1) < norm(incumbent.1) - 1e-15
}

/// Multi-start ascent over the per-building controls.
pub fn solve(problem: &DispatchProblem) -> Result<DispatchSolution> {
    let obj = Objective::new(problem)?;
    let m = obj.models.len();
    let dirs = obj.directions();

    let mut starts = vec![vec![0.0; m]];
    starts.push(proportional_controls(&obj, problem));
    let mut rng = ChaCha8Rng::seed_from_u64(problem.seed);
    for _ in 0..RANDOM_STARTS {
        starts.push(
            obj.models
                .iter()
                .map(|b| if b.feasible.width() > 0.0 { rng.random_range(b.feasible.lo..=b.feasible.hi) } else { b.feasible.lo })
                .collect(),
        );
    }

    let mut best: Option<(Vec<f64>, f64)> = None;
    for start in starts {
        let (u, v) = obj.ascend(start, &dirs)?;
        best = match best {
            Some((bu, bv)) if !better((v, &u), (bv, &bu)) => Some((bu, bv)),
            _ => Some((u, v)),
        };
    }
    let (u, _) = best.expect("at least one start");
    Ok(obj.solution(&u, DispatchMethod::Optimized))
}

/// Exhaustive grid search over the control boxes; a validation oracle for [`solve`].
pub fn solve_oracle(problem: &DispatchProblem, grid_points: usize) -> Result<DispatchSolution> {
    let obj = Objective::new(problem)?;
    let m = obj.models.len();
    if m > ORACLE_MAX_BUILDINGS {
        return Err(Error::Solver(format!("grid oracle refuses {m} buildings (at most {ORACLE_MAX_BUILDINGS})")));
    }
    if grid_points < 2 {
        return Err(Error::Solver("grid oracle needs at least 2 points per dimension".into()));
    }
    struct Axis {
        u: Vec<f64>,
        width: Vec<f64>,
        ramp: Vec<f64>,
    }
    let axes: Vec<Axis> = obj
        .models
        .iter()
        .map(|b| {
            let u: Vec<f64> = (0..grid_points)
                .map(|k| b.feasible.lo + b.feasible.width() * k as f64 / (grid_points - 1) as f64)
                .collect();
            Axis { width: u.iter().map(|&v| b.width(v)).collect(), ramp: u.iter().map(|&v| b.delta_r(v)).collect(), u }
        })
        .collect();

    let mut idx = vec![0usize; m];
    let mut best_idx = idx.clone();
    let mut best = f64::NEG_INFINITY;
    let mut best_norm = f64::INFINITY;
    loop {
        let (mut width, mut ramp, mut norm) = (0.0, 0.0, 0.0);
        for (axis, &k) in axes.iter().zip(&idx) {
            width += axis.width[k];
            ramp += axis.ramp[k];
            norm += axis.u[k] * axis.u[k];
        }
        let value = width - obj.penalty * (obj.delta_p - ramp).powi(2);
        let tie = 1e-9 * (1.0 + best.abs());
        if value > best + tie || (value >= best - tie && norm < best_norm) {
            best = value;
            best_norm = norm;
            best_idx.clone_from(&idx);
        }
        // odometer increment
        let mut pos = 0;
        loop {
            if pos == m {
                let u: Vec<f64> = axes.iter().zip(&best_idx).map(|(a, &k)| a.u[k]).collect();
                return Ok(obj.solution(&u, DispatchMethod::Oracle));
            }
            idx[pos] += 1;
            if idx[pos] < grid_points {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

fn proportional_controls(obj: &Objective, problem: &DispatchProblem) -> Vec<f64> {
    let total: f64 = problem.buildings.iter().map(|b| b.capacity).sum();
    obj.models
        .iter()
        .zip(&problem.buildings)
        .map(|(m, b)| {
            let share = if total > 0.0 { problem.delta_p * b.capacity / total } else { 0.0 };
            if m.ramp_slope > 0.0 {
                m.feasible.clamp((m.ramp0 - share) / m.ramp_slope)
            } else {
                m.feasible.clamp(0.0)
            }
        })
        .collect()
}

/// Splits `delta_p` in proportion to sold capacity, clipped to what each
/// building can do this tick; the remainder goes to spinning reserve.
pub fn proportional_dispatch(problem: &DispatchProblem) -> Result<DispatchSolution> {
    let total: f64 = problem.buildings.iter().map(|b| b.capacity).sum();
    if !(total > 0.0) {
        return Err(Error::Config("proportional dispatch needs positive total capacity".into()));
    }
    let obj = Objective::new(problem)?;
    let u = proportional_controls(&obj, problem);
    Ok(obj.solution(&u, DispatchMethod::Proportional))
}

/// Objective of an arbitrary control vector (for comparisons and tests).
pub fn evaluate(problem: &DispatchProblem, controls: &[f64]) -> Result<f64> {
    let obj = Objective::new(problem)?;
    if controls.len() != obj.models.len() {
        return Err(Error::Solver(format!("expected {} controls, got {}", obj.models.len(), controls.len())));
    }
    Ok(obj.value(controls))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capability::provision_thresholds;
    use crate::fleet::{build_matrices, derive_rates, output, steady_state};
    use approx::assert_abs_diff_eq;

    const DT: f64 = 1.0 / 15.0;

    fn snapshot(id: &str, t_on: f64, t_off: f64, nc: f64, set_band: f64, x: Option<StateVector>) -> BuildingSnapshot {
        let params = BuildingParams::with_derived_gain(10, 0.5, set_band, 22.0, t_on, t_off, nc, 60.0).unwrap();
        let rates = derive_rates(&params).unwrap();
        let state = x.unwrap_or_else(|| steady_state(&rates, 10));
        let mats = build_matrices(&params, &rates);
        BuildingSnapshot {
            id: id.into(),
            output: output(&state, &mats),
            baseline: params.baseline(),
            capacity: 0.2 * nc,
            set_point: 22.0,
            margin: 0.0,
            params,
            rates,
            state,
        }
    }

    fn skewed(n: usize, tilt: f64) -> StateVector {
        let v: Vec<f64> = (0..2 * n).map(|i| 1.0 + tilt * ((i * 7 % 5) as f64 - 2.0)).collect();
        let s: f64 = v.iter().sum();
        StateVector::new(v.iter().map(|a| a / s).collect()).unwrap()
    }

    #[test]
    fn width_with_inactive_mins() {
        let b = snapshot("a", 10.0, 10.0, 1000.0, 200.0, Some(skewed(10, 0.3)));
        let w = capability_width(&b, 0.0, DT).unwrap();
        let (dn, d2n) = boundary_drift(b.state.as_slice(), 0.0, &b.rates);
        let mass = b.state.boundary_mass() + DT * (dn + d2n);
        assert_abs_diff_eq!(w, 1000.0 * mass * (b.rates.alpha + b.rates.beta), epsilon = 1e-9);
    }

    #[test]
    fn width_vanishes_on_upper_side_at_set_point_max() {
        let b = snapshot("a", 10.0, 10.0, 1000.0, 2.0, None);
        let model = BuildingModel::new(&b, DT).unwrap();
        // the control that lands the set point exactly on its upper limit
        let u = model.slack_up;
        let (_, m2) = model.m_terms(u);
        assert_abs_diff_eq!(m2, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn width_equals_next_tick_threshold_span() {
        let b = snapshot("a", 8.0, 13.0, 700.0, 1.0, Some(skewed(10, 0.4)));
        let rates = b.rates;
        let mats = build_matrices(&b.params, &rates);
        for u in [-0.5, -0.1, 0.0, 0.3, 0.7] {
            let w = capability_width(&b, u, DT).unwrap();
            let next = crate::fleet::step(&b.state, u, DT, &mats, &rates).unwrap().state;
            let t_next = b.set_point + u * DT * b.params.bin_width;
            let (lo, hi) = provision_thresholds(&next, t_next, &b.params, &rates, DT).unwrap();
            assert!((w - (hi - lo)).abs() < 1e-9 * w.abs().max(1.0), "u={u}: {w} vs {}", hi - lo);
        }
    }

    #[test]
    fn symmetric_zero_demand_stays_put() {
        let a = snapshot("a", 10.0, 10.0, 1000.0, 2.0, None);
        let b = snapshot("b", 10.0, 10.0, 1000.0, 2.0, None);
        let p = DispatchProblem::new(vec![a, b], 0.0, None, DT, 1).unwrap();
        let s = solve(&p).unwrap();
        assert_abs_diff_eq!(s.p_spin, 0.0, epsilon = 1e-9);
        for al in &s.allocations {
            assert_abs_diff_eq!(al.u, 0.0, epsilon = 1e-6);
            assert_abs_diff_eq!(al.delta_r, 0.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn single_building_absorbs_feasible_demand() {
        let a = snapshot("a", 10.0, 10.0, 1000.0, 2.0, None);
        let (dr_min, dr_max) = provision_thresholds(&a.state, a.set_point, &a.params, &a.rates, DT).unwrap();
        let dp = 0.3 * dr_max;
        assert!(dp > dr_min);
        let p = DispatchProblem::new(vec![a], dp, None, DT, 1).unwrap();
        let s = solve(&p).unwrap();
        assert_abs_diff_eq!(s.p_spin, 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(s.allocations[0].delta_r, dp, epsilon = 1e-6);
    }

    #[test]
    fn m_terms_are_tight_at_optimum() {
        let a = snapshot("a", 6.0, 14.0, 900.0, 0.4, Some(skewed(10, 0.2)));
        let b = snapshot("b", 12.0, 9.0, 600.0, 1.5, None);
        let p = DispatchProblem::new(vec![a, b], 25.0, None, DT, 4).unwrap();
        let s = solve(&p).unwrap();
        let obj = Objective::new(&p).unwrap();
        for (al, m) in s.allocations.iter().zip(&obj.models) {
            let t1 = m.slack_down + al.u;
            let t2 = m.slack_up - al.u;
            assert!(al.m1 <= m.beta + 1e-12 && al.m1 <= t1 + 1e-12);
            assert!(al.m2 <= m.alpha + 1e-12 && al.m2 <= t2 + 1e-12);
            assert!((al.m1 - m.beta).abs() < 1e-6 || (al.m1 - t1).abs() < 1e-6);
            assert!((al.m2 - m.alpha).abs() < 1e-6 || (al.m2 - t2).abs() < 1e-6);
        }
    }

    #[test]
    fn balance_holds_for_every_method() {
        let a = snapshot("a", 6.0, 14.0, 900.0, 0.4, Some(skewed(10, 0.2)));
        let b = snapshot("b", 12.0, 9.0, 600.0, 1.5, None);
        let p = DispatchProblem::new(vec![a, b], 140.0, None, DT, 4).unwrap();
        for s in [solve(&p).unwrap(), proportional_dispatch(&p).unwrap(), solve_oracle(&p, 201).unwrap()] {
            let total: f64 = s.allocations.iter().map(|a| a.delta_r).sum();
            assert!((total + s.p_spin - p.delta_p).abs() < 1e-9);
        }
    }

    #[test]
    fn oracle_refuses_large_problems() {
        let bs: Vec<_> = (0..4).map(|i| snapshot(&i.to_string(), 10.0, 10.0, 100.0, 2.0, None)).collect();
        let p = DispatchProblem::new(bs, 0.0, None, DT, 0).unwrap();
        assert!(matches!(solve_oracle(&p, 200), Err(Error::Solver(_))));
        assert!(solve(&p).is_ok());
    }

    #[test]
    fn oracle_grid_refinement_is_stable() {
        let a = snapshot("a", 7.0, 11.0, 800.0, 0.8, Some(skewed(10, 0.3)));
        let p = DispatchProblem::new(vec![a], 17.0, None, DT, 0).unwrap();
        let coarse = solve_oracle(&p, 2000).unwrap();
        let fine = solve_oracle(&p, 4000).unwrap();
        assert!((coarse.objective - fine.objective).abs() < 1e-4 * fine.objective.abs().max(1.0));
    }

    #[test]
    fn oracle_is_swap_symmetric() {
        let a = snapshot("a", 10.0, 10.0, 1000.0, 2.0, None);
        let b = snapshot("b", 10.0, 10.0, 1000.0, 2.0, None);
        let p = DispatchProblem::new(vec![a, b], 60.0, None, DT, 0).unwrap();
        let s = solve_oracle(&p, 201).unwrap();
        let mut swapped = p.clone();
        swapped.buildings.reverse();
        let t = solve_oracle(&swapped, 201).unwrap();
        assert_abs_diff_eq!(s.objective, t.objective, epsilon = 1e-9);
        let mut us: Vec<f64> = s.allocations.iter().map(|a| a.u).collect();
        let mut ut: Vec<f64> = t.allocations.iter().map(|a| a.u).collect();
        us.sort_by(f64::total_cmp);
        ut.sort_by(f64::total_cmp);
        assert_eq!(us, ut);
    }

    #[test]
    fn proportional_split_and_clamp() {
        let a = snapshot("a", 10.0, 10.0, 1000.0, 2.0, None);
        let b = snapshot("b", 10.0, 10.0, 1000.0, 2.0, None);
        let p = DispatchProblem::new(vec![a.clone(), b.clone()], 60.0, None, DT, 0).unwrap();
        let s = proportional_dispatch(&p).unwrap();
        assert_abs_diff_eq!(s.allocations[0].delta_r, 30.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.allocations[1].delta_r, 30.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.p_spin, 0.0, epsilon = 1e-9);

        let zero = DispatchProblem::new(vec![a.clone(), b.clone()], 0.0, None, DT, 0).unwrap();
        let s = proportional_dispatch(&zero).unwrap();
        assert!(s.allocations.iter().all(|al| al.delta_r.abs() < 1e-9));

        // far beyond the first building's ceiling: its excess becomes spinning reserve
        let (_, dr_max) = provision_thresholds(&a.state, a.set_point, &a.params, &a.rates, DT).unwrap();
        let big = DispatchProblem::new(vec![a, b], 4.0 * dr_max, None, DT, 0).unwrap();
        let s = proportional_dispatch(&big).unwrap();
        assert_abs_diff_eq!(s.allocations[0].delta_r, dr_max, epsilon = 1e-9);
        assert_abs_diff_eq!(s.p_spin, 2.0 * dr_max, epsilon = 1e-6);
    }

    #[test]
    fn optimized_dominates_proportional() {
        let a = snapshot("a", 4.0, 6.0, 1000.0, 1.0, Some(skewed(10, 0.3)));
        let b = snapshot("b", 20.0, 25.0, 1000.0, 1.0, None);
        for dp in [-150.0, -40.0, 0.0, 35.0, 120.0, 300.0] {
            let p = DispatchProblem::new(vec![a.clone(), b.clone()], dp, None, DT, 9).unwrap();
            let opt = solve(&p).unwrap();
            let prop = proportional_dispatch(&p).unwrap();
            assert!(opt.objective >= prop.objective - 1e-9, "dp={dp}: {} < {}", opt.objective, prop.objective);
        }
    }
}
