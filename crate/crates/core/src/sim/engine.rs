use log::{debug, info};

use super::scenario::{BuildingConfig, DispatchMode, InitialState, Scenario, SignalSpec};
use super::signal::{generate_synthetic, generate_t50, ingest_signal, RegulationSignal, T50Profile};
use super::stats::{summarize, StatsTable};
use super::trace::{BuildingRow, IsoRow, ObserverRow, SimTrace};
use crate::capability::provision_thresholds;
use crate::dispatch::{proportional_dispatch, solve, BuildingSnapshot, DispatchProblem};
use crate::error::{Error, Result};
use crate::fleet::{
    admissible_control_interval, build_matrices, derive_rates, step, steady_state, BuildingParams, ControlInterval,
    RateSet, StateVector, SystemMatrices,
};
use crate::observer::{Observer, ObserverState};
use crate::tracking::{ramp_outcome, ControlOutcome, ControllerConfig};

/// One building's live state inside a simulation.
#[derive(Debug, Clone)]
pub struct BuildingRuntime {
    pub id: String,
    pub params: BuildingParams,
    pub rates: RateSet,
    pub mats: SystemMatrices,
    pub controller: ControllerConfig,
    pub observer: Option<Observer>,
    pub control_from_estimate: bool,
    pub state: StateVector,
    pub set_point: f64,
    /// Sold capacity `R_r` in kW.
    pub capacity: f64,
    /// Accumulated dispatched regulation (kW min).
    pub s_accum: f64,
    /// Smallest entry of the last Euler update before projection.
    pub last_min_pre_clamp: f64,
}

impl BuildingRuntime {
    pub fn new(cfg: &BuildingConfig) -> Result<Self> {
        let params = cfg.params.clone();
        let rates = derive_rates(&params)?;
        let mats = build_matrices(&params, &rates);
        let n = params.n_bins;
        let state = match &cfg.initial_state {
            InitialState::Steady => steady_state(&rates, n),
            InitialState::Uniform => StateVector::uniform(n),
            InitialState::Explicit(v) => StateVector::new(v.clone())?,
        };
        let observer = if cfg.observer.enabled {
            Some(Observer::new(ObserverState::from_config(&cfg.observer, n, &rates)?))
        } else {
            None
        };
        Ok(BuildingRuntime {
            id: cfg.id.clone(),
            set_point: params.set_point,
            capacity: cfg.capacity_kw()?,
            params,
            rates,
            mats,
            controller: cfg.controller,
            control_from_estimate: cfg.observer.control_from_estimate,
            observer,
            state,
            s_accum: 0.0,
            last_min_pre_clamp: 0.0,
        })
    }

    /// The state the building's controller acts on: the estimate when an observer drives it.
    pub fn control_state(&self) -> &StateVector {
        match &self.observer {
            Some(obs) if self.control_from_estimate => obs.estimate(),
            _ => &self.state,
        }
    }

    fn kw(&self) -> f64 {
        self.params.rated_power
    }

    pub fn baseline_kw(&self) -> f64 {
        self.params.baseline() * self.kw()
    }

    /// Measured consumption `C x` in kW.
    pub fn output_kw(&self) -> f64 {
        self.mats.output(self.state.as_slice()) * self.kw()
    }

    fn margin(&self) -> f64 {
        self.observer.as_ref().map_or(0.0, |o| o.state.margin)
    }

    /// Admissible controls, kept `margin` away from Markov saturation when an observer runs.
    pub fn control_interval(&self, dt: f64) -> Result<ControlInterval> {
        let iv = admissible_control_interval(&self.params, &self.rates, self.set_point, dt)?;
        let m = self.margin();
        Ok(ControlInterval { lo: iv.lo.max(-self.rates.beta + m), hi: iv.hi.min(self.rates.alpha - m) })
    }

    /// Published `(dr_min, dr_max)` in kW/min.
    pub fn thresholds_kw(&self, dt: f64) -> Result<(f64, f64)> {
        let (lo, hi) = provision_thresholds(self.control_state(), self.set_point, &self.params, &self.rates, dt)?;
        Ok((lo * self.kw(), hi * self.kw()))
    }

    pub fn snapshot(&self) -> BuildingSnapshot {
        BuildingSnapshot {
            id: self.id.clone(),
            params: self.params.clone(),
            rates: self.rates,
            state: self.control_state().clone(),
            set_point: self.set_point,
            baseline: self.baseline_kw(),
            capacity: self.capacity,
            output: self.output_kw(),
            margin: self.margin(),
        }
    }

    /// Control realizing a dispatched ramp (kW/min), clamped to the admissible interval.
    pub fn control_for(&self, delta_r_kw: f64, dt: f64) -> Result<ControlOutcome> {
        let iv = self.control_interval(dt)?;
        let mut out = ramp_outcome(self.control_state(), delta_r_kw / self.kw(), &self.mats, &self.controller, &iv);
        if out.singular {
            out.u = iv.clamp(0.0);
        }
        Ok(out)
    }

    /// Applies `u` for one tick: observer update on the current measurement, plant step, set-point shift.
    pub fn advance(&mut self, u: f64, dt: f64) -> Result<()> {
        let y = self.mats.output(self.state.as_slice());
        if let Some(obs) = self.observer.as_mut() {
            obs.step(u, y, &self.mats, &self.rates, dt)?;
        }
        let stepped = step(&self.state, u, dt, &self.mats, &self.rates)?;
        self.last_min_pre_clamp = stepped.min_pre_clamp;
        self.state = stepped.state;
        let next = self.set_point + u * dt * self.params.bin_width;
        self.set_point = next.clamp(self.params.set_point_min(), self.params.set_point_max());
        Ok(())
    }

    /// Euclidean estimation error, when an observer runs.
    pub fn estimation_error(&self) -> Option<f64> {
        self.observer.as_ref().map(|o| {
            o.estimate().as_slice().iter().zip(self.state.as_slice()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
        })
    }
}

/// Everything recorded for one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct TickReport {
    pub buildings: Vec<BuildingRow>,
    pub iso: IsoRow,
    pub observer: Vec<ObserverRow>,
}

/// Stepwise closed-loop engine; [`run_simulation`] drives it to completion.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub buildings: Vec<BuildingRuntime>,
    /// Demand on the fleet (signal plus disturbance) in kW, `ticks + 1` samples.
    pub demand: Vec<f64>,
    pub dt: f64,
    pub mode: DispatchMode,
    pub penalty: Option<f64>,
    pub seed: u64,
    tick: usize,
    ticks: usize,
}

fn load_signal(scenario: &Scenario, spec: &SignalSpec, r_r: f64, r_b: f64, seed: u64) -> Result<RegulationSignal> {
    let dt = scenario.dt_min();
    match spec {
        SignalSpec::File { path } => ingest_signal(&scenario.resolve(path), scenario.dt_s, r_r, r_b),
        SignalSpec::Synthetic { volatility } => {
            generate_synthetic(seed, r_r, scenario.duration_min, dt, *volatility).map(|s| RegulationSignal { r_b, ..s })
        }
        SignalSpec::T50 { profile } => {
            let profile = match profile {
                Some(k) => T50Profile::new(k.clone())?,
                None => T50Profile::default(),
            };
            generate_t50(r_r, &profile, dt).map(|s| RegulationSignal { r_b, ..s })
        }
    }
}

impl Simulation {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        scenario.validate()?;
        let buildings = scenario.buildings.iter().map(BuildingRuntime::new).collect::<Result<Vec<_>>>()?;
        let r_r: f64 = buildings.iter().map(|b| b.capacity).sum();
        let r_b: f64 = buildings.iter().map(|b| b.baseline_kw()).sum();
        let ticks = scenario.ticks();
        let signal = load_signal(scenario, &scenario.signal, r_r, r_b, scenario.seed)?;
        if signal.len() < ticks + 1 {
            return Err(Error::Config(format!(
                "signal covers {} ticks but the scenario needs {ticks}",
                signal.len().saturating_sub(1)
            )));
        }
        let mut demand: Vec<f64> = signal.values()[..=ticks].to_vec();
        if let Some(spec) = &scenario.disturbance {
            // the disturbance stream is decorrelated from the signal's
            let extra = load_signal(scenario, spec, r_r, 0.0, scenario.seed ^ 0x9E37_79B9_7F4A_7C15)?;
            if extra.len() < ticks + 1 {
                return Err(Error::Config("disturbance series is shorter than the scenario".into()));
            }
            demand.iter_mut().zip(extra.values()).for_each(|(d, e)| *d += e);
        }
        info!("simulation: {} buildings, {ticks} ticks, R_r = {r_r:.3} kW, R_b = {r_b:.3} kW", buildings.len());
        Ok(Simulation {
            buildings,
            demand,
            dt: scenario.dt_min(),
            mode: scenario.dispatch_mode,
            penalty: scenario.penalty,
            seed: scenario.seed,
            tick: 0,
            ticks,
        })
    }

    pub fn ticks(&self) -> usize {
        self.ticks
    }

    pub fn current_tick(&self) -> usize {
        self.tick
    }

    pub fn is_finished(&self) -> bool {
        self.tick >= self.ticks
    }

    /// Runs one ISO/building exchange.
    pub fn step_tick(&mut self) -> Result<TickReport> {
        let k = self.tick;
        let dt = self.dt;
        let t_min = k as f64 * dt;
        let wrap = |building: &str| {
            let building = building.to_string();
            move |e: Error| Error::Tick { tick: k, building, source: Box::new(e) }
        };

        // upward feedback: capability reports
        let mut reports = Vec::with_capacity(self.buildings.len());
        for b in &self.buildings {
            reports.push(b.thresholds_kw(dt).map_err(wrap(&b.id))?);
        }

        let delta_p = (self.demand[k + 1] - self.demand[k]) / dt;
        let seed = self.seed.wrapping_mul(0x2545_F491_4F6C_DD1D).wrapping_add(k as u64);
        let snapshots = self.buildings.iter().map(BuildingRuntime::snapshot).collect();
        let problem = DispatchProblem::new(snapshots, delta_p, self.penalty, dt, seed).map_err(wrap("ISO"))?;
        let solution = match self.mode {
            DispatchMode::Optimized => solve(&problem),
            DispatchMode::Proportional => proportional_dispatch(&problem),
        }
        .map_err(wrap("ISO"))?;
        debug!("tick {k}: delta_p {delta_p:.4}, p_spin {:.4}", solution.p_spin);

        let mut rows = Vec::with_capacity(self.buildings.len());
        let mut observer_rows = Vec::new();
        for ((b, alloc), (dr_min, dr_max)) in self.buildings.iter_mut().zip(&solution.allocations).zip(reports) {
            let cx = b.output_kw();
            let t_set = b.set_point;
            let outcome = b.control_for(alloc.delta_r, dt).map_err(wrap(&b.id))?;
            b.advance(outcome.u, dt).map_err(wrap(&b.id))?;
            b.s_accum += alloc.delta_r * dt;
            if let Some(error_norm) = b.estimation_error() {
                let est = b.observer.as_ref().expect("observer present").estimate();
                observer_rows.push(ObserverRow {
                    tick: k,
                    t_min: t_min + dt,
                    building: b.id.clone(),
                    error_norm,
                    x_n: b.state.x_n(),
                    x_n_est: est.x_n(),
                    x_2n: b.state.x_2n(),
                    x_2n_est: est.x_2n(),
                });
            }
            rows.push(BuildingRow {
                tick: k,
                t_min,
                building: b.id.clone(),
                cx,
                u: outcome.u,
                delta_r: alloc.delta_r,
                dr_min,
                dr_max,
                t_set,
                s_accum: b.s_accum,
                saturated: outcome.saturated,
                singular: outcome.singular,
            });
        }
        self.tick += 1;
        Ok(TickReport {
            buildings: rows,
            iso: IsoRow { tick: k, t_min, delta_p, p_spin: solution.p_spin, objective: solution.objective },
            observer: observer_rows,
        })
    }
}

/// Runs a scenario to completion.
pub fn run_simulation(scenario: &Scenario) -> Result<(SimTrace, StatsTable)> {
    let mut sim = Simulation::new(scenario)?;
    let mut trace = SimTrace {
        dt_min: sim.dt,
        demand: sim.demand.iter().enumerate().map(|(k, &d)| (k as f64 * sim.dt, d)).collect(),
        ..Default::default()
    };
    while !sim.is_finished() {
        let report = sim.step_tick()?;
        trace.rows.extend(report.buildings);
        trace.iso.push(report.iso);
        trace.observer.extend(report.observer);
    }
    let stats = summarize(&trace);
    Ok((trace, stats))
}
