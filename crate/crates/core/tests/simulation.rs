use proptest::prelude::*;

use thermoflex::dispatch::{proportional_dispatch, solve, DispatchProblem};
use thermoflex::fleet::{build_matrices, derive_rates, BuildingParams, StateVector};
use thermoflex::observer::{Observer, ObserverState};
use thermoflex::sim::{
    run_simulation, run_t50, BuildingConfig, BuildingRuntime, DispatchMode, InitialState, Scenario, SignalSpec,
};
use thermoflex::tracking::ControllerConfig;

const DT: f64 = 1.0 / 15.0;

fn params(set_band: f64, t_on: f64, t_off: f64, nc: f64) -> BuildingParams {
    BuildingParams::with_derived_gain(10, 0.5, set_band, 22.0, t_on, t_off, nc, 60.0).unwrap()
}

fn building(id: &str, p: BuildingParams) -> BuildingConfig {
    BuildingConfig {
        id: id.into(),
        params: p,
        controller: ControllerConfig::default(),
        observer: Default::default(),
        capacity: None,
        initial_state: InitialState::Steady,
    }
}

fn scenario(buildings: Vec<BuildingConfig>, minutes: f64, volatility: f64, seed: u64) -> Scenario {
    Scenario {
        dt_s: 4.0,
        duration_min: minutes,
        dispatch_mode: DispatchMode::Optimized,
        penalty: None,
        seed,
        signal: SignalSpec::Synthetic { volatility },
        disturbance: None,
        buildings,
        base_dir: None,
    }
}

#[test]
fn every_tick_balances_and_accumulates() {
    let s = scenario(
        vec![building("a", params(2.0, 10.0, 20.0, 1000.0)), building("b", params(4.0, 6.0, 9.0, 1500.0))],
        60.0,
        20.0,
        5,
    );
    let (trace, _) = run_simulation(&s).unwrap();
    assert_eq!(trace.iso.len(), s.ticks());
    for iso in &trace.iso {
        let dispatched: f64 = trace.rows.iter().filter(|r| r.tick == iso.tick).map(|r| r.delta_r).sum();
        let scale = 1.0 + iso.delta_p.abs();
        assert!((dispatched + iso.p_spin - iso.delta_p).abs() <= 1e-9 * scale, "tick {}", iso.tick);
    }
    for id in ["a", "b"] {
        let mut s_prev = 0.0;
        for r in trace.rows.iter().filter(|r| r.building == id) {
            assert!((r.s_accum - (s_prev + r.delta_r * trace.dt_min)).abs() <= 1e-9 * (1.0 + r.s_accum.abs()));
            s_prev = r.s_accum;
        }
    }
}

#[test]
fn quiet_signal_leaves_steady_fleet_alone() {
    let s = scenario(vec![building("a", params(2.0, 10.0, 20.0, 1000.0))], 20.0, 0.0, 1);
    let (trace, stats) = run_simulation(&s).unwrap();
    for r in &trace.rows {
        assert!(r.u.abs() < 1e-9, "tick {} u {}", r.tick, r.u);
        assert!(r.s_accum.abs() < 1e-6);
        assert!((r.t_set - 22.0).abs() < 1e-9);
    }
    assert!(stats.max.abs() < 1e-6 && stats.min.abs() < 1e-6);
}

#[test]
fn identical_pair_tracks_benign_signal_without_reserve() {
    let mut s = scenario(
        vec![building("a", params(4.0, 10.0, 20.0, 1000.0)), building("b", params(4.0, 10.0, 20.0, 1000.0))],
        30.0,
        2.0,
        9,
    );
    s.penalty = Some(1e6);
    let (trace, _) = run_simulation(&s).unwrap();
    let worst = trace.iso.iter().map(|r| r.p_spin.abs()).fold(0.0, f64::max);
    let peak = trace.iso.iter().map(|r| r.delta_p.abs()).fold(0.0, f64::max);
    assert!(worst <= 1e-3 * peak.max(1.0), "p_spin {worst} against ramps up to {peak}");
}

#[test]
fn t50_zero_capacity_passes() {
    let s = scenario(vec![building("a", params(2.0, 10.0, 20.0, 1000.0))], 50.0, 0.0, 0);
    let out = run_t50(&s, 0.0).unwrap();
    assert!(out[0].passed, "{:?}", out[0]);
}

#[test]
fn t50_below_limit_passes_and_pinned_set_point_fails() {
    let s = scenario(vec![building("a", params(2.0, 10.0, 20.0, 1000.0))], 50.0, 0.0, 0);
    let out = run_t50(&s, 20.0).unwrap();
    assert!(out[0].passed, "{:?}", out[0]);

    // with almost no set-point room the fleet cannot hold a plateau
    let s = scenario(vec![building("a", params(1e-4, 10.0, 20.0, 1000.0))], 50.0, 0.0, 0);
    let out = run_t50(&s, 20.0).unwrap();
    assert!(!out[0].passed);
    assert!(!out[0].sustained_response_ok);
}

fn snapshot_pool() -> Vec<thermoflex::dispatch::BuildingSnapshot> {
    [(2.0, 10.0, 20.0, 1000.0), (4.0, 6.0, 9.0, 1500.0), (3.0, 25.0, 15.0, 500.0)]
        .iter()
        .enumerate()
        .map(|(i, &(sb, on, off, nc))| BuildingRuntime::new(&building(&format!("b{i}"), params(sb, on, off, nc))).unwrap().snapshot())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn dispatch_always_balances(delta_p in -2000.0f64..2000.0, m in 1usize..=3, seed in any::<u64>()) {
        let pool = snapshot_pool();
        let problem = DispatchProblem::new(pool[..m].to_vec(), delta_p, None, DT, seed).unwrap();
        for sol in [solve(&problem).unwrap(), proportional_dispatch(&problem).unwrap()] {
            let total: f64 = sol.allocations.iter().map(|a| a.delta_r).sum::<f64>() + sol.p_spin;
            prop_assert!((total - delta_p).abs() <= 1e-9 * (1.0 + delta_p.abs()));
            for (a, b) in sol.allocations.iter().zip(&problem.buildings) {
                prop_assert!(a.u >= -b.rates.beta - 1e-12 && a.u <= b.rates.alpha + 1e-12);
            }
        }
    }

    #[test]
    fn observer_estimate_stays_on_simplex(
        weights in proptest::collection::vec(0.0f64..1.0, 20),
        controls in proptest::collection::vec(-1.0f64..1.0, 30),
        y in 0.0f64..1000.0,
    ) {
        let p = params(2.0, 10.0, 20.0, 1000.0);
        let r = derive_rates(&p).unwrap();
        let m = build_matrices(&p, &r);
        let total: f64 = weights.iter().sum::<f64>() + 1e-12;
        let x0 = StateVector::projected(weights.iter().map(|w| w / total).collect());
        let margin = 0.05 * r.alpha.min(r.beta);
        let mut obs = Observer::new(ObserverState::new(x0, 0.5, margin, &r).unwrap());
        for c in controls {
            let u = if c >= 0.0 { c * (r.alpha - margin) } else { c * (r.beta - margin) };
            obs.step(u, y, &m, &r, DT).unwrap();
            let x = obs.estimate().as_slice();
            prop_assert!(x.iter().all(|v| *v >= 0.0));
            prop_assert!((x.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }
}
