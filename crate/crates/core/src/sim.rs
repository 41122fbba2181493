//! Scenario-driven closed-loop simulation: ISO dispatch over a fleet of
//! buildings, regulation signals, T-50 qualification runs, traces and statistics.

mod engine;
mod format;
mod plot;
mod scenario;
mod signal;
mod stats;
mod t50;
mod trace;

pub use engine::{run_simulation, BuildingRuntime, Simulation, TickReport};
pub use format::format_g9;
pub use plot::write_plot_data;
pub use scenario::{BuildingConfig, DispatchMode, InitialState, Scenario, SignalSpec};
pub use signal::{generate_synthetic, generate_t50, ingest_signal, RegulationSignal, T50Profile};
pub use stats::{summarize, summarize_series, StatsTable};
pub use t50::{evaluate_t50, qualify, run_t50, sweep_rr, QualificationRow, SweepPoint, T50Failure, T50Outcome};
pub use trace::{read_trace_p_spin, BuildingRow, IsoRow, ObserverRow, SimTrace, TRACE_HEADER};
pub use t50::T50_TOLERANCE;
