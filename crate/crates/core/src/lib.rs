//! Two-level regulation engine for fleets of thermostatically controlled loads.
//!
//! A building's appliance fleet is modelled as a continuous-time Markov jump
//! process over `2N` temperature/thermostat bins ([`fleet`]). Each building
//! tracks a regulation signal with a feedback-linearizing set-point
//! controller ([`tracking`]), reports its one-step ramp capability upward
//! ([`capability`]), and the ISO splits each tick's demand ramp between the
//! buildings and spinning reserve ([`dispatch`]). When bin occupancies are
//! not measured, an output-injection observer reconstructs them from the
//! aggregate consumption ([`observer`]). [`sim`] ties everything into a
//! deterministic, scenario-driven tick loop.

pub mod capability;
pub mod dispatch;
pub mod error;
pub mod fleet;
pub mod observer;
pub mod sim;
pub mod tracking;

pub use error::{Error, Result};
pub use fleet::{BuildingParams, ControlInterval, RateSet, StateVector, SystemMatrices};
