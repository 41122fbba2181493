use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::capability::{qualification_limit, DEFAULT_RESPONSE_MINUTES};
use crate::error::{Error, Result};
use crate::fleet::{check_step_guard, derive_rates, BuildingParams};
use crate::observer::ObserverConfig;
use crate::tracking::ControllerConfig;

fn default_dt_s() -> f64 {
    4.0
}

/// A complete closed-loop experiment, loaded from a single JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// Tick length in seconds.
    #[serde(default = "default_dt_s")]
    pub dt_s: f64,
    pub duration_min: f64,
    #[serde(default)]
    pub dispatch_mode: DispatchMode,
    /// Spinning-reserve penalty `M`; derived from the fleet when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub penalty: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    pub signal: SignalSpec,
    /// Extra demand on top of the regulation signal that the fleet is asked to absorb.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disturbance: Option<SignalSpec>,
    pub buildings: Vec<BuildingConfig>,
    /// Directory that relative signal paths are resolved against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DispatchMode {
    #[default]
    Optimized,
    Proportional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SignalSpec {
    /// Two-column CSV `t_s,reg_kw`.
    File { path: PathBuf },
    /// Reflected random walk; `volatility` is the increment standard deviation per minute (kW).
    Synthetic { volatility: f64 },
    /// T-50 waveform; knots are `(minute, fraction of R_r)`.
    T50 {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        profile: Option<Vec<(f64, f64)>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildingConfig {
    pub id: String,
    pub params: BuildingParams,
    #[serde(default)]
    pub controller: ControllerConfig,
    #[serde(default)]
    pub observer: ObserverConfig,
    /// Sold regulation capacity in kW; defaults to the 5-minute qualification limit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity: Option<f64>,
    #[serde(default)]
    pub initial_state: InitialState,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialState {
    #[default]
    Steady,
    Uniform,
    Explicit(Vec<f64>),
}

impl BuildingConfig {
    pub fn capacity_kw(&self) -> Result<f64> {
        match self.capacity {
            Some(c) if c >= 0.0 && c.is_finite() => Ok(c),
            Some(c) => Err(Error::Config(format!("building {}: capacity must be >= 0, got {c}", self.id))),
            None => Ok(qualification_limit(&self.params, DEFAULT_RESPONSE_MINUTES)? * self.params.rated_power),
        }
    }
}

impl Scenario {
    /// Parses and validates a scenario file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut scenario = Scenario::from_json(&text)?;
        scenario.base_dir = path.parent().map(Path::to_path_buf);
        Ok(scenario)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let scenario: Scenario = serde_json::from_str(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn dt_min(&self) -> f64 {
        self.dt_s / 60.0
    }

    pub fn ticks(&self) -> usize {
        (self.duration_min / self.dt_min()).round() as usize
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        match &self.base_dir {
            Some(dir) if path.is_relative() => dir.join(path),
            _ => path.to_path_buf(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt_s > 0.0 && self.dt_s.is_finite()) {
            return Err(Error::Config(format!("dt_s must be positive, got {}", self.dt_s)));
        }
        if !(self.duration_min > 0.0 && self.duration_min.is_finite()) {
            return Err(Error::Config(format!("duration_min must be positive, got {}", self.duration_min)));
        }
        if self.ticks() == 0 {
            return Err(Error::Config("duration shorter than one tick".into()));
        }
        if let Some(m) = self.penalty {
            if !(m > 0.0 && m.is_finite()) {
                return Err(Error::Config(format!("penalty must be positive, got {m}")));
            }
        }
        if self.buildings.is_empty() {
            return Err(Error::Config("scenario needs at least one building".into()));
        }
        let mut ids = HashSet::new();
        for b in &self.buildings {
            if !ids.insert(b.id.as_str()) {
                return Err(Error::Config(format!("duplicate building id {:?}", b.id)));
            }
            if b.id == "ISO" {
                return Err(Error::Config("building id \"ISO\" is reserved for dispatch rows".into()));
            }
            let rates = derive_rates(&b.params)?;
            check_step_guard(self.dt_min(), &rates)
                .map_err(|e| Error::Config(format!("building {}: {e}", b.id)))?;
            b.controller.validate()?;
            b.capacity_kw()?;
            if let InitialState::Explicit(v) = &b.initial_state {
                if v.len() != 2 * b.params.n_bins {
                    return Err(Error::Config(format!(
                        "building {}: initial state has {} entries, expected {}",
                        b.id,
                        v.len(),
                        2 * b.params.n_bins
                    )));
                }
            }
        }
        for spec in std::iter::once(&self.signal).chain(self.disturbance.as_ref()) {
            if let SignalSpec::Synthetic { volatility } = spec {
                if !(*volatility >= 0.0 && volatility.is_finite()) {
                    return Err(Error::Config(format!("volatility must be >= 0, got {volatility}")));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "duration_min": 10,
        "signal": {"kind": "synthetic", "volatility": 1.0},
        "buildings": [{
            "id": "a",
            "params": {"n_bins": 10, "band_width": 0.5, "set_band_width": 2.0, "set_point": 22.0,
                       "t_on": 10.0, "t_off": 20.0, "population": 1000, "tau": 60.0}
        }]
    }"#;

    #[test]
    fn defaults_fill_in() {
        let s = Scenario::from_json(MINIMAL).unwrap();
        assert_eq!(s.dt_s, 4.0);
        assert_eq!(s.ticks(), 150);
        assert_eq!(s.dispatch_mode, DispatchMode::Optimized);
        assert_eq!(s.buildings[0].initial_state, InitialState::Steady);
        assert!(!s.buildings[0].observer.enabled);
        assert!(s.buildings[0].capacity_kw().unwrap() > 0.0);
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = MINIMAL.replace("\"duration_min\"", "\"durashun\": 3, \"duration_min\"");
        assert!(matches!(Scenario::from_json(&bad), Err(Error::Json(_))));
        let bad = MINIMAL.replace("\"tau\": 60.0", "\"tau\": 60.0, \"mass\": 4");
        assert!(Scenario::from_json(&bad).is_err());
    }

    #[test]
    fn step_guard_enforced() {
        let bad = MINIMAL.replace("\"duration_min\": 10", "\"duration_min\": 10, \"dt_s\": 120");
        assert!(matches!(Scenario::from_json(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn signal_kinds_parse() {
        for sig in [
            r#"{"kind": "file", "path": "pjm.csv"}"#,
            r#"{"kind": "t50"}"#,
            r#"{"kind": "t50", "profile": [[0, 0], [50, 0]]}"#,
        ] {
            let text = MINIMAL.replace(r#"{"kind": "synthetic", "volatility": 1.0}"#, sig);
            Scenario::from_json(&text).unwrap();
        }
    }
}
