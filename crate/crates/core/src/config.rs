//! TOML experiment files and the run manifest.
//!
//! A file holds the four system sections (`solar`, `battery`, `traffic`,
//! `economics`) and optional `solver`, `simulation` and `sweep` sections.
//! Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BatteryModel, EconomicParams, SolarModel, SystemParams, TrafficModel};
use crate::simulator::{BatteryDynamics, SimConfig};
use crate::solvers::SolverConfig;

/// The bundled reference configuration.
pub const TABLE2_TOML: &str = include_str!("../configs/table2.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub solar: SolarModel,
    pub battery: BatteryModel,
    pub traffic: TrafficModel,
    pub economics: EconomicParams,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub tolerance: f64,
    pub reference_state: usize,
    pub max_iterations: usize,
    pub tie_tolerance: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolverConfig::default();
        SolverSection {
            tolerance: d.tolerance,
            reference_state: d.reference_state,
            max_iterations: d.max_iterations,
            tie_tolerance: d.tie_tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    pub horizon: f64,
    pub runs: usize,
    pub seed: u64,
    pub warmup: f64,
    pub initial_solar: usize,
    pub initial_battery: Option<u32>,
    pub dynamics: BatteryDynamics,
}

impl Default for SimulationSection {
    fn default() -> Self {
        let d = SimConfig::default();
        SimulationSection {
            horizon: d.horizon,
            runs: d.runs,
            seed: d.seed,
            warmup: d.warmup,
            initial_solar: d.initial_solar,
            initial_battery: d.initial_battery,
            dynamics: d.dynamics,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    /// Dotted path of the swept parameter, see [`set_parameter`].
    pub parameter: String,
    pub values: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            parameter: "traffic.classes[0].arrival_rate".into(),
            values: (1..=9).map(|k| 2.0 * k as f64).collect(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn table2() -> Self {
        Self::from_toml_str(TABLE2_TOML).expect("bundled configuration parses")
    }

    /// `table2` names the bundled file; anything else is a path.
    pub fn load(source: &str) -> Result<Self> {
        if source == "table2" {
            return Ok(Self::table2());
        }
        let text = std::fs::read_to_string(Path::new(source))
            .map_err(|e| Error::Config(format!("cannot read {source}: {e}")))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{source}: {msg}")),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn params(&self) -> SystemParams {
        SystemParams {
            solar: self.solar.clone(),
            battery: self.battery.clone(),
            traffic: self.traffic.clone(),
            economics: self.economics.clone(),
        }
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            tolerance: self.solver.tolerance,
            reference_state: self.solver.reference_state,
            max_iterations: self.solver.max_iterations,
            tie_tolerance: self.solver.tie_tolerance,
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        let s = &self.simulation;
        SimConfig {
            horizon: s.horizon,
            runs: s.runs,
            seed: s.seed,
            warmup: s.warmup,
            initial_solar: s.initial_solar,
            initial_battery: s.initial_battery,
            dynamics: s.dynamics,
        }
    }
}

fn indexed(segment: &str, name: &str) -> Option<usize> {
    segment
        .strip_prefix(name)?
        .strip_prefix('[')?
        .strip_suffix(']')?
        .parse()
        .ok()
}

fn slot<'a>(list: &'a mut [f64], i: usize, path: &str) -> Result<&'a mut f64> {
    let len = list.len();
    list.get_mut(i)
        .ok_or_else(|| Error::InvalidArgument(format!("{path}: index {i} out of range (length {len})")))
}

/// Sets a numeric parameter by dotted path, for example
/// `traffic.classes[0].arrival_rate` or `solar.intensities[1]`.
pub fn set_parameter(params: &mut SystemParams, path: &str, value: f64) -> Result<()> {
    let unknown = || Error::InvalidArgument(format!("unknown sweep parameter `{path}`"));
    let parts: Vec<&str> = path.split('.').collect();
    let target: &mut f64 = match parts.as_slice() {
        ["solar", "wind_speed"] => &mut params.solar.wind_speed,
        ["solar", "panel_area"] => &mut params.solar.panel_area,
        ["solar", "conversion_efficiency"] => &mut params.solar.conversion_efficiency,
        ["solar", field] => {
            if let Some(i) = indexed(field, "intensities") {
                slot(&mut params.solar.intensities, i, path)?
            } else if let Some(i) = indexed(field, "cloud_mean_diameters") {
                slot(&mut params.solar.cloud_mean_diameters, i, path)?
            } else {
                return Err(unknown());
            }
        }
        ["battery", "capacity"] => &mut params.battery.capacity,
        ["battery", "unit"] => &mut params.battery.unit,
        ["economics", "grid_price"] => &mut params.economics.grid_price,
        ["economics", "solar_price"] => &mut params.economics.solar_price,
        ["economics", "discount_rate"] => &mut params.economics.discount_rate,
        ["traffic", class, "arrival_rate"] => {
            let i = indexed(class, "classes").ok_or_else(unknown)?;
            let len = params.traffic.classes.len();
            &mut params
                .traffic
                .classes
                .get_mut(i)
                .ok_or_else(|| Error::InvalidArgument(format!("{path}: class {i} out of range (length {len})")))?
                .arrival_rate
        }
        _ => return Err(unknown()),
    };
    *target = value;
    Ok(())
}

/// Everything needed to rerun a command, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub config_source: String,
    pub seed: Option<u64>,
    pub policy: Option<String>,
    pub criterion: Option<String>,
    pub config: ExperimentConfig,
}

impl RunManifest {
    pub fn new(command: &str, config_source: &str, config: &ExperimentConfig) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config_source: config_source.into(),
            seed: None,
            policy: None,
            criterion: None,
            config: config.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}
