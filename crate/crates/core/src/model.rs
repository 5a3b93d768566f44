//! Physical and economic parameters of the two-tier network, their derived
//! quantities, and the enumerated decision state / action spaces.
//!
//! The solar process is a circular CTMC over `R + 1` radiation states. The
//! small cell battery holds `M = floor(E / E_min)` energy units. Packets of
//! `N` classes arrive as independent Poisson streams. A decision state is the
//! triple `(r, m, event)` where the event is either an arrival of some class or
//! a radiation change.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, FieldError, ValidationErrors};

/// Solar radiation CTMC and photovoltaic conversion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolarModel {
    /// Radiation intensity per state, W/m^2.
    pub intensities: Vec<f64>,
    /// Mean cloud diameter per state, m.
    pub cloud_mean_diameters: Vec<f64>,
    /// Wind speed, m/s.
    pub wind_speed: f64,
    /// Panel area, m^2.
    pub panel_area: f64,
    /// Conversion efficiency in (0, 1].
    pub conversion_efficiency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatteryModel {
    /// Capacity E, J.
    pub capacity: f64,
    /// Smallest chargeable/dischargeable quantum E_min, J.
    pub unit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficClass {
    /// Poisson arrival rate, packets/s.
    pub arrival_rate: f64,
    /// Grid energy units spent when the macro cell serves the packet.
    pub mbs_cost_units: u32,
    /// Battery units spent when the small cell serves the packet.
    pub sbs_cost_units: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficModel {
    pub classes: Vec<TrafficClass>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EconomicParams {
    /// Price per grid energy unit.
    pub grid_price: f64,
    /// Price per solar energy unit.
    pub solar_price: f64,
    /// Continuous-time discount rate, 1/s.
    pub discount_rate: f64,
}

/// Raw, unvalidated system description. Turn it into a [`Model`] with
/// [`validate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemParams {
    pub solar: SolarModel,
    pub battery: BatteryModel,
    pub traffic: TrafficModel,
    pub economics: EconomicParams,
}

impl SystemParams {
    /// The reference configuration: two radiation states, two traffic classes,
    /// a 1 J battery in 0.05 J units.
    pub fn table2() -> Self {
        SystemParams {
            solar: SolarModel {
                intensities: vec![50.0, 200.0],
                cloud_mean_diameters: vec![50.0, 100.0],
                wind_speed: 2.0,
                panel_area: 0.1,
                conversion_efficiency: 0.2,
            },
            battery: BatteryModel {
                capacity: 1.0,
                unit: 0.05,
            },
            traffic: TrafficModel {
                classes: vec![
                    TrafficClass {
                        arrival_rate: 10.0,
                        mbs_cost_units: 8,
                        sbs_cost_units: 3,
                    },
                    TrafficClass {
                        arrival_rate: 5.0,
                        mbs_cost_units: 10,
                        sbs_cost_units: 6,
                    },
                ],
            },
            economics: EconomicParams {
                grid_price: 2.0,
                solar_price: 1.5,
                discount_rate: 0.05,
            },
        }
    }
}

/// Soft findings that do not block validation.
#[derive(Debug, Clone, PartialEq)]
pub enum ValidationWarning {
    /// ζ_n ≤ ξ_n: the small cell is not cheaper in energy for this class.
    SbsNotCheaperInEnergy { class: usize, mbs: u32, sbs: u32 },
    /// ω_s ≥ ω_m.
    SolarNotCheaper { grid: f64, solar: f64 },
}

impl fmt::Display for ValidationWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationWarning::SbsNotCheaperInEnergy { class, mbs, sbs } => write!(
                f,
                "traffic.classes[{class}]: mbs_cost_units ({mbs}) is not greater than sbs_cost_units ({sbs})"
            ),
            ValidationWarning::SolarNotCheaper { grid, solar } => write!(
                f,
                "economics: solar_price ({solar}) is not below grid_price ({grid})"
            ),
        }
    }
}

/// Validated parameters plus every derived quantity the kernel, solvers and
/// simulator need. Immutable once built.
#[derive(Debug, Clone)]
pub struct Model {
    params: SystemParams,
    /// β_r = v_w / d_r.
    solar_rates: Vec<f64>,
    /// p_r = η G_r Ω_S.
    charging_power: Vec<f64>,
    /// T_r = E_min / p_r, `None` when p_r = 0.
    unit_charge_time: Vec<Option<f64>>,
    max_units: u32,
    arrival_rate_total: f64,
    uniformization_rate: f64,
    space: StateSpace,
    warnings: Vec<ValidationWarning>,
}

fn positive_finite(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

/// Checks every invariant of `params` and precomputes derived quantities.
///
/// All hard violations are collected into one [`ValidationErrors`]; soft ones
/// end up in [`Model::warnings`].
pub fn validate(params: &SystemParams) -> Result<Model, Error> {
    let mut errs = Vec::new();
    let mut push = |field: String, message: &str| errs.push(FieldError::new(field, message));

    let solar = &params.solar;
    if solar.intensities.is_empty() {
        push("solar.intensities".into(), "must list at least one radiation state");
    }
    if solar.intensities.len() != solar.cloud_mean_diameters.len() {
        push(
            "solar.cloud_mean_diameters".into(),
            "must have the same length as solar.intensities",
        );
    }
    for (r, g) in solar.intensities.iter().enumerate() {
        if !(g.is_finite() && *g >= 0.0) {
            push(format!("solar.intensities[{r}]"), "must be finite and non-negative");
        }
    }
    for (r, d) in solar.cloud_mean_diameters.iter().enumerate() {
        if !positive_finite(*d) {
            push(format!("solar.cloud_mean_diameters[{r}]"), "must be positive");
        }
    }
    if !positive_finite(solar.wind_speed) {
        push("wind_speed".into(), "must be positive");
    }
    if !positive_finite(solar.panel_area) {
        push("panel_area".into(), "must be positive");
    }
    if !(solar.conversion_efficiency > 0.0 && solar.conversion_efficiency <= 1.0) {
        push("conversion_efficiency".into(), "must lie in (0, 1]");
    }

    let battery = &params.battery;
    if !positive_finite(battery.unit) {
        push("battery.unit".into(), "must be positive");
    }
    if !positive_finite(battery.capacity) {
        push("battery.capacity".into(), "must be positive");
    } else if battery.capacity < battery.unit {
        push("battery.capacity".into(), "must be at least battery.unit");
    }
    let max_units = if positive_finite(battery.unit) && battery.capacity >= battery.unit {
        quantize(battery.capacity, battery.unit)
    } else {
        0
    };

    let classes = &params.traffic.classes;
    if classes.is_empty() {
        push("traffic.classes".into(), "must contain at least one class");
    }
    let mut warnings = Vec::new();
    for (n, c) in classes.iter().enumerate() {
        if !positive_finite(c.arrival_rate) {
            push(format!("traffic.classes[{n}].arrival_rate"), "must be positive");
        }
        if c.sbs_cost_units == 0 {
            push(format!("traffic.classes[{n}].sbs_cost_units"), "must be at least 1");
        }
        if c.mbs_cost_units == 0 {
            push(format!("traffic.classes[{n}].mbs_cost_units"), "must be at least 1");
        }
        if max_units > 0 && c.sbs_cost_units > max_units {
            push(
                format!("traffic.classes[{n}].sbs_cost_units"),
                "exceeds the battery size in units; the small cell could never serve this class",
            );
        }
        if c.mbs_cost_units <= c.sbs_cost_units {
            warnings.push(ValidationWarning::SbsNotCheaperInEnergy {
                class: n,
                mbs: c.mbs_cost_units,
                sbs: c.sbs_cost_units,
            });
        }
    }

    let econ = &params.economics;
    if !(econ.grid_price.is_finite() && econ.grid_price >= 0.0) {
        push("economics.grid_price".into(), "must be finite and non-negative");
    }
    if !(econ.solar_price.is_finite() && econ.solar_price >= 0.0) {
        push("economics.solar_price".into(), "must be finite and non-negative");
    }
    if !positive_finite(econ.discount_rate) {
        push("economics.discount_rate".into(), "must be positive");
    }
    if econ.solar_price >= econ.grid_price {
        warnings.push(ValidationWarning::SolarNotCheaper {
            grid: econ.grid_price,
            solar: econ.solar_price,
        });
    }

    if !errs.is_empty() {
        return Err(Error::Validation(ValidationErrors(errs)));
    }

    let solar_rates: Vec<f64> = solar
        .cloud_mean_diameters
        .iter()
        .map(|d| solar.wind_speed / d)
        .collect();
    let charging_power: Vec<f64> = solar
        .intensities
        .iter()
        .map(|g| solar.conversion_efficiency * g * solar.panel_area)
        .collect();
    let unit_charge_time = charging_power
        .iter()
        .map(|&p| (p > 0.0).then(|| battery.unit / p))
        .collect();
    let arrival_rate_total: f64 = classes.iter().map(|c| c.arrival_rate).sum();
    let max_beta = solar_rates.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let uniformization_rate = arrival_rate_total + max_beta;
    if !positive_finite(uniformization_rate) {
        return Err(Error::Validation(ValidationErrors(vec![FieldError::new(
            "traffic".into(),
            "uniformization rate must be finite and positive",
        )])));
    }

    Ok(Model {
        params: params.clone(),
        solar_rates,
        charging_power,
        unit_charge_time,
        max_units,
        arrival_rate_total,
        uniformization_rate,
        space: StateSpace {
            solar_states: solar.intensities.len(),
            max_units,
            classes: classes.len(),
        },
        warnings,
    })
}

/// floor(energy / unit), tolerant of representation error in the quotient
/// (1.0 / 0.05 must give 20).
pub(crate) fn quantize(energy: f64, unit: f64) -> u32 {
    let q = energy / unit;
    (q + q.abs() * 1e-12).floor().max(0.0) as u32
}

impl Model {
    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    pub fn warnings(&self) -> &[ValidationWarning] {
        &self.warnings
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn num_states(&self) -> usize {
        self.space.len()
    }

    /// Number of radiation states, `R + 1`.
    pub fn solar_states(&self) -> usize {
        self.space.solar_states
    }

    pub fn num_classes(&self) -> usize {
        self.space.classes
    }

    /// Battery size in units, `M`.
    pub fn max_units(&self) -> u32 {
        self.max_units
    }

    /// Radiation change rate β_r.
    pub fn solar_rate(&self, r: usize) -> f64 {
        self.solar_rates[r]
    }

    /// Expected radiation sojourn τ_r = d_r / v_w.
    pub fn solar_sojourn(&self, r: usize) -> f64 {
        self.params.solar.cloud_mean_diameters[r] / self.params.solar.wind_speed
    }

    /// Charging power p_r, W.
    pub fn charging_power(&self, r: usize) -> f64 {
        self.charging_power[r]
    }

    /// Time to harvest one unit, T_r. `None` when nothing is harvested.
    pub fn unit_charge_time(&self, r: usize) -> Option<f64> {
        self.unit_charge_time[r]
    }

    pub fn next_solar_state(&self, r: usize) -> usize {
        (r + 1) % self.space.solar_states
    }

    pub fn class(&self, n: usize) -> &TrafficClass {
        &self.params.traffic.classes[n]
    }

    pub fn arrival_rate(&self, n: usize) -> f64 {
        self.params.traffic.classes[n].arrival_rate
    }

    pub fn arrival_rate_total(&self) -> f64 {
        self.arrival_rate_total
    }

    /// φ = Σ λ_n + max_r β_r.
    pub fn uniformization_rate(&self) -> f64 {
        self.uniformization_rate
    }

    pub fn discount_rate(&self) -> f64 {
        self.params.economics.discount_rate
    }

    pub fn unit_energy(&self) -> f64 {
        self.params.battery.unit
    }

    pub fn capacity(&self) -> f64 {
        self.params.battery.capacity
    }

    /// Largest immediate cost over all state-action pairs.
    pub fn max_immediate_cost(&self) -> f64 {
        let econ = &self.params.economics;
        self.params
            .traffic
            .classes
            .iter()
            .map(|c| {
                (econ.grid_price * c.mbs_cost_units as f64)
                    .max(econ.solar_price * c.sbs_cost_units as f64)
            })
            .fold(0.0, f64::max)
    }

    /// All decision states in index order.
    pub fn states(&self) -> impl Iterator<Item = DecisionState> + '_ {
        (0..self.num_states()).map(|i| self.space.decode(i))
    }

    pub fn state(&self, index: usize) -> DecisionState {
        self.space.decode(index)
    }
}

/// Packet arrival of a class (0-based internally, printed 1-based) or a change
/// of the radiation state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Event {
    PacketArrival(usize),
    SolarTransition,
}

impl Event {
    pub fn is_arrival(self) -> bool {
        matches!(self, Event::PacketArrival(_))
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Event::PacketArrival(n) => write!(f, "e{}", n + 1),
            Event::SolarTransition => f.write_str("solar"),
        }
    }
}

impl std::str::FromStr for Event {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "solar" {
            return Ok(Event::SolarTransition);
        }
        s.strip_prefix('e')
            .and_then(|n| n.parse::<usize>().ok())
            .filter(|&n| n >= 1)
            .map(|n| Event::PacketArrival(n - 1))
            .ok_or_else(|| format!("unknown event `{s}`"))
    }
}

/// A decision-making state `<[r, m], e>` together with its dense index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DecisionState {
    pub solar: usize,
    pub battery: u32,
    pub event: Event,
    pub index: usize,
}

impl fmt::Display for DecisionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<[{},{}],{}>", self.solar, self.battery, self.event)
    }
}

/// Dimensions of the state space and the index bijection.
///
/// Order is lexicographic in `(r, m, event)` with arrival classes before the
/// radiation event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateSpace {
    pub solar_states: usize,
    pub max_units: u32,
    pub classes: usize,
}

impl StateSpace {
    pub fn len(&self) -> usize {
        self.solar_states * (self.max_units as usize + 1) * (self.classes + 1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn event_slot(&self, event: Event) -> usize {
        match event {
            Event::PacketArrival(n) => n,
            Event::SolarTransition => self.classes,
        }
    }

    /// Dense index of `(r, m, event)`. Panics on out-of-range components.
    pub fn encode(&self, solar: usize, battery: u32, event: Event) -> usize {
        assert!(solar < self.solar_states, "solar state {solar} out of range");
        assert!(battery <= self.max_units, "battery level {battery} out of range");
        if let Event::PacketArrival(n) = event {
            assert!(n < self.classes, "class {n} out of range");
        }
        (solar * (self.max_units as usize + 1) + battery as usize) * (self.classes + 1)
            + self.event_slot(event)
    }

    pub fn decode(&self, index: usize) -> DecisionState {
        assert!(index < self.len(), "state index {index} out of range");
        let events = self.classes + 1;
        let slot = index % events;
        let rest = index / events;
        let battery = (rest % (self.max_units as usize + 1)) as u32;
        let solar = rest / (self.max_units as usize + 1);
        let event = if slot == self.classes {
            Event::SolarTransition
        } else {
            Event::PacketArrival(slot)
        };
        DecisionState {
            solar,
            battery,
            event,
            index,
        }
    }

    pub fn state(&self, solar: usize, battery: u32, event: Event) -> DecisionState {
        DecisionState {
            solar,
            battery,
            event,
            index: self.encode(solar, battery, event),
        }
    }
}

/// All decision states of `model` in index order.
pub fn enumerate_states(model: &Model) -> Vec<DecisionState> {
    model.states().collect()
}

/// Link selection. The discriminants are the action codes used in reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    ServeMbs,
    ServeSbs,
    Fictitious,
}

impl Action {
    pub fn code(self) -> i8 {
        match self {
            Action::ServeMbs => 0,
            Action::ServeSbs => 1,
            Action::Fictitious => -1,
        }
    }

    pub fn from_code(code: i64) -> Option<Self> {
        match code {
            0 => Some(Action::ServeMbs),
            1 => Some(Action::ServeSbs),
            -1 => Some(Action::Fictitious),
            _ => None,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

/// Admissible actions of `state`, ordered by preference on ties
/// (macro cell before small cell).
pub fn admissible_actions(state: &DecisionState, model: &Model) -> Vec<Action> {
    match state.event {
        Event::SolarTransition => vec![Action::Fictitious],
        Event::PacketArrival(n) if state.battery >= model.class(n).sbs_cost_units => {
            vec![Action::ServeMbs, Action::ServeSbs]
        }
        Event::PacketArrival(_) => vec![Action::ServeMbs],
    }
}

pub fn is_admissible(state: &DecisionState, action: Action, model: &Model) -> bool {
    match (state.event, action) {
        (Event::SolarTransition, Action::Fictitious) => true,
        (Event::PacketArrival(_), Action::ServeMbs) => true,
        (Event::PacketArrival(n), Action::ServeSbs) => {
            state.battery >= model.class(n).sbs_cost_units
        }
        _ => false,
    }
}

/// Energy cost charged at the decision epoch.
pub fn immediate_cost(state: &DecisionState, action: Action, model: &Model) -> Result<f64, Error> {
    if !is_admissible(state, action, model) {
        return Err(Error::InadmissibleAction {
            state: state.to_string(),
            action,
        });
    }
    let econ = &model.params.economics;
    Ok(match (state.event, action) {
        (Event::PacketArrival(n), Action::ServeMbs) => {
            econ.grid_price * model.class(n).mbs_cost_units as f64
        }
        (Event::PacketArrival(n), Action::ServeSbs) => {
            econ.solar_price * model.class(n).sbs_cost_units as f64
        }
        _ => 0.0,
    })
}
