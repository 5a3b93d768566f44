//! Seeded discrete-event simulation of the radiation CTMC, the Poisson packet
//! streams and the small cell battery under a fixed policy.
//!
//! Two battery models are available. [`BatteryDynamics::Quantized`] (default)
//! restarts the unit-harvest clock at every decision epoch, so an epoch that
//! comes `t` seconds after the previous one adds `floor(t / T_r)` units; this is
//! the process the transition kernel describes. [`BatteryDynamics::Continuous`]
//! keeps any partially harvested unit across epochs and only rounds down when
//! the controller reads the battery.
//!
//! Runs draw from independent ChaCha8 streams. The stream of run `i` is seeded
//! with [`sub_seed`]`(master, i)`.

use std::collections::BTreeMap;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::build_embedded_kernel;
use crate::model::{is_admissible, quantize, Action, DecisionState, Event, Model};
use crate::policy::Policy;
use crate::solvers::discounted_value_bound;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BatteryDynamics {
    #[default]
    Quantized,
    Continuous,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Simulated seconds per run.
    pub horizon: f64,
    pub runs: usize,
    pub seed: u64,
    /// Seconds at the start of each run excluded from the statistics.
    pub warmup: f64,
    pub initial_solar: usize,
    /// Initial battery units; `None` starts half full (`floor(M / 2)`).
    pub initial_battery: Option<u32>,
    pub dynamics: BatteryDynamics,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            horizon: 3600.0,
            runs: 10,
            seed: 42,
            warmup: 0.0,
            initial_solar: 0,
            initial_battery: None,
            dynamics: BatteryDynamics::Quantized,
        }
    }
}

impl SimConfig {
    fn check(&self, model: &Model) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidArgument("horizon must be positive".into()));
        }
        if self.runs == 0 {
            return Err(Error::InvalidArgument("runs must be at least 1".into()));
        }
        if !(self.warmup >= 0.0 && self.warmup < self.horizon) {
            return Err(Error::InvalidArgument("warmup must lie in [0, horizon)".into()));
        }
        if self.initial_solar >= model.solar_states() {
            return Err(Error::InvalidArgument(format!(
                "initial solar state {} out of range",
                self.initial_solar
            )));
        }
        if self.initial_battery.is_some_and(|m| m > model.max_units()) {
            return Err(Error::InvalidArgument("initial battery exceeds capacity".into()));
        }
        Ok(())
    }

    fn initial_battery(&self, model: &Model) -> u32 {
        self.initial_battery.unwrap_or(model.max_units() / 2)
    }
}

/// SplitMix64 output `run + 1` of the stream started at `master`.
pub fn sub_seed(master: u64, run: u64) -> u64 {
    let mut z = master.wrapping_add((run + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Statistics of one simulated run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunStats {
    pub run: usize,
    pub seed: u64,
    pub total_cost: f64,
    /// `total_cost` per measured second.
    pub avg_cost: f64,
    /// Times the policy asked for the small cell without enough energy.
    pub violations: u64,
    pub arrivals: Vec<u64>,
    pub served_mbs: Vec<u64>,
    pub served_sbs: Vec<u64>,
    pub solar_transitions: u64,
    pub epochs: u64,
}

impl RunStats {
    /// Total cost rebuilt from the per-action counters.
    pub fn cost_from_counts(&self, model: &Model) -> f64 {
        let econ = &model.params().economics;
        (0..model.num_classes())
            .map(|n| {
                let c = model.class(n);
                self.served_mbs[n] as f64 * econ.grid_price * c.mbs_cost_units as f64
                    + self.served_sbs[n] as f64 * econ.solar_price * c.sbs_cost_units as f64
            })
            .sum()
    }

    /// Classes whose arrival count is more than four standard deviations away
    /// from `λ_n · duration`.
    pub fn arrival_outliers(&self, model: &Model, duration: f64) -> Vec<usize> {
        (0..model.num_classes())
            .filter(|&n| {
                let mean = model.arrival_rate(n) * duration;
                (self.arrivals[n] as f64 - mean).abs() > 4.0 * mean.sqrt()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    pub runs: Vec<RunStats>,
    pub mean_avg_cost: f64,
    /// Sample standard deviation of the per-run average cost (0 for one run).
    pub std_avg_cost: f64,
    pub horizon: f64,
}

impl SimulationResult {
    pub fn std_error(&self) -> f64 {
        self.std_avg_cost / (self.runs.len() as f64).sqrt()
    }
}

/// One decision epoch as seen by an observer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub time: f64,
    pub state: DecisionState,
    /// Action actually applied (after the insufficient-energy fallback).
    pub action: Action,
    pub cost: f64,
    pub violation: bool,
}

struct Engine<'a> {
    model: &'a Model,
    policy: &'a Policy,
    dynamics: BatteryDynamics,
    rng: ChaCha8Rng,
    solar: usize,
    units: u32,
    energy: f64,
    last_epoch: f64,
    next_arrival: Vec<f64>,
    next_solar: f64,
}

impl<'a> Engine<'a> {
    fn new(
        model: &'a Model,
        policy: &'a Policy,
        dynamics: BatteryDynamics,
        seed: u64,
        solar: usize,
        units: u32,
    ) -> Self {
        let mut e = Engine {
            model,
            policy,
            dynamics,
            rng: ChaCha8Rng::seed_from_u64(seed),
            solar,
            units,
            energy: units as f64 * model.unit_energy(),
            last_epoch: 0.0,
            next_arrival: Vec::with_capacity(model.num_classes()),
            next_solar: 0.0,
        };
        for n in 0..model.num_classes() {
            let t = e.draw(model.arrival_rate(n));
            e.next_arrival.push(t);
        }
        e.next_solar = e.draw(model.solar_rate(solar));
        e
    }

    fn draw(&mut self, rate: f64) -> f64 {
        Exp::new(rate).expect("positive rate").sample(&mut self.rng)
    }

    /// Earliest pending event; exact ties go to the lowest class, then solar.
    fn peek(&self) -> (f64, Event) {
        let mut best = (self.next_solar, Event::SolarTransition);
        for (n, &t) in self.next_arrival.iter().enumerate().rev() {
            if t <= best.0 {
                best = (t, Event::PacketArrival(n));
            }
        }
        best
    }

    fn level(&self) -> u32 {
        match self.dynamics {
            BatteryDynamics::Quantized => self.units,
            BatteryDynamics::Continuous => {
                quantize(self.energy, self.model.unit_energy()).min(self.model.max_units())
            }
        }
    }

    fn charge_until(&mut self, t: f64) {
        let dt = t - self.last_epoch;
        match self.dynamics {
            BatteryDynamics::Quantized => {
                if let Some(unit_time) = self.model.unit_charge_time(self.solar) {
                    let gained = (dt / unit_time).floor();
                    let room = (self.model.max_units() - self.units) as f64;
                    self.units += gained.min(room) as u32;
                }
            }
            BatteryDynamics::Continuous => {
                let p = self.model.charging_power(self.solar);
                self.energy = (self.energy + p * dt).min(self.model.capacity());
            }
        }
    }

    /// Handles `event` at time `t`: reads the battery, applies the policy and
    /// reschedules the clock that fired.
    fn handle(&mut self, t: f64, event: Event) -> EpochRecord {
        self.charge_until(t);
        let state = self.model.space().state(self.solar, self.level(), event);
        let requested = self.policy.action(state.index);
        let econ = &self.model.params().economics;
        let (action, cost, violation) = match event {
            Event::PacketArrival(n) => {
                let class = self.model.class(n);
                let serve_sbs = requested == Action::ServeSbs;
                let feasible = is_admissible(&state, Action::ServeSbs, self.model);
                let rec = if serve_sbs && feasible {
                    self.discharge(class.sbs_cost_units);
                    (Action::ServeSbs, econ.solar_price * class.sbs_cost_units as f64, false)
                } else {
                    (
                        Action::ServeMbs,
                        econ.grid_price * class.mbs_cost_units as f64,
                        serve_sbs,
                    )
                };
                self.next_arrival[n] = t + self.draw(self.model.arrival_rate(n));
                rec
            }
            Event::SolarTransition => {
                self.solar = self.model.next_solar_state(self.solar);
                self.next_solar = t + self.draw(self.model.solar_rate(self.solar));
                (Action::Fictitious, 0.0, false)
            }
        };
        self.last_epoch = t;
        EpochRecord {
            time: t,
            state,
            action,
            cost,
            violation,
        }
    }

    fn discharge(&mut self, units: u32) {
        match self.dynamics {
            BatteryDynamics::Quantized => self.units -= units,
            BatteryDynamics::Continuous => {
                let spent = units as f64 * self.model.unit_energy();
                self.energy = (self.energy - spent).max(0.0);
            }
        }
    }

    fn step(&mut self) -> EpochRecord {
        let (t, e) = self.peek();
        self.handle(t, e)
    }
}

/// Simulates one run and calls `observer` at every epoch inside the horizon.
pub fn simulate_run_observed(
    policy: &Policy,
    model: &Model,
    config: &SimConfig,
    seed: u64,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<RunStats> {
    config.check(model)?;
    policy.check(model)?;
    let n = model.num_classes();
    let mut stats = RunStats {
        run: 0,
        seed,
        total_cost: 0.0,
        avg_cost: 0.0,
        violations: 0,
        arrivals: vec![0; n],
        served_mbs: vec![0; n],
        served_sbs: vec![0; n],
        solar_transitions: 0,
        epochs: 0,
    };
    let mut engine = Engine::new(
        model,
        policy,
        config.dynamics,
        seed,
        config.initial_solar,
        config.initial_battery(model),
    );
    let mut last = 0.0;
    loop {
        if engine.peek().0 > config.horizon {
            break;
        }
        let rec = engine.step();
        debug_assert!(rec.time >= last);
        last = rec.time;
        observer(&rec);
        if rec.time < config.warmup {
            continue;
        }
        stats.epochs += 1;
        stats.total_cost += rec.cost;
        stats.violations += rec.violation as u64;
        match (rec.state.event, rec.action) {
            (Event::PacketArrival(c), Action::ServeSbs) => {
                stats.arrivals[c] += 1;
                stats.served_sbs[c] += 1;
            }
            (Event::PacketArrival(c), _) => {
                stats.arrivals[c] += 1;
                stats.served_mbs[c] += 1;
            }
            (Event::SolarTransition, _) => stats.solar_transitions += 1,
        }
    }
    stats.avg_cost = stats.total_cost / (config.horizon - config.warmup);
    Ok(stats)
}

pub fn simulate_run(policy: &Policy, model: &Model, config: &SimConfig, seed: u64) -> Result<RunStats> {
    simulate_run_observed(policy, model, config, seed, &mut |_| {})
}

/// `config.runs` independent runs aggregated in run order.
pub fn simulate(policy: &Policy, model: &Model, config: &SimConfig) -> Result<SimulationResult> {
    config.check(model)?;
    let mut runs = Vec::with_capacity(config.runs);
    for i in 0..config.runs {
        let seed = sub_seed(config.seed, i as u64);
        let mut stats = simulate_run(policy, model, config, seed)?;
        stats.run = i;
        let outliers = stats.arrival_outliers(model, config.horizon - config.warmup);
        if !outliers.is_empty() {
            log::warn!("run {i}: arrival counts of classes {outliers:?} are more than 4 sigma off");
        }
        if stats.violations > 0 {
            log::warn!("run {i}: policy `{}` requested the small cell without energy {} times", policy.label, stats.violations);
        }
        runs.push(stats);
    }
    let (mean, std) = mean_std(runs.iter().map(|r| r.avg_cost));
    Ok(SimulationResult {
        runs,
        mean_avg_cost: mean,
        std_avg_cost: std,
        horizon: config.horizon,
    })
}

/// Arithmetic mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Writes `time,event,r,m,action,cost` for every epoch of one run.
pub fn write_trace<W: Write>(
    policy: &Policy,
    model: &Model,
    config: &SimConfig,
    seed: u64,
    out: W,
) -> Result<RunStats> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time", "event", "r", "m", "action", "cost"])?;
    let mut err = None;
    let stats = simulate_run_observed(policy, model, config, seed, &mut |rec| {
        if err.is_some() {
            return;
        }
        if let Err(e) = w.write_record([
            rec.time.to_string(),
            rec.state.event.to_string(),
            rec.state.solar.to_string(),
            rec.state.battery.to_string(),
            rec.action.code().to_string(),
            rec.cost.to_string(),
        ]) {
            err = Some(e);
        }
    })?;
    if let Some(e) = err {
        return Err(e.into());
    }
    w.flush()?;
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelCheckConfig {
    /// Decision epochs to simulate.
    pub events: u64,
    /// Rows observed fewer times are left out of the comparison.
    pub min_visits: u64,
    pub seed: u64,
    pub dynamics: BatteryDynamics,
}

impl Default for KernelCheckConfig {
    fn default() -> Self {
        KernelCheckConfig {
            events: 1_000_000,
            min_visits: 500,
            seed: 42,
            dynamics: BatteryDynamics::Quantized,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelCheckReport {
    /// Largest L1 distance between observed and kernel successor
    /// distributions over the compared rows (0 when none qualify).
    pub max_l1: f64,
    pub worst_row: Option<(usize, Action)>,
    /// Largest L1 distance divided by the row's sampling scale
    /// `Σ_j sqrt(p_j (1 - p_j) / n)`. A correct kernel gives values near
    /// `sqrt(2 / π) ≈ 0.8`; systematic differences grow with `sqrt(n)`.
    pub max_normalized: f64,
    pub rows_compared: usize,
    pub rows_excluded: usize,
}

/// Tabulates observed `(state, action) → successor` frequencies and compares
/// them with the embedded kernel.
pub fn empirical_kernel_check(policy: &Policy, model: &Model, config: &KernelCheckConfig) -> Result<KernelCheckReport> {
    policy.check(model)?;
    let kernel = build_embedded_kernel(model)?;
    let mut counts: BTreeMap<(usize, Action), BTreeMap<usize, u64>> = BTreeMap::new();
    let mut engine = Engine::new(
        model,
        policy,
        config.dynamics,
        config.seed,
        0,
        model.max_units() / 2,
    );
    let mut prev = engine.step();
    for _ in 1..config.events {
        let rec = engine.step();
        *counts
            .entry((prev.state.index, prev.action))
            .or_default()
            .entry(rec.state.index)
            .or_default() += 1;
        prev = rec;
    }

    let mut report = KernelCheckReport {
        max_l1: 0.0,
        worst_row: None,
        max_normalized: 0.0,
        rows_compared: 0,
        rows_excluded: 0,
    };
    for (&(s, a), succ) in &counts {
        let visits: u64 = succ.values().sum();
        if visits < config.min_visits {
            report.rows_excluded += 1;
            continue;
        }
        let row = kernel
            .row(s, a)
            .ok_or_else(|| Error::InvalidArgument(format!("no kernel row for state {s} action {a}")))?;
        let mut l1 = 0.0;
        for &(j, p) in &row.entries {
            let f = succ.get(&j).copied().unwrap_or(0) as f64 / visits as f64;
            l1 += (f - p).abs();
        }
        for (&j, &c) in succ {
            if row.probability(j) == 0.0 {
                l1 += c as f64 / visits as f64;
            }
        }
        let scale: f64 = row
            .entries
            .iter()
            .map(|&(_, p)| (p * (1.0 - p) / visits as f64).sqrt())
            .sum();
        if scale > 0.0 {
            report.max_normalized = report.max_normalized.max(l1 / scale);
        } else if l1 > 0.0 {
            report.max_normalized = f64::INFINITY;
        }
        report.rows_compared += 1;
        if l1 > report.max_l1 {
            report.max_l1 = l1;
            report.worst_row = Some((s, a));
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscountConfig {
    pub alpha: f64,
    pub horizon: f64,
    pub runs: usize,
    pub seed: u64,
    pub dynamics: BatteryDynamics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscountedEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub runs: usize,
    /// Upper bound on the discounted cost lost by stopping at the horizon.
    pub truncation_bound: f64,
}

/// Monte Carlo estimate of the discounted total cost starting at decision
/// state `initial` at time 0.
pub fn discounted_cost_estimate(
    policy: &Policy,
    model: &Model,
    initial: &DecisionState,
    config: &DiscountConfig,
) -> Result<DiscountedEstimate> {
    policy.check(model)?;
    if config.alpha.is_nan() || config.alpha <= 0.0 {
        return Err(Error::InvalidArgument("discount rate must be positive".into()));
    }
    if config.horizon.is_nan() || config.horizon <= 0.0 || config.runs == 0 {
        return Err(Error::InvalidArgument("horizon and runs must be positive".into()));
    }
    let truncation_bound =
        (-config.alpha * config.horizon).exp() * discounted_value_bound(model, config.alpha);
    if (-config.alpha * config.horizon).exp() > 1e-6 {
        log::warn!(
            "discount horizon {} s is short: truncated tail may reach {truncation_bound:e}",
            config.horizon
        );
    }
    let mut totals = Vec::with_capacity(config.runs);
    for i in 0..config.runs {
        let mut engine = Engine::new(
            model,
            policy,
            config.dynamics,
            sub_seed(config.seed, i as u64),
            initial.solar,
            initial.battery,
        );
        let mut total = engine.handle(0.0, initial.event).cost;
        loop {
            let (t, e) = engine.peek();
            if t > config.horizon {
                break;
            }
            let rec = engine.handle(t, e);
            total += (-config.alpha * t).exp() * rec.cost;
        }
        totals.push(total);
    }
    let (mean, std) = mean_std(totals.iter().copied());
    Ok(DiscountedEstimate {
        mean,
        std_error: std / (config.runs as f64).sqrt(),
        runs: config.runs,
        truncation_bound,
    })
}
