//! Transition law of the embedded decision process.
//!
//! After the action at an epoch the system sits in radiation state `r_eff`
//! with `m0` battery units. The next epoch is the first of `N + 1` independent
//! exponential clocks (one per traffic class plus the radiation clock of
//! `r_eff`), total rate `γ = Σ λ_n + β_{r_eff}`. In the meantime the battery
//! gains one unit every `T = E_min / p_{r_eff}` seconds until it is full, so an
//! event landing in `[kT, (k+1)T)` finds `m0 + k` units and any event after
//! `(M - m0)T` finds a full battery.
//!
//! With `μ` the rate of the clock that fires, the successor masses are
//!
//! ```text
//! k < M - m0 :  μ/γ · (e^{-γkT} - e^{-γ(k+1)T})
//! k = M - m0 :  μ/γ · e^{-γ(M-m0)T}
//! ```
//!
//! and the discounted kernel replaces `γ` with `γ + α` in both the exponent and
//! the prefactor.

use std::io::Write;

use crate::error::{Error, Result};
use crate::model::{admissible_actions, immediate_cost, Action, DecisionState, Event, Model};

/// Radiation state and battery level right after the action is applied.
pub fn post_action_configuration(
    state: &DecisionState,
    action: Action,
    model: &Model,
) -> Result<(usize, u32)> {
    let inadmissible = || Error::InadmissibleAction {
        state: state.to_string(),
        action,
    };
    match (state.event, action) {
        (Event::PacketArrival(_), Action::ServeMbs) => Ok((state.solar, state.battery)),
        (Event::PacketArrival(n), Action::ServeSbs) => {
            let need = model.class(n).sbs_cost_units;
            if state.battery < need {
                return Err(inadmissible());
            }
            Ok((state.solar, state.battery - need))
        }
        (Event::SolarTransition, Action::Fictitious) => {
            Ok((model.next_solar_state(state.solar), state.battery))
        }
        _ => Err(inadmissible()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionRow {
    pub state: usize,
    pub action: Action,
    /// `(successor index, probability)`, sorted by successor.
    pub entries: Vec<(usize, f64)>,
    /// γ(s, a).
    pub rate: f64,
    /// y(s, a) = 1 / γ(s, a).
    pub expected_sojourn: f64,
    /// c(s, a).
    pub cost: f64,
}

impl TransitionRow {
    pub fn probability(&self, successor: usize) -> f64 {
        lookup(&self.entries, successor)
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|(_, p)| p).sum()
    }
}

fn lookup(entries: &[(usize, f64)], successor: usize) -> f64 {
    entries
        .binary_search_by_key(&successor, |&(j, _)| j)
        .map(|i| entries[i].1)
        .unwrap_or(0.0)
}

/// Rate of the clock that produces `event` while in radiation state `r`.
fn event_rate(model: &Model, r: usize, event: Event) -> f64 {
    match event {
        Event::PacketArrival(n) => model.arrival_rate(n),
        Event::SolarTransition => model.solar_rate(r),
    }
}

fn next_events(model: &Model) -> impl Iterator<Item = Event> {
    (0..model.num_classes())
        .map(Event::PacketArrival)
        .chain(std::iter::once(Event::SolarTransition))
}

/// Successor masses for a post-action configuration, with `decay` the rate in
/// the exponent (γ for the embedded chain, γ + α for the discounted one).
fn successor_masses(model: &Model, r_eff: usize, m0: u32, decay: f64) -> Vec<(usize, f64)> {
    let space = model.space();
    let top = model.max_units();
    let mut entries = Vec::new();
    for e in next_events(model) {
        let share = event_rate(model, r_eff, e) / decay;
        match model.unit_charge_time(r_eff) {
            Some(t) if m0 < top => {
                let headroom = top - m0;
                let mut before = 1.0;
                for k in 0..headroom {
                    let after = (-decay * (k + 1) as f64 * t).exp();
                    entries.push((space.encode(r_eff, m0 + k, e), share * (before - after)));
                    before = after;
                }
                entries.push((space.encode(r_eff, top, e), share * before));
            }
            _ => entries.push((space.encode(r_eff, m0, e), share)),
        }
    }
    merge(entries)
}

fn merge(mut entries: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    entries.sort_by_key(|&(j, _)| j);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(entries.len());
    for (j, p) in entries {
        match out.last_mut() {
            Some(last) if last.0 == j => last.1 += p,
            _ => out.push((j, p)),
        }
    }
    out
}

/// Embedded-chain row for one admissible `(state, action)` pair.
pub fn build_transition_row(state: &DecisionState, action: Action, model: &Model) -> Result<TransitionRow> {
    let cost = immediate_cost(state, action, model)?;
    let (r_eff, m0) = post_action_configuration(state, action, model)?;
    let rate = model.arrival_rate_total() + model.solar_rate(r_eff);
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "event rate {rate} of {state} is not positive"
        )));
    }
    Ok(TransitionRow {
        state: state.index,
        action,
        entries: successor_masses(model, r_eff, m0, rate),
        rate,
        expected_sojourn: 1.0 / rate,
        cost,
    })
}

/// Rows grouped by source state: `rows[offsets[s]..offsets[s + 1]]` belong to
/// state `s`, in admissible-action order.
#[derive(Debug, Clone)]
pub struct RowTable<R> {
    rows: Vec<R>,
    offsets: Vec<usize>,
}

impl<R> RowTable<R> {
    fn from_groups(groups: Vec<Vec<R>>) -> Self {
        let mut offsets = Vec::with_capacity(groups.len() + 1);
        offsets.push(0);
        let mut rows = Vec::new();
        for g in groups {
            rows.extend(g);
            offsets.push(rows.len());
        }
        RowTable { rows, offsets }
    }

    pub fn num_states(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn rows(&self) -> &[R] {
        &self.rows
    }

    /// Mutable access, for fault-injection in checks and tests.
    pub fn rows_mut(&mut self) -> &mut [R] {
        &mut self.rows
    }

    pub fn rows_of(&self, state: usize) -> &[R] {
        &self.rows[self.offsets[state]..self.offsets[state + 1]]
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Copy keeping only rows accepted by `keep`, e.g. to shrink admissible
    /// sets. Every state must keep at least one row for the solvers to run.
    pub fn filtered(&self, mut keep: impl FnMut(&R) -> bool) -> Self
    where
        R: Clone,
    {
        let groups = (0..self.num_states())
            .map(|s| self.rows_of(s).iter().filter(|r| keep(r)).cloned().collect())
            .collect();
        RowTable::from_groups(groups)
    }

    fn map<S>(&self, f: impl FnMut(&R) -> S) -> RowTable<S> {
        RowTable {
            rows: self.rows.iter().map(f).collect(),
            offsets: self.offsets.clone(),
        }
    }
}

pub type TransitionKernel = RowTable<TransitionRow>;

impl TransitionKernel {
    pub fn row(&self, state: usize, action: Action) -> Option<&TransitionRow> {
        self.rows_of(state).iter().find(|r| r.action == action)
    }
}

pub fn build_embedded_kernel(model: &Model) -> Result<TransitionKernel> {
    let groups = model
        .states()
        .map(|s| {
            admissible_actions(&s, model)
                .into_iter()
                .map(|a| build_transition_row(&s, a, model))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RowTable::from_groups(groups))
}

/// Row of the uniformized discrete-time chain.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformizedRow {
    pub state: usize,
    pub action: Action,
    /// c̃(s, a) = c(s, a) γ(s, a) / φ.
    pub cost: f64,
    /// Always contains the source state (possibly with zero mass).
    pub entries: Vec<(usize, f64)>,
}

impl UniformizedRow {
    pub fn probability(&self, successor: usize) -> f64 {
        lookup(&self.entries, successor)
    }

    pub fn self_loop(&self) -> f64 {
        self.probability(self.state)
    }
}

#[derive(Debug, Clone)]
pub struct UniformizedKernel {
    pub rate: f64,
    pub table: RowTable<UniformizedRow>,
}

/// Uniformizes the embedded kernel at φ = Σ λ_n + max_r β_r.
pub fn uniformize(kernel: &TransitionKernel, model: &Model) -> UniformizedKernel {
    let phi = model.uniformization_rate();
    let table = kernel.map(|row| {
        let scale = row.rate / phi;
        let stay = 1.0 - (1.0 - row.probability(row.state)) * scale;
        let mut entries: Vec<(usize, f64)> = row
            .entries
            .iter()
            .filter(|&&(j, _)| j != row.state)
            .map(|&(j, p)| (j, p * scale))
            .collect();
        let at = entries.partition_point(|&(j, _)| j < row.state);
        entries.insert(at, (row.state, stay));
        UniformizedRow {
            state: row.state,
            action: row.action,
            cost: row.cost * scale,
            entries,
        }
    });
    UniformizedKernel { rate: phi, table }
}

/// Row of the discounted transition transform m_a(s'|s).
#[derive(Debug, Clone, PartialEq)]
pub struct DiscountedRow {
    pub state: usize,
    pub action: Action,
    /// c(s, a), undiscounted; it is paid at the epoch itself.
    pub cost: f64,
    /// γ(s, a).
    pub rate: f64,
    pub entries: Vec<(usize, f64)>,
}

impl DiscountedRow {
    pub fn probability(&self, successor: usize) -> f64 {
        lookup(&self.entries, successor)
    }

    /// Σ m_a(s'|s), equal to γ / (γ + α).
    pub fn total(&self) -> f64 {
        self.entries.iter().map(|(_, p)| p).sum()
    }
}

#[derive(Debug, Clone)]
pub struct DiscountedKernel {
    pub discount_rate: f64,
    pub table: RowTable<DiscountedRow>,
}

/// Discounted kernel at the model's own discount rate.
pub fn build_discounted_kernel(model: &Model) -> Result<DiscountedKernel> {
    build_discounted_kernel_with(model, model.discount_rate())
}

pub fn build_discounted_kernel_with(model: &Model, alpha: f64) -> Result<DiscountedKernel> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!(
            "discount rate must be positive, got {alpha}"
        )));
    }
    let groups = model
        .states()
        .map(|s| {
            admissible_actions(&s, model)
                .into_iter()
                .map(|a| {
                    let cost = immediate_cost(&s, a, model)?;
                    let (r_eff, m0) = post_action_configuration(&s, a, model)?;
                    let rate = model.arrival_rate_total() + model.solar_rate(r_eff);
                    Ok(DiscountedRow {
                        state: s.index,
                        action: a,
                        cost,
                        rate,
                        entries: successor_masses(model, r_eff, m0, rate + alpha),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DiscountedKernel {
        discount_rate: alpha,
        table: RowTable::from_groups(groups),
    })
}

/// Writes one CSV line per `(source, action, successor)` entry.
pub fn dump_kernel<W: Write>(kernel: &TransitionKernel, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["source", "action", "successor", "probability", "rate"])?;
    for row in kernel.rows() {
        for &(j, p) in &row.entries {
            w.write_record([
                row.state.to_string(),
                row.action.code().to_string(),
                j.to_string(),
                format!("{p:e}"),
                row.rate.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate, SystemParams, TrafficClass};

    fn table2() -> Model {
        validate(&SystemParams::table2()).unwrap()
    }

    #[test]
    fn post_action_cases() {
        let m = table2();
        let sp = m.space();
        let s = sp.state(0, 10, Event::PacketArrival(0));
        assert_eq!(post_action_configuration(&s, Action::ServeSbs, &m).unwrap(), (0, 7));
        assert_eq!(post_action_configuration(&s, Action::ServeMbs, &m).unwrap(), (0, 10));
        let s = sp.state(0, 10, Event::SolarTransition);
        assert_eq!(post_action_configuration(&s, Action::Fictitious, &m).unwrap(), (1, 10));
        let s = sp.state(1, 10, Event::SolarTransition);
        assert_eq!(post_action_configuration(&s, Action::Fictitious, &m).unwrap(), (0, 10));
        let s = sp.state(0, 2, Event::PacketArrival(0));
        assert!(post_action_configuration(&s, Action::ServeSbs, &m).is_err());
    }

    #[test]
    fn same_battery_entry_matches_closed_form() {
        let m = table2();
        let s = m.space().state(0, 10, Event::PacketArrival(0));
        let row = build_transition_row(&s, Action::ServeMbs, &m).unwrap();
        let expected = (10.0 / 15.04) * (1.0 - (-15.04f64 * 0.05).exp());
        assert!((row.rate - 15.04).abs() < 1e-12);
        assert!((row.expected_sojourn * row.rate - 1.0).abs() < 1e-15);
        assert!((row.probability(s.index) - expected).abs() < 1e-14);
    }

    #[test]
    fn full_battery_is_a_pure_race() {
        let m = table2();
        let sp = m.space();
        let s = sp.state(1, 20, Event::PacketArrival(1));
        let row = build_transition_row(&s, Action::ServeMbs, &m).unwrap();
        assert_eq!(row.entries.len(), 3);
        let g = 15.02;
        assert!((row.probability(sp.encode(1, 20, Event::PacketArrival(0))) - 10.0 / g).abs() < 1e-14);
        assert!((row.probability(sp.encode(1, 20, Event::PacketArrival(1))) - 5.0 / g).abs() < 1e-14);
        assert!((row.probability(sp.encode(1, 20, Event::SolarTransition)) - 0.02 / g).abs() < 1e-14);
    }

    #[test]
    fn embedded_rows_sum_to_one() {
        let m = table2();
        let k = build_embedded_kernel(&m).unwrap();
        assert_eq!(k.num_states(), 126);
        assert_eq!(k.len(), 192);
        for row in k.rows() {
            assert!((row.total() - 1.0).abs() < 1e-12);
            assert!(row.entries.iter().all(|&(_, p)| p > 0.0 && p <= 1.0));
        }
    }

    #[test]
    fn uniformized_rows() {
        let m = table2();
        let k = build_embedded_kernel(&m).unwrap();
        let u = uniformize(&k, &m);
        assert!((u.rate - 15.04).abs() < 1e-12);
        for (row, orig) in u.table.rows().iter().zip(k.rows()) {
            let sum: f64 = row.entries.iter().map(|(_, p)| p).sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(row.self_loop() >= 0.0);
            assert!((row.cost - orig.cost * orig.rate / u.rate).abs() < 1e-12);
        }
    }

    #[test]
    fn self_loop_vanishes_at_full_rate_without_self_mass() {
        // γ = φ for rows in the fastest radiation state. A full-battery solar
        // state has no mass on itself after the fictitious action moves r.
        let m = table2();
        let sp = m.space();
        let k = build_embedded_kernel(&m).unwrap();
        let u = uniformize(&k, &m);
        let s = sp.encode(1, 20, Event::SolarTransition);
        let row = k.row(s, Action::Fictitious).unwrap();
        assert!((row.rate - m.uniformization_rate()).abs() < 1e-12);
        assert_eq!(row.probability(s), 0.0);
        assert!(u.table.rows_of(s)[0].self_loop().abs() < 1e-15);
    }

    #[test]
    fn discounted_row_mass() {
        let m = table2();
        let d = build_discounted_kernel(&m).unwrap();
        for row in d.table.rows() {
            assert!((row.total() - row.rate / (row.rate + 0.05)).abs() < 1e-12);
        }
        let s = m.space().encode(0, 4, Event::PacketArrival(0));
        let row = &d.table.rows_of(s)[0];
        assert!((row.total() - 15.04 / 15.09).abs() < 1e-12);
        assert!((row.total() - 0.996687).abs() < 1e-6);
    }

    #[test]
    fn discounted_rows_approach_embedded_as_alpha_vanishes() {
        let m = table2();
        let k = build_embedded_kernel(&m).unwrap();
        let d = build_discounted_kernel_with(&m, 1e-9).unwrap();
        for (a, b) in k.rows().iter().zip(d.table.rows()) {
            assert_eq!(a.entries.len(), b.entries.len());
            for (x, y) in a.entries.iter().zip(&b.entries) {
                assert_eq!(x.0, y.0);
                assert!((x.1 - y.1).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn nonpositive_discount_is_rejected() {
        let m = table2();
        assert!(matches!(build_discounted_kernel_with(&m, 0.0), Err(Error::Config(_))));
        assert!(build_discounted_kernel_with(&m, -1.0).is_err());
    }

    #[test]
    fn night_state_never_charges() {
        let mut p = SystemParams::table2();
        p.solar.intensities[0] = 0.0;
        let m = validate(&p).unwrap();
        let s = m.space().state(0, 4, Event::PacketArrival(0));
        let row = build_transition_row(&s, Action::ServeSbs, &m).unwrap();
        assert_eq!(row.entries.len(), 3);
        for &(j, _) in &row.entries {
            assert_eq!(m.state(j).battery, 1);
        }
        assert!((row.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_unit_battery_rows_are_races() {
        let mut p = SystemParams::table2();
        p.solar.intensities = vec![0.0];
        p.solar.cloud_mean_diameters = vec![10.0];
        p.battery.capacity = 0.05;
        p.traffic.classes = vec![TrafficClass {
            arrival_rate: 3.0,
            mbs_cost_units: 2,
            sbs_cost_units: 1,
        }];
        let m = validate(&p).unwrap();
        let k = build_embedded_kernel(&m).unwrap();
        let g = 3.0 + 0.2;
        for row in k.rows() {
            assert_eq!(row.entries.len(), 2);
            let probs: Vec<f64> = row.entries.iter().map(|e| e.1).collect();
            assert!((probs[0] - 3.0 / g).abs() < 1e-14);
            assert!((probs[1] - 0.2 / g).abs() < 1e-14);
        }
    }

    #[test]
    fn dump_format() {
        let m = table2();
        let k = build_embedded_kernel(&m).unwrap();
        let mut buf = Vec::new();
        dump_kernel(&k, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("source,action,successor,probability,rate"));
        let n: usize = k.rows().iter().map(|r| r.entries.len()).sum();
        assert_eq!(lines.count(), n);
    }
}
