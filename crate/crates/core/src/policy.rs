//! Stationary policies, the greedy baseline, the policy file format and the
//! side-by-side policy table.

use std::fmt;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::model::{admissible_actions, is_admissible, Action, Event, Model};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PolicyLabel {
    RviAverage,
    ViDiscounted,
    Greedy,
    AllMbs,
    Custom(String),
}

impl fmt::Display for PolicyLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyLabel::RviAverage => f.write_str("rvi"),
            PolicyLabel::ViDiscounted => f.write_str("vi"),
            PolicyLabel::Greedy => f.write_str("greedy"),
            PolicyLabel::AllMbs => f.write_str("all-mbs"),
            PolicyLabel::Custom(s) => f.write_str(s),
        }
    }
}

/// One action per decision state, indexed like the state space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Policy {
    pub label: PolicyLabel,
    actions: Vec<Action>,
}

impl Policy {
    /// Builds a policy and checks it is total and admissible for `model`.
    pub fn new(label: PolicyLabel, actions: Vec<Action>, model: &Model) -> Result<Self> {
        let p = Policy { label, actions };
        p.check(model)?;
        Ok(p)
    }

    pub(crate) fn new_unchecked(label: PolicyLabel, actions: Vec<Action>) -> Self {
        Policy { label, actions }
    }

    pub fn action(&self, state: usize) -> Action {
        self.actions[state]
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn with_label(mut self, label: PolicyLabel) -> Self {
        self.label = label;
        self
    }

    pub fn check(&self, model: &Model) -> Result<()> {
        if self.actions.len() != model.num_states() {
            return Err(Error::InvalidArgument(format!(
                "policy `{}` covers {} states, model has {}",
                self.label,
                self.actions.len(),
                model.num_states()
            )));
        }
        for s in model.states() {
            let a = self.actions[s.index];
            if !is_admissible(&s, a, model) {
                return Err(Error::InadmissibleAction {
                    state: s.to_string(),
                    action: a,
                });
            }
        }
        Ok(())
    }

    /// Battery levels at which the small cell serves packets of `class` in
    /// radiation state `solar`.
    pub fn sbs_levels(&self, model: &Model, solar: usize, class: usize) -> Vec<u32> {
        let sp = model.space();
        (0..=model.max_units())
            .filter(|&m| self.actions[sp.encode(solar, m, Event::PacketArrival(class))] == Action::ServeSbs)
            .collect()
    }

    /// True when every `(r, class)` group switches to the small cell at most
    /// once as the battery grows.
    pub fn is_threshold(&self, model: &Model) -> bool {
        (0..model.solar_states()).all(|r| {
            (0..model.num_classes()).all(|n| {
                let levels = self.sbs_levels(model, r, n);
                levels
                    .first()
                    .is_none_or(|&lo| levels.len() as u32 == model.max_units() - lo + 1)
            })
        })
    }

    /// Writes the self-describing policy file: a CSV header then one line per
    /// state with `index,r,m,event,action`.
    pub fn write<W: Write>(&self, model: &Model, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["index", "r", "m", "event", "action"])?;
        for s in model.states() {
            w.write_record([
                s.index.to_string(),
                s.solar.to_string(),
                s.battery.to_string(),
                s.event.to_string(),
                self.actions[s.index].code().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Parses a file produced by [`Policy::write`], checking every line
    /// against the model's state space.
    pub fn read<R: Read>(label: PolicyLabel, model: &Model, input: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
        let header = r.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != ["index", "r", "m", "event", "action"] {
            return Err(Error::PolicyFile {
                line: 1,
                message: "expected header index,r,m,event,action".into(),
            });
        }
        let mut actions = vec![None; model.num_states()];
        for (i, rec) in r.records().enumerate() {
            let line = i + 2;
            let rec = rec?;
            let bad = |message: String| Error::PolicyFile { line, message };
            if rec.len() != 5 {
                return Err(bad(format!("expected 5 fields, found {}", rec.len())));
            }
            let index: usize = rec[0].parse().map_err(|e| bad(format!("index: {e}")))?;
            let solar: usize = rec[1].parse().map_err(|e| bad(format!("r: {e}")))?;
            let battery: u32 = rec[2].parse().map_err(|e| bad(format!("m: {e}")))?;
            let event: Event = rec[3].parse().map_err(bad)?;
            let code: i64 = rec[4].parse().map_err(|e| bad(format!("action: {e}")))?;
            let action = Action::from_code(code).ok_or_else(|| bad(format!("unknown action code {code}")))?;
            if index >= model.num_states() {
                return Err(bad(format!("index {index} out of range")));
            }
            let s = model.state(index);
            if (s.solar, s.battery, s.event) != (solar, battery, event) {
                return Err(bad(format!("index {index} is {s}, not <[{solar},{battery}],{event}>")));
            }
            if actions[index].replace(action).is_some() {
                return Err(bad(format!("duplicate index {index}")));
            }
        }
        let actions = actions
            .into_iter()
            .enumerate()
            .map(|(i, a)| {
                a.ok_or_else(|| Error::PolicyFile {
                    line: 0,
                    message: format!("state {} missing", model.state(i)),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Policy::new(label, actions, model)
    }
}

/// Serve from the small cell whenever the battery covers the packet.
pub fn greedy_policy(model: &Model) -> Policy {
    let actions = model
        .states()
        .map(|s| *admissible_actions(&s, model).last().unwrap())
        .collect();
    Policy::new_unchecked(PolicyLabel::Greedy, actions)
}

/// Serve every packet from the macro cell.
pub fn all_mbs_policy(model: &Model) -> Policy {
    let actions = model
        .states()
        .map(|s| match s.event {
            Event::SolarTransition => Action::Fictitious,
            Event::PacketArrival(_) => Action::ServeMbs,
        })
        .collect();
    Policy::new_unchecked(PolicyLabel::AllMbs, actions)
}

/// Action codes laid out as rows `m = 0..=M` and column groups `<[r,m],e_n>`
/// ordered by class then radiation state, one sub-column per policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    pub labels: Vec<String>,
    /// `(r, class)` per group.
    pub groups: Vec<(usize, usize)>,
    /// `cells[m][group][policy]`.
    pub cells: Vec<Vec<Vec<i8>>>,
}

pub fn policy_table(policies: &[&Policy], model: &Model) -> Result<PolicyTable> {
    if policies.is_empty() {
        return Err(Error::InvalidArgument("policy table needs at least one policy".into()));
    }
    for p in policies {
        if p.len() != model.num_states() {
            return Err(Error::InvalidArgument(format!(
                "policy `{}` has {} states, expected {}",
                p.label,
                p.len(),
                model.num_states()
            )));
        }
    }
    let groups: Vec<(usize, usize)> = (0..model.num_classes())
        .flat_map(|n| (0..model.solar_states()).map(move |r| (r, n)))
        .collect();
    let sp = model.space();
    let cells = (0..=model.max_units())
        .map(|m| {
            groups
                .iter()
                .map(|&(r, n)| {
                    let idx = sp.encode(r, m, Event::PacketArrival(n));
                    policies.iter().map(|p| p.action(idx).code()).collect()
                })
                .collect()
        })
        .collect();
    Ok(PolicyTable {
        labels: policies.iter().map(|p| p.label.to_string()).collect(),
        groups,
        cells,
    })
}

impl fmt::Display for PolicyTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sub = self.labels.iter().map(|l| l.len().max(2)).collect::<Vec<_>>();
        let group_width = sub.iter().sum::<usize>() + sub.len() - 1;
        write!(f, "{:>3}", "m")?;
        for &(r, n) in &self.groups {
            write!(f, " | {:^w$}", format!("<[{r},m],e{}>", n + 1), w = group_width)?;
        }
        writeln!(f)?;
        write!(f, "{:>3}", "")?;
        for _ in &self.groups {
            f.write_str(" |")?;
            for (l, w) in self.labels.iter().zip(&sub) {
                write!(f, " {l:>w$}")?;
            }
        }
        writeln!(f)?;
        for (m, row) in self.cells.iter().enumerate() {
            write!(f, "{m:>3}")?;
            for group in row {
                f.write_str(" |")?;
                for (c, w) in group.iter().zip(&sub) {
                    write!(f, " {c:>w$}")?;
                }
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate, SystemParams};

    fn table2() -> Model {
        validate(&SystemParams::table2()).unwrap()
    }

    #[test]
    fn greedy_thresholds() {
        let m = table2();
        let g = greedy_policy(&m);
        g.check(&m).unwrap();
        let sp = m.space();
        assert_eq!(g.action(sp.encode(0, 3, Event::PacketArrival(0))), Action::ServeSbs);
        assert_eq!(g.action(sp.encode(0, 2, Event::PacketArrival(0))), Action::ServeMbs);
        assert_eq!(g.action(sp.encode(1, 6, Event::PacketArrival(1))), Action::ServeSbs);
        assert_eq!(g.action(sp.encode(1, 5, Event::PacketArrival(1))), Action::ServeMbs);
        assert_eq!(g.action(sp.encode(1, 5, Event::SolarTransition)), Action::Fictitious);
        assert!(g.is_threshold(&m));
    }

    #[test]
    fn greedy_with_unit_cost_class() {
        let mut p = SystemParams::table2();
        p.traffic.classes[0].sbs_cost_units = 1;
        let m = validate(&p).unwrap();
        let g = greedy_policy(&m);
        assert_eq!(g.sbs_levels(&m, 0, 0), (1..=20).collect::<Vec<_>>());
    }

    #[test]
    fn inadmissible_policy_rejected() {
        let m = table2();
        let mut acts = greedy_policy(&m).actions().to_vec();
        acts[m.space().encode(0, 0, Event::PacketArrival(0))] = Action::ServeSbs;
        assert!(matches!(
            Policy::new(PolicyLabel::Custom("x".into()), acts, &m),
            Err(Error::InadmissibleAction { .. })
        ));
        assert!(Policy::new(PolicyLabel::Custom("x".into()), vec![], &m).is_err());
    }

    #[test]
    fn file_round_trip() {
        let m = table2();
        let g = greedy_policy(&m);
        let mut buf = Vec::new();
        g.write(&m, &mut buf).unwrap();
        let back = Policy::read(PolicyLabel::Greedy, &m, buf.as_slice()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn malformed_file_reports_line() {
        let m = table2();
        let mut buf = Vec::new();
        greedy_policy(&m).write(&m, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap().replace("0,0,0,e1,0", "0,0,0,e1,7");
        match Policy::read(PolicyLabel::Greedy, &m, text.as_bytes()) {
            Err(Error::PolicyFile { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let truncated: String = text.lines().take(10).collect::<Vec<_>>().join("\n");
        assert!(Policy::read(PolicyLabel::Greedy, &m, truncated.replace("e1,7", "e1,0").as_bytes()).is_err());
    }

    #[test]
    fn table_layout() {
        let m = table2();
        let g = greedy_policy(&m);
        let a = all_mbs_policy(&m);
        let t = policy_table(&[&g, &a, &g], &m).unwrap();
        assert_eq!(t.cells.len(), 21);
        assert_eq!(t.groups, vec![(0, 0), (1, 0), (0, 1), (1, 1)]);
        assert!(t.cells.iter().all(|r| r.len() == 4 && r.iter().all(|g| g.len() == 3)));
        assert_eq!(t.cells[3][0], vec![1, 0, 1]);
        let text = t.to_string();
        assert_eq!(text.lines().count(), 23);

        let single = policy_table(&[&g], &m).unwrap();
        assert!(single.cells[0].iter().all(|g| g.len() == 1));
        assert!(policy_table(&[], &m).is_err());
    }

    #[test]
    fn table_rejects_mismatched_space() {
        let m = table2();
        let mut p = SystemParams::table2();
        p.battery.capacity = 0.5;
        let small = validate(&p).unwrap();
        let g = greedy_policy(&small);
        assert!(policy_table(&[&g], &m).is_err());
    }
}
