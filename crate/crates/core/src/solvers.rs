//! Relative value iteration on the uniformized chain, value iteration on the
//! discounted kernel, and fixed-policy evaluation.
//!
//! Both iterations start from `v = 0` and stop once the span of the update
//! `v^{m+1} - v^m` drops below the tolerance. The policy is the argmin of the
//! last sweep. On exact ties the macro cell wins.

use crate::error::{Error, Result};
use crate::kernel::{DiscountedKernel, DiscountedRow, RowTable, UniformizedKernel, UniformizedRow};
use crate::model::{Action, Model};
use crate::policy::{Policy, PolicyLabel};

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub tolerance: f64,
    /// Reference state k* for relative value iteration.
    pub reference_state: usize,
    pub max_iterations: usize,
    /// Q-value gaps at or below this are reported as near ties.
    pub tie_tolerance: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tolerance: 1e-10,
            reference_state: 0,
            max_iterations: 10_000_000,
            tie_tolerance: 1e-9,
        }
    }
}

impl SolverConfig {
    fn check(&self, num_states: usize) -> Result<()> {
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(Error::InvalidArgument("solver tolerance must be positive".into()));
        }
        if self.reference_state >= num_states {
            return Err(Error::InvalidArgument(format!(
                "reference state {} out of range (|S| = {num_states})",
                self.reference_state
            )));
        }
        Ok(())
    }
}

/// Two actions of one state whose Q-values differ by at most the tie tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct NearTie {
    pub state: usize,
    pub gap: f64,
    pub chosen: Action,
}

#[derive(Debug, Clone)]
pub struct AverageSolveResult {
    pub policy: Policy,
    /// Optimal gain g*, cost per second.
    pub gain: f64,
    /// φ·[min, max] of the last Bellman increment; contains g*.
    pub gain_bracket: (f64, f64),
    pub relative_values: Vec<f64>,
    pub iterations: usize,
    pub final_span: f64,
    pub near_ties: Vec<NearTie>,
    /// Largest |v − (T v − v(k*))| at the returned values.
    pub bellman_residual: f64,
}

#[derive(Debug, Clone)]
pub struct DiscountedSolveResult {
    pub policy: Policy,
    pub values: Vec<f64>,
    pub iterations: usize,
    pub final_span: f64,
    pub near_ties: Vec<NearTie>,
    /// Span of every update, in iteration order.
    pub spans: Vec<f64>,
    /// Largest |v − T v| at the returned values.
    pub bellman_residual: f64,
    /// Span of `T v − v` at the returned values.
    pub bellman_span_residual: f64,
}

/// Gain and relative values of a fixed policy.
#[derive(Debug, Clone)]
pub struct PolicyEvaluation {
    pub gain: f64,
    pub gain_bracket: (f64, f64),
    pub relative_values: Vec<f64>,
    pub iterations: usize,
    pub final_span: f64,
}

trait BellmanRow {
    fn action(&self) -> Action;
    fn cost(&self) -> f64;
    fn entries(&self) -> &[(usize, f64)];

    fn q(&self, v: &[f64]) -> f64 {
        self.cost() + self.entries().iter().map(|&(j, p)| p * v[j]).sum::<f64>()
    }
}

impl BellmanRow for UniformizedRow {
    fn action(&self) -> Action {
        self.action
    }
    fn cost(&self) -> f64 {
        self.cost
    }
    fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }
}

impl BellmanRow for DiscountedRow {
    fn action(&self) -> Action {
        self.action
    }
    fn cost(&self) -> f64 {
        self.cost
    }
    fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }
}

struct Sweep {
    /// (T v)(s), before any offset.
    backup: Vec<f64>,
    actions: Vec<Action>,
    ties: Vec<NearTie>,
}

/// One Bellman backup over all states. `allowed` filters rows (used to pin a
/// policy). Rows are visited in admissible order, so strict `<` keeps the
/// macro cell on exact ties.
fn sweep<R: BellmanRow>(
    table: &RowTable<R>,
    v: &[f64],
    allowed: &dyn Fn(usize, Action) -> bool,
    tie_tolerance: f64,
    want_ties: bool,
) -> Result<Sweep> {
    let n = table.num_states();
    let mut backup = Vec::with_capacity(n);
    let mut actions = Vec::with_capacity(n);
    let mut ties = Vec::new();
    for s in 0..n {
        let mut best = f64::INFINITY;
        let mut best_action = None;
        let mut runner_up = f64::INFINITY;
        for row in table.rows_of(s).iter().filter(|r| allowed(s, r.action())) {
            let q = row.q(v);
            if q < best {
                runner_up = best;
                best = q;
                best_action = Some(row.action());
            } else if q < runner_up {
                runner_up = q;
            }
        }
        let action = best_action
            .ok_or_else(|| Error::InvalidArgument(format!("state {s} has no allowed action")))?;
        if want_ties && runner_up.is_finite() && runner_up - best <= tie_tolerance {
            ties.push(NearTie {
                state: s,
                gap: runner_up - best,
                chosen: action,
            });
        }
        backup.push(best);
        actions.push(action);
    }
    Ok(Sweep {
        backup,
        actions,
        ties,
    })
}

fn span_of_difference(a: &[f64], b: &[f64]) -> (f64, f64) {
    a.iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(d), hi.max(d)))
}

struct RviOutcome {
    values: Vec<f64>,
    actions: Vec<Action>,
    gain: f64,
    bracket: (f64, f64),
    iterations: usize,
    span: f64,
    ties: Vec<NearTie>,
    residual: f64,
}

fn relative_value_iteration(
    kernel: &UniformizedKernel,
    config: &SolverConfig,
    allowed: &dyn Fn(usize, Action) -> bool,
) -> Result<RviOutcome> {
    let table = &kernel.table;
    config.check(table.num_states())?;
    let k = config.reference_state;
    let phi = kernel.rate;
    let mut v = vec![0.0; table.num_states()];
    let mut iterations = 0;
    loop {
        let sw = sweep(table, &v, allowed, config.tie_tolerance, false)?;
        iterations += 1;
        let offset = v[k];
        let next: Vec<f64> = sw.backup.iter().map(|w| w - offset).collect();
        let (lo, hi) = span_of_difference(&next, &v);
        let span = hi - lo;
        if span < config.tolerance {
            // Bellman increment T v − v of the last sweep.
            let (ilo, ihi) = span_of_difference(&sw.backup, &v);
            let gain = phi * (sw.backup[k] - v[k]);
            let check = sweep(table, &next, allowed, config.tie_tolerance, false)?;
            let residual = check
                .backup
                .iter()
                .zip(&next)
                .map(|(w, x)| (w - next[k] - x).abs())
                .fold(0.0, f64::max);
            let ties = sweep(table, &v, allowed, config.tie_tolerance, true)?.ties;
            return Ok(RviOutcome {
                values: next,
                actions: sw.actions,
                gain,
                bracket: (phi * ilo, phi * ihi),
                iterations,
                span,
                ties,
                residual,
            });
        }
        if iterations >= config.max_iterations {
            return Err(Error::NonConvergence { iterations, span });
        }
        v = next;
    }
}

/// Relative value iteration for the long-run average cost per second.
pub fn solve_average_rvi(kernel: &UniformizedKernel, config: &SolverConfig) -> Result<AverageSolveResult> {
    let out = relative_value_iteration(kernel, config, &|_, _| true)?;
    for t in &out.ties {
        log::warn!("rvi: near tie at state {} (gap {:e})", t.state, t.gap);
    }
    Ok(AverageSolveResult {
        policy: Policy::new_unchecked(PolicyLabel::RviAverage, out.actions),
        gain: out.gain,
        gain_bracket: out.bracket,
        relative_values: out.values,
        iterations: out.iterations,
        final_span: out.span,
        near_ties: out.ties,
        bellman_residual: out.residual,
    })
}

/// Average cost per second of a fixed policy: the same recursion with the
/// minimization pinned to the policy's action.
pub fn evaluate_policy_average(
    policy: &Policy,
    kernel: &UniformizedKernel,
    config: &SolverConfig,
) -> Result<PolicyEvaluation> {
    if policy.len() != kernel.table.num_states() {
        return Err(Error::InvalidArgument(format!(
            "policy covers {} states, kernel has {}",
            policy.len(),
            kernel.table.num_states()
        )));
    }
    let out = relative_value_iteration(kernel, config, &|s, a| policy.action(s) == a)?;
    Ok(PolicyEvaluation {
        gain: out.gain,
        gain_bracket: out.bracket,
        relative_values: out.values,
        iterations: out.iterations,
        final_span: out.span,
    })
}

/// Value iteration for the expected discounted total cost.
pub fn solve_discounted_vi(kernel: &DiscountedKernel, config: &SolverConfig) -> Result<DiscountedSolveResult> {
    let table = &kernel.table;
    config.check(table.num_states())?;
    let mut v = vec![0.0; table.num_states()];
    let mut spans = Vec::new();
    let all = |_: usize, _: Action| true;
    loop {
        let sw = sweep(table, &v, &all, config.tie_tolerance, false)?;
        let (lo, hi) = span_of_difference(&sw.backup, &v);
        let span = hi - lo;
        spans.push(span);
        if span < config.tolerance {
            let ties = sweep(table, &v, &all, config.tie_tolerance, true)?.ties;
            for t in &ties {
                log::warn!("vi: near tie at state {} (gap {:e})", t.state, t.gap);
            }
            let values = sw.backup;
            let check = sweep(table, &values, &all, config.tie_tolerance, false)?;
            let (rlo, rhi) = span_of_difference(&check.backup, &values);
            return Ok(DiscountedSolveResult {
                policy: Policy::new_unchecked(PolicyLabel::ViDiscounted, sw.actions),
                values,
                iterations: spans.len(),
                final_span: span,
                near_ties: ties,
                spans,
                bellman_residual: rlo.abs().max(rhi.abs()),
                bellman_span_residual: rhi - rlo,
            });
        }
        if spans.len() >= config.max_iterations {
            return Err(Error::NonConvergence {
                iterations: spans.len(),
                span,
            });
        }
        v = sw.backup;
    }
}

/// Discounted value of a fixed policy by successive approximation until the
/// sup-norm update falls below the tolerance.
pub fn evaluate_policy_discounted(
    policy: &Policy,
    kernel: &DiscountedKernel,
    config: &SolverConfig,
) -> Result<Vec<f64>> {
    let table = &kernel.table;
    let mut v = vec![0.0; table.num_states()];
    let pinned = |s: usize, a: Action| policy.action(s) == a;
    for _ in 0..config.max_iterations {
        let sw = sweep(table, &v, &pinned, config.tie_tolerance, false)?;
        let (lo, hi) = span_of_difference(&sw.backup, &v);
        v = sw.backup;
        if lo.abs().max(hi.abs()) < config.tolerance {
            return Ok(v);
        }
    }
    Err(Error::NonConvergence {
        iterations: config.max_iterations,
        span: f64::NAN,
    })
}

/// Crude bound on discounted values: c_max (γ_max + α) / α.
pub fn discounted_value_bound(model: &Model, alpha: f64) -> f64 {
    let gamma_max = model.uniformization_rate();
    model.max_immediate_cost() * (gamma_max + alpha) / alpha
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{build_discounted_kernel, build_embedded_kernel, uniformize};
    use crate::model::{validate, SystemParams, TrafficClass};
    use crate::policy::{all_mbs_policy, greedy_policy};

    fn kernels(p: &SystemParams) -> (Model, UniformizedKernel, DiscountedKernel) {
        let m = validate(p).unwrap();
        let k = build_embedded_kernel(&m).unwrap();
        let u = uniformize(&k, &m);
        let d = build_discounted_kernel(&m).unwrap();
        (m, u, d)
    }

    fn quick() -> SolverConfig {
        SolverConfig {
            tolerance: 1e-9,
            ..Default::default()
        }
    }

    #[test]
    fn all_mbs_gain_is_analytic() {
        let (m, u, _) = kernels(&SystemParams::table2());
        let ev = evaluate_policy_average(&all_mbs_policy(&m), &u, &SolverConfig::default()).unwrap();
        assert!((ev.gain - 260.0).abs() < 1e-6, "{}", ev.gain);
    }

    #[test]
    fn singleton_action_sets() {
        let (m, u, _) = kernels(&SystemParams::table2());
        let restricted = UniformizedKernel {
            rate: u.rate,
            table: u.table.filtered(|r| r.action != Action::ServeSbs),
        };
        let cfg = SolverConfig::default();
        let sol = solve_average_rvi(&restricted, &cfg).unwrap();
        assert_eq!(sol.policy.actions(), all_mbs_policy(&m).actions());
        assert!((sol.gain - 260.0).abs() < 1e-6, "{}", sol.gain);
        let ev = evaluate_policy_average(&sol.policy, &u, &cfg).unwrap();
        assert!((ev.gain - sol.gain).abs() < 1e-8);
    }

    #[test]
    fn single_class_all_mbs_gain() {
        let mut p = SystemParams::table2();
        p.battery.capacity = 0.1;
        p.traffic.classes = vec![TrafficClass {
            arrival_rate: 4.0,
            mbs_cost_units: 3,
            sbs_cost_units: 2,
        }];
        let (m, u, _) = kernels(&p);
        let ev = evaluate_policy_average(&all_mbs_policy(&m), &u, &SolverConfig::default()).unwrap();
        assert!((ev.gain - 2.0 * 3.0 * 4.0).abs() < 1e-6);
    }

    #[test]
    fn rvi_policy_evaluates_to_its_gain() {
        let (m, u, _) = kernels(&SystemParams::table2());
        let cfg = SolverConfig::default();
        let sol = solve_average_rvi(&u, &cfg).unwrap();
        assert!(sol.final_span < cfg.tolerance);
        assert!(sol.gain >= 0.0);
        assert!(sol.gain_bracket.0 <= sol.gain + 1e-9 && sol.gain <= sol.gain_bracket.1 + 1e-9);
        assert!(sol.bellman_residual <= 10.0 * cfg.tolerance, "{}", sol.bellman_residual);
        let ev = evaluate_policy_average(&sol.policy, &u, &cfg).unwrap();
        assert!((ev.gain - sol.gain).abs() < 1e-8);
        let greedy = evaluate_policy_average(&greedy_policy(&m), &u, &cfg).unwrap();
        assert!(sol.gain <= greedy.gain + 1e-8);
        assert!(sol.gain <= 260.0 + 1e-8);
    }

    #[test]
    fn zero_prices_give_zero_values() {
        let mut p = SystemParams::table2();
        p.economics.grid_price = 0.0;
        p.economics.solar_price = 0.0;
        let (_, _, d) = kernels(&p);
        let sol = solve_discounted_vi(&d, &quick()).unwrap();
        assert!(sol.values.iter().all(|&v| v == 0.0));
        assert_eq!(sol.iterations, 1);
    }

    #[test]
    fn vi_contracts_and_stays_bounded() {
        let (m, _, d) = kernels(&SystemParams::table2());
        let cfg = SolverConfig::default();
        let sol = solve_discounted_vi(&d, &cfg).unwrap();
        let modulus = d
            .table
            .rows()
            .iter()
            .map(|r| r.rate / (r.rate + 0.05))
            .fold(0.0, f64::max);
        assert!((modulus - 15.04 / 15.09).abs() < 1e-12);
        for w in sol.spans.windows(2).take_while(|w| w[1] > 1e-6) {
            assert!(w[1] / w[0] <= modulus + 1e-9, "{} {}", w[0], w[1]);
        }
        let bound = discounted_value_bound(&m, 0.05);
        assert!(sol.values.iter().all(|&v| v >= 0.0 && v <= bound));
        assert!(sol.bellman_span_residual <= 10.0 * cfg.tolerance);
        sol.policy.check(&m).unwrap();
    }

    #[test]
    fn vi_matches_policy_evaluation() {
        let (_, _, d) = kernels(&SystemParams::table2());
        let cfg = SolverConfig::default();
        let sol = solve_discounted_vi(&d, &cfg).unwrap();
        let v = evaluate_policy_discounted(&sol.policy, &d, &SolverConfig { tolerance: 1e-9, ..cfg }).unwrap();
        // Span stopping pins values only up to a common offset.
        let shift = v[0] - sol.values[0];
        assert!(shift.abs() < 1e-3 * v[0]);
        for (a, b) in v.iter().zip(&sol.values) {
            assert!((a - b - shift).abs() < 1e-6, "{a} {b}");
        }
    }

    #[test]
    fn bad_config_rejected() {
        let (_, u, _) = kernels(&SystemParams::table2());
        let cfg = SolverConfig {
            reference_state: 1000,
            ..Default::default()
        };
        assert!(matches!(solve_average_rvi(&u, &cfg), Err(Error::InvalidArgument(_))));
        let cfg = SolverConfig {
            max_iterations: 3,
            ..Default::default()
        };
        assert!(matches!(
            solve_average_rvi(&u, &cfg),
            Err(Error::NonConvergence { iterations: 3, .. })
        ));
    }
}
