//! Invariant battery run by `solar-smdp check`.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::kernel::{build_discounted_kernel, build_embedded_kernel, uniformize, TransitionKernel};
use crate::model::Model;
use crate::oracle::entry_by_quadrature;
use crate::policy::greedy_policy;
use crate::simulator::{empirical_kernel_check, simulate, KernelCheckConfig, SimConfig};
use crate::solvers::{solve_average_rvi, solve_discounted_vi, SolverConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub measured: String,
    pub limit: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub uniformization_rate: f64,
    pub num_states: usize,
    pub admissible_pairs: usize,
    pub checks: Vec<CheckOutcome>,
}

impl CheckReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&CheckOutcome> {
        self.checks.iter().find(|c| c.name == name)
    }

    fn push(&mut self, name: &str, passed: bool, measured: impl Into<String>, limit: impl Into<String>) {
        self.checks.push(CheckOutcome {
            name: name.into(),
            passed,
            measured: measured.into(),
            limit: limit.into(),
        });
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "phi = {}", self.uniformization_rate)?;
        writeln!(f, "states = {}", self.num_states)?;
        writeln!(f, "admissible pairs = {}", self.admissible_pairs)?;
        for c in &self.checks {
            writeln!(
                f,
                "{} {}: {} (limit {})",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.measured,
                c.limit
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CheckOptions {
    pub solver: SolverConfig,
    pub quadrature_samples: usize,
    pub seed: u64,
    pub kernel_check: KernelCheckConfig,
    /// Largest accepted normalized L1 distance in the empirical kernel check.
    pub kernel_check_limit: f64,
    pub simulation: SimConfig,
    /// Relative tolerance between g* and the simulated RVI cost.
    pub gain_tolerance: f64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            solver: SolverConfig::default(),
            quadrature_samples: 20,
            seed: 42,
            kernel_check: KernelCheckConfig::default(),
            kernel_check_limit: 4.0,
            simulation: SimConfig::default(),
            gain_tolerance: 0.02,
        }
    }
}

pub fn run_checks(model: &Model, options: &CheckOptions) -> Result<CheckReport> {
    let kernel = build_embedded_kernel(model)?;
    run_checks_with_kernel(model, &kernel, options)
}

/// Runs the battery against a caller-supplied embedded kernel. The discounted
/// kernel is always rebuilt from `model`.
pub fn run_checks_with_kernel(model: &Model, kernel: &TransitionKernel, options: &CheckOptions) -> Result<CheckReport> {
    let tol = options.solver.tolerance;
    let mut report = CheckReport {
        uniformization_rate: model.uniformization_rate(),
        num_states: model.num_states(),
        admissible_pairs: kernel.len(),
        checks: Vec::new(),
    };

    let worst = kernel.rows().iter().map(|r| (r.total() - 1.0).abs()).fold(0.0, f64::max);
    let negative = kernel.rows().iter().any(|r| r.entries.iter().any(|e| e.1 < 0.0));
    report.push(
        "embedded row sums",
        worst <= 1e-12 && !negative,
        format!("max |sum - 1| = {worst:e}{}", if negative { ", negative entry" } else { "" }),
        "1e-12",
    );

    let uni = uniformize(kernel, model);
    let worst = uni
        .table
        .rows()
        .iter()
        .map(|r| (r.entries.iter().map(|e| e.1).sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    let negative = uni.table.rows().iter().any(|r| r.entries.iter().any(|e| e.1 < 0.0));
    report.push(
        "uniformized row sums",
        worst <= 1e-12 && !negative,
        format!("max |sum - 1| = {worst:e}"),
        "1e-12",
    );

    let disc = build_discounted_kernel(model)?;
    let alpha = disc.discount_rate;
    let worst = disc
        .table
        .rows()
        .iter()
        .map(|r| (r.total() - r.rate / (r.rate + alpha)).abs())
        .fold(0.0, f64::max);
    report.push(
        "discounted row masses",
        worst <= 1e-12,
        format!("max |sum - gamma/(gamma+alpha)| = {worst:e}"),
        "1e-12",
    );

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut worst: f64 = 0.0;
    for _ in 0..options.quadrature_samples {
        let row = &kernel.rows()[rng.random_range(0..kernel.len())];
        let (j, p) = row.entries[rng.random_range(0..row.entries.len())];
        let q = entry_by_quadrature(model, &model.state(row.state), row.action, &model.state(j), None);
        worst = worst.max((p - q).abs());
    }
    report.push(
        "quadrature spot checks",
        worst <= 1e-9,
        format!("{} samples, max |closed form - quadrature| = {worst:e}", options.quadrature_samples),
        "1e-9",
    );

    let rvi = match solve_average_rvi(&uni, &options.solver) {
        Ok(r) => {
            report.push(
                "average-cost Bellman residual",
                r.bellman_residual <= 10.0 * tol,
                format!("{:e} after {} iterations, g* = {}", r.bellman_residual, r.iterations, r.gain),
                format!("{:e}", 10.0 * tol),
            );
            Some(r)
        }
        Err(e) => {
            report.push("average-cost Bellman residual", false, format!("solver failed: {e}"), "");
            None
        }
    };
    match solve_discounted_vi(&disc, &options.solver) {
        Ok(v) => {
            report.push(
                "discounted Bellman residual",
                v.bellman_span_residual <= 10.0 * tol,
                format!("span {:e} after {} iterations", v.bellman_span_residual, v.iterations),
                format!("{:e}", 10.0 * tol),
            );
            let threshold = rvi.as_ref().is_none_or(|r| r.policy.is_threshold(model)) && v.policy.is_threshold(model);
            report.push(
                "threshold structure",
                threshold,
                if threshold { "upward-closed" } else { "not upward-closed" },
                "every <r,e_n> group",
            );
        }
        Err(e) => report.push("discounted Bellman residual", false, format!("solver failed: {e}"), ""),
    }

    let ek = empirical_kernel_check(&greedy_policy(model), model, &options.kernel_check)?;
    report.push(
        "empirical kernel",
        ek.max_normalized <= options.kernel_check_limit,
        format!(
            "normalized L1 {:.3}, raw L1 {:.4} over {} rows",
            ek.max_normalized, ek.max_l1, ek.rows_compared
        ),
        format!("{}", options.kernel_check_limit),
    );

    if let Some(r) = rvi {
        let sim = simulate(&r.policy, model, &options.simulation)?;
        let rel = (sim.mean_avg_cost - r.gain).abs() / r.gain.abs().max(f64::MIN_POSITIVE);
        let violations: u64 = sim.runs.iter().map(|x| x.violations).sum();
        report.push(
            "gain vs simulation",
            rel <= options.gain_tolerance && violations == 0,
            format!(
                "g* = {:.4}, simulated {:.4} (rel {:.4}), violations {violations}",
                r.gain, sim.mean_avg_cost, rel
            ),
            format!("{}", options.gain_tolerance),
        );
    }
    Ok(report)
}
