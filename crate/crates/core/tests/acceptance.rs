//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any failed.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use solar_smdp::cli::{solve_rvi, solve_vi};
use solar_smdp::config::{set_parameter, ExperimentConfig};
use solar_smdp::kernel::{build_discounted_kernel, build_embedded_kernel, uniformize};
use solar_smdp::oracle::entry_by_quadrature;
use solar_smdp::policy::{all_mbs_policy, greedy_policy};
use solar_smdp::simulator::{discounted_cost_estimate, simulate, BatteryDynamics, DiscountConfig, SimConfig};
use solar_smdp::solvers::{evaluate_policy_average, NearTie, SolverConfig};
use solar_smdp::{validate, Event, Model, Policy, SystemParams};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn table2() -> Model {
    validate(&SystemParams::table2()).unwrap()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("took {elapsed:?}, limit {limit:?}"))
}

fn kernel_soundness() -> Outcome {
    let start = Instant::now();
    let m = table2();
    let k = build_embedded_kernel(&m).map_err(|e| e.to_string())?;
    let u = uniformize(&k, &m);
    let d = build_discounted_kernel(&m).map_err(|e| e.to_string())?;
    ensure(k.len() == 192, || format!("{} admissible rows, expected 192", k.len()))?;
    let emb = k.rows().iter().map(|r| (r.total() - 1.0).abs()).fold(0.0, f64::max);
    let uni = u
        .table
        .rows()
        .iter()
        .map(|r| (r.entries.iter().map(|e| e.1).sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    let disc = d
        .table
        .rows()
        .iter()
        .map(|r| (r.total() - r.rate / (r.rate + 0.05)).abs())
        .fold(0.0, f64::max);
    let elapsed = start.elapsed();
    ensure(emb <= 1e-12 && uni <= 1e-12 && disc <= 1e-12, || {
        format!("max deviations embedded {emb:e}, uniformized {uni:e}, discounted {disc:e}")
    })?;
    within(elapsed, Duration::from_secs(1))?;
    Ok(format!(
        "192 rows; max deviation embedded {emb:e}, uniformized {uni:e}, discounted {disc:e}; {elapsed:?}"
    ))
}

fn quadrature_oracle() -> Outcome {
    let m = table2();
    let k = build_embedded_kernel(&m).map_err(|e| e.to_string())?;
    let d = build_discounted_kernel(&m).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut we, mut wd) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let i = rng.random_range(0..k.len());
        let row = &k.rows()[i];
        let (j, p) = row.entries[rng.random_range(0..row.entries.len())];
        let s = m.state(row.state);
        let t = m.state(j);
        we = we.max((p - entry_by_quadrature(&m, &s, row.action, &t, None)).abs());
        let pd = d.table.rows()[i].probability(j);
        wd = wd.max((pd - entry_by_quadrature(&m, &s, row.action, &t, Some(0.05))).abs());
    }
    ensure(we <= 1e-9 && wd <= 1e-9, || format!("max error embedded {we:e}, discounted {wd:e}"))?;
    Ok(format!("20 entries; max error embedded {we:e}, discounted {wd:e}"))
}

/// Smallest battery level served by the small cell per `<r, e_n>` group, in
/// the order (r0,e1), (r1,e1), (r0,e2), (r1,e2). `None` means never.
type Thresholds = [Option<u32>; 4];

const GROUPS: [(usize, usize); 4] = [(0, 0), (1, 0), (0, 1), (1, 1)];

fn expected_cells(t: &Thresholds, m: u32) -> [i8; 4] {
    let mut row = [0; 4];
    for g in 0..4 {
        row[g] = t[g].is_some_and(|lo| m >= lo) as i8;
    }
    row
}

fn compare_table(model: &Model, policy: &Policy, expected: &Thresholds, ties: &[NearTie]) -> (Vec<String>, usize) {
    let mut mismatches = Vec::new();
    let mut unexplained = 0;
    for m in 0..=model.max_units() {
        let want = expected_cells(expected, m);
        for (g, &(r, n)) in GROUPS.iter().enumerate() {
            let idx = model.space().encode(r, m, Event::PacketArrival(n));
            let got = policy.action(idx).code();
            if got != want[g] {
                let tie = ties.iter().find(|t| t.state == idx);
                if tie.is_none() {
                    unexplained += 1;
                }
                mismatches.push(format!(
                    "{} got {got} want {}{}",
                    model.state(idx),
                    want[g],
                    tie.map_or(String::new(), |t| format!(" (tie {:e})", t.gap))
                ));
            }
        }
    }
    (mismatches, unexplained)
}

fn show(t: &Thresholds) -> String {
    let parts: Vec<String> = t
        .iter()
        .map(|x| x.map_or("never".to_string(), |v| format!("m>={v}")))
        .collect();
    parts.join("/")
}

fn measured(model: &Model, policy: &Policy) -> Thresholds {
    let mut t = [None; 4];
    for (g, &(r, n)) in GROUPS.iter().enumerate() {
        t[g] = policy.sbs_levels(model, r, n).first().copied();
    }
    t
}

fn reference_policy_table() -> Outcome {
    let start = Instant::now();
    let m = table2();
    let cfg = SolverConfig::default();
    let rvi = solve_rvi(&m, &cfg).map_err(|e| e.to_string())?;
    let vi = solve_vi(&m, &cfg).map_err(|e| e.to_string())?;
    let greedy = greedy_policy(&m);
    let cases: [(&str, &Policy, Thresholds, &[NearTie]); 3] = [
        ("rvi", &rvi.policy, [Some(6), Some(3), Some(14), Some(12)], &rvi.near_ties),
        ("vi", &vi.policy, [Some(3), Some(3), Some(17), Some(9)], &vi.near_ties),
        ("greedy", &greedy, [Some(3), Some(3), Some(6), Some(6)], &[]),
    ];
    let mut failures = Vec::new();
    let mut summary = Vec::new();
    for (name, policy, expected, ties) in cases {
        let (mismatches, unexplained) = compare_table(&m, policy, &expected, ties);
        summary.push(format!(
            "{name} {} (expected {}, {} mismatched cells)",
            show(&measured(&m, policy)),
            show(&expected),
            mismatches.len()
        ));
        if mismatches.len() > 2 || unexplained > 0 {
            failures.push(format!("{name}: {}", mismatches.join(", ")));
        }
    }
    let elapsed = start.elapsed();
    if !failures.is_empty() {
        return Err(format!("{}; mismatches: {}", summary.join("; "), failures.join("; ")));
    }
    within(elapsed, Duration::from_secs(30))?;
    Ok(summary.join("; "))
}

fn analytic_gain() -> Outcome {
    let start = Instant::now();
    let m = table2();
    let k = build_embedded_kernel(&m).map_err(|e| e.to_string())?;
    let u = uniformize(&k, &m);
    let p = all_mbs_policy(&m);
    let ev = evaluate_policy_average(&p, &u, &SolverConfig::default()).map_err(|e| e.to_string())?;
    ensure((ev.gain - 260.0).abs() <= 1e-6, || format!("evaluated gain {}", ev.gain))?;
    let sim = simulate(&p, &m, &SimConfig::default()).map_err(|e| e.to_string())?;
    let se = sim.std_error();
    let z = (sim.mean_avg_cost - 260.0).abs() / se;
    ensure(z <= 3.0, || format!("simulated {} (se {se}), {z:.2} se from 260", sim.mean_avg_cost))?;
    within(start.elapsed(), Duration::from_secs(30))?;
    Ok(format!(
        "evaluated gain {:.9}; simulated {:.4} (se {se:.4}, {z:.2} se)",
        ev.gain, sim.mean_avg_cost
    ))
}

fn solver_simulator_consistency() -> Outcome {
    let m = table2();
    let rvi = solve_rvi(&m, &SolverConfig::default()).map_err(|e| e.to_string())?;
    let sim = simulate(&rvi.policy, &m, &SimConfig::default()).map_err(|e| e.to_string())?;
    let rel = (sim.mean_avg_cost - rvi.gain).abs() / rvi.gain;
    let violations: u64 = sim.runs.iter().map(|r| r.violations).sum();
    ensure(violations == 0, || format!("{violations} insufficient-energy requests"))?;
    ensure(rel <= 0.02, || {
        format!("g* {:.4}, simulated {:.4}, relative gap {rel:.4}", rvi.gain, sim.mean_avg_cost)
    })?;
    Ok(format!(
        "g* {:.4}, simulated {:.4} (seed 42), relative gap {rel:.4}",
        rvi.gain, sim.mean_avg_cost
    ))
}

fn sweep_ordering() -> Outcome {
    let start = Instant::now();
    let cfg = SolverConfig::default();
    let sim = SimConfig::default();
    let mut worst_gap: f64 = 0.0;
    let mut problems = Vec::new();
    for k in 1..=9 {
        let lambda = 2.0 * k as f64;
        let mut p = SystemParams::table2();
        set_parameter(&mut p, "traffic.classes[0].arrival_rate", lambda).map_err(|e| e.to_string())?;
        let m = validate(&p).map_err(|e| e.to_string())?;
        let rvi = solve_rvi(&m, &cfg).map_err(|e| e.to_string())?.policy;
        let vi = solve_vi(&m, &cfg).map_err(|e| e.to_string())?.policy;
        let cost = |policy: &Policy| simulate(policy, &m, &sim).map(|r| r.mean_avg_cost);
        let (cr, cv, cg) = (
            cost(&rvi).map_err(|e| e.to_string())?,
            cost(&vi).map_err(|e| e.to_string())?,
            cost(&greedy_policy(&m)).map_err(|e| e.to_string())?,
        );
        let gap = (cr - cv).abs() / cr;
        worst_gap = worst_gap.max(gap);
        if cr > cg || cv > cg || gap > 0.03 {
            problems.push(format!("lambda1={lambda}: rvi {cr:.3}, vi {cv:.3}, greedy {cg:.3}"));
        }
    }
    let elapsed = start.elapsed();
    ensure(problems.is_empty(), || problems.join("; "))?;
    within(elapsed, Duration::from_secs(300))?;
    Ok(format!(
        "9 points; rvi, vi <= greedy everywhere; max |rvi - vi| / rvi = {worst_gap:.4}; {elapsed:?}"
    ))
}

fn discounted_consistency() -> Outcome {
    let m = table2();
    let vi = solve_vi(&m, &SolverConfig::default()).map_err(|e| e.to_string())?;
    let s0 = m.space().state(0, 10, Event::PacketArrival(0));
    let cfg = DiscountConfig {
        alpha: 0.05,
        horizon: 400.0,
        runs: 200,
        seed: 42,
        dynamics: BatteryDynamics::Quantized,
    };
    let est = discounted_cost_estimate(&vi.policy, &m, &s0, &cfg).map_err(|e| e.to_string())?;
    let v = vi.values[s0.index];
    let z = (est.mean - v).abs() / est.std_error;
    ensure(z <= 3.0, || format!("v({s0}) = {v:.3}, estimate {:.3} (se {:.3})", est.mean, est.std_error))?;
    Ok(format!(
        "v({s0}) = {v:.3}, estimate {:.3} (se {:.3}, {z:.2} se, 200 runs x 400 s)",
        est.mean, est.std_error
    ))
}

fn run_cli(args: &[&str], out: &Path) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_solar-smdp"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(status.status.success(), || {
        format!("{args:?} failed: {}", String::from_utf8_lossy(&status.stderr))
    })
}

fn same_files(a: &Path, b: &Path, names: &[&str]) -> Result<(), String> {
    for n in names {
        let x = fs::read(a.join(n)).map_err(|e| format!("{n}: {e}"))?;
        let y = fs::read(b.join(n)).map_err(|e| format!("{n}: {e}"))?;
        ensure(x == y, || format!("{n} differs between invocations"))?;
    }
    Ok(())
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let sim = ["simulate", "--seed", "42", "--policy", "rvi,greedy"];
    run_cli(&sim, &a)?;
    run_cli(&sim, &b)?;
    same_files(&a, &b, &["runs.csv", "summary.csv"])?;
    let (c, d) = (dir.path().join("c"), dir.path().join("d"));
    run_cli(&["solve", "--criterion", "both"], &c)?;
    run_cli(&["solve", "--criterion", "both"], &d)?;
    same_files(
        &c,
        &d,
        &["policy_rvi.csv", "policy_vi.csv", "policy_greedy.csv", "solve_report.json"],
    )?;
    Ok("simulate CSVs and solve policies/reports byte-identical across two invocations".into())
}

fn threshold_structure() -> Outcome {
    let m = table2();
    let cfg = SolverConfig::default();
    let policies = [
        solve_rvi(&m, &cfg).map_err(|e| e.to_string())?.policy,
        solve_vi(&m, &cfg).map_err(|e| e.to_string())?.policy,
        greedy_policy(&m),
        all_mbs_policy(&m),
    ];
    let bad: Vec<String> = policies
        .iter()
        .filter(|p| !p.is_threshold(&m))
        .map(|p| p.label.to_string())
        .collect();
    ensure(bad.is_empty(), || format!("not upward-closed: {}", bad.join(", ")))?;
    Ok("rvi, vi, greedy, all-mbs upward-closed in every <r,e_n> group".into())
}

fn main() -> ExitCode {
    // Keep the bundled configuration and the built-in reference in sync.
    assert_eq!(ExperimentConfig::table2().params(), SystemParams::table2());
    let criteria: [Criterion; 9] = [
        ("kernel soundness", kernel_soundness),
        ("quadrature oracle", quadrature_oracle),
        ("reference policy table", reference_policy_table),
        ("analytic all-MBS gain", analytic_gain),
        ("solver/simulator consistency", solver_simulator_consistency),
        ("arrival-rate sweep ordering", sweep_ordering),
        ("discounted value consistency", discounted_consistency),
        ("determinism", determinism),
        ("threshold structure", threshold_structure),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS criterion {}: {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {}: {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
