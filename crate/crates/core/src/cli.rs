//! Command-line front end: `solve`, `simulate`, `sweep` and `check`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::check::{run_checks, CheckOptions, CheckReport};
use crate::config::{set_parameter, ExperimentConfig, RunManifest};
use crate::error::{Error, Result};
use crate::kernel::{build_discounted_kernel, build_embedded_kernel, dump_kernel, uniformize};
use crate::model::{validate, Event, Model};
use crate::policy::{all_mbs_policy, greedy_policy, policy_table, Policy, PolicyLabel};
use crate::simulator::{simulate, write_trace, SimConfig, SimulationResult};
use crate::solvers::{solve_average_rvi, solve_discounted_vi, AverageSolveResult, DiscountedSolveResult, NearTie, SolverConfig};

#[derive(Debug, Parser)]
#[command(name = "solar-smdp", version, about = "Macro/small cell link selection with a solar-powered small cell")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute optimal policies and write them with a comparison table.
    Solve(SolveArgs),
    /// Simulate policies and write per-run and aggregate costs.
    Simulate(SimulateArgs),
    /// Re-solve and simulate over a range of one parameter.
    Sweep(SweepArgs),
    /// Run the invariant checks and report each one.
    Check(CheckArgs),
}

#[derive(Debug, Args, Clone)]
pub struct CommonArgs {
    /// TOML configuration file, or `table2` for the bundled one.
    #[arg(long, default_value = "table2")]
    pub config: String,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Master seed; overrides the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Criterion {
    Average,
    Discounted,
    Both,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_enum, default_value_t = Criterion::Both)]
    pub criterion: Criterion,
    /// Also write the embedded transition kernel to kernel.csv.
    #[arg(long)]
    pub dump_kernel: bool,
}

#[derive(Debug, Args, Clone)]
pub struct SimArgs {
    /// rvi, vi, greedy, all-mbs or file:PATH; repeat or comma-separate.
    #[arg(long, value_delimiter = ',')]
    pub policy: Vec<String>,
    /// Seconds per run.
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub runs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub sim: SimArgs,
    /// Write the event trace of each policy's first run.
    #[arg(long)]
    pub trace: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub sim: SimArgs,
    /// Dotted parameter path, e.g. traffic.classes[0].arrival_rate.
    #[arg(long)]
    pub parameter: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub values: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

/// Runs a parsed command. `Ok(false)` means the work finished but some
/// requested check or sweep point failed.
pub fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Solve(a) => cmd_solve(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Check(a) => cmd_check(&a).map(|r| r.all_passed()),
    }
}

struct Context {
    config: ExperimentConfig,
    model: Model,
    out: PathBuf,
}

fn prepare(common: &CommonArgs) -> Result<Context> {
    let mut config = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        config.simulation.seed = seed;
    }
    let model = build_model(&config)?;
    fs::create_dir_all(&common.out)?;
    Ok(Context {
        config,
        model,
        out: common.out.clone(),
    })
}

fn build_model(config: &ExperimentConfig) -> Result<Model> {
    let model = validate(&config.params())?;
    for w in model.warnings() {
        log::warn!("{w}");
    }
    Ok(model)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_manifest(ctx: &Context, command: &str, source: &str, edit: impl FnOnce(&mut RunManifest)) -> Result<()> {
    let mut m = RunManifest::new(command, source, &ctx.config);
    edit(&mut m);
    fs::write(ctx.out.join("manifest.json"), m.to_json() + "\n")?;
    Ok(())
}

#[derive(Serialize)]
struct TieReport {
    state: String,
    gap: f64,
    chosen: i8,
}

fn ties(model: &Model, ties: &[NearTie]) -> Vec<TieReport> {
    ties.iter()
        .map(|t| TieReport {
            state: model.state(t.state).to_string(),
            gap: t.gap,
            chosen: t.chosen.code(),
        })
        .collect()
}

#[derive(Serialize)]
struct ThresholdReport {
    group: String,
    /// Smallest battery level served by the small cell, if any.
    threshold: Option<u32>,
}

fn thresholds(model: &Model, policy: &Policy) -> Vec<ThresholdReport> {
    (0..model.num_classes())
        .flat_map(|n| (0..model.solar_states()).map(move |r| (r, n)))
        .map(|(r, n)| ThresholdReport {
            group: format!("<[{r},m],e{}>", n + 1),
            threshold: policy.sbs_levels(model, r, n).first().copied(),
        })
        .collect()
}

#[derive(Serialize)]
struct AverageReport {
    gain: f64,
    gain_bracket: (f64, f64),
    iterations: usize,
    final_span: f64,
    bellman_residual: f64,
    thresholds: Vec<ThresholdReport>,
    near_ties: Vec<TieReport>,
}

#[derive(Serialize)]
struct DiscountedReport {
    discount_rate: f64,
    iterations: usize,
    final_span: f64,
    bellman_span_residual: f64,
    value_range: (f64, f64),
    thresholds: Vec<ThresholdReport>,
    near_ties: Vec<TieReport>,
}

#[derive(Serialize)]
struct SolveReport {
    uniformization_rate: f64,
    num_states: usize,
    admissible_pairs: usize,
    average: Option<AverageReport>,
    discounted: Option<DiscountedReport>,
}

pub fn solve_rvi(model: &Model, cfg: &SolverConfig) -> Result<AverageSolveResult> {
    let k = build_embedded_kernel(model)?;
    solve_average_rvi(&uniformize(&k, model), cfg)
}

pub fn solve_vi(model: &Model, cfg: &SolverConfig) -> Result<DiscountedSolveResult> {
    solve_discounted_vi(&build_discounted_kernel(model)?, cfg)
}

pub fn cmd_solve(args: &SolveArgs) -> Result<bool> {
    let ctx = prepare(&args.common)?;
    let model = &ctx.model;
    let cfg = ctx.config.solver_config();
    let kernel = build_embedded_kernel(model)?;
    if args.dump_kernel {
        dump_kernel(&kernel, create(&ctx.out.join("kernel.csv"))?)?;
    }
    let mut report = SolveReport {
        uniformization_rate: model.uniformization_rate(),
        num_states: model.num_states(),
        admissible_pairs: kernel.len(),
        average: None,
        discounted: None,
    };
    let mut policies = Vec::new();
    if args.criterion != Criterion::Discounted {
        let r = solve_average_rvi(&uniformize(&kernel, model), &cfg)?;
        println!("rvi: g* = {:.6} after {} iterations", r.gain, r.iterations);
        report.average = Some(AverageReport {
            gain: r.gain,
            gain_bracket: r.gain_bracket,
            iterations: r.iterations,
            final_span: r.final_span,
            bellman_residual: r.bellman_residual,
            thresholds: thresholds(model, &r.policy),
            near_ties: ties(model, &r.near_ties),
        });
        policies.push(r.policy);
    }
    if args.criterion != Criterion::Average {
        let d = build_discounted_kernel(model)?;
        let v = solve_discounted_vi(&d, &cfg)?;
        println!("vi: {} iterations", v.iterations);
        let lo = v.values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        report.discounted = Some(DiscountedReport {
            discount_rate: d.discount_rate,
            iterations: v.iterations,
            final_span: v.final_span,
            bellman_span_residual: v.bellman_span_residual,
            value_range: (lo, hi),
            thresholds: thresholds(model, &v.policy),
            near_ties: ties(model, &v.near_ties),
        });
        policies.push(v.policy);
    }
    policies.push(greedy_policy(model));
    for p in &policies {
        p.write(model, create(&ctx.out.join(format!("policy_{}.csv", p.label)))?)?;
    }
    let refs: Vec<&Policy> = policies.iter().collect();
    let table = policy_table(&refs, model)?.to_string();
    fs::write(ctx.out.join("policy_table.txt"), &table)?;
    print!("{table}");
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    fs::write(ctx.out.join("solve_report.json"), json + "\n")?;
    let criterion = format!("{:?}", args.criterion).to_lowercase();
    write_manifest(&ctx, "solve", &args.common.config, |m| m.criterion = Some(criterion))?;
    Ok(true)
}

/// Resolves a `--policy` value against `model`.
pub fn resolve_policy(spec: &str, model: &Model, cfg: &SolverConfig) -> Result<Policy> {
    match spec {
        "rvi" => Ok(solve_rvi(model, cfg)?.policy),
        "vi" => Ok(solve_vi(model, cfg)?.policy),
        "greedy" => Ok(greedy_policy(model)),
        "all-mbs" => Ok(all_mbs_policy(model)),
        _ => match spec.strip_prefix("file:") {
            Some(path) => {
                let f = File::open(path).map_err(|e| Error::InvalidArgument(format!("cannot open {path}: {e}")))?;
                Policy::read(PolicyLabel::Custom(spec.to_string()), model, f)
            }
            None => Err(Error::InvalidArgument(format!(
                "unknown policy `{spec}` (expected rvi, vi, greedy, all-mbs or file:PATH)"
            ))),
        },
    }
}

fn sim_config(ctx: &Context, args: &SimArgs) -> SimConfig {
    let mut cfg = ctx.config.sim_config();
    if let Some(h) = args.horizon {
        cfg.horizon = h;
    }
    if let Some(r) = args.runs {
        cfg.runs = r;
    }
    cfg
}

/// Header of `runs.csv`.
pub fn runs_header(model: &Model) -> Vec<String> {
    let mut h: Vec<String> = ["policy", "run", "seed", "total_cost", "avg_cost", "violations"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for n in 0..model.num_classes() {
        let e = Event::PacketArrival(n);
        h.push(format!("arrivals_{e}"));
        h.push(format!("mbs_{e}"));
        h.push(format!("sbs_{e}"));
    }
    h.push("solar_transitions".into());
    h
}

fn write_runs<W: Write>(w: &mut csv::Writer<W>, label: &str, result: &SimulationResult) -> Result<()> {
    for r in &result.runs {
        let mut rec = vec![
            label.to_string(),
            r.run.to_string(),
            r.seed.to_string(),
            r.total_cost.to_string(),
            r.avg_cost.to_string(),
            r.violations.to_string(),
        ];
        for n in 0..r.arrivals.len() {
            rec.push(r.arrivals[n].to_string());
            rec.push(r.served_mbs[n].to_string());
            rec.push(r.served_sbs[n].to_string());
        }
        rec.push(r.solar_transitions.to_string());
        w.write_record(&rec)?;
    }
    Ok(())
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<bool> {
    let ctx = prepare(&args.common)?;
    let model = &ctx.model;
    let cfg = sim_config(&ctx, &args.sim);
    let specs = if args.sim.policy.is_empty() {
        vec!["rvi".to_string()]
    } else {
        args.sim.policy.clone()
    };
    let solver = ctx.config.solver_config();
    let mut runs = csv::Writer::from_writer(create(&ctx.out.join("runs.csv"))?);
    runs.write_record(runs_header(model))?;
    let mut summary = csv::Writer::from_writer(create(&ctx.out.join("summary.csv"))?);
    summary.write_record(["policy", "mean_avg_cost", "stddev", "runs", "horizon"])?;
    let mut clean = true;
    for spec in &specs {
        let policy = resolve_policy(spec, model, &solver)?;
        let result = simulate(&policy, model, &cfg)?;
        let violations: u64 = result.runs.iter().map(|r| r.violations).sum();
        if violations > 0 {
            clean = false;
        }
        write_runs(&mut runs, spec, &result)?;
        summary.write_record([
            spec.clone(),
            result.mean_avg_cost.to_string(),
            result.std_avg_cost.to_string(),
            result.runs.len().to_string(),
            result.horizon.to_string(),
        ])?;
        println!(
            "{spec}: mean average cost {:.4} (sd {:.4}, {} runs)",
            result.mean_avg_cost,
            result.std_avg_cost,
            result.runs.len()
        );
        if args.trace {
            let name = format!("trace_{}.csv", sanitize(spec));
            write_trace(&policy, model, &cfg, result.runs[0].seed, create(&ctx.out.join(name))?)?;
        }
    }
    runs.flush()?;
    summary.flush()?;
    write_manifest(&ctx, "simulate", &args.common.config, |m| {
        m.seed = Some(cfg.seed);
        m.policy = Some(specs.join(","));
    })?;
    Ok(clean)
}

fn sanitize(spec: &str) -> String {
    spec.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<bool> {
    let mut ctx = prepare(&args.common)?;
    if let Some(p) = &args.parameter {
        ctx.config.sweep.parameter = p.clone();
    }
    if !args.values.is_empty() {
        ctx.config.sweep.values = args.values.clone();
    }
    let sweep = ctx.config.sweep.clone();
    if sweep.values.is_empty() || sweep.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("sweep values must be nonempty and finite".into()));
    }
    // Reject an unknown path before any work.
    set_parameter(&mut ctx.config.params(), &sweep.parameter, sweep.values[0])?;
    let cfg = sim_config(&ctx, &args.sim);
    let specs = if args.sim.policy.is_empty() {
        vec!["rvi".to_string(), "vi".to_string(), "greedy".to_string()]
    } else {
        args.sim.policy.clone()
    };
    let solver = ctx.config.solver_config();
    let mut out = csv::Writer::from_writer(create(&ctx.out.join("sweep.csv"))?);
    out.write_record(["sweep_value", "policy", "mean_avg_cost", "stddev", "status"])?;
    let mut clean = true;
    for &value in &sweep.values {
        let mut params = ctx.config.params();
        set_parameter(&mut params, &sweep.parameter, value)?;
        let model = validate(&params);
        for spec in &specs {
            let outcome = model.as_ref().map_err(|e| Error::Config(e.to_string())).and_then(|m| {
                let p = resolve_policy(spec, m, &solver)?;
                simulate(&p, m, &cfg)
            });
            match outcome {
                Ok(r) => out.write_record([
                    value.to_string(),
                    spec.clone(),
                    r.mean_avg_cost.to_string(),
                    r.std_avg_cost.to_string(),
                    "ok".to_string(),
                ])?,
                Err(e) => {
                    log::error!("{} = {value}, policy {spec}: {e}", sweep.parameter);
                    clean = false;
                    out.write_record([value.to_string(), spec.clone(), String::new(), String::new(), format!("error: {e}")])?;
                }
            }
        }
        out.flush()?;
    }
    write_manifest(&ctx, "sweep", &args.common.config, |m| {
        m.seed = Some(cfg.seed);
        m.policy = Some(specs.join(","));
    })?;
    Ok(clean)
}

pub fn cmd_check(args: &CheckArgs) -> Result<CheckReport> {
    let ctx = prepare(&args.common)?;
    let options = CheckOptions {
        solver: ctx.config.solver_config(),
        seed: ctx.config.simulation.seed,
        simulation: ctx.config.sim_config(),
        ..Default::default()
    };
    let report = run_checks(&ctx.model, &options)?;
    let text = report.to_string();
    print!("{text}");
    fs::write(ctx.out.join("check_report.txt"), &text)?;
    write_manifest(&ctx, "check", &args.common.config, |m| m.seed = Some(options.seed))?;
    Ok(report)
}
