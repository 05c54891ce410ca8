//! `cpd`: drift runs, convergence studies and drift-scaling fits for the
//! charged-particle integrators.
//!
//! Exit codes: 0 on success, 1 for invalid arguments or input, 2 when a run
//! breaks down numerically (partial output is still written).

mod output;

use std::fs;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cpd_core::config::load_problem;
use cpd_core::fields::BUILTIN_PROBLEMS;
use cpd_core::harness::{
    coverage_matrix, run_convergence_study, run_drift_experiment, run_drift_scaling, threads_from_env,
    ExperimentPlan, IntegratorOverrides, ProblemSource, SweepOptions, DEFAULT_T_END, FULL_T_END,
};
use cpd_core::invariants::Channel;
use cpd_core::{Error, Method};
use serde_json::json;

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser, Debug)]
#[command(name = "cpd", version, about = "Structure-preserving integrators for charged-particle dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Long-time invariant drift runs; one CSV per (method, eps) plus a JSON summary.
    Run(RunArgs),
    /// Global error at t_end for h = 2^-k; CSV table and JSON with fitted slopes.
    Converge(ConvergeArgs),
    /// Fitted exponent of the maximum drift against h.
    Scaling(ScalingArgs),
    /// Built-in problems, methods and which channels have an O(h^2) drift guarantee.
    List,
}

#[derive(Args, Debug)]
struct ProblemArgs {
    /// Built-in problem name.
    #[arg(long, default_value = "problem1", conflicts_with = "problem_file")]
    problem: String,
    /// Problem definition in TOML.
    #[arg(long)]
    problem_file: Option<PathBuf>,
    /// Field-strength parameter; repeat for a sweep.
    #[arg(long = "eps")]
    eps: Vec<f64>,
}

impl ProblemArgs {
    fn source(&self) -> Result<ProblemSource, Error> {
        match &self.problem_file {
            Some(path) => Ok(ProblemSource::Fixed(load_problem(path)?)),
            None => {
                if !BUILTIN_PROBLEMS.contains(&self.problem.as_str()) {
                    return Err(Error::NotFound(self.problem.clone()));
                }
                Ok(ProblemSource::Builtin(self.problem.clone()))
            }
        }
    }

    fn epsilons(&self, source: &ProblemSource) -> Vec<f64> {
        if self.eps.is_empty() {
            source.default_epsilons()
        } else {
            self.eps.clone()
        }
    }
}

#[derive(Args, Debug)]
struct SolverArgs {
    /// Gauss-Legendre nodes for the averaged field (default 2 for quadratic U, else 10).
    #[arg(long)]
    quad_nodes: Option<usize>,
    /// Fixed-point increment tolerance.
    #[arg(long)]
    fp_tol: Option<f64>,
    /// Fixed-point iteration cap.
    #[arg(long)]
    fp_max_iter: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

impl SolverArgs {
    fn overrides(&self) -> IntegratorOverrides {
        IntegratorOverrides {
            quad_nodes: self.quad_nodes,
            fp_tol: self.fp_tol,
            fp_max_iter: self.fp_max_iter,
        }
    }
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// Integrator; repeat to run several (default: all).
    #[arg(long = "method")]
    methods: Vec<Method>,
    #[arg(long, default_value_t = 0.01, allow_negative_numbers = true)]
    h: f64,
    #[arg(long, conflicts_with = "full_horizon", allow_negative_numbers = true)]
    t_end: Option<f64>,
    /// Integrate to t = 10000 instead of 1000.
    #[arg(long)]
    full_horizon: bool,
    /// Keep every n-th step in the CSV.
    #[arg(long, default_value_t = 10)]
    stride: usize,
}

#[derive(Args, Debug)]
struct ConvergeArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long = "method")]
    methods: Vec<Method>,
    /// Range of k for h = 2^-k, e.g. 6..12.
    #[arg(long, default_value = "6..12", value_parser = parse_k_range)]
    k: RangeInclusive<u32>,
    #[arg(long, default_value_t = 1.0)]
    t_end: f64,
}

#[derive(Args, Debug)]
struct ScalingArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long = "method")]
    methods: Vec<Method>,
    /// Step sizes; repeat (default 0.04, 0.02, 0.01).
    #[arg(long = "h", allow_negative_numbers = true)]
    h: Vec<f64>,
    /// Channel: H, M or I; repeat for several (default all three).
    #[arg(long = "channel")]
    channels: Vec<Channel>,
    #[arg(long, conflicts_with = "full_horizon", allow_negative_numbers = true)]
    t_end: Option<f64>,
    #[arg(long)]
    full_horizon: bool,
}

fn parse_k_range(s: &str) -> Result<RangeInclusive<u32>, String> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| format!("expected a range like 6..12, got `{s}`"))?;
    let b = b.strip_prefix('=').unwrap_or(b);
    let lo: u32 = a.trim().parse().map_err(|_| format!("bad lower bound in `{s}`"))?;
    let hi: u32 = b.trim().parse().map_err(|_| format!("bad upper bound in `{s}`"))?;
    if lo > hi {
        return Err(format!("empty range `{s}`"));
    }
    Ok(lo..=hi)
}

/// What went wrong, mapped to an exit code.
enum Failure {
    Usage(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Usage(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(format!("i/o error: {e}"))
    }
}

fn horizon(t_end: Option<f64>, full: bool) -> f64 {
    match (t_end, full) {
        (Some(t), _) => t,
        (None, true) => FULL_T_END,
        (None, false) => DEFAULT_T_END,
    }
}

fn methods_or_all(methods: &[Method]) -> Vec<Method> {
    if methods.is_empty() {
        Method::ALL.to_vec()
    } else {
        methods.to_vec()
    }
}

/// Creates `dir` and clears a failure marker left by an earlier run.
fn prepare_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir)?;
    match fs::remove_file(dir.join("FAILED")) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(e.into()),
        _ => Ok(()),
    }
}

fn sweep_options(solver: &SolverArgs) -> Result<SweepOptions, Failure> {
    Ok(SweepOptions {
        overrides: solver.overrides(),
        threads: threads_from_env()?,
        ..Default::default()
    })
}

fn write_failure_marker(dir: &Path, failures: &[String]) -> Result<(), Failure> {
    let mut text = failures.join("\n");
    text.push('\n');
    fs::write(dir.join("FAILED"), text)?;
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<(), Failure> {
    let source = args.problem.source()?;
    let mut plan = ExperimentPlan::new(source, methods_or_all(&args.methods), args.h, horizon(args.t_end, args.full_horizon));
    plan.epsilons = args.problem.epsilons(&plan.problem);
    plan.sample_stride = args.stride;
    plan.overrides = args.solver.overrides();
    plan.threads = threads_from_env()?;
    plan.validate()?;

    let dir = &args.solver.out_dir;
    prepare_dir(dir)?;
    let result = run_drift_experiment(&plan)?;
    let mut cells = Vec::new();
    let mut failures = Vec::new();
    for cell in &result.cells {
        let csv = output::drift_csv_path(dir, &result.problem, cell);
        output::write_drift_csv(&csv, &cell.series)?;
        let max: serde_json::Map<String, serde_json::Value> = Channel::ALL
            .iter()
            .map(|c| (format!("e_{c}"), json!(cell.max(*c))))
            .collect();
        cells.push(json!({
            "problem": result.problem,
            "method": cell.method,
            "h": cell.config.h,
            "epsilon": cell.epsilon,
            "quad_nodes": cell.config.quad_nodes,
            "fp_tol": cell.config.fp_tol,
            "fp_max_iter": cell.config.fp_max_iter,
            "fp_stats": {
                "steps": cell.fp_stats.steps,
                "total_iterations": cell.fp_stats.total_iterations,
                "max_iterations": cell.fp_stats.max_iterations,
                "mean_iterations": cell.fp_stats.mean_iterations(),
            },
            "steps": cell.steps,
            "planned_steps": cell.planned_steps,
            "rows": cell.series.len(),
            "max_drift": max,
            "absolute_channels": cell.absolute_channels,
            "wall_seconds": cell.wall_seconds,
            "csv": csv.file_name().and_then(|n| n.to_str()),
            "failed": cell.failed(),
            "failure": cell.failure,
        }));
        eprintln!(
            "{} {} eps={}: max e_H {:.3e}, e_Hh {:.3e}, e_M {:.3e}, e_I {:.3e}{}",
            result.problem,
            cell.method,
            cell.epsilon,
            cell.max(Channel::Energy),
            cell.max(Channel::ModifiedEnergy),
            cell.max(Channel::Momentum),
            cell.max(Channel::MagneticMoment),
            cell.failure.as_ref().map_or(String::new(), |f| format!(" [FAILED: {}]", f.message)),
        );
        if let Some(f) = &cell.failure {
            failures.push(format!("{} eps={}: {}", cell.method, cell.epsilon, f.message));
        }
    }
    let summary = json!({
        "version": VERSION,
        "command": "run",
        "problem": result.problem,
        "h": result.h,
        "t_end": result.t_end,
        "stride": result.sample_stride,
        "failed": !failures.is_empty(),
        "cells": cells,
    });
    output::write_json(&dir.join(format!("{}_summary.json", result.problem)), &summary)?;
    if failures.is_empty() {
        return Ok(());
    }
    write_failure_marker(dir, &failures)?;
    let numerical = result.cells.iter().any(|c| c.failure.as_ref().is_some_and(|f| f.numerical));
    let text = failures.join("; ");
    Err(if numerical { Failure::Numerical(text) } else { Failure::Usage(text) })
}

fn cmd_converge(args: &ConvergeArgs) -> Result<(), Failure> {
    let source = args.problem.source()?;
    let methods = methods_or_all(&args.methods);
    let epsilons = if args.problem.eps.is_empty() {
        vec![source.default_epsilons()[0]]
    } else {
        args.problem.eps.clone()
    };
    let opts = sweep_options(&args.solver)?;
    let dir = &args.solver.out_dir;
    let problems = epsilons
        .iter()
        .map(|&e| source.instantiate(e))
        .collect::<Result<Vec<_>, _>>()?;
    prepare_dir(dir)?;
    let mut failures = Vec::new();
    for p in &problems {
        let study = run_convergence_study(p, &methods, args.k.clone(), args.t_end, &opts)?;
        let stem = format!("{}_{}_convergence", p.name, output::eps_tag(p.epsilon));
        output::write_convergence_csv(&dir.join(format!("{stem}.csv")), &study)?;
        let slopes: serde_json::Map<String, serde_json::Value> = study
            .methods
            .iter()
            .zip(&study.slopes)
            .map(|(m, s)| (m.to_string(), json!(s)))
            .collect();
        output::write_json(
            &dir.join(format!("{stem}.json")),
            &json!({
                "version": VERSION,
                "command": "converge",
                "problem": study.problem,
                "epsilon": study.epsilon,
                "t_end": study.t_end,
                "k": [args.k.start(), args.k.end()],
                "slopes": slopes,
                "rows": study.rows,
                "methods": study.methods,
                "failed": !study.failures.is_empty(),
                "failures": study.failures,
            }),
        )?;
        for (m, s) in study.methods.iter().zip(&study.slopes) {
            eprintln!("{} eps={} {m}: slope {}", study.problem, study.epsilon, s.map_or("n/a".into(), |s| format!("{s:.3}")));
        }
        failures.extend(study.failures.iter().cloned());
    }
    if failures.is_empty() {
        Ok(())
    } else {
        write_failure_marker(dir, &failures)?;
        Err(Failure::Numerical(failures.join("; ")))
    }
}

fn cmd_scaling(args: &ScalingArgs) -> Result<(), Failure> {
    let source = args.problem.source()?;
    let methods = if args.methods.is_empty() {
        vec![Method::ImsO2, Method::ExsO2]
    } else {
        args.methods.clone()
    };
    let channels = if args.channels.is_empty() {
        vec![Channel::Energy, Channel::Momentum, Channel::MagneticMoment]
    } else {
        args.channels.clone()
    };
    if channels.contains(&Channel::ModifiedEnergy) {
        return Err(Failure::Usage("scaling channel must be one of H, M, I".into()));
    }
    let h_list = if args.h.is_empty() { vec![0.04, 0.02, 0.01] } else { args.h.clone() };
    let t_end = horizon(args.t_end, args.full_horizon);
    let epsilons = if args.problem.eps.is_empty() {
        vec![source.default_epsilons()[0]]
    } else {
        args.problem.eps.clone()
    };
    let opts = sweep_options(&args.solver)?;
    let dir = &args.solver.out_dir;
    let problems = epsilons
        .iter()
        .map(|&e| source.instantiate(e))
        .collect::<Result<Vec<_>, _>>()?;
    prepare_dir(dir)?;

    let mut failures = Vec::new();
    for p in &problems {
        let mut fits = Vec::new();
        for &method in &methods {
            for &channel in &channels {
                let s = run_drift_scaling(p, method, &h_list, t_end, channel, &opts)?;
                for c in &s.preconditions {
                    eprintln!(
                        "precondition {} for {channel} on {} eps={}: {}",
                        c.condition,
                        p.name,
                        p.epsilon,
                        if c.holds { "holds" } else { "violated (result is informational)" }
                    );
                }
                eprintln!(
                    "{} eps={} {method} {channel}: exponent {}",
                    p.name,
                    p.epsilon,
                    s.exponent.map_or("n/a".into(), |e| format!("{e:.3}"))
                );
                failures.extend(s.failures.iter().map(|f| format!("{method} {channel} {f}")));
                fits.push(s);
            }
        }
        let stem = format!("{}_{}_scaling", p.name, output::eps_tag(p.epsilon));
        output::write_json(
            &dir.join(format!("{stem}.json")),
            &json!({
                "version": VERSION,
                "command": "scaling",
                "problem": p.name,
                "epsilon": p.epsilon,
                "t_end": t_end,
                "h": h_list,
                "fits": fits,
            }),
        )?;
    }
    if failures.is_empty() {
        Ok(())
    } else {
        write_failure_marker(dir, &failures)?;
        Err(Failure::Numerical(failures.join("; ")))
    }
}

fn cmd_list() {
    println!("problems:");
    for name in BUILTIN_PROBLEMS {
        println!("  {name}");
    }
    println!("methods:");
    for m in Method::ALL {
        println!("  {m}");
    }
    println!("O(h^2) drift guarantee for the splittings at eps = 1 (channels H, Hh, M, I):");
    let names: Vec<&str> = Channel::ALL.iter().map(|c| c.as_str()).collect();
    println!("  {:<10} {}", "", names.iter().map(|n| format!("{n:>4}")).collect::<String>());
    for (name, row) in coverage_matrix() {
        let marks: String = row.iter().map(|&c| format!("{:>4}", if c { "yes" } else { "-" })).collect();
        println!("  {name:<10} {marks}");
    }
    println!("Hh is conserved exactly by exs-o2 when U is quadratic; H exactly by ims-o2.");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Converge(a) => cmd_converge(a),
        Command::Scaling(a) => cmd_scaling(a),
        Command::List => {
            cmd_list();
            Ok(())
        }
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(2)
        }
    }
}
