use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde_json::json;

use crate::compression::Compressor;
use crate::error::{Error, Result};
use crate::kernel::{LearningRate, Mode};
use crate::relaxations::{load_schedule, SchemeKind};
use crate::theory::Theorem;

use super::config::{ExperimentConfig, ObjectiveSpec, VerifyCase};
use super::experiments::{bound_rows_table, lower_bound, sweep, sweep_table, verify_bounds};
use super::output::{fmt_f64, write_json, write_records_file, write_table};
use super::trials::run_batch;

#[derive(Debug, Parser)]
#[command(name = "elastic-lab", version, about = "Simulate SGD under relaxed view consistency")]
pub struct Cli {
    /// JSON experiment config; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed_data: Option<u64>,
    #[arg(long, global = true)]
    pub seed_sched: Option<u64>,
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    /// Output directory (default: `out`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every trial and write one CSV per trial plus a JSON summary.
    Run(RunArgs),
    /// Cross-product sweep with one aggregated row per cell.
    Sweep(SweepArgs),
    /// Compare empirical consistency constants with closed-form bounds.
    VerifyBounds(RunArgs),
    /// Iterations-to-eps under the adversarial scheme for several strengths.
    LowerBound(LowerBoundArgs),
    /// Write the objective and its constants as JSON.
    DumpObjective(RunArgs),
}

fn parse_serde<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn parse_alpha(s: &str) -> std::result::Result<LearningRate, String> {
    if let Ok(th) = s.parse::<Theorem>() {
        return Ok(LearningRate::Schedule(th));
    }
    s.parse::<f64>()
        .map(LearningRate::Constant)
        .map_err(|_| format!("expected a number or T1..T4, got {s}"))
}

/// Per-run overrides shared by several subcommands.
#[derive(Debug, Args, Default)]
pub struct RunArgs {
    #[arg(long, value_parser = |s: &str| s.parse::<SchemeKind>().map_err(|e| e.to_string()))]
    pub scheme: Option<SchemeKind>,
    #[arg(long)]
    pub p: Option<usize>,
    /// Horizon.
    #[arg(long = "T")]
    pub horizon: Option<usize>,
    /// Constant step or a theorem schedule (T1..T4).
    #[arg(long, value_parser = parse_alpha)]
    pub alpha: Option<LearningRate>,
    /// single_step or parallel_step.
    #[arg(long, value_parser = parse_serde::<Mode>)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub f: Option<usize>,
    #[arg(long)]
    pub tau_max: Option<usize>,
    /// identity, onebit or topk:K.
    #[arg(long, value_parser = |s: &str| s.parse::<Compressor>().map_err(|e| e.to_string()))]
    pub compressor: Option<Compressor>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub full_arrival: bool,
    #[arg(long)]
    pub b_adv: Option<f64>,
    #[arg(long)]
    pub late_prob: Option<f64>,
    /// JSON list of schedule events to replay instead of random draws.
    #[arg(long)]
    pub schedule: Option<PathBuf>,
    /// JSON objective spec replacing the configured one.
    #[arg(long)]
    pub objective: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Sweep axis as NAME=v1,v2,...; repeatable.
    #[arg(long = "axis")]
    pub axes: Vec<String>,
}

#[derive(Debug, Args)]
pub struct LowerBoundArgs {
    #[arg(long, value_delimiter = ',')]
    pub b_list: Option<Vec<f64>>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub cap: Option<usize>,
    #[arg(long)]
    pub alpha_min: Option<f64>,
    #[arg(long)]
    pub alpha_max: Option<f64>,
}

fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

impl RunArgs {
    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        let run = &mut cfg.run;
        let s = &mut run.scheme;
        if let Some(k) = self.scheme {
            s.scheme = k;
        }
        if let Some(v) = self.p {
            run.p = v;
        }
        if let Some(v) = self.horizon {
            run.horizon = v;
        }
        if let Some(v) = self.alpha {
            run.alpha = v;
        }
        if let Some(v) = self.mode {
            run.mode = v;
        }
        if let Some(v) = self.f {
            s.f = v;
        }
        if let Some(v) = self.tau_max {
            s.tau_max = v;
        }
        if let Some(v) = self.compressor {
            s.compressor = v;
        }
        if let Some(v) = self.beta {
            s.beta = v;
        }
        if self.full_arrival {
            s.full_arrival = true;
        }
        if let Some(v) = self.b_adv {
            s.b_adv = v;
        }
        if let Some(v) = self.late_prob {
            s.late_prob = v;
        }
        if let Some(path) = &self.schedule {
            s.plan = Some(load_schedule(path)?);
        }
        if let Some(path) = &self.objective {
            cfg.objective = load_json::<ObjectiveSpec>(path)?;
        }
        Ok(())
    }
}

fn parse_axis(spec: &str) -> Result<(String, Vec<f64>)> {
    let (name, values) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("axis {spec:?} is not NAME=v1,v2,...")))?;
    let values = values
        .split(',')
        .filter(|v| !v.trim().is_empty())
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("axis {name}: bad value {v:?}")))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok((name.to_string(), values))
}

/// Exit status for an error: 3 for invariant aborts, 2 otherwise.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Invariant(_) => 3,
        _ => 2,
    }
}

fn base_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(v) = cli.seed_data {
        cfg.run.seeds.data = v;
    }
    if let Some(v) = cli.seed_sched {
        cfg.run.seeds.sched = v;
    }
    if let Some(v) = cli.trials {
        cfg.trials = v;
    }
    if let Some(v) = &cli.out {
        cfg.out = Some(v.clone());
    }
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn cmd_run(cfg: &ExperimentConfig) -> Result<()> {
    cfg.validate()?;
    let objective = cfg.objective.build()?;
    cfg.run.validate(objective.dim())?;
    let dir = out_dir(cfg)?;
    let log_events = cfg.run.metrics.log_events;
    let batch = run_batch(&cfg.objective, &objective, &cfg.run, cfg.trials, |m| {
        let k = m.summary.trial;
        write_records_file(&dir.join(format!("trial_{k:03}.csv")), &m.records)?;
        if log_events {
            write_json(&dir.join(format!("trial_{k:03}_events.json")), &m.events)?;
        }
        Ok(())
    })?;
    write_json(
        &dir.join("summary.json"),
        &json!({
            "fingerprint": cfg.fingerprint()?,
            "config": cfg,
            "summary": batch,
        }),
    )?;
    println!(
        "{} trials, alpha={}, final f mean={}, min grad_norm2 mean={}, B_empirical={}",
        batch.trials,
        fmt_f64(batch.alpha),
        fmt_f64(batch.final_f.mean),
        fmt_f64(batch.min_grad_norm2.mean),
        batch
            .empirical_b
            .map(|b| fmt_f64(b.b))
            .unwrap_or_else(|| "n/a".into()),
    );
    println!("wrote {}", dir.display());
    Ok(())
}

fn cmd_sweep(cfg: &ExperimentConfig) -> Result<()> {
    let cells = sweep(cfg)?;
    let dir = out_dir(cfg)?;
    let (header, rows) = sweep_table(&cells);
    write_table(&dir.join("sweep.csv"), &header, &rows)?;
    write_json(
        &dir.join("sweep.json"),
        &json!({ "fingerprint": cfg.fingerprint()?, "config": cfg, "cells": cells }),
    )?;
    println!("{}", header.join(","));
    for row in &rows {
        println!("{}", row.join(","));
    }
    Ok(())
}

fn cmd_verify(cfg: &mut ExperimentConfig) -> Result<()> {
    if cfg.verify.is_empty() {
        cfg.verify.push(VerifyCase::new(cfg.run.scheme.clone()));
    }
    let rows = verify_bounds(cfg)?;
    let dir = out_dir(cfg)?;
    let (header, body) = bound_rows_table(&rows);
    write_table(&dir.join("verify_bounds.csv"), &header, &body)?;
    write_json(
        &dir.join("verify_bounds.json"),
        &json!({ "fingerprint": cfg.fingerprint()?, "config": cfg, "rows": rows }),
    )?;
    for r in &rows {
        println!(
            "{:<28} B_theory={:<12} B_empirical={:<12} ratio={:<8} {}",
            r.label,
            r.b_theory.map(|b| format!("{b:.4}")).unwrap_or_else(|| "n/a".into()),
            format!("{:.4}", r.b_empirical),
            r.ratio.map(|x| format!("{x:.3}")).unwrap_or_else(|| "n/a".into()),
            r.pass_label(),
        );
    }
    Ok(())
}

fn cmd_lower_bound(cfg: &mut ExperimentConfig, args: &LowerBoundArgs) -> Result<()> {
    let lb = &mut cfg.lower_bound;
    if let Some(v) = &args.b_list {
        lb.b_list = v.clone();
    }
    if let Some(v) = args.eps {
        lb.eps = v;
    }
    if let Some(v) = args.cap {
        lb.cap = v;
    }
    if let Some(v) = args.alpha_min {
        lb.alpha_min = v;
    }
    if let Some(v) = args.alpha_max {
        lb.alpha_max = v;
    }
    let rows = lower_bound(&cfg.lower_bound, cfg.run.seeds)?;
    let dir = out_dir(cfg)?;
    let cap = cfg.lower_bound.cap;
    let header: Vec<String> = ["B", "alpha", "iterations", "closed_form"].map(String::from).into();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.b.to_string(),
                r.alpha.map(fmt_f64).unwrap_or_default(),
                r.iterations_label(cap),
                r.closed_form.map(|n| n.to_string()).unwrap_or_default(),
            ]
        })
        .collect();
    write_table(&dir.join("lower_bound.csv"), &header, &body)?;
    write_json(
        &dir.join("lower_bound.json"),
        &json!({ "config": cfg.lower_bound, "rows": rows }),
    )?;
    println!("{}", header.join(","));
    for row in &body {
        println!("{}", row.join(","));
    }
    Ok(())
}

fn cmd_dump_objective(cfg: &ExperimentConfig) -> Result<()> {
    let objective = cfg.objective.build()?;
    let dir = out_dir(cfg)?;
    let path = dir.join("objective.json");
    write_json(
        &path,
        &json!({
            "spec": cfg.objective,
            "constants": objective.constants(),
            "objective": objective.to_json()?,
        }),
    )?;
    let c = objective.constants();
    println!(
        "d={} m={} L={} c={} sigma2={} M2={} -> {}",
        objective.dim(),
        objective.num_samples(),
        fmt_f64(c.l),
        fmt_f64(c.c),
        fmt_f64(c.sigma2),
        fmt_f64(c.m2),
        path.display()
    );
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    let mut cfg = base_config(cli)?;
    match &cli.command {
        Command::Run(args) => {
            args.apply(&mut cfg)?;
            cmd_run(&cfg)
        }
        Command::Sweep(args) => {
            args.run.apply(&mut cfg)?;
            for spec in &args.axes {
                let (name, values) = parse_axis(spec)?;
                cfg.sweep.insert(name, values);
            }
            cmd_sweep(&cfg)
        }
        Command::VerifyBounds(args) => {
            args.apply(&mut cfg)?;
            cmd_verify(&mut cfg)
        }
        Command::LowerBound(args) => cmd_lower_bound(&mut cfg, args),
        Command::DumpObjective(args) => {
            args.apply(&mut cfg)?;
            cmd_dump_objective(&cfg)
        }
    }
}

/// Parses `args`, runs the command and maps the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
