mod config;
mod operator_file;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use kyfan_core::certify::{self, CertifyConfig};
use kyfan_core::lab::{self, InstanceSpec, SweepPlan};
use kyfan_core::Parallelism;

use crate::config::RunConfig;

const EXIT_ERROR: u8 = 1;
const EXIT_NOT_RECOVERED: u8 = 2;
const EXIT_SUITE_FAILED: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "kyfan", version, about = "Low-rank matrix recovery with the Ky Fan 2-k-norm")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Recover one planted (or file-supplied) instance with each method.
    Recover(Common),
    /// Recovery-probability sweep over measurement counts.
    Sweep(Common),
    /// Run the randomized property suites.
    Certify(Common),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// key = value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores, 1 = sequential)
    #[arg(long)]
    workers: Option<usize>,
    /// ratio | difference
    #[arg(long)]
    model: Option<String>,
    /// Comma-separated: nuclear,k2-nuclear,k2-zero,k2-mid
    #[arg(long)]
    methods: Option<String>,
    /// Working k of the K2 methods (default: planted rank)
    #[arg(long)]
    k: Option<usize>,
    /// Recovery threshold on the relative error
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long = "max-outer")]
    max_outer: Option<usize>,
    /// Measurement problem file (recover only)
    #[arg(long)]
    operator: Option<PathBuf>,
    /// Base sample count (certify only)
    #[arg(long)]
    samples: Option<usize>,
    /// Inject a defect: prox-sign (certify only)
    #[arg(long)]
    fault: Option<String>,
    /// Any other config key, as key=value; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Print the effective configuration and exit
    #[arg(long = "dump-config")]
    dump_config: bool,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        for item in &self.set {
            let (k, v) = item
                .split_once('=')
                .with_context(|| format!("--set expects KEY=VALUE, got '{item}'"))?;
            cfg.set(k.trim(), v)?;
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if let Some(model) = &self.model {
            cfg.model = config::parse_model(model)?;
        }
        if let Some(methods) = &self.methods {
            cfg.methods = config::parse_methods(methods)?;
        }
        if let Some(k) = self.k {
            cfg.k = Some(k);
        }
        if let Some(eps) = self.eps {
            cfg.eps = eps;
        }
        if let Some(n) = self.max_outer {
            cfg.max_outer = n;
        }
        if let Some(op) = &self.operator {
            cfg.operator = Some(op.clone());
        }
        if let Some(n) = self.samples {
            cfg.samples = n;
        }
        if let Some(f) = &self.fault {
            cfg.set("fault", f)?;
        }
        Ok(cfg)
    }
}

fn cmd_recover(cfg: &RunConfig) -> Result<u8> {
    cfg.validate()?;
    let inst = match &cfg.operator {
        Some(path) => operator_file::load(path, cfg.r)?,
        None => lab::plant(InstanceSpec {
            m: cfg.m,
            n: cfg.n,
            r: cfg.r,
            s: cfg.s,
            seed: cfg.seed,
        })?,
    };
    let trial_cfg = cfg.trial_config();
    let records: Vec<_> = cfg
        .methods
        .iter()
        .map(|&method| lab::run_trial(&inst, method, &trial_cfg))
        .collect();

    std::fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    output::write_trials(&cfg.out.join("trials.csv"), &records)?;

    let spec = inst.spec;
    println!(
        "instance m={} n={} r={} s={} (d_r={}) seed={}",
        spec.m,
        spec.n,
        spec.r,
        spec.s,
        spec.d_r(),
        spec.seed
    );
    for r in &records {
        println!(
            "{:<11} recovered={:<5} rel_err={:.3e} outer={:<3} inner={:<6} {:.3}s {}",
            r.method.name(),
            r.recovered,
            r.relative_error,
            r.outer_iterations,
            r.inner_iterations,
            r.wall_time_s,
            r.termination
        );
    }
    Ok(if records.iter().any(|r| r.recovered) { 0 } else { EXIT_NOT_RECOVERED })
}

fn cmd_sweep(cfg: &RunConfig) -> Result<u8> {
    cfg.validate()?;
    let plan = SweepPlan::over_s(cfg.m, cfg.n, cfg.r, &cfg.s_values, cfg.trials, cfg.methods.clone(), cfg.seed);
    plan.validate()?;
    let report = lab::run_sweep(&plan, &cfg.trial_config(), Parallelism::from_workers(cfg.workers))?;

    std::fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    output::write_sweep(&cfg.out.join("sweep.csv"), &report)?;
    output::write_trials(&cfg.out.join("trials.csv"), &report.trials)?;
    output::write_charts(&cfg.out, &report)?;

    for c in &report.cells {
        println!(
            "{:<11} s={:<4} p={:.2} ({}/{}) outer={:.1} time={:.3}s",
            c.method.name(),
            c.s,
            c.recovery_prob,
            c.recovered_count,
            c.trials,
            c.mean_outer_iters_all,
            c.mean_wall_time_s
        );
    }
    println!("wrote {}", cfg.out.display());
    Ok(0)
}

fn cmd_certify(cfg: &RunConfig) -> Result<u8> {
    let outcomes = certify::run_suites(&CertifyConfig {
        samples: cfg.samples,
        seed: cfg.seed,
        fault: cfg.fault,
    })?;
    for o in &outcomes {
        println!(
            "{} {:<17} cases={:<5} worst_residual={:.3e} worst/tol={:.3e}",
            if o.passed { "PASS" } else { "FAIL" },
            o.name,
            o.cases,
            o.worst_residual,
            o.worst_ratio
        );
    }
    let failed: Vec<_> = outcomes.iter().filter(|o| !o.passed).map(|o| o.name).collect();
    if failed.is_empty() {
        Ok(0)
    } else {
        eprintln!("failed suites: {}", failed.join(", "));
        Ok(EXIT_SUITE_FAILED)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let common = match &cli.command {
        Command::Recover(c) | Command::Sweep(c) | Command::Certify(c) => c,
    };
    let result = common.resolve().and_then(|cfg| {
        if common.dump_config {
            print!("{}", cfg.dump());
            return Ok(0);
        }
        match cli.command {
            Command::Recover(_) => cmd_recover(&cfg),
            Command::Sweep(_) => cmd_sweep(&cfg),
            Command::Certify(_) => cmd_certify(&cfg),
        }
    });
    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
