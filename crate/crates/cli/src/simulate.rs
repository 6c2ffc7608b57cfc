//! `simulate`: expand a TOML scenario grid, run every scenario, and
//! stream summary rows to CSV (appending under `--resume`), with
//! optional coverage plots and per-replicate audit dumps.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use stepwedge::sim::{
    completed_scenario_keys, csv_string, run_scenario, scenario_key, write_replicate_dump,
    ScenarioResult, SimConfig, CSV_HEADER,
};

use crate::{classify, plot, Failure, Outcome, RunArgs};

#[derive(Args, Clone)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Summary CSV destination.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Directory for coverage plots (one SVG per generator).
    #[arg(long, value_name = "DIR")]
    pub plots: Option<PathBuf>,
    /// Skip scenarios whose rows already sit in `--out`; append the rest.
    #[arg(long)]
    pub resume: bool,
    /// Directory for per-replicate audit dumps (one CSV per scenario).
    #[arg(long, value_name = "DIR")]
    pub dump: Option<PathBuf>,
}

/// Load the config named by the shared flags and apply the overrides.
pub fn load_config(run: &RunArgs) -> Result<SimConfig, Failure> {
    let mut cfg = SimConfig::from_path(&run.config).map_err(classify)?;
    if let Some(seed) = run.seed {
        cfg.seed = seed;
    }
    if let Some(reps) = run.reps {
        cfg.n_reps = reps;
    }
    if let Some(alpha) = run.alpha {
        cfg.alpha = alpha;
    }
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(Failure::Config(anyhow::anyhow!("alpha {} outside (0,1)", cfg.alpha)));
    }
    if cfg.n_reps == 0 {
        return Err(Failure::Config(anyhow::anyhow!("n_reps must be positive")));
    }
    Ok(cfg)
}

/// The summary rows for one scenario, without the header line.
fn scenario_rows(result: &ScenarioResult) -> String {
    let full = csv_string(std::slice::from_ref(result));
    match full.split_once('\n') {
        Some((_, rows)) => rows.to_string(),
        None => String::new(),
    }
}

pub fn run(args: &SimulateArgs) -> Result<Outcome, Failure> {
    let cfg = load_config(&args.run)?;
    let scenarios = cfg.expand_scenarios().map_err(classify)?;
    let plan = cfg.analysis_plan().map_err(classify)?;

    let done: HashSet<String> = if args.resume && args.out.exists() {
        let file = File::open(&args.out)
            .with_context(|| format!("open {} for resume", args.out.display()))
            .map_err(Failure::Config)?;
        completed_scenario_keys(BufReader::new(file)).map_err(classify)?
    } else {
        HashSet::new()
    };
    let appending = args.resume && args.out.exists();
    let file = if appending {
        OpenOptions::new().append(true).open(&args.out)
    } else {
        File::create(&args.out)
    }
    .with_context(|| format!("open {}", args.out.display()))
    .map_err(Failure::Config)?;
    let mut out = BufWriter::new(file);
    if !appending {
        writeln!(out, "{CSV_HEADER}").map_err(|e| Failure::Config(e.into()))?;
    }

    if let Some(dir) = &args.dump {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("create {}", dir.display()))
            .map_err(Failure::Config)?;
    }

    let mut results = Vec::new();
    let mut n_skipped = 0usize;
    let mut incomplete: Vec<String> = Vec::new();
    for sc in &scenarios {
        let key = scenario_key(sc);
        if done.contains(&key) {
            n_skipped += 1;
            continue;
        }
        let result = run_scenario(sc, &plan, cfg.n_reps, cfg.alpha);
        out.write_all(scenario_rows(&result).as_bytes())
            .and_then(|()| out.flush())
            .map_err(|e| Failure::Config(e.into()))?;
        if result.rows.iter().any(|r| r.n_converged == 0) {
            incomplete.push(key.clone());
        }
        if let Some(dir) = &args.dump {
            let path = dir.join(format!("replicates_{:03}.csv", sc.index));
            let writer = File::create(&path)
                .with_context(|| format!("create {}", path.display()))
                .map_err(Failure::Config)?;
            write_replicate_dump(BufWriter::new(writer), &result).map_err(classify)?;
        }
        eprintln!(
            "scenario {}/{}: {} [{} converged of {}]",
            sc.index + 1,
            scenarios.len(),
            key,
            result.rows.iter().map(|r| r.n_converged).min().unwrap_or(0),
            cfg.n_reps
        );
        results.push(result);
    }

    if let Some(dir) = &args.plots {
        plot::write_coverage_plots(dir, &results, cfg.n_reps).map_err(Failure::Config)?;
    }

    println!(
        "{} scenarios run, {} resumed, summary in {}",
        results.len(),
        n_skipped,
        args.out.display()
    );
    if incomplete.is_empty() {
        Ok(Outcome::Success)
    } else {
        Ok(Outcome::Partial(format!(
            "{} scenario(s) produced no converged replicates for at least one analysis: {}",
            incomplete.len(),
            incomplete.join("; ")
        )))
    }
}
