//! `power`: run a scenario grid and report rejection rates — power under
//! nonzero effects, type I error where θ = 0 — as an aligned table, with
//! the full summary CSV available via `--out`.

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use stepwedge::sim::{run_scenario, scenario_key, write_csv, ScenarioResult};

use crate::simulate::load_config;
use crate::{classify, Failure, Outcome, RunArgs};

#[derive(Args, Clone)]
pub struct PowerArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Also write the full summary CSV here.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

fn print_table(results: &[ScenarioResult]) {
    println!(
        "{:<40} {:<8} {:<6} {:<14} {:>8} {:>8} {:>11}",
        "scenario", "model", "source", "dof", "reject", "mcse", "n_converged"
    );
    for result in results {
        let key = scenario_key(&result.scenario);
        for row in &result.rows {
            let (reject, mcse) = match &row.measures {
                Some(m) => {
                    let se = (m.reject_rate * (1.0 - m.reject_rate)
                        / row.n_converged.max(1) as f64)
                        .sqrt();
                    (format!("{:.3}", m.reject_rate), format!("{se:.3}"))
                }
                None => ("-".into(), "-".into()),
            };
            println!(
                "{:<40} {:<8} {:<6} {:<14} {:>8} {:>8} {:>11}",
                key,
                row.model.label(),
                row.source.token(),
                row.dof.token(),
                reject,
                mcse,
                row.n_converged
            );
        }
    }
}

pub fn run(args: &PowerArgs) -> Result<Outcome, Failure> {
    let cfg = load_config(&args.run)?;
    let scenarios = cfg.expand_scenarios().map_err(classify)?;
    let plan = cfg.analysis_plan().map_err(classify)?;
    let mut results = Vec::with_capacity(scenarios.len());
    for sc in &scenarios {
        results.push(run_scenario(sc, &plan, cfg.n_reps, cfg.alpha));
    }
    print_table(&results);
    if let Some(path) = &args.out {
        let file = File::create(path)
            .with_context(|| format!("create {}", path.display()))
            .map_err(Failure::Config)?;
        write_csv(BufWriter::new(file), &results).map_err(classify)?;
    }
    let any_empty = results
        .iter()
        .any(|r| r.rows.iter().any(|row| row.n_converged == 0));
    if any_empty {
        Ok(Outcome::Partial(
            "at least one analysis had no converged replicates".into(),
        ))
    } else {
        Ok(Outcome::Success)
    }
}
