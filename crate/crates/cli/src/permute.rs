//! `permute`: permutation test for the treatment effect on one dataset,
//! reported as JSON. The seed is mandatory — the permutation draw is
//! part of the analysis and must be reproducible.

use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use stepwedge::covariance::Structure;
use stepwedge::datagen::Dataset;
use stepwedge::permutation::{permutation_test, PermutationOptions};

use crate::{classify, Failure, Outcome};

#[derive(Args, Clone)]
pub struct PermuteArgs {
    /// Dataset CSV with columns cluster,period,individual,treated,y.
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Working covariance structure for the refitted statistic.
    #[arg(long, default_value = "exch")]
    pub structure: String,
    /// Number of permuted assignments.
    #[arg(long, default_value_t = 1000, value_name = "N")]
    pub n_perm: usize,
    /// Seed for the permutation draw (required; no wall-clock seeding).
    #[arg(long)]
    pub seed: u64,
    /// Two-sided level for the percentile decision.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Write the JSON result here instead of stdout.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

pub fn run(args: &PermuteArgs) -> Result<Outcome, Failure> {
    let structure = Structure::parse(&args.structure).map_err(classify)?;
    let file = File::open(&args.data)
        .with_context(|| format!("open {}", args.data.display()))
        .map_err(Failure::Config)?;
    let data = Dataset::from_csv(BufReader::new(file)).map_err(classify)?;
    let options = PermutationOptions {
        n_permutations: args.n_perm,
        alpha: args.alpha,
        seed: args.seed,
        fit: Default::default(),
    };
    let result = permutation_test(&data, structure, &options).map_err(classify)?;
    let json = serde_json::to_string_pretty(&result).expect("result serializes");
    match &args.out {
        Some(path) => std::fs::write(path, json + "\n")
            .with_context(|| format!("write {}", path.display()))
            .map_err(Failure::Config)?,
        None => println!("{json}"),
    }
    Ok(Outcome::Success)
}
