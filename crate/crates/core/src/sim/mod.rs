//! Monte Carlo study harness: configuration, scenario grids, the
//! replicate engine, performance measures, and CSV emission.

mod config;
mod engine;
mod measures;
mod output;

pub use config::{
    scenario_seed, AnalysisConfig, AnalysisPlan, GridConfig, Scenario, SimConfig, WorkingModel,
};
pub use engine::{run_config, run_scenario, run_scenario_sequential, AnalysisRow, ScenarioResult};
pub use measures::{coverage_mcse, summarize, CellOutcome, Measures};
pub use output::{
    completed_scenario_keys, csv_string, scenario_key, write_csv, write_replicate_dump,
    CSV_HEADER, DUMP_HEADER,
};
