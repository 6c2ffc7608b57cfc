//! Long-format CSV emission and resume bookkeeping.
//!
//! The summary schema is one row per analysis per scenario. Cells that
//! are undefined (too few converged replicates, zero empirical SE, an
//! estimator correction unavailable at the design size) are left empty
//! rather than filled with sentinels; `n_converged` is always written.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use crate::error::Result;

use super::config::Scenario;
use super::engine::ScenarioResult;

/// Fixed summary header.
pub const CSV_HEADER: &str = "generator,I,S,K,rho0,rho1,cac,theta,working_model,\
variance_source,dof_rule,bias,coverage,avg_se,emp_se,pct_se_err,reject_rate,n_converged,mcse";

/// The scenario-identifying prefix of every row emitted for `sc`;
/// doubles as the resume key.
#[must_use]
pub fn scenario_key(sc: &Scenario) -> String {
    format!(
        "{},{},{},{},{},{},{},{}",
        sc.generator.token(),
        sc.design.n_clusters(),
        sc.design.n_sequences(),
        sc.design.per_cell(),
        sc.icc.rho0,
        sc.icc.rho1,
        sc.icc.cac,
        sc.theta
    )
}

fn opt(field: Option<f64>) -> String {
    match field {
        Some(x) if x.is_finite() => format!("{x}"),
        _ => String::new(),
    }
}

/// Write the summary rows of `results` (with header) to `w`.
pub fn write_csv<W: Write>(mut w: W, results: &[ScenarioResult]) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for result in results {
        let key = scenario_key(&result.scenario);
        for row in &result.rows {
            let (bias, coverage, avg_se, emp_se, pct, reject, mcse) = match &row.measures {
                Some(m) => (
                    opt(Some(m.bias)),
                    opt(Some(m.coverage)),
                    opt(Some(m.avg_se)),
                    opt(Some(m.emp_se)),
                    opt(m.pct_se_err),
                    opt(Some(m.reject_rate)),
                    opt(Some(m.mcse)),
                ),
                None => Default::default(),
            };
            writeln!(
                w,
                "{key},{model},{source},{dof},{bias},{coverage},{avg_se},{emp_se},{pct},{reject},{n},{mcse}",
                model = row.model.label(),
                source = row.source.token(),
                dof = row.dof.token(),
                n = row.n_converged,
            )?;
        }
    }
    Ok(())
}

/// Summary CSV as an in-memory string.
pub fn csv_string(results: &[ScenarioResult]) -> String {
    let mut buf = Vec::new();
    write_csv(&mut buf, results).expect("in-memory write cannot fail");
    String::from_utf8(buf).expect("csv output is ascii")
}

/// Scenario keys already present in an existing summary CSV, for
/// resuming an interrupted grid.
pub fn completed_scenario_keys<R: BufRead>(reader: R) -> Result<HashSet<String>> {
    let mut keys = HashSet::new();
    for line in reader.lines() {
        let line = line?;
        if line.is_empty() || line.starts_with("generator,") {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() >= 8 {
            keys.insert(fields[..8].join(","));
        }
    }
    Ok(keys)
}

/// Per-replicate audit dump header.
pub const DUMP_HEADER: &str = "generator,I,S,K,rho0,rho1,cac,theta,replicate,\
working_model,variance_source,dof_rule,converged,estimate,se,covered,rejected";

/// Write every analysis outcome of every replicate (including failures,
/// with empty value cells) for auditing.
pub fn write_replicate_dump<W: Write>(mut w: W, result: &ScenarioResult) -> Result<()> {
    writeln!(w, "{DUMP_HEADER}")?;
    let key = scenario_key(&result.scenario);
    for (rep, outcomes) in result.replicates.iter().enumerate() {
        let mut analysis = 0;
        for model in result.rows.iter().map(|r| (r.model, r.source, r.dof)) {
            let (model, source, dof) = model;
            let cell = outcomes[analysis];
            let (converged, estimate, se, covered, rejected) = match cell {
                Some(c) => (
                    1,
                    format!("{}", c.estimate),
                    format!("{}", c.se),
                    i32::from(c.covered).to_string(),
                    i32::from(c.rejected).to_string(),
                ),
                None => (0, String::new(), String::new(), String::new(), String::new()),
            };
            writeln!(
                w,
                "{key},{rep},{model},{source},{dof},{converged},{estimate},{se},{covered},{rejected}",
                model = model.label(),
                source = source.token(),
                dof = dof.token(),
            )?;
            analysis += 1;
        }
    }
    Ok(())
}
