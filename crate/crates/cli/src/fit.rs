//! `fit`: analyze one dataset CSV and report the fixed effects, variance
//! components, and the treatment effect under the model-based SE and
//! every sandwich estimator, as t intervals with I−2 degrees of freedom
//! (plus Satterthwaite rows for the adjustment-based estimators).

use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use serde::Serialize;
use stepwedge::covariance::{components_to_icc_spec, IccSpec, Structure, VarianceComponents};
use stepwedge::datagen::Dataset;
use stepwedge::inference::{wald_test, DofRule, VarianceSource, WaldResult};
use stepwedge::lmm::{reml_fit, FitResult};
use stepwedge::rve::Estimator;
use stepwedge::Error as LibError;

use crate::{classify, Failure, Outcome};

#[derive(Args, Clone)]
pub struct FitArgs {
    /// Dataset CSV with columns cluster,period,individual,treated,y.
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Working covariance structure (exch, ne, ne_ri, dtd_ri).
    #[arg(long, default_value = "exch")]
    pub structure: String,
    /// Two-sided level for intervals and tests.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Write the JSON report here instead of stdout.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct DesignSummary {
    n_clusters: usize,
    n_sequences: usize,
    n_periods: usize,
    per_cell: usize,
    n_obs: usize,
}

#[derive(Serialize)]
struct IntervalRow {
    source: String,
    dof_rule: String,
    available: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    note: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    se: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dof: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    t_stat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    p_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ci_low: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ci_high: Option<f64>,
}

#[derive(Serialize)]
struct FitReport {
    structure: String,
    design: DesignSummary,
    converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    boundary: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    variance_components: Option<VarianceComponents>,
    /// ICC parameterization implied by the components, for the
    /// random-intervention structures where it is defined.
    #[serde(skip_serializing_if = "Option::is_none")]
    icc: Option<IccSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fixed_effects: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    treatment_estimate: Option<f64>,
    alpha: f64,
    intervals: Vec<IntervalRow>,
}

fn available_row(source: &str, dof_rule: &str, w: &WaldResult) -> IntervalRow {
    IntervalRow {
        source: source.to_string(),
        dof_rule: dof_rule.to_string(),
        available: true,
        note: None,
        se: Some(w.se),
        dof: Some(w.dof),
        t_stat: Some(w.t_stat),
        p_value: Some(w.p_value),
        ci_low: Some(w.ci_low),
        ci_high: Some(w.ci_high),
    }
}

fn unavailable_row(source: &str, dof_rule: &str, note: String) -> IntervalRow {
    IntervalRow {
        source: source.to_string(),
        dof_rule: dof_rule.to_string(),
        available: false,
        note: Some(note),
        se: None,
        dof: None,
        t_stat: None,
        p_value: None,
        ci_low: None,
        ci_high: None,
    }
}

/// Interval rows for a converged fit: the model-based SE, every sandwich
/// under t(I−2), and Satterthwaite rows for CR2/CR3. A correction that
/// is undefined at this design size is reported in-band; any other
/// estimator failure aborts.
fn interval_rows(fit: &FitResult, alpha: f64) -> Result<Vec<IntervalRow>, Failure> {
    let mut rows = Vec::new();
    let i2 = DofRule::FixedIMinus2;
    let w = wald_test(fit, VarianceSource::Model, i2, 0.0, alpha).map_err(classify)?;
    rows.push(available_row("Std", i2.token(), &w));
    for est in Estimator::ALL {
        let source = VarianceSource::Robust(est);
        match wald_test(fit, source, i2, 0.0, alpha) {
            Ok(w) => rows.push(available_row(est.token(), i2.token(), &w)),
            Err(e @ LibError::UndefinedCorrection { .. }) => {
                rows.push(unavailable_row(est.token(), i2.token(), e.to_string()));
            }
            Err(e) => return Err(classify(e)),
        }
    }
    let satt = DofRule::Satterthwaite;
    for est in [Estimator::Cr2, Estimator::Cr3] {
        match wald_test(fit, VarianceSource::Robust(est), satt, 0.0, alpha) {
            Ok(w) => rows.push(available_row(est.token(), satt.token(), &w)),
            Err(e @ (LibError::UndefinedCorrection { .. } | LibError::NonPositiveDof { .. })) => {
                rows.push(unavailable_row(est.token(), satt.token(), e.to_string()));
            }
            Err(e) => return Err(classify(e)),
        }
    }
    Ok(rows)
}

fn emit(report: &FitReport, out: Option<&PathBuf>) -> Result<(), Failure> {
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    match out {
        Some(path) => std::fs::write(path, json + "\n")
            .with_context(|| format!("write {}", path.display()))
            .map_err(Failure::Config),
        None => {
            println!("{json}");
            Ok(())
        }
    }
}

pub fn run(args: &FitArgs) -> Result<Outcome, Failure> {
    let structure = Structure::parse(&args.structure).map_err(classify)?;
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(Failure::Config(anyhow::anyhow!("alpha {} outside (0,1)", args.alpha)));
    }
    let file = File::open(&args.data)
        .with_context(|| format!("open {}", args.data.display()))
        .map_err(Failure::Config)?;
    let data = Dataset::from_csv(BufReader::new(file)).map_err(classify)?;
    let design = *data.design();
    let summary = DesignSummary {
        n_clusters: design.n_clusters(),
        n_sequences: design.n_sequences(),
        n_periods: design.n_periods(),
        per_cell: design.per_cell(),
        n_obs: design.n_obs(),
    };

    match reml_fit(&data, structure) {
        Ok(fit) => {
            let icc = components_to_icc_spec(&fit.vc_hat, structure).ok();
            let intervals = interval_rows(&fit, args.alpha)?;
            let report = FitReport {
                structure: structure.token().to_string(),
                design: summary,
                converged: true,
                error: None,
                boundary: Some(fit.boundary),
                n_iterations: Some(fit.n_iterations),
                variance_components: Some(fit.vc_hat),
                icc,
                fixed_effects: Some(fit.beta_hat.iter().copied().collect()),
                treatment_estimate: Some(fit.theta_hat()),
                alpha: args.alpha,
                intervals,
            };
            emit(&report, args.out.as_ref())?;
            Ok(Outcome::Success)
        }
        Err(e @ LibError::NonConvergence { .. }) => {
            // Non-convergence still produces a (diagnostic) report, but
            // the command signals numerical failure.
            let report = FitReport {
                structure: structure.token().to_string(),
                design: summary,
                converged: false,
                error: Some(e.to_string()),
                boundary: None,
                n_iterations: None,
                variance_components: None,
                icc: None,
                fixed_effects: None,
                treatment_estimate: None,
                alpha: args.alpha,
                intervals: Vec::new(),
            };
            emit(&report, args.out.as_ref())?;
            Err(Failure::Numerical(e.into()))
        }
        Err(e) => Err(classify(e)),
    }
}
