//! Replicate engine: generate → fit working models → Wald analyses,
//! reduced to per-analysis measures.
//!
//! Replicates are the parallel unit. Each replicate's outcomes are
//! collected into a vector indexed by replicate order, and the measure
//! reduction runs sequentially over that vector, so summaries do not
//! depend on how replicates were scheduled across threads.
//!
//! A replicate that fails one analysis (its working model did not
//! converge, or a variance estimator was undefined there) is excluded
//! from that analysis only; other analyses keep it.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::covariance::Structure;
use crate::datagen::{generate, GenSpec};
use crate::error::Result;
use crate::inference::{wald_test, DofRule, VarianceSource};
use crate::lmm::{self, CollapsedData, FitOptions};

use super::config::{AnalysisPlan, Scenario, SimConfig, WorkingModel};
use super::measures::{summarize, CellOutcome, Measures};

/// Summary row for one analysis of one scenario.
#[derive(Debug, Clone)]
pub struct AnalysisRow {
    pub model: WorkingModel,
    pub source: VarianceSource,
    pub dof: DofRule,
    /// Replicates contributing to this analysis.
    pub n_converged: usize,
    /// Absent when fewer than two replicates converged.
    pub measures: Option<Measures>,
}

/// All analyses of one scenario, plus the per-replicate outcomes for
/// auditing. `replicates[r]` is indexed by analysis in row order.
#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub scenario: Scenario,
    pub alpha: f64,
    pub n_reps: usize,
    pub rows: Vec<AnalysisRow>,
    pub replicates: Vec<Vec<Option<CellOutcome>>>,
}

fn resolved_models(sc: &Scenario, plan: &AnalysisPlan) -> Vec<(WorkingModel, Structure)> {
    plan.models
        .iter()
        .map(|m| (*m, m.resolve(sc.generator)))
        .collect()
}

fn run_replicate(
    sc: &Scenario,
    models: &[(WorkingModel, Structure)],
    cells: &[(VarianceSource, DofRule)],
    alpha: f64,
    rep: u64,
) -> Vec<Option<CellOutcome>> {
    let n_analyses = models.len() * cells.len();
    let spec = GenSpec {
        design: sc.design,
        generator: sc.generator,
        vc: sc.vc,
        theta: sc.theta,
        mu: 0.0,
        seed: sc.seed,
        replicate_id: rep,
    };
    let data = match generate(&spec) {
        Ok(d) => d,
        Err(_) => return vec![None; n_analyses],
    };
    let collapsed = CollapsedData::from_dataset(&data);
    let fit_options = FitOptions::default();
    let mut out = Vec::with_capacity(n_analyses);
    for &(_, structure) in models {
        match lmm::reml_fit_collapsed(&collapsed, structure, &fit_options) {
            Ok(fit) => {
                for &(source, dof) in cells {
                    let cell = wald_test(&fit, source, dof, 0.0, alpha).ok().map(|wr| {
                        CellOutcome {
                            estimate: wr.estimate,
                            se: wr.se,
                            covered: wr.covers(sc.theta),
                            rejected: wr.rejects(),
                        }
                    });
                    out.push(cell);
                }
            }
            Err(_) => out.extend(std::iter::repeat(None).take(cells.len())),
        }
    }
    out
}

fn reduce(
    sc: &Scenario,
    plan: &AnalysisPlan,
    n_reps: usize,
    alpha: f64,
    replicates: Vec<Vec<Option<CellOutcome>>>,
) -> ScenarioResult {
    let mut rows = Vec::with_capacity(plan.n_analyses());
    let mut analysis = 0;
    for &model in &plan.models {
        for &(source, dof) in &plan.cells {
            let converged: Vec<&CellOutcome> = replicates
                .iter()
                .filter_map(|r| r[analysis].as_ref())
                .collect();
            rows.push(AnalysisRow {
                model,
                source,
                dof,
                n_converged: converged.len(),
                measures: summarize(converged.iter().copied(), sc.theta).ok(),
            });
            analysis += 1;
        }
    }
    ScenarioResult {
        scenario: *sc,
        alpha,
        n_reps,
        rows,
        replicates,
    }
}

/// Run one scenario sequentially regardless of features.
pub fn run_scenario_sequential(
    sc: &Scenario,
    plan: &AnalysisPlan,
    n_reps: usize,
    alpha: f64,
) -> ScenarioResult {
    let models = resolved_models(sc, plan);
    let replicates: Vec<Vec<Option<CellOutcome>>> = (0..n_reps as u64)
        .map(|rep| run_replicate(sc, &models, &plan.cells, alpha, rep))
        .collect();
    reduce(sc, plan, n_reps, alpha, replicates)
}

/// Run one scenario, parallelizing over replicates when the `parallel`
/// feature is enabled. Results are identical to the sequential path.
pub fn run_scenario(sc: &Scenario, plan: &AnalysisPlan, n_reps: usize, alpha: f64) -> ScenarioResult {
    #[cfg(feature = "parallel")]
    {
        let models = resolved_models(sc, plan);
        let replicates: Vec<Vec<Option<CellOutcome>>> = (0..n_reps as u64)
            .into_par_iter()
            .map(|rep| run_replicate(sc, &models, &plan.cells, alpha, rep))
            .collect();
        reduce(sc, plan, n_reps, alpha, replicates)
    }
    #[cfg(not(feature = "parallel"))]
    run_scenario_sequential(sc, plan, n_reps, alpha)
}

/// Expand a config and run every scenario in grid order.
pub fn run_config(cfg: &SimConfig) -> Result<Vec<ScenarioResult>> {
    let scenarios = cfg.expand_scenarios()?;
    let plan = cfg.analysis_plan()?;
    Ok(scenarios
        .iter()
        .map(|sc| run_scenario(sc, &plan, cfg.n_reps, cfg.alpha))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{IccSpec, VarianceComponents};
    use crate::design::TrialDesign;
    use crate::rve::Estimator;
    use crate::sim::scenario_seed;

    fn plan(sources: &[&str], rules: &[&str], models: &[&str]) -> AnalysisPlan {
        AnalysisPlan::from_config(&crate::sim::AnalysisConfig {
            working_models: models.iter().map(|s| s.to_string()).collect(),
            variance_sources: sources.iter().map(|s| s.to_string()).collect(),
            dof_rules: rules.iter().map(|s| s.to_string()).collect(),
        })
        .unwrap()
    }

    fn scenario(i: usize, s: usize, k: usize, theta: f64) -> Scenario {
        let icc = IccSpec { rho0: 0.01, rho1: 0.05, cac: 0.8, sigma_eps: 1.0 };
        Scenario {
            index: 0,
            generator: Structure::NestedExchangeableRi,
            design: TrialDesign::new(i, s, k).unwrap(),
            icc,
            vc: crate::covariance::icc_to_components(&icc, Structure::NestedExchangeableRi)
                .unwrap(),
            theta,
            seed: scenario_seed(7, 0),
        }
    }

    #[test]
    fn undefined_estimator_excludes_only_its_own_analysis() {
        // I = 8 clusters with S = 8 sequences gives P = 10 > I, so the
        // CR1P correction is undefined while CR0 remains fine.
        let sc = scenario(8, 8, 2, 0.0);
        let plan = plan(&["cr1p", "cr0"], &["i_minus_2"], &["exch"]);
        let result = run_scenario_sequential(&sc, &plan, 4, 0.05);
        assert_eq!(result.rows.len(), 2);
        let cr1p = &result.rows[0];
        assert_eq!(cr1p.source, VarianceSource::Robust(Estimator::Cr1p));
        assert_eq!(cr1p.n_converged, 0);
        assert!(cr1p.measures.is_none());
        let cr0 = &result.rows[1];
        assert_eq!(cr0.n_converged, 4);
        assert!(cr0.measures.is_some());
    }

    #[test]
    fn inflation_factor_orders_interval_widths_per_replicate() {
        let sc = scenario(8, 4, 2, 0.0);
        let plan = plan(&["cr0", "cr1"], &["i_minus_2"], &["exch"]);
        let result = run_scenario_sequential(&sc, &plan, 5, 0.05);
        for rep in &result.replicates {
            let (cr0, cr1) = (rep[0].unwrap(), rep[1].unwrap());
            assert_eq!(cr0.estimate, cr1.estimate);
            // Same center and same t quantile, so the SE ordering is the
            // interval-containment ordering.
            assert!(cr1.se > cr0.se);
            if cr0.covered {
                assert!(cr1.covered);
            }
            if cr1.rejected {
                assert!(cr0.rejected);
            }
        }
    }

    #[test]
    fn near_iid_truth_gives_small_bias_and_high_coverage() {
        let mut sc = scenario(8, 4, 40, 0.5);
        sc.vc = VarianceComponents {
            tau_alpha_sq: 1e-4,
            tau_gamma_sq: 1e-4,
            tau_v_sq: 0.0,
            decay: 0.0,
            sigma_eps_sq: 1.0,
        };
        let plan = plan(&["std"], &["i_minus_2"], &["exch"]);
        let result = run_scenario_sequential(&sc, &plan, 40, 0.05);
        let m = result.rows[0].measures.unwrap();
        assert_eq!(m.n_converged, 40);
        assert!(m.bias.abs() < 0.05, "bias {} too large", m.bias);
        assert!(m.coverage >= 0.85, "coverage {} too low", m.coverage);
    }

    #[test]
    fn parallel_and_sequential_paths_agree() {
        let sc = scenario(8, 4, 2, 0.2);
        let plan = plan(&["std", "cr3"], &["i_minus_2"], &["exch", "true"]);
        let seq = run_scenario_sequential(&sc, &plan, 4, 0.05);
        let par = run_scenario(&sc, &plan, 4, 0.05);
        assert_eq!(seq.replicates, par.replicates);
        for (a, b) in seq.rows.iter().zip(&par.rows) {
            assert_eq!(a.n_converged, b.n_converged);
            match (&a.measures, &b.measures) {
                (Some(x), Some(y)) => {
                    assert_eq!(x.bias, y.bias);
                    assert_eq!(x.emp_se, y.emp_se);
                    assert_eq!(x.coverage, y.coverage);
                }
                (None, None) => {}
                _ => panic!("measure presence differs between paths"),
            }
        }
    }
}
