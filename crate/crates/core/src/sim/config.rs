//! Study configuration: TOML schema, validation, and expansion of the
//! scenario grid.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::Deserialize;

use crate::covariance::{icc_to_components, IccSpec, Structure, VarianceComponents};
use crate::design::TrialDesign;
use crate::error::{Error, Result};
use crate::inference::{DofRule, VarianceSource};

/// Top-level simulation study configuration.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Config format version; only `1` is understood.
    pub schema_version: u32,
    /// Master seed; every scenario derives its own stream from it.
    pub seed: u64,
    /// Replicates per scenario.
    pub n_reps: usize,
    /// Two-sided level for intervals and tests.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Individual-error standard deviation shared by all scenarios.
    #[serde(default = "default_sigma_eps")]
    pub sigma_eps: f64,
    pub grid: GridConfig,
    pub analysis: AnalysisConfig,
}

fn default_alpha() -> f64 {
    0.05
}

fn default_sigma_eps() -> f64 {
    1.0
}

/// Cartesian grid of data-generating scenarios.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Generating covariance structures.
    pub generators: Vec<String>,
    /// Numbers of clusters.
    pub clusters: Vec<usize>,
    /// Numbers of treatment sequences.
    pub sequences: Vec<usize>,
    /// Individuals per cluster-period.
    pub cell_sizes: Vec<usize>,
    /// `[within-period, between-period]` ICC pairs.
    pub icc_pairs: Vec<[f64; 2]>,
    /// Cluster autocorrelations.
    pub cac: Vec<f64>,
    /// Treatment effects.
    pub theta: Vec<f64>,
}

/// Analyses applied to every replicate.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Working structures to fit; `"true"` resolves to each scenario's
    /// generator.
    pub working_models: Vec<String>,
    /// `"std"` (model-based) and/or robust estimator tokens.
    pub variance_sources: Vec<String>,
    /// `"i_minus_2"` and/or `"satterthwaite"`.
    pub dof_rules: Vec<String>,
}

/// A working-model request: either a fixed structure or "fit the
/// generating structure".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WorkingModel {
    True,
    Fixed(Structure),
}

impl WorkingModel {
    pub fn parse(token: &str) -> Result<Self> {
        if token.eq_ignore_ascii_case("true") {
            Ok(Self::True)
        } else {
            Ok(Self::Fixed(Structure::parse(token)?))
        }
    }

    /// Label used in output rows.
    pub fn label(&self) -> String {
        match self {
            Self::True => "true".to_string(),
            Self::Fixed(s) => s.token().to_string(),
        }
    }

    /// The structure actually fitted under this generator.
    pub fn resolve(&self, generator: Structure) -> Structure {
        match self {
            Self::True => generator,
            Self::Fixed(s) => *s,
        }
    }
}

impl fmt::Display for WorkingModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Validated analysis plan: working models plus the (variance source,
/// DoF rule) cells applied to each fit.
#[derive(Debug, Clone)]
pub struct AnalysisPlan {
    pub models: Vec<WorkingModel>,
    pub cells: Vec<(VarianceSource, DofRule)>,
}

impl AnalysisPlan {
    /// Build from config lists. Satterthwaite pairs only with the
    /// bias-adjusted robust estimators, so incompatible combinations
    /// are dropped rather than generated and failed.
    pub fn from_config(cfg: &AnalysisConfig) -> Result<Self> {
        if cfg.working_models.is_empty() {
            return Err(Error::InvalidConfig("analysis.working_models is empty".into()));
        }
        if cfg.variance_sources.is_empty() {
            return Err(Error::InvalidConfig("analysis.variance_sources is empty".into()));
        }
        if cfg.dof_rules.is_empty() {
            return Err(Error::InvalidConfig("analysis.dof_rules is empty".into()));
        }
        let mut models = Vec::new();
        for token in &cfg.working_models {
            let m = WorkingModel::parse(token)
                .map_err(|e| Error::InvalidConfig(format!("working model {token:?}: {e}")))?;
            if !models.contains(&m) {
                models.push(m);
            }
        }
        let mut sources = Vec::new();
        for token in &cfg.variance_sources {
            let s = VarianceSource::parse(token)
                .map_err(|e| Error::InvalidConfig(format!("variance source {token:?}: {e}")))?;
            if !sources.contains(&s) {
                sources.push(s);
            }
        }
        let mut rules = Vec::new();
        for token in &cfg.dof_rules {
            let r = DofRule::parse(token)
                .map_err(|e| Error::InvalidConfig(format!("dof rule {token:?}: {e}")))?;
            if !rules.contains(&r) {
                rules.push(r);
            }
        }
        let mut cells = Vec::new();
        for &s in &sources {
            for &r in &rules {
                let compatible = match r {
                    DofRule::FixedIMinus2 => true,
                    DofRule::Satterthwaite => {
                        matches!(s, VarianceSource::Robust(e) if e.has_adjustment())
                    }
                };
                if compatible {
                    cells.push((s, r));
                }
            }
        }
        if cells.is_empty() {
            return Err(Error::InvalidConfig(
                "no compatible (variance source, dof rule) combinations".into(),
            ));
        }
        Ok(Self { models, cells })
    }

    /// Analysis cells per fitted model.
    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    /// Total analyses per replicate.
    pub fn n_analyses(&self) -> usize {
        self.models.len() * self.cells.len()
    }
}

/// One fully resolved data-generating setting.
#[derive(Debug, Clone, Copy)]
pub struct Scenario {
    /// Position in the expanded grid (drives the derived seed).
    pub index: usize,
    pub generator: Structure,
    pub design: TrialDesign,
    pub icc: IccSpec,
    pub vc: VarianceComponents,
    pub theta: f64,
    /// Scenario-level seed derived from the master seed.
    pub seed: u64,
}

/// SplitMix64 output scrambler; decorrelates consecutive scenario seeds.
fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the scenario at `index` under master `seed`.
pub fn scenario_seed(seed: u64, index: usize) -> u64 {
    splitmix64(seed.wrapping_add((index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

impl SimConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: SimConfig =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path<P: AsRef<Path>>(path: P) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    fn validate(&self) -> Result<()> {
        if self.schema_version != 1 {
            return Err(Error::InvalidConfig(format!(
                "unsupported schema_version {} (expected 1)",
                self.schema_version
            )));
        }
        if self.n_reps == 0 {
            return Err(Error::InvalidConfig("n_reps must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!("alpha {} outside (0,1)", self.alpha)));
        }
        if !(self.sigma_eps > 0.0) {
            return Err(Error::InvalidConfig("sigma_eps must be positive".into()));
        }
        let g = &self.grid;
        for (name, empty) in [
            ("generators", g.generators.is_empty()),
            ("clusters", g.clusters.is_empty()),
            ("sequences", g.sequences.is_empty()),
            ("cell_sizes", g.cell_sizes.is_empty()),
            ("icc_pairs", g.icc_pairs.is_empty()),
            ("cac", g.cac.is_empty()),
            ("theta", g.theta.is_empty()),
        ] {
            if empty {
                return Err(Error::InvalidConfig(format!("grid.{name} is empty")));
            }
        }
        Ok(())
    }

    /// Expand the Cartesian grid in deterministic order:
    /// generator → clusters → sequences → cell size → ICC pair → CAC → theta.
    pub fn expand_scenarios(&self) -> Result<Vec<Scenario>> {
        let mut generators = Vec::new();
        for token in &self.grid.generators {
            let s = Structure::parse(token)
                .map_err(|e| Error::InvalidConfig(format!("generator {token:?}: {e}")))?;
            generators.push(s);
        }
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for &generator in &generators {
            for &i in &self.grid.clusters {
                for &s in &self.grid.sequences {
                    for &k in &self.grid.cell_sizes {
                        let design = TrialDesign::new(i, s, k).map_err(|e| {
                            Error::InvalidConfig(format!(
                                "clusters={i}, sequences={s}, cell_size={k}: {e}"
                            ))
                        })?;
                        for pair in &self.grid.icc_pairs {
                            for &cac in &self.grid.cac {
                                let icc = IccSpec {
                                    rho0: pair[0],
                                    rho1: pair[1],
                                    cac,
                                    sigma_eps: self.sigma_eps,
                                };
                                let vc = icc_to_components(&icc, generator).map_err(|e| {
                                    Error::InvalidConfig(format!(
                                        "icc pair ({}, {}) cac {} under {}: {e}",
                                        pair[0],
                                        pair[1],
                                        cac,
                                        generator.token()
                                    ))
                                })?;
                                for &theta in &self.grid.theta {
                                    let index = out.len();
                                    if !seen.insert((
                                        generator,
                                        i,
                                        s,
                                        k,
                                        pair[0].to_bits(),
                                        pair[1].to_bits(),
                                        cac.to_bits(),
                                        theta.to_bits(),
                                    )) {
                                        return Err(Error::InvalidConfig(
                                            "duplicate grid entries produce colliding scenarios"
                                                .into(),
                                        ));
                                    }
                                    out.push(Scenario {
                                        index,
                                        generator,
                                        design,
                                        icc,
                                        vc,
                                        theta,
                                        seed: scenario_seed(self.seed, index),
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Parsed analysis plan.
    pub fn analysis_plan(&self) -> Result<AnalysisPlan> {
        AnalysisPlan::from_config(&self.analysis)
    }
}
