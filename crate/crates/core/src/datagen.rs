//! Reproducible outcome generation for stepped-wedge trials.
//!
//! The generating model is
//!
//! ```text
//! Y_ijk = μ + β_j + (θ + v_i)·X_ij + α_i + γ_ij + ε_ijk
//! ```
//!
//! with period effects `β_j = j` (1-indexed), cluster intercepts
//! `α_i ~ N(0, τ_α²)`, random intervention effects `v_i ~ N(0, τ_v²)`,
//! cluster-period effects `γ_i ~ N_J(0, τ_γ²·Z̃)` (`Z̃` identity for the
//! nested family, AR(1) under decay — sampled by the stationary
//! recursion), and iid errors `ε ~ N(0, σ_ε²)`.
//!
//! Reproducibility contract: replicate `r` of seed `s` draws from an
//! independent counter-derived substream, so datasets are bit-identical
//! regardless of thread count or evaluation order. Within a replicate the
//! draw order is fixed: per cluster — intercept, intervention effect,
//! period effects, then errors in period-major order (a component absent
//! from the generator's structure is skipped).

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::covariance::{Structure, VarianceComponents};
use crate::design::TrialDesign;
use crate::error::{Error, Result};

/// Full specification of one generated dataset.
#[derive(Debug, Clone, Copy)]
pub struct GenSpec {
    /// Trial layout.
    pub design: TrialDesign,
    /// Generating random-effects structure.
    pub generator: Structure,
    /// Generating variance components (must match the structure).
    pub vc: VarianceComponents,
    /// Time-invariant treatment effect θ.
    pub theta: f64,
    /// Overall control-condition mean (0 in all study scenarios; absorbed
    /// by the intercept).
    pub mu: f64,
    /// Base seed; all randomness flows from it.
    pub seed: u64,
    /// Replicate counter selecting the substream.
    pub replicate_id: u64,
}

/// One dataset row.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct Row {
    cluster: usize,
    period: usize,
    individual: usize,
    treated: u8,
    y: f64,
}

/// A generated (or loaded) outcome dataset with its layout and the
/// cluster → sequence assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    design: TrialDesign,
    seq_of: Vec<usize>,
    /// Outcomes in period-major order: `y[(i·J + j)·K + k]`.
    y: Vec<f64>,
}

impl Dataset {
    /// Assemble a dataset from parts, validating the assignment and
    /// outcome length. The assignment must use every sequence equally
    /// (`I/S` clusters each).
    pub fn from_parts(design: TrialDesign, seq_of: Vec<usize>, y: Vec<f64>) -> Result<Self> {
        if seq_of.len() != design.n_clusters() {
            return Err(Error::MalformedDataset(format!(
                "assignment covers {} clusters, design has {}",
                seq_of.len(),
                design.n_clusters()
            )));
        }
        let mut counts = vec![0usize; design.n_sequences()];
        for &s in &seq_of {
            if s >= design.n_sequences() {
                return Err(Error::MalformedDataset(format!(
                    "sequence index {s} out of range"
                )));
            }
            counts[s] += 1;
        }
        if counts.iter().any(|&c| c != design.clusters_per_sequence()) {
            return Err(Error::MalformedDataset(format!(
                "unbalanced assignment: sequence counts {counts:?}"
            )));
        }
        if y.len() != design.n_obs() {
            return Err(Error::MalformedDataset(format!(
                "{} outcomes for {} design cells",
                y.len(),
                design.n_obs()
            )));
        }
        Ok(Self { design, seq_of, y })
    }

    /// Trial layout.
    #[must_use]
    pub fn design(&self) -> &TrialDesign {
        &self.design
    }

    /// Cluster → sequence assignment.
    #[must_use]
    pub fn seq_of(&self) -> &[usize] {
        &self.seq_of
    }

    /// Outcome of one observation.
    #[must_use]
    pub fn y(&self, cluster: usize, period: usize, individual: usize) -> f64 {
        let j_len = self.design.n_periods();
        let k = self.design.per_cell();
        self.y[(cluster * j_len + period) * k + individual]
    }

    /// Flat outcome slice (period-major within cluster).
    #[must_use]
    pub fn outcomes(&self) -> &[f64] {
        &self.y
    }

    /// The same outcomes under a different cluster → sequence assignment
    /// (used by permutation tests).
    pub fn reassigned(&self, seq_of: Vec<usize>) -> Result<Self> {
        Self::from_parts(self.design, seq_of, self.y.clone())
    }

    /// Serialize as CSV with header `cluster,period,individual,treated,y`
    /// (0-based indices).
    pub fn to_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let j_len = self.design.n_periods();
        let k = self.design.per_cell();
        for i in 0..self.design.n_clusters() {
            let x = self.design.treatment_row(self.seq_of[i])?;
            for j in 0..j_len {
                for kk in 0..k {
                    out.serialize(Row {
                        cluster: i,
                        period: j,
                        individual: kk,
                        treated: if x[j] > 0.0 { 1 } else { 0 },
                        y: self.y(i, j, kk),
                    })?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Load a dataset from CSV, inferring the layout (cluster, period and
    /// individual counts, plus each cluster's sequence from its first
    /// treated period). The treated pattern of every cluster must be a
    /// stepped-wedge staircase row and the assignment must be balanced.
    pub fn from_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut rows: Vec<Row> = Vec::new();
        for rec in rdr.deserialize() {
            rows.push(rec?);
        }
        if rows.is_empty() {
            return Err(Error::MalformedDataset("empty dataset".into()));
        }
        let n_clusters = rows.iter().map(|r| r.cluster).max().unwrap() + 1;
        let n_periods = rows.iter().map(|r| r.period).max().unwrap() + 1;
        let per_cell = rows.iter().map(|r| r.individual).max().unwrap() + 1;
        if n_periods < 2 {
            return Err(Error::MalformedDataset(
                "need at least two periods".into(),
            ));
        }
        let n_sequences = n_periods - 1;
        let design = TrialDesign::new(n_clusters, n_sequences, per_cell)?;
        if rows.len() != design.n_obs() {
            return Err(Error::MalformedDataset(format!(
                "{} rows for a {}×{}×{} layout",
                rows.len(),
                n_clusters,
                n_periods,
                per_cell
            )));
        }

        // Treated pattern per cluster-period, checked for consistency.
        let mut treated: BTreeMap<(usize, usize), u8> = BTreeMap::new();
        let mut y = vec![f64::NAN; design.n_obs()];
        let mut seen = vec![false; design.n_obs()];
        for r in &rows {
            let idx = (r.cluster * n_periods + r.period) * per_cell + r.individual;
            if seen[idx] {
                return Err(Error::MalformedDataset(format!(
                    "duplicate row for cluster {} period {} individual {}",
                    r.cluster, r.period, r.individual
                )));
            }
            seen[idx] = true;
            y[idx] = r.y;
            if let Some(&t) = treated.get(&(r.cluster, r.period)) {
                if t != r.treated {
                    return Err(Error::MalformedDataset(format!(
                        "inconsistent treated flag in cluster {} period {}",
                        r.cluster, r.period
                    )));
                }
            } else {
                treated.insert((r.cluster, r.period), r.treated);
            }
        }
        if !seen.iter().all(|&s| s) {
            return Err(Error::MalformedDataset("missing cells".into()));
        }

        // Infer sequence from the first treated period; validate staircase.
        let mut seq_of = Vec::with_capacity(n_clusters);
        for i in 0..n_clusters {
            let pattern: Vec<u8> = (0..n_periods).map(|j| treated[&(i, j)]).collect();
            let first = pattern.iter().position(|&t| t == 1).ok_or_else(|| {
                Error::MalformedDataset(format!("cluster {i} never treated"))
            })?;
            if first == 0 {
                return Err(Error::MalformedDataset(format!(
                    "cluster {i} treated in the first period"
                )));
            }
            if pattern[first..].iter().any(|&t| t == 0) {
                return Err(Error::MalformedDataset(format!(
                    "cluster {i} leaves intervention (not a staircase row)"
                )));
            }
            seq_of.push(first - 1);
        }
        Self::from_parts(design, seq_of, y)
    }
}

/// Sample a length-`J` stationary AR(1) vector with marginal variance
/// `τ_γ²` and lag-1 correlation `r` by the recursion
/// `γ_1 = τ_γ·z_1`, `γ_j = r·γ_{j−1} + τ_γ·√(1−r²)·z_j`.
/// `r = 0` reduces to iid draws.
pub fn sample_mvn_ar1<R: Rng>(
    n_periods: usize,
    tau_gamma_sq: f64,
    r: f64,
    rng: &mut R,
) -> Vec<f64> {
    let tau = tau_gamma_sq.sqrt();
    let innov = tau * (1.0 - r * r).sqrt();
    let mut out = Vec::with_capacity(n_periods);
    let mut prev = 0.0;
    for j in 0..n_periods {
        let z: f64 = rng.sample(StandardNormal);
        let g = if j == 0 { tau * z } else { r * prev + innov * z };
        out.push(g);
        prev = g;
    }
    out
}

/// Generate one dataset. Deterministic given `(seed, replicate_id)`.
pub fn generate(spec: &GenSpec) -> Result<Dataset> {
    spec.vc.validate_for(spec.generator)?;
    let d = &spec.design;
    let j_len = d.n_periods();
    let k = d.per_cell();
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    rng.set_stream(spec.replicate_id);

    let tau_alpha = spec.vc.tau_alpha_sq.sqrt();
    let tau_v = spec.vc.tau_v_sq.sqrt();
    let sigma = spec.vc.sigma_eps_sq.sqrt();
    let decay = if spec.generator.has_decay() {
        spec.vc.decay
    } else {
        0.0
    };

    let seq_of = d.default_assignment();
    let mut y = Vec::with_capacity(d.n_obs());
    for i in 0..d.n_clusters() {
        let x = d.treatment_row(seq_of[i])?;
        let alpha = if spec.generator.has_cluster_intercept() {
            let z: f64 = rng.sample(StandardNormal);
            tau_alpha * z
        } else {
            0.0
        };
        let v = if spec.generator.has_random_intervention() {
            let z: f64 = rng.sample(StandardNormal);
            tau_v * z
        } else {
            0.0
        };
        let gamma = if spec.generator.has_cluster_period() {
            sample_mvn_ar1(j_len, spec.vc.tau_gamma_sq, decay, &mut rng)
        } else {
            vec![0.0; j_len]
        };
        for j in 0..j_len {
            let beta_j = (j + 1) as f64;
            let mean = spec.mu + beta_j + (spec.theta + v) * x[j] + alpha + gamma[j];
            for _ in 0..k {
                let z: f64 = rng.sample(StandardNormal);
                y.push(mean + sigma * z);
            }
        }
    }
    Dataset::from_parts(*d, seq_of, y)
}
