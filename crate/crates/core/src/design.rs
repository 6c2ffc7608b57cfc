//! Balanced cross-sectional stepped-wedge trial layouts.
//!
//! A stepped-wedge design has `S` treatment sequences observed over
//! `J = S + 1` periods. Every cluster starts in control and crosses to
//! intervention at a sequence-specific period: the cluster rows of the
//! treatment grid form a staircase. Layouts here are balanced — `I` is a
//! multiple of `S` and clusters are assigned to sequences in index order
//! (simulated clusters within a sequence are exchangeable, so nothing is
//! lost by skipping randomization).
//!
//! Fixed effects are parameterized as intercept + `J − 1` period dummies
//! (first period is the reference) + one treatment indicator, giving
//! `P = J + 1` columns.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A balanced stepped-wedge layout: `I` clusters over `S` sequences,
/// `J = S + 1` periods, `K` individuals per cluster-period.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialDesign {
    n_clusters: usize,
    n_sequences: usize,
    per_cell: usize,
}

impl TrialDesign {
    /// Build a balanced layout.
    ///
    /// Requires `I >= 2`, `S >= 1`, `K >= 1`, and `I` divisible by `S`.
    pub fn new(n_clusters: usize, n_sequences: usize, per_cell: usize) -> Result<Self> {
        if n_clusters < 2 {
            return Err(Error::InvalidDimension {
                what: "n_clusters",
                value: n_clusters,
                min: 2,
            });
        }
        if n_sequences < 1 {
            return Err(Error::InvalidDimension {
                what: "n_sequences",
                value: n_sequences,
                min: 1,
            });
        }
        if per_cell < 1 {
            return Err(Error::InvalidDimension {
                what: "per_cell",
                value: per_cell,
                min: 1,
            });
        }
        if n_clusters % n_sequences != 0 {
            return Err(Error::UnbalancedDesign {
                n_clusters,
                n_sequences,
            });
        }
        Ok(Self {
            n_clusters,
            n_sequences,
            per_cell,
        })
    }

    /// Number of clusters `I`.
    #[must_use]
    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    /// Number of sequences `S`.
    #[must_use]
    pub fn n_sequences(&self) -> usize {
        self.n_sequences
    }

    /// Number of periods `J = S + 1`.
    #[must_use]
    pub fn n_periods(&self) -> usize {
        self.n_sequences + 1
    }

    /// Individuals per cluster-period `K`.
    #[must_use]
    pub fn per_cell(&self) -> usize {
        self.per_cell
    }

    /// Clusters per sequence `I / S`.
    #[must_use]
    pub fn clusters_per_sequence(&self) -> usize {
        self.n_clusters / self.n_sequences
    }

    /// Observations per cluster `n_i = J·K`.
    #[must_use]
    pub fn cluster_size(&self) -> usize {
        self.n_periods() * self.per_cell
    }

    /// Total observations `N = I·J·K`.
    #[must_use]
    pub fn n_obs(&self) -> usize {
        self.n_clusters * self.cluster_size()
    }

    /// Number of fixed-effect columns `P = J + 1`
    /// (intercept, `J − 1` period dummies, treatment).
    #[must_use]
    pub fn n_fixed_effects(&self) -> usize {
        self.n_periods() + 1
    }

    /// Column index of the treatment coefficient (last column).
    #[must_use]
    pub fn treatment_col(&self) -> usize {
        self.n_fixed_effects() - 1
    }

    /// Default block assignment: cluster `i` belongs to sequence
    /// `i / (I/S)`.
    pub fn sequence_of(&self, cluster: usize) -> Result<usize> {
        if cluster >= self.n_clusters {
            return Err(Error::IndexOutOfRange {
                what: "cluster",
                value: cluster,
                limit: self.n_clusters,
            });
        }
        Ok(cluster / self.clusters_per_sequence())
    }

    /// Default cluster → sequence map as a vector.
    #[must_use]
    pub fn default_assignment(&self) -> Vec<usize> {
        (0..self.n_clusters)
            .map(|i| i / self.clusters_per_sequence())
            .collect()
    }

    /// Treatment status of sequence `seq` (0-based) in period `period`
    /// (0-based): control through period `seq`, intervention afterwards.
    pub fn treated(&self, seq: usize, period: usize) -> Result<bool> {
        if seq >= self.n_sequences {
            return Err(Error::IndexOutOfRange {
                what: "seq",
                value: seq,
                limit: self.n_sequences,
            });
        }
        if period >= self.n_periods() {
            return Err(Error::IndexOutOfRange {
                what: "period",
                value: period,
                limit: self.n_periods(),
            });
        }
        Ok(period >= seq + 1)
    }

    /// Treatment indicator row for a sequence, as 0.0/1.0 over periods.
    pub fn treatment_row(&self, seq: usize) -> Result<Vec<f64>> {
        (0..self.n_periods())
            .map(|j| self.treated(seq, j).map(|t| if t { 1.0 } else { 0.0 }))
            .collect()
    }

    /// The `I × J` treatment grid under the default assignment.
    #[must_use]
    pub fn treatment_grid(&self) -> Vec<Vec<f64>> {
        (0..self.n_clusters)
            .map(|i| {
                let s = self.sequence_of(i).expect("cluster in range");
                self.treatment_row(s).expect("seq in range")
            })
            .collect()
    }

    /// Per-period fixed-effects design block for a sequence: a `J × P`
    /// matrix whose row `j` is `[1, period dummies, x_j]`. The stacked
    /// per-observation design of a cluster repeats each row `K` times.
    pub fn period_design(&self, seq: usize) -> Result<DMatrix<f64>> {
        let j_len = self.n_periods();
        let p = self.n_fixed_effects();
        let x = self.treatment_row(seq)?;
        let mut b = DMatrix::zeros(j_len, p);
        for j in 0..j_len {
            b[(j, 0)] = 1.0;
            if j >= 1 {
                b[(j, j)] = 1.0; // dummy for period j sits in column j
            }
            b[(j, p - 1)] = x[j];
        }
        Ok(b)
    }

    /// Full per-observation design matrix for one cluster
    /// (`n_i × P`, each period row repeated `K` times).
    pub fn design_matrix(&self, cluster: usize) -> Result<DMatrix<f64>> {
        let seq = self.sequence_of(cluster)?;
        let b = self.period_design(seq)?;
        let j_len = self.n_periods();
        let p = self.n_fixed_effects();
        let k = self.per_cell;
        let mut x = DMatrix::zeros(j_len * k, p);
        for j in 0..j_len {
            for kk in 0..k {
                for c in 0..p {
                    x[(j * k + kk, c)] = b[(j, c)];
                }
            }
        }
        Ok(x)
    }

    /// Total number of treated cluster-periods:
    /// each sequence `s` (0-based) contributes `S − s` treated periods,
    /// so the total is `(I/S)·S(S+1)/2`.
    #[must_use]
    pub fn n_treated_cells(&self) -> usize {
        let s = self.n_sequences;
        self.clusters_per_sequence() * s * (s + 1) / 2
    }
}
