//! Cluster-robust variance estimators for the treatment effect.
//!
//! All six estimators share the sandwich form
//! `G · [Σ_i X_i'V_i⁻¹ A_i r̂_i r̂_i' A_i' V_i⁻¹ X_i] · G` with bread
//! `G = (X'V⁻¹X)⁻¹`; they differ in the adjustment `A_i` and a scalar
//! correction:
//!
//! * `CR0` — `A_i = I`, no correction;
//! * `CR1` — `CR0 × I/(I−1)`;
//! * `CR1P` — `CR0 × I/(I−P)`, undefined when `I ≤ P`;
//! * `CR1S` — `CR0 × I(N−1)/[(I−1)(N−P)]`;
//! * `CR2` — `A_i` chosen so `A_i (V_i − X_i G X_i') A_i' = V_i`, the
//!   bias-reduced linearization: `A_i = S_i M_i^{−1/2} S_i⁻¹` with
//!   `S_i = V_i^{1/2}` symmetric and `M_i = S_i⁻¹(V_i − X_i G X_i')S_i⁻¹`;
//! * `CR3` — `A_i = (I − H_i)⁻¹` with cluster leverage
//!   `H_i = X_i G X_i' V_i⁻¹`.
//!
//! Computation runs entirely in period space. Within a cluster every
//! covariate is period-constant, so `V_i`, `A_i`, and the leverage all
//! decompose over the cell-mean subspace (spanned per period by `1_K/K`)
//! and its orthogonal complement, on which everything acts as a scalar
//! and the scores vanish. With `Q = σ²I_J + K·ζRζ'` the period-level
//! covariance and `r̄_i` the period-mean residuals:
//!
//! * score: `X_i'V_i⁻¹A_i r̂_i = K·B'Q⁻¹ a r̄_i`;
//! * `CR2`: `a = Q^{1/2} m^{−1/2} Q^{−1/2}`,
//!   `m = I_J − K·Q^{−1/2} B G B' Q^{−1/2}`;
//! * `CR3`: `a = (I_J − K·B G B' Q⁻¹)⁻¹`.
//!
//! The equivalence with the dense per-observation construction is exact
//! and is asserted against an independent dense implementation in the
//! integration tests.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::ser::{Serialize, SerializeStruct, Serializer};

use crate::error::{Error, Result};
use crate::lmm::FitResult;

/// Eigenvalues of the CR2 working-residual matrix below this floor are
/// treated as a degenerate subspace: the pseudo-inverse square root is
/// applied there and the affected clusters are flagged.
pub const CR2_EIGENVALUE_FLOOR: f64 = 1e-10;

/// The six cluster-robust variance estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Estimator {
    Cr0,
    Cr1,
    Cr1p,
    Cr1s,
    Cr2,
    Cr3,
}

impl Estimator {
    pub const ALL: [Estimator; 6] = [
        Estimator::Cr0,
        Estimator::Cr1,
        Estimator::Cr1p,
        Estimator::Cr1s,
        Estimator::Cr2,
        Estimator::Cr3,
    ];

    /// Canonical display token.
    #[must_use]
    pub fn token(self) -> &'static str {
        match self {
            Estimator::Cr0 => "CR0",
            Estimator::Cr1 => "CR1",
            Estimator::Cr1p => "CR1P",
            Estimator::Cr1s => "CR1S",
            Estimator::Cr2 => "CR2",
            Estimator::Cr3 => "CR3",
        }
    }

    /// Parse a token (case-insensitive).
    pub fn parse(token: &str) -> Result<Self> {
        match token.to_ascii_uppercase().as_str() {
            "CR0" => Ok(Estimator::Cr0),
            "CR1" => Ok(Estimator::Cr1),
            "CR1P" => Ok(Estimator::Cr1p),
            "CR1S" => Ok(Estimator::Cr1s),
            "CR2" => Ok(Estimator::Cr2),
            "CR3" => Ok(Estimator::Cr3),
            other => Err(Error::InvalidSpec(format!("unknown estimator `{other}`"))),
        }
    }

    /// Whether the estimator carries a per-cluster adjustment matrix
    /// (and hence supports Satterthwaite degrees of freedom).
    #[must_use]
    pub fn has_adjustment(self) -> bool {
        matches!(self, Estimator::Cr2 | Estimator::Cr3)
    }
}

impl std::fmt::Display for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.token())
    }
}

/// A robust covariance matrix for the fixed effects.
#[derive(Debug, Clone)]
pub struct RobustVcov {
    pub estimator: Estimator,
    /// `P × P` symmetric sandwich.
    pub vcov: DMatrix<f64>,
    /// Square root of the treatment coefficient's diagonal entry.
    pub treatment_se: f64,
    /// Clusters whose CR2 adjustment hit the eigenvalue floor and used a
    /// pseudo-inverse square root (empty in regular problems).
    pub degenerate_clusters: Vec<usize>,
}

impl Serialize for RobustVcov {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = serializer.serialize_struct("RobustVcov", 4)?;
        st.serialize_field("estimator", self.estimator.token())?;
        let rows: Vec<Vec<f64>> = (0..self.vcov.nrows())
            .map(|r| self.vcov.row(r).iter().copied().collect())
            .collect();
        st.serialize_field("vcov", &rows)?;
        st.serialize_field("treatment_se", &self.treatment_se)?;
        st.serialize_field("degenerate_clusters", &self.degenerate_clusters)?;
        st.end()
    }
}

/// Scalar correction applied on top of the unadjusted sandwich.
pub(crate) fn correction_factor(
    estimator: Estimator,
    n_clusters: usize,
    n_obs: usize,
    n_params: usize,
) -> Result<f64> {
    let (i, n, p) = (n_clusters as f64, n_obs as f64, n_params as f64);
    match estimator {
        Estimator::Cr0 | Estimator::Cr2 | Estimator::Cr3 => Ok(1.0),
        Estimator::Cr1 => Ok(i / (i - 1.0)),
        Estimator::Cr1p => {
            if n_clusters <= n_params {
                Err(Error::UndefinedCorrection { n_clusters, n_params })
            } else {
                Ok(i / (i - p))
            }
        }
        Estimator::Cr1s => Ok(i * (n - 1.0) / ((i - 1.0) * (n - p))),
    }
}

/// Apply `f` to the eigenvalues of a symmetric matrix.
fn sym_apply(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let lam = eig.eigenvalues.map(f);
    &eig.eigenvectors * DMatrix::from_diagonal(&lam) * eig.eigenvectors.transpose()
}

/// Per-sequence period-space adjustment matrices `a_s` for CR2/CR3
/// (`None` = identity, used by the CR0/CR1 family). Also returns the
/// clusters flagged by the CR2 eigenvalue floor. Exposed so the
/// estimators' defining identities can be checked from the outside.
pub fn adjustment_matrices(
    fit: &FitResult,
    estimator: Estimator,
) -> Result<(Vec<Option<DMatrix<f64>>>, Vec<usize>)> {
    let c = &fit.cache;
    let n_seq = c.b.len();
    let mut seq_used = vec![false; n_seq];
    for &s in &c.seq_of {
        seq_used[s] = true;
    }
    match estimator {
        Estimator::Cr0 | Estimator::Cr1 | Estimator::Cr1p | Estimator::Cr1s => {
            Ok((vec![None; n_seq], Vec::new()))
        }
        Estimator::Cr2 => {
            let g = &fit.model_vcov;
            let mut adj = Vec::with_capacity(n_seq);
            let mut degenerate_seqs = Vec::new();
            for s in 0..n_seq {
                if !seq_used[s] {
                    adj.push(None);
                    continue;
                }
                let q_half = sym_apply(&c.q_mat[s], f64::sqrt);
                let q_inv_half = sym_apply(&c.q_mat[s], |v| 1.0 / v.sqrt());
                let bgb = &c.b[s] * g * c.b[s].transpose();
                let m = DMatrix::identity(bgb.nrows(), bgb.nrows())
                    - &q_inv_half * bgb * &q_inv_half * c.k;
                let eig = SymmetricEigen::new(m);
                let mut flagged = false;
                let lam = eig.eigenvalues.map(|v| {
                    if v < CR2_EIGENVALUE_FLOOR {
                        flagged = true;
                        0.0
                    } else {
                        1.0 / v.sqrt()
                    }
                });
                let m_inv_half =
                    &eig.eigenvectors * DMatrix::from_diagonal(&lam) * eig.eigenvectors.transpose();
                if flagged {
                    degenerate_seqs.push(s);
                }
                adj.push(Some(q_half.clone() * m_inv_half * q_inv_half));
            }
            let degenerate_clusters = c
                .seq_of
                .iter()
                .enumerate()
                .filter(|(_, s)| degenerate_seqs.contains(s))
                .map(|(i, _)| i)
                .collect();
            Ok((adj, degenerate_clusters))
        }
        Estimator::Cr3 => {
            let g = &fit.model_vcov;
            let mut adj = Vec::with_capacity(n_seq);
            for s in 0..n_seq {
                if !seq_used[s] {
                    adj.push(None);
                    continue;
                }
                let h = &c.b[s] * g * c.b[s].transpose() * &c.q_inv[s] * c.k;
                let lev = DMatrix::identity(h.nrows(), h.nrows()) - h;
                let inv = lev.try_inverse().ok_or_else(|| Error::SingularLeverage {
                    cluster: c.seq_of.iter().position(|&x| x == s).unwrap_or(0),
                })?;
                adj.push(Some(inv));
            }
            Ok((adj, Vec::new()))
        }
    }
}

/// Compute one robust covariance estimator from a converged fit.
pub fn robust_vcov(fit: &FitResult, estimator: Estimator) -> Result<RobustVcov> {
    if !fit.converged {
        return Err(Error::NotConverged);
    }
    let c = &fit.cache;
    let i_n = c.seq_of.len();
    let p = c.n_params;
    let factor = correction_factor(estimator, i_n, c.n_obs, p)?;
    let (adj, degenerate_clusters) = adjustment_matrices(fit, estimator)?;

    let mut meat = DMatrix::zeros(p, p);
    for (i, &s) in c.seq_of.iter().enumerate() {
        let adjusted = match &adj[s] {
            Some(a) => a * &c.rbar[i],
            None => c.rbar[i].clone(),
        };
        let score = c.b[s].transpose() * &c.q_inv[s] * adjusted * c.k;
        meat += &score * score.transpose();
    }
    let g = &fit.model_vcov;
    let raw = g * meat * g * factor;
    let vcov = (&raw + raw.transpose()) * 0.5;
    let t = c.treat_col;
    let treatment_se = vcov[(t, t)].max(0.0).sqrt();
    Ok(RobustVcov {
        estimator,
        vcov,
        treatment_se,
        degenerate_clusters,
    })
}
