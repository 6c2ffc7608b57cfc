//! Independent dense reference implementations used to cross-check the
//! library's structured estimators.
//!
//! Everything here is computed elementwise from the model definition on
//! per-cluster dense matrices: the staircase, the fixed-effects blocks,
//! the within-cluster covariance, GLS, the restricted deviance, the
//! sandwich family, and Satterthwaite degrees of freedom are all
//! re-derived from scratch. No code is shared with the library's
//! collapsed/profiled implementations beyond the nalgebra containers,
//! so agreement between the two paths is evidence, not tautology.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Trial geometry described by raw counts. Deliberately re-derives
/// periods, sizes, and the treatment staircase instead of calling the
/// library's design type.
#[derive(Debug, Clone, Copy)]
pub struct Layout {
    pub n_clusters: usize,
    pub n_sequences: usize,
    pub per_cell: usize,
}

impl Layout {
    pub fn n_periods(&self) -> usize {
        self.n_sequences + 1
    }

    /// Intercept + (J-1) period dummies + treatment.
    pub fn n_fixed(&self) -> usize {
        self.n_periods() + 1
    }

    pub fn cluster_size(&self) -> usize {
        self.n_periods() * self.per_cell
    }

    pub fn n_obs(&self) -> usize {
        self.n_clusters * self.cluster_size()
    }

    /// Staircase: sequence `s` crosses over at period `s + 1`.
    pub fn treated(&self, seq: usize, period: usize) -> f64 {
        if period >= seq + 1 {
            1.0
        } else {
            0.0
        }
    }

    /// Per-cluster fixed-effects block in observation order
    /// (period-major, individual fastest). Columns: intercept, period
    /// dummies for periods 1..J-1 (period 0 is the reference), and the
    /// treatment indicator last.
    pub fn x_block(&self, seq: usize) -> DMatrix<f64> {
        let j_len = self.n_periods();
        let k = self.per_cell;
        let p = self.n_fixed();
        let mut x = DMatrix::zeros(j_len * k, p);
        for j in 0..j_len {
            for kk in 0..k {
                let row = j * k + kk;
                x[(row, 0)] = 1.0;
                if j > 0 {
                    x[(row, j)] = 1.0;
                }
                x[(row, p - 1)] = self.treated(seq, j);
            }
        }
        x
    }
}

/// Variance components spelled out as plain numbers. The nested family
/// corresponds to `decay = 0` (the power `r^|j-l|` then reproduces the
/// shared-period indicator, since `0^0 = 1`).
#[derive(Debug, Clone, Copy)]
pub struct Components {
    pub tau_alpha_sq: f64,
    pub tau_gamma_sq: f64,
    pub tau_v_sq: f64,
    pub decay: f64,
    pub sigma_eps_sq: f64,
}

/// Dense within-cluster covariance, entry by entry from the model:
/// `sigma_eps^2·1[same obs] + tau_alpha^2 + tau_gamma^2·r^|j-l| +
/// tau_v^2·x_j·x_l`.
pub fn v_block(lay: &Layout, seq: usize, c: &Components) -> DMatrix<f64> {
    let j_len = lay.n_periods();
    let k = lay.per_cell;
    let n = j_len * k;
    let mut v = DMatrix::zeros(n, n);
    for j in 0..j_len {
        for kk in 0..k {
            for l in 0..j_len {
                for mm in 0..k {
                    let lag = j.abs_diff(l) as i32;
                    let mut e = c.tau_alpha_sq
                        + c.tau_gamma_sq * c.decay.powi(lag)
                        + c.tau_v_sq * lay.treated(seq, j) * lay.treated(seq, l);
                    if j == l && kk == mm {
                        e += c.sigma_eps_sq;
                    }
                    v[(j * k + kk, l * k + mm)] = e;
                }
            }
        }
    }
    v
}

/// GLS at fixed components, with every block handled by dense LU.
pub struct DenseFit {
    pub beta: DVector<f64>,
    /// `(X' V^{-1} X)^{-1}`.
    pub vcov: DMatrix<f64>,
    /// Unprofiled restricted deviance
    /// `ln|V| + ln|X'V^{-1}X| + r'V^{-1}r + (N-P)·ln 2π`.
    pub neg2_reml: f64,
    /// Per-cluster residual vectors.
    pub resid: Vec<DVector<f64>>,
}

fn cluster_y(lay: &Layout, y: &[f64], cluster: usize) -> DVector<f64> {
    let n = lay.cluster_size();
    DVector::from_column_slice(&y[cluster * n..(cluster + 1) * n])
}

fn dense_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone()
        .full_piv_lu()
        .try_inverse()
        .expect("reference matrix is singular")
}

pub fn dense_gls(lay: &Layout, seq_of: &[usize], y: &[f64], c: &Components) -> DenseFit {
    let p = lay.n_fixed();
    let mut xtvx = DMatrix::zeros(p, p);
    let mut xtvy = DVector::zeros(p);
    let mut logdet_v = 0.0;
    let mut v_invs = Vec::with_capacity(lay.n_clusters);
    for (i, &seq) in seq_of.iter().enumerate() {
        let v = v_block(lay, seq, c);
        logdet_v += v.clone().full_piv_lu().determinant().ln();
        let v_inv = dense_inverse(&v);
        let x = lay.x_block(seq);
        let yi = cluster_y(lay, y, i);
        xtvx += x.transpose() * &v_inv * &x;
        xtvy += x.transpose() * &v_inv * yi;
        v_invs.push(v_inv);
    }
    let logdet_x = xtvx.clone().full_piv_lu().determinant().ln();
    let vcov = dense_inverse(&xtvx);
    let beta = &vcov * xtvy;
    let mut quad = 0.0;
    let mut resid = Vec::with_capacity(lay.n_clusters);
    for (i, &seq) in seq_of.iter().enumerate() {
        let r = cluster_y(lay, y, i) - lay.x_block(seq) * &beta;
        quad += (&v_invs[i] * &r).dot(&r);
        resid.push(r);
    }
    let df = (lay.n_obs() - p) as f64;
    let neg2 = logdet_v + logdet_x + quad + df * (2.0 * std::f64::consts::PI).ln();
    DenseFit { beta, vcov, neg2_reml: neg2, resid }
}

/// Symmetric (matrix) square root via eigendecomposition.
pub fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    sym_power(m, 0.5)
}

/// Symmetric inverse square root via eigendecomposition.
pub fn sym_inv_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    sym_power(m, -0.5)
}

fn sym_power(m: &DMatrix<f64>, exponent: f64) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut d = DMatrix::zeros(m.nrows(), m.nrows());
    for (i, &ev) in eig.eigenvalues.iter().enumerate() {
        assert!(
            ev > 1e-12,
            "reference matrix power needs positive eigenvalues, got {ev}"
        );
        d[(i, i)] = ev.powf(exponent);
    }
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sandwich {
    Cr0,
    Cr1,
    Cr1p,
    Cr1s,
    Cr2,
    Cr3,
}

impl Sandwich {
    pub const ALL: [Sandwich; 6] = [
        Sandwich::Cr0,
        Sandwich::Cr1,
        Sandwich::Cr1p,
        Sandwich::Cr1s,
        Sandwich::Cr2,
        Sandwich::Cr3,
    ];

    fn correction(self, lay: &Layout) -> f64 {
        let i = lay.n_clusters as f64;
        let n = lay.n_obs() as f64;
        let p = lay.n_fixed() as f64;
        match self {
            Sandwich::Cr0 | Sandwich::Cr2 | Sandwich::Cr3 => 1.0,
            Sandwich::Cr1 => i / (i - 1.0),
            Sandwich::Cr1p => {
                assert!(lay.n_clusters > lay.n_fixed(), "correction undefined");
                i / (i - p)
            }
            Sandwich::Cr1s => i * (n - 1.0) / ((i - 1.0) * (n - p)),
        }
    }
}

/// Cluster-robust sandwich computed entirely on per-observation dense
/// blocks: score `X_i' V_i^{-1} A_i r_i` with the estimator's residual
/// adjustment `A_i` applied literally (`V^{1/2} S^{-1/2} V^{-1/2}` with
/// `S = I - V^{-1/2} X G X' V^{-1/2}` for CR2, `(I - X G X' V^{-1})^{-1}`
/// for CR3), then `corr · G (Σ s_i s_i') G`.
pub fn dense_sandwich(
    lay: &Layout,
    seq_of: &[usize],
    y: &[f64],
    c: &Components,
    which: Sandwich,
) -> DMatrix<f64> {
    let fit = dense_gls(lay, seq_of, y, c);
    let p = lay.n_fixed();
    let g = &fit.vcov;
    let mut meat = DMatrix::zeros(p, p);
    for (i, &seq) in seq_of.iter().enumerate() {
        let x = lay.x_block(seq);
        let v = v_block(lay, seq, c);
        let v_inv = dense_inverse(&v);
        let hat = &x * g * x.transpose();
        let adjusted = match which {
            Sandwich::Cr0 | Sandwich::Cr1 | Sandwich::Cr1p | Sandwich::Cr1s => fit.resid[i].clone(),
            Sandwich::Cr2 => {
                let half = sym_sqrt(&v);
                let inv_half = sym_inv_sqrt(&v);
                let s = DMatrix::identity(v.nrows(), v.nrows()) - &inv_half * &hat * &inv_half;
                half * sym_inv_sqrt(&s) * inv_half * &fit.resid[i]
            }
            Sandwich::Cr3 => {
                let a = dense_inverse(
                    &(DMatrix::identity(v.nrows(), v.nrows()) - &hat * &v_inv),
                );
                a * &fit.resid[i]
            }
        };
        let score = x.transpose() * &v_inv * adjusted;
        meat += &score * score.transpose();
    }
    g * meat * g * which.correction(lay)
}

/// Satterthwaite degrees of freedom for a fixed-effects contrast under
/// an adjustment-based sandwich, from the per-observation definition:
/// with `t_i = A_i' V_i^{-1} X_i G c` and `e_i = X_i' t_i`, the
/// between-cluster covariance of the squared contributions is
/// `Ω_ii = t_i' V_i t_i - e_i' G e_i`, `Ω_ij = -e_i' G e_j`, and
/// `dof = tr(Ω)^2 / tr(Ω^2)`.
pub fn dense_satterthwaite(
    lay: &Layout,
    seq_of: &[usize],
    y: &[f64],
    c: &Components,
    which: Sandwich,
    contrast: &DVector<f64>,
) -> f64 {
    assert!(
        matches!(which, Sandwich::Cr2 | Sandwich::Cr3),
        "reference Satterthwaite is defined for the adjusted estimators"
    );
    let fit = dense_gls(lay, seq_of, y, c);
    let g = &fit.vcov;
    let gc = g * contrast;
    let i_n = lay.n_clusters;
    let mut tvt = vec![0.0; i_n];
    let mut e = Vec::with_capacity(i_n);
    for &seq in seq_of {
        let x = lay.x_block(seq);
        let v = v_block(lay, seq, c);
        let v_inv = dense_inverse(&v);
        let hat = &x * g * x.transpose();
        let a = match which {
            Sandwich::Cr2 => {
                let half = sym_sqrt(&v);
                let inv_half = sym_inv_sqrt(&v);
                let s = DMatrix::identity(v.nrows(), v.nrows()) - &inv_half * &hat * &inv_half;
                half * sym_inv_sqrt(&s) * inv_half
            }
            Sandwich::Cr3 => dense_inverse(
                &(DMatrix::identity(v.nrows(), v.nrows()) - &hat * &v_inv),
            ),
            _ => unreachable!(),
        };
        let t = a.transpose() * &v_inv * &x * &gc;
        tvt[e.len()] = (&v * &t).dot(&t);
        e.push(x.transpose() * t);
    }
    let mut omega = DMatrix::zeros(i_n, i_n);
    for i in 0..i_n {
        for j in 0..i_n {
            let mut val = -(g * &e[j]).dot(&e[i]);
            if i == j {
                val += tvt[i];
            }
            omega[(i, j)] = val;
        }
    }
    let trace = omega.trace();
    assert!(trace > 0.0, "reference Satterthwaite trace not positive");
    trace * trace / omega.iter().map(|v| v * v).sum::<f64>()
}

/// Delete-one-cluster GLS coefficients with the covariance held fixed.
pub fn dense_gls_excluding(
    lay: &Layout,
    seq_of: &[usize],
    y: &[f64],
    c: &Components,
    drop: usize,
) -> DVector<f64> {
    let p = lay.n_fixed();
    let mut xtvx = DMatrix::zeros(p, p);
    let mut xtvy = DVector::zeros(p);
    for (i, &seq) in seq_of.iter().enumerate() {
        if i == drop {
            continue;
        }
        let v_inv = dense_inverse(&v_block(lay, seq, c));
        let x = lay.x_block(seq);
        let yi = cluster_y(lay, y, i);
        xtvx += x.transpose() * &v_inv * &x;
        xtvy += x.transpose() * &v_inv * yi;
    }
    dense_inverse(&xtvx) * xtvy
}

/// Two-stage grid minimization of the dense restricted deviance over
/// (cluster variance, error variance) for the exchangeable structure.
/// Returns `(tau_alpha_sq, sigma_eps_sq, objective)` at the best grid
/// point of an `n × n` coarse pass followed by an `n × n` refinement
/// around it.
pub fn exch_reml_grid_search(
    lay: &Layout,
    seq_of: &[usize],
    y: &[f64],
    n: usize,
) -> (f64, f64, f64) {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / y.len() as f64;
    let objective = |tau: f64, sigma: f64| {
        let c = Components {
            tau_alpha_sq: tau,
            tau_gamma_sq: 0.0,
            tau_v_sq: 0.0,
            decay: 0.0,
            sigma_eps_sq: sigma,
        };
        dense_gls(lay, seq_of, y, &c).neg2_reml
    };
    let search = |t_lo: f64, t_hi: f64, s_lo: f64, s_hi: f64| {
        let mut best = (t_lo, s_lo, f64::INFINITY);
        for a in 0..n {
            let tau = t_lo + (t_hi - t_lo) * a as f64 / (n - 1) as f64;
            for b in 0..n {
                let sigma = s_lo + (s_hi - s_lo) * b as f64 / (n - 1) as f64;
                let obj = objective(tau, sigma);
                if obj < best.2 {
                    best = (tau, sigma, obj);
                }
            }
        }
        best
    };
    let coarse = search(0.0, 3.0 * var, 0.05 * var, 3.0 * var);
    let dt = 3.0 * var / (n - 1) as f64;
    let ds = 2.95 * var / (n - 1) as f64;
    search(
        (coarse.0 - 2.0 * dt).max(0.0),
        coarse.0 + 2.0 * dt,
        (coarse.1 - 2.0 * ds).max(0.01 * var),
        coarse.1 + 2.0 * ds,
    )
}

/// Every permutation of `0..n` in a deterministic order, for exhaustive
/// enumeration of balanced assignments when there is one cluster per
/// sequence. Intended for tiny `n` (the caller pays `n!`).
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current: Vec<usize> = (0..n).collect();
    fn recurse(k: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k == current.len() {
            out.push(current.clone());
            return;
        }
        for i in k..current.len() {
            current.swap(k, i);
            recurse(k + 1, current, out);
            current.swap(k, i);
        }
    }
    recurse(0, &mut current, &mut out);
    out
}

/// Quantile of the discrete uniform distribution over `values`
/// (smallest value whose cumulative probability reaches `p`) — the
/// limit of the sample percentile as the number of uniform draws grows.
pub fn discrete_quantile(values: &[f64], p: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let ix = (n * p).ceil() as usize;
    sorted[ix.saturating_sub(1).min(sorted.len() - 1)]
}
