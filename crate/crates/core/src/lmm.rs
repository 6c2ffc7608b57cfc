//! Profiled-REML fitting of the linear mixed model.
//!
//! The marginal model per cluster is `Y_i ~ N(X_i β, V_i)` with
//! `V_i = Z_i R Z_i' + σ_ε² I`. Writing `V_i = σ² W_i`,
//! `W_i = I + Z_i D Z_i'`, `D = R/σ²`, the restricted likelihood depends
//! on the variance ratios only, and `σ²` has the closed form
//! `σ̂² = Σ r_i'W_i⁻¹r_i / (N − P)`. The profiled objective minimized here
//! is
//!
//! ```text
//! −2ℓ_R(φ) = (N−P)·(ln σ̂² + 1 + ln 2π) + Σ ln|W_i| + ln|X'W⁻¹X|
//! ```
//!
//! over `φ` = log variance ratios (and a logit decay rate for the AR(1)
//! structure), searched by the bounded derivative-free trust region in
//! [`crate::optim`] with method-of-moments starts and deterministic
//! jittered restarts.
//!
//! Everything is computed through per-cluster sufficient statistics.
//! Because fixed- and random-effects covariates are constant within a
//! cluster-period, collapsing observations to period sums is exact:
//! with `B_i` (`J × P`) and `ζ_i` (`J × q`) the per-period design blocks,
//! `X_i'X_i = K·B_i'B_i`, `Z_i'X_i = K·ζ_i'B_i`, `X_i'Y_i = B_i's_i`
//! (`s_i` the period sums), and the Woodbury identity reduces every
//! `W_i⁻¹` product to a `q × q` solve — no `n_i × n_i` matrix is ever
//! formed, and cost is independent of `K`.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::ser::{Serialize, SerializeStruct, Serializer};

use crate::covariance::{self, Structure, VarianceComponents};
use crate::datagen::Dataset;
use crate::design::TrialDesign;
use crate::error::{Error, Result};
use crate::optim::{self, Bounds, Options as OptimOptions};

/// Sufficient statistics of one cluster: its sequence, per-period outcome
/// sums, and the outcome sum of squares.
#[derive(Debug, Clone)]
pub struct ClusterStats {
    pub seq: usize,
    pub period_sums: DVector<f64>,
    pub sum_sq: f64,
}

/// A dataset collapsed to per-cluster sufficient statistics; fitting
/// never needs more.
#[derive(Debug, Clone)]
pub struct CollapsedData {
    pub design: TrialDesign,
    pub clusters: Vec<ClusterStats>,
}

impl CollapsedData {
    /// Exact collapse of a dataset (row order within clusters is
    /// irrelevant by construction).
    #[must_use]
    pub fn from_dataset(data: &Dataset) -> Self {
        let d = *data.design();
        let j_len = d.n_periods();
        let k = d.per_cell();
        let clusters = (0..d.n_clusters())
            .map(|i| {
                let mut sums = DVector::zeros(j_len);
                let mut ssq = 0.0;
                for j in 0..j_len {
                    for kk in 0..k {
                        let y = data.y(i, j, kk);
                        sums[j] += y;
                        ssq += y * y;
                    }
                }
                ClusterStats {
                    seq: data.seq_of()[i],
                    period_sums: sums,
                    sum_sq: ssq,
                }
            })
            .collect();
        Self { design: d, clusters }
    }

    /// The same statistics under a different cluster → sequence
    /// assignment (permutation refits reuse all sums unchanged).
    pub fn reassigned(&self, seq_of: &[usize]) -> Result<Self> {
        if seq_of.len() != self.clusters.len() {
            return Err(Error::MalformedDataset(format!(
                "assignment covers {} clusters, data has {}",
                seq_of.len(),
                self.clusters.len()
            )));
        }
        let mut out = self.clone();
        for (c, &s) in out.clusters.iter_mut().zip(seq_of) {
            if s >= self.design.n_sequences() {
                return Err(Error::MalformedDataset(format!(
                    "sequence index {s} out of range"
                )));
            }
            c.seq = s;
        }
        Ok(out)
    }
}

/// Fit options: optimizer settings plus the number of jittered recovery
/// starts tried before declaring non-convergence.
#[derive(Debug, Clone)]
pub struct FitOptions {
    pub optim: OptimOptions,
    pub max_restarts: usize,
    /// Optional warm start in the transformed parameter space (used by
    /// permutation refits); tried before the method-of-moments start.
    pub warm_start: Option<Vec<f64>>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            optim: OptimOptions::default(),
            max_restarts: 3,
            warm_start: None,
        }
    }
}

/// Everything downstream variance estimators need, collapsed to period
/// space: per-sequence design blocks and period-level covariance
/// `Q_s = σ²I + K·ζRζ'`, per-cluster period-mean residuals, and the
/// bread `G = (X'V⁻¹X)⁻¹`.
#[derive(Debug, Clone)]
pub(crate) struct FitCache {
    pub k: f64,
    pub n_obs: usize,
    pub n_params: usize,
    pub treat_col: usize,
    pub seq_of: Vec<usize>,
    /// Per-sequence `J × P` fixed-effects block.
    pub b: Vec<DMatrix<f64>>,
    /// Per-sequence period-level covariance `Q` and its inverse.
    pub q_mat: Vec<DMatrix<f64>>,
    pub q_inv: Vec<DMatrix<f64>>,
    /// Per-cluster period-mean residuals `s_i/K − B β̂`.
    pub rbar: Vec<DVector<f64>>,
}

/// Result of a mixed-model fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub structure: Structure,
    /// GLS fixed effects at the REML optimum.
    pub beta_hat: DVector<f64>,
    /// Estimated variance components.
    pub vc_hat: VarianceComponents,
    /// Model-based covariance `(X'V̂⁻¹X)⁻¹`.
    pub model_vcov: DMatrix<f64>,
    /// Restricted log-likelihood at the optimum.
    pub loglik: f64,
    pub converged: bool,
    /// A variance ratio (or the decay rate) sits on its box bound;
    /// reported as converged-with-flag, not failure.
    pub boundary: bool,
    pub n_iterations: usize,
    pub n_evals: usize,
    /// Extra starts consumed beyond the first.
    pub n_restarts: usize,
    pub(crate) cache: FitCache,
}

impl FitResult {
    /// Number of clusters behind the fit.
    #[must_use]
    pub fn n_clusters(&self) -> usize {
        self.cache.seq_of.len()
    }

    /// Number of fixed-effect parameters `P`.
    #[must_use]
    pub fn n_params(&self) -> usize {
        self.cache.n_params
    }

    /// Total observations `N`.
    #[must_use]
    pub fn n_obs(&self) -> usize {
        self.cache.n_obs
    }

    /// Treatment-effect estimate (last fixed-effect coordinate).
    #[must_use]
    pub fn theta_hat(&self) -> f64 {
        self.beta_hat[self.cache.treat_col]
    }

    /// Model-based SE of the treatment effect.
    #[must_use]
    pub fn theta_model_se(&self) -> f64 {
        self.model_vcov[(self.cache.treat_col, self.cache.treat_col)].sqrt()
    }
}

impl Serialize for FitResult {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = serializer.serialize_struct("FitResult", 8)?;
        st.serialize_field("structure", self.structure.token())?;
        st.serialize_field("beta_hat", &self.beta_hat.as_slice())?;
        st.serialize_field("vc_hat", &self.vc_hat)?;
        let vcov: Vec<Vec<f64>> = (0..self.model_vcov.nrows())
            .map(|r| self.model_vcov.row(r).iter().copied().collect())
            .collect();
        st.serialize_field("model_vcov", &vcov)?;
        st.serialize_field("loglik", &self.loglik)?;
        st.serialize_field("converged", &self.converged)?;
        st.serialize_field("boundary", &self.boundary)?;
        st.serialize_field("n_iterations", &self.n_iterations)?;
        st.end()
    }
}

// ---------------------------------------------------------------------
// Parameter transforms
// ---------------------------------------------------------------------

const LOG_RATIO_LO: f64 = -20.0;
const LOG_RATIO_HI: f64 = 12.0;
const LOGIT_R_LO: f64 = -12.0;
const LOGIT_R_HI: f64 = 7.0;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn param_bounds(structure: Structure) -> Bounds {
    let n = structure.n_free_ratios();
    let mut lo = vec![LOG_RATIO_LO; n];
    let mut hi = vec![LOG_RATIO_HI; n];
    if structure.has_decay() {
        // Layout for the decay structure: [ln γ-ratio, logit r, ln v-ratio].
        lo[1] = LOGIT_R_LO;
        hi[1] = LOGIT_R_HI;
    }
    Bounds { lo, hi }
}

/// Variance ratios (components over `σ²`) and decay implied by `φ`.
#[derive(Debug, Clone, Copy)]
struct Ratios {
    alpha: f64,
    gamma: f64,
    v: f64,
    decay: f64,
}

fn phi_to_ratios(structure: Structure, phi: &[f64]) -> Ratios {
    match structure {
        Structure::Exchangeable => Ratios {
            alpha: phi[0].exp(),
            gamma: 0.0,
            v: 0.0,
            decay: 0.0,
        },
        Structure::NestedExchangeable => Ratios {
            alpha: phi[0].exp(),
            gamma: phi[1].exp(),
            v: 0.0,
            decay: 0.0,
        },
        Structure::NestedExchangeableRi => Ratios {
            alpha: phi[0].exp(),
            gamma: phi[1].exp(),
            v: phi[2].exp(),
            decay: 0.0,
        },
        Structure::DiscreteTimeDecayRi => Ratios {
            alpha: 0.0,
            gamma: phi[0].exp(),
            v: phi[2].exp(),
            decay: sigmoid(phi[1]),
        },
    }
}

fn components_to_phi(structure: Structure, vc: &VarianceComponents) -> Vec<f64> {
    let s2 = vc.sigma_eps_sq;
    let clamp = |v: f64| (v / s2).max(1e-12).ln().clamp(LOG_RATIO_LO, LOG_RATIO_HI);
    match structure {
        Structure::Exchangeable => vec![clamp(vc.tau_alpha_sq)],
        Structure::NestedExchangeable => vec![clamp(vc.tau_alpha_sq), clamp(vc.tau_gamma_sq)],
        Structure::NestedExchangeableRi => vec![
            clamp(vc.tau_alpha_sq),
            clamp(vc.tau_gamma_sq),
            clamp(vc.tau_v_sq),
        ],
        Structure::DiscreteTimeDecayRi => vec![
            clamp(vc.tau_gamma_sq),
            logit(vc.decay.clamp(1e-5, 1.0 - 1e-3)).clamp(LOGIT_R_LO, LOGIT_R_HI),
            clamp(vc.tau_v_sq),
        ],
    }
}

fn ratios_to_components(structure: Structure, r: &Ratios, sigma2: f64) -> VarianceComponents {
    VarianceComponents {
        tau_alpha_sq: r.alpha * sigma2,
        tau_gamma_sq: r.gamma * sigma2,
        tau_v_sq: r.v * sigma2,
        decay: if structure.has_decay() { r.decay } else { 0.0 },
        sigma_eps_sq: sigma2,
    }
}

// ---------------------------------------------------------------------
// Workspace: design blocks and sufficient statistics, fixed per fit
// ---------------------------------------------------------------------

/// Collapsed fitting problem: per-group design blocks plus per-cluster
/// statistics. Built from [`CollapsedData`] for trial fits, or from raw
/// blocks for generic layouts (the one-way closed-form cross-check).
struct Workspace {
    structure: Structure,
    /// Rows per block (the number of periods for trial fits).
    rows: usize,
    q: usize,
    p: usize,
    k: f64,
    n: usize,
    treat_col: usize,
    /// Per-group blocks.
    b: Vec<DMatrix<f64>>,
    zeta: Vec<DMatrix<f64>>,
    ztz: Vec<DMatrix<f64>>,
    ztb: Vec<DMatrix<f64>>,
    btb: Vec<DMatrix<f64>>,
    seq_count: Vec<usize>,
    /// Per-cluster group index, raw period sums, and projected sums.
    cluster_seq: Vec<usize>,
    psums: Vec<DVector<f64>>,
    bts: Vec<DVector<f64>>,
    zts: Vec<DVector<f64>>,
    ssq_total: f64,
}

impl Workspace {
    fn from_trial(data: &CollapsedData, structure: Structure) -> Result<Self> {
        let d = &data.design;
        let s_count = d.n_sequences();
        let mut b = Vec::with_capacity(s_count);
        let mut zeta = Vec::with_capacity(s_count);
        for s in 0..s_count {
            b.push(d.period_design(s)?);
            zeta.push(covariance::period_re_design(d, s, structure)?);
        }
        Self::from_blocks(
            structure,
            d.per_cell(),
            b,
            zeta,
            &data.clusters,
            d.treatment_col(),
        )
    }

    /// Generic constructor from explicit blocks. `b[g]`/`zeta[g]` give the
    /// per-row fixed/random design of group `g`; each cluster carries sums
    /// over `k` replicates of those rows.
    fn from_blocks(
        structure: Structure,
        k: usize,
        b: Vec<DMatrix<f64>>,
        zeta: Vec<DMatrix<f64>>,
        clusters: &[ClusterStats],
        treat_col: usize,
    ) -> Result<Self> {
        let rows = b.first().map_or(0, DMatrix::nrows);
        let p = b.first().map_or(0, DMatrix::ncols);
        let q = zeta.first().map_or(0, DMatrix::ncols);
        if rows == 0 || p == 0 || q == 0 || b.len() != zeta.len() {
            return Err(Error::InvalidSpec("empty design blocks".into()));
        }
        let mut ztz = Vec::with_capacity(b.len());
        let mut ztb = Vec::with_capacity(b.len());
        let mut btb = Vec::with_capacity(b.len());
        for (bs, zs) in b.iter().zip(&zeta) {
            if bs.nrows() != rows || zs.nrows() != rows || bs.ncols() != p || zs.ncols() != q {
                return Err(Error::InvalidSpec("ragged design blocks".into()));
            }
            ztz.push(zs.transpose() * zs);
            ztb.push(zs.transpose() * bs);
            btb.push(bs.transpose() * bs);
        }
        let mut seq_count = vec![0usize; b.len()];
        let mut cluster_seq = Vec::with_capacity(clusters.len());
        let mut psums = Vec::with_capacity(clusters.len());
        let mut bts = Vec::with_capacity(clusters.len());
        let mut zts = Vec::with_capacity(clusters.len());
        let mut ssq_total = 0.0;
        for c in clusters {
            if c.seq >= b.len() || c.period_sums.len() != rows {
                return Err(Error::InvalidSpec("cluster inconsistent with blocks".into()));
            }
            seq_count[c.seq] += 1;
            cluster_seq.push(c.seq);
            bts.push(b[c.seq].transpose() * &c.period_sums);
            zts.push(zeta[c.seq].transpose() * &c.period_sums);
            psums.push(c.period_sums.clone());
            ssq_total += c.sum_sq;
        }
        let n = clusters.len() * rows * k;
        if n <= p {
            return Err(Error::InvalidDimension {
                what: "observations",
                value: n,
                min: p + 1,
            });
        }
        Ok(Self {
            structure,
            rows,
            q,
            p,
            k: k as f64,
            n,
            treat_col,
            b,
            zeta,
            ztz,
            ztb,
            btb,
            seq_count,
            cluster_seq,
            psums,
            bts,
            zts,
            ssq_total,
        })
    }

    fn period_means(&self, cluster: usize) -> DVector<f64> {
        self.psums[cluster].map(|s| s / self.k)
    }

    /// Scaled random-effects Cholesky `L` with `L L' = R/σ²`. The column
    /// layout matches [`covariance::period_re_design`]: cluster intercept,
    /// then per-period effects, then the intervention slope.
    fn scaled_chol(&self, r: &Ratios) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.q, self.q);
        let mut col = 0;
        if self.structure.has_cluster_intercept() {
            l[(col, col)] = r.alpha.sqrt();
            col += 1;
        }
        if self.structure.has_cluster_period() {
            let g = r.gamma.sqrt();
            if self.structure.has_decay() {
                let a = covariance::ar1_cholesky(self.rows, r.decay);
                for j in 0..self.rows {
                    for m in 0..=j {
                        l[(col + j, col + m)] = g * a[(j, m)];
                    }
                }
            } else {
                for j in 0..self.rows {
                    l[(col + j, col + j)] = g;
                }
            }
            col += self.rows;
        }
        if self.structure.has_random_intervention() {
            l[(col, col)] = r.v.sqrt();
        }
        l
    }

    /// Accumulate the Woodbury-collapsed GLS system at variance ratios
    /// `r`: returns `(X'W⁻¹X, X'W⁻¹Y, Y'W⁻¹Y, Σ ln|W_i|)`.
    fn gls_system(&self, r: &Ratios) -> Option<(DMatrix<f64>, DVector<f64>, f64, f64)> {
        struct SeqFactor {
            chol: Cholesky<f64, nalgebra::Dyn>,
            u: DMatrix<f64>,
            logdet: f64,
            xtwx: DMatrix<f64>,
        }
        let l = self.scaled_chol(r);
        let k = self.k;
        let mut factors = Vec::with_capacity(self.b.len());
        for s in 0..self.b.len() {
            let mut c = l.transpose() * &self.ztz[s] * &l * k;
            for d in 0..self.q {
                c[(d, d)] += 1.0;
            }
            let chol = Cholesky::new(c)?;
            let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let u = l.transpose() * &self.ztb[s];
            let f = chol.solve(&u);
            let xtwx = (&self.btb[s] - (u.transpose() * &f) * k) * k;
            factors.push(SeqFactor { chol, u, logdet, xtwx });
        }
        let mut xtwx = DMatrix::zeros(self.p, self.p);
        let mut sum_logdet = 0.0;
        for (s, f) in factors.iter().enumerate() {
            let cnt = self.seq_count[s] as f64;
            if cnt > 0.0 {
                xtwx += &f.xtwx * cnt;
                sum_logdet += f.logdet * cnt;
            }
        }
        let mut xtwy = DVector::zeros(self.p);
        let mut ytwy = self.ssq_total;
        for (i, &s) in self.cluster_seq.iter().enumerate() {
            let fac = &factors[s];
            let w = l.transpose() * &self.zts[i];
            let fi = fac.chol.solve(&w);
            xtwy += &self.bts[i] - fac.u.transpose() * &fi * k;
            ytwy -= w.dot(&fi);
        }
        Some((xtwx, xtwy, ytwy, sum_logdet))
    }

    /// Profiled `−2ℓ_R` at transformed parameters `φ` (+∞ on numerical
    /// failure, so the optimizer simply avoids the region).
    fn neg2_reml(&self, phi: &[f64]) -> f64 {
        let r = phi_to_ratios(self.structure, phi);
        let Some((xtwx, xtwy, ytwy, sum_logdet)) = self.gls_system(&r) else {
            return f64::INFINITY;
        };
        let Some(chol) = Cholesky::new(xtwx) else {
            return f64::INFINITY;
        };
        let logdet_x = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let beta = chol.solve(&xtwy);
        let rwr = (ytwy - beta.dot(&xtwy)).max(1e-300);
        let df = (self.n - self.p) as f64;
        let sigma2 = rwr / df;
        df * (sigma2.ln() + 1.0 + (2.0 * std::f64::consts::PI).ln()) + sum_logdet + logdet_x
    }

    fn profile_sigma(&self, r: &Ratios) -> Result<f64> {
        let (xtwx, xtwy, ytwy, _) = self.gls_system(r).ok_or_else(|| {
            Error::InvalidSpec("random-effects system not positive definite".into())
        })?;
        let chol = Cholesky::new(xtwx).ok_or(Error::SingularDesign)?;
        let beta = chol.solve(&xtwy);
        Ok((ytwy - beta.dot(&xtwy)).max(1e-300) / (self.n - self.p) as f64)
    }
}

// ---------------------------------------------------------------------
// Fitting
// ---------------------------------------------------------------------

/// Evaluate the profiled `−2` restricted log-likelihood at transformed
/// parameters (exposed for grid-search comparisons in tests).
pub fn profiled_neg2_reml(
    data: &CollapsedData,
    structure: Structure,
    phi: &[f64],
) -> Result<f64> {
    let ws = Workspace::from_trial(data, structure)?;
    Ok(ws.neg2_reml(phi))
}

/// Closed-form profiled `σ̂²(φ)` (exposed for self-consistency tests).
pub fn profile_sigma(data: &CollapsedData, structure: Structure, phi: &[f64]) -> Result<f64> {
    let ws = Workspace::from_trial(data, structure)?;
    ws.profile_sigma(&phi_to_ratios(structure, phi))
}

/// GLS and bookkeeping at fixed variance components (no optimization).
/// The log-likelihood is the unprofiled restricted value at the given
/// components.
pub fn fit_at_components(
    data: &CollapsedData,
    structure: Structure,
    vc: &VarianceComponents,
) -> Result<FitResult> {
    vc.validate_for(structure)?;
    let ws = Workspace::from_trial(data, structure)?;
    finalize(&ws, vc, true, false, 0, 0, 0)
}

/// Fit by profiled REML with default options.
pub fn reml_fit(data: &Dataset, structure: Structure) -> Result<FitResult> {
    reml_fit_collapsed(&CollapsedData::from_dataset(data), structure, &FitOptions::default())
}

/// Fit from pre-collapsed statistics with explicit options.
pub fn reml_fit_collapsed(
    data: &CollapsedData,
    structure: Structure,
    options: &FitOptions,
) -> Result<FitResult> {
    let ws = Workspace::from_trial(data, structure)?;
    fit_workspace(&ws, options)
}

fn fit_workspace(ws: &Workspace, options: &FitOptions) -> Result<FitResult> {
    let structure = ws.structure;
    let bounds = param_bounds(structure);

    let mut starts: Vec<Vec<f64>> = Vec::new();
    if let Some(warm) = &options.warm_start {
        if warm.len() == structure.n_free_ratios() {
            starts.push(warm.clone());
        }
    }
    let mom = mom_start(ws)?;
    starts.push(mom.clone());
    for delta in [1.5, -1.5] {
        let mut s = mom.clone();
        for (i, v) in s.iter_mut().enumerate() {
            // Leave the logit-decay coordinate centered; shift ratios.
            if !(structure.has_decay() && i == 1) {
                *v = (*v + delta).clamp(LOG_RATIO_LO, LOG_RATIO_HI);
            }
        }
        starts.push(s);
    }
    // Generic mild-correlation start as the last resort.
    let mut generic = vec![(0.02f64).ln(); structure.n_free_ratios()];
    if structure.has_decay() {
        generic[1] = 0.0;
    }
    starts.push(generic);
    let cap = options.max_restarts + 1 + usize::from(options.warm_start.is_some());
    starts.truncate(cap.max(1));

    let mut total_iter = 0;
    let mut total_evals = 0;
    let mut last_detail = String::new();
    for (attempt, start) in starts.iter().enumerate() {
        let out = optim::minimize(|phi| ws.neg2_reml(phi), start, &bounds, &options.optim);
        total_iter += out.n_iter;
        total_evals += out.n_evals;
        if out.converged && out.value.is_finite() {
            let r = phi_to_ratios(structure, &out.x);
            let sigma2 = ws.profile_sigma(&r)?;
            let vc = ratios_to_components(structure, &r, sigma2);
            return finalize(
                ws,
                &vc,
                true,
                out.at_bound,
                total_iter,
                total_evals,
                attempt,
            );
        }
        last_detail = format!(
            "start {attempt}: value {:.6e} after {} iterations",
            out.value, out.n_iter
        );
    }
    Err(Error::NonConvergence {
        restarts: starts.len(),
        detail: last_detail,
    })
}

/// GLS at fixed components on explicit design blocks (no trial geometry);
/// lets downstream estimators be exercised on textbook layouts such as
/// size-one clusters or mean-only models, where their behavior has
/// closed forms.
pub fn fit_blocks_at_components(
    structure: Structure,
    k: usize,
    b: Vec<DMatrix<f64>>,
    zeta: Vec<DMatrix<f64>>,
    clusters: &[ClusterStats],
    treat_col: usize,
    vc: &VarianceComponents,
) -> Result<FitResult> {
    let ws = Workspace::from_blocks(structure, k, b, zeta, clusters, treat_col)?;
    finalize(&ws, vc, true, false, 0, 0, 0)
}

/// Balanced one-way random-intercept model `y_ic = μ + a_i + e_ic` fitted
/// through the same profiled-REML machinery; returns `(τ̂_α², σ̂²)`.
/// Exists so the fitter can be checked against the classical closed-form
/// ANOVA estimator on layouts where that form is exact.
pub fn one_way_reml(groups: &[Vec<f64>]) -> Result<(f64, f64)> {
    let i_n = groups.len();
    if i_n < 2 {
        return Err(Error::InvalidDimension { what: "groups", value: i_n, min: 2 });
    }
    let n = groups[0].len();
    if n < 2 || groups.iter().any(|g| g.len() != n) {
        return Err(Error::InvalidSpec("groups must share a common size of 2 or more".into()));
    }
    let b = vec![DMatrix::from_element(n, 1, 1.0)];
    let zeta = vec![DMatrix::from_element(n, 1, 1.0)];
    let clusters: Vec<ClusterStats> = groups
        .iter()
        .map(|g| ClusterStats {
            seq: 0,
            period_sums: DVector::from_column_slice(g),
            sum_sq: g.iter().map(|y| y * y).sum(),
        })
        .collect();
    let ws = Workspace::from_blocks(Structure::Exchangeable, 1, b, zeta, &clusters, 0)?;
    // The closed-form comparison for this model is part of the contract,
    // so drive the optimizer well past the default tolerances.
    let options = FitOptions {
        optim: OptimOptions {
            max_iter: 2000,
            f_tol: 1e-14,
            x_tol: 1e-10,
            ..OptimOptions::default()
        },
        ..FitOptions::default()
    };
    let fit = fit_workspace(&ws, &options)?;
    let (tau2, sigma2) = (fit.vc_hat.tau_alpha_sq, fit.vc_hat.sigma_eps_sq);
    if fit.boundary || tau2 <= 0.0 {
        return Ok((tau2, sigma2));
    }
    // Comparison searches can only localize the interior minimizer to
    // the quadratic flatness floor ~sqrt(eps·|f|/f''); sharpen past it
    // with damped Newton on the same one-dimensional profiled objective,
    // using central differences wide enough to keep rounding out of the
    // curvature estimate.
    let mut phi = (tau2 / sigma2).ln();
    let h = 3e-5;
    for _ in 0..8 {
        let (fm, f0, fp) = (
            ws.neg2_reml(&[phi - h]),
            ws.neg2_reml(&[phi]),
            ws.neg2_reml(&[phi + h]),
        );
        let grad = (fp - fm) / (2.0 * h);
        let curv = (fp - 2.0 * f0 + fm) / (h * h);
        if !(curv.is_finite() && curv > 0.0) {
            break;
        }
        let step = (grad / curv).clamp(-0.5, 0.5);
        phi -= step;
        if step.abs() < 1e-12 {
            break;
        }
    }
    let r = phi_to_ratios(Structure::Exchangeable, &[phi]);
    let s2 = ws.profile_sigma(&r)?;
    Ok((r.alpha * s2, s2))
}

/// Method-of-moments starting values from OLS residual dispersion.
fn mom_start(ws: &Workspace) -> Result<Vec<f64>> {
    let (i_n, rows, k) = (ws.cluster_seq.len() as f64, ws.rows, ws.k);
    // OLS fit (identity weights): the GLS system at all-zero ratios.
    let identity = Ratios { alpha: 0.0, gamma: 0.0, v: 0.0, decay: 0.0 };
    let (xtx, xty, yty, _) = ws
        .gls_system(&identity)
        .ok_or_else(|| Error::InvalidSpec("degenerate design".into()))?;
    let chol = Cholesky::new(xtx).ok_or(Error::SingularDesign)?;
    let beta = chol.solve(&xty);
    let rss = (yty - beta.dot(&xty)).max(1e-12);

    // Within-cell mean square isolates σ² when K > 1.
    let sum_cell_sq_over_k: f64 = ws
        .psums
        .iter()
        .map(|s| s.iter().map(|v| v * v / k).sum::<f64>())
        .sum();
    let n_cells = i_n * rows as f64;
    let sigma2_0 = if ws.n as f64 > n_cells {
        ((ws.ssq_total - sum_cell_sq_over_k) / (ws.n as f64 - n_cells)).max(1e-8)
    } else {
        (rss / (ws.n - ws.p) as f64).max(1e-8)
    };

    // Period-mean residual dispersion within and between clusters.
    let mut cluster_means = Vec::with_capacity(ws.cluster_seq.len());
    let mut within = 0.0;
    for (i, &s) in ws.cluster_seq.iter().enumerate() {
        let fitted = &ws.b[s] * &beta;
        let rbar = ws.period_means(i) - fitted;
        let m = rbar.sum() / rows as f64;
        within += rbar.iter().map(|r| (r - m) * (r - m)).sum::<f64>() / rows as f64;
        cluster_means.push(m);
    }
    let within = within / i_n;
    let grand = cluster_means.iter().sum::<f64>() / i_n;
    let between = cluster_means
        .iter()
        .map(|m| (m - grand) * (m - grand))
        .sum::<f64>()
        / (i_n - 1.0).max(1.0);

    let floor = 0.02 * sigma2_0;
    let tau_gamma_0 = (within - sigma2_0 / k).max(floor);
    let tau_alpha_0 =
        (between - tau_gamma_0 / rows as f64 - sigma2_0 / (rows as f64 * k)).max(floor);
    let tau_v_0 = (0.5 * tau_alpha_0).max(floor);

    let vc = match ws.structure {
        Structure::Exchangeable => VarianceComponents {
            tau_alpha_sq: tau_alpha_0,
            tau_gamma_sq: 0.0,
            tau_v_sq: 0.0,
            decay: 0.0,
            sigma_eps_sq: sigma2_0,
        },
        Structure::NestedExchangeable => VarianceComponents {
            tau_alpha_sq: tau_alpha_0,
            tau_gamma_sq: tau_gamma_0,
            tau_v_sq: 0.0,
            decay: 0.0,
            sigma_eps_sq: sigma2_0,
        },
        Structure::NestedExchangeableRi => VarianceComponents {
            tau_alpha_sq: tau_alpha_0,
            tau_gamma_sq: tau_gamma_0,
            tau_v_sq: tau_v_0,
            decay: 0.0,
            sigma_eps_sq: sigma2_0,
        },
        Structure::DiscreteTimeDecayRi => VarianceComponents {
            tau_alpha_sq: 0.0,
            tau_gamma_sq: tau_alpha_0 + tau_gamma_0,
            tau_v_sq: tau_v_0,
            decay: 0.5,
            sigma_eps_sq: sigma2_0,
        },
    };
    Ok(components_to_phi(ws.structure, &vc))
}

/// Assemble the full fit at given components: GLS solution, model
/// covariance, restricted log-likelihood, and the period-space cache.
fn finalize(
    ws: &Workspace,
    vc: &VarianceComponents,
    converged: bool,
    boundary: bool,
    n_iterations: usize,
    n_evals: usize,
    n_restarts: usize,
) -> Result<FitResult> {
    let sigma2 = vc.sigma_eps_sq;
    let r = Ratios {
        alpha: vc.tau_alpha_sq / sigma2,
        gamma: vc.tau_gamma_sq / sigma2,
        v: vc.tau_v_sq / sigma2,
        decay: vc.decay,
    };
    let (xtwx, xtwy, ytwy, sum_logdet) = ws
        .gls_system(&r)
        .ok_or_else(|| Error::InvalidSpec("random-effects system not positive definite".into()))?;
    let chol = Cholesky::new(xtwx.clone()).ok_or(Error::SingularDesign)?;
    let beta = chol.solve(&xtwy);
    let rwr = (ytwy - beta.dot(&xtwy)).max(0.0);
    let logdet_x = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let df = (ws.n - ws.p) as f64;
    let neg2 = df * sigma2.ln()
        + sum_logdet
        + logdet_x
        + rwr / sigma2
        + df * (2.0 * std::f64::consts::PI).ln();
    let model_vcov = chol.inverse() * sigma2;

    // Period-space covariance per group: Q = σ²(I + K·ζLL'ζ') with L the
    // scaled random-effects Cholesky, i.e. Q = σ²I + K·ζRζ'.
    let l = ws.scaled_chol(&r);
    let mut q_mat = Vec::with_capacity(ws.b.len());
    let mut q_inv = Vec::with_capacity(ws.b.len());
    for s in 0..ws.b.len() {
        let zl = &ws.zeta[s] * &l;
        let mut q = &zl * zl.transpose() * ws.k;
        for j in 0..ws.rows {
            q[(j, j)] += 1.0;
        }
        q *= sigma2;
        let inv = Cholesky::new(q.clone())
            .ok_or_else(|| Error::InvalidSpec("period covariance not positive definite".into()))?
            .inverse();
        q_mat.push(q);
        q_inv.push(inv);
    }
    let rbar = (0..ws.cluster_seq.len())
        .map(|i| ws.period_means(i) - &ws.b[ws.cluster_seq[i]] * &beta)
        .collect();

    Ok(FitResult {
        structure: ws.structure,
        beta_hat: beta,
        vc_hat: *vc,
        model_vcov,
        loglik: -0.5 * neg2,
        converged,
        boundary,
        n_iterations,
        n_evals,
        n_restarts,
        cache: FitCache {
            k: ws.k,
            n_obs: ws.n,
            n_params: ws.p,
            treat_col: ws.treat_col,
            seq_of: ws.cluster_seq.clone(),
            b: ws.b.clone(),
            q_mat,
            q_inv,
            rbar,
        },
    })
}

/// Transformed parameters of a fitted model (warm-start payload for
/// permutation refits).
#[must_use]
pub fn fitted_phi(fit: &FitResult) -> Vec<f64> {
    components_to_phi(fit.structure, &fit.vc_hat)
}
