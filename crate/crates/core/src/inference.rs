//! Wald t-inference for the treatment effect.
//!
//! A test combines a variance source (the model-based covariance or one
//! of the robust sandwiches), a degrees-of-freedom rule (the fixed `I−2`
//! convention or Satterthwaite moment matching), and the internal
//! t-distribution routines in [`crate::dist`].
//!
//! The Satterthwaite value matches the first two moments of the
//! sandwich's treatment-variance estimate under the working model: with
//! `g_i' = c'G X_i'V_i⁻¹A_i` the per-cluster score weights and
//! `Ω_ij = g_i'(δ_ij V_i − X_i G X_j')g_j` their working-model
//! covariance, `dof = (tr Ω)² / tr(Ω²)`. Everything reduces to period
//! space exactly as in [`crate::rve`]: writing `t_s = a_s'Q_s⁻¹B_s G c`,
//!
//! ```text
//! Ω_ii = K·t'Q t − K²·(B't)'G(B't),   Ω_ij = −K²·(B't_i)'G(B't_j).
//! ```

use nalgebra::DVector;
use serde::Serialize;

use crate::dist;
use crate::error::{Error, Result};
use crate::lmm::FitResult;
use crate::rve::{self, Estimator};

/// Where the standard error comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VarianceSource {
    /// Model-based `(X'V̂⁻¹X)⁻¹`.
    Model,
    /// A cluster-robust sandwich.
    Robust(Estimator),
}

impl VarianceSource {
    /// Canonical display token (`Std` for model-based, estimator token
    /// otherwise).
    #[must_use]
    pub fn token(self) -> &'static str {
        match self {
            VarianceSource::Model => "Std",
            VarianceSource::Robust(e) => e.token(),
        }
    }

    /// Parse a token (case-insensitive; `std` or an estimator name).
    pub fn parse(token: &str) -> Result<Self> {
        if token.eq_ignore_ascii_case("std") {
            Ok(VarianceSource::Model)
        } else {
            Ok(VarianceSource::Robust(Estimator::parse(token)?))
        }
    }
}

impl std::fmt::Display for VarianceSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.token())
    }
}

/// Degrees-of-freedom rule for the t reference distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DofRule {
    /// `I − 2`: clusters minus two.
    FixedIMinus2,
    /// Satterthwaite moment matching (adjustment-based estimators only).
    Satterthwaite,
}

impl DofRule {
    #[must_use]
    pub fn token(self) -> &'static str {
        match self {
            DofRule::FixedIMinus2 => "i_minus_2",
            DofRule::Satterthwaite => "satterthwaite",
        }
    }

    pub fn parse(token: &str) -> Result<Self> {
        match token.to_ascii_lowercase().as_str() {
            "i_minus_2" => Ok(DofRule::FixedIMinus2),
            "satterthwaite" => Ok(DofRule::Satterthwaite),
            other => Err(Error::InvalidSpec(format!("unknown dof rule `{other}`"))),
        }
    }
}

impl std::fmt::Display for DofRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.token())
    }
}

/// A two-sided Wald t-test with confidence interval.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct WaldResult {
    pub estimate: f64,
    pub se: f64,
    pub dof: f64,
    pub t_stat: f64,
    pub p_value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub alpha: f64,
}

impl WaldResult {
    /// Whether the interval covers a candidate true value.
    #[must_use]
    pub fn covers(&self, value: f64) -> bool {
        self.ci_low <= value && value <= self.ci_high
    }

    /// Whether the test rejects at its level.
    #[must_use]
    pub fn rejects(&self) -> bool {
        self.p_value < self.alpha
    }
}

/// Satterthwaite degrees of freedom for a contrast of the fixed effects
/// under an adjustment-based sandwich (CR2 or CR3).
pub fn satterthwaite_dof(
    fit: &FitResult,
    estimator: Estimator,
    contrast: &DVector<f64>,
) -> Result<f64> {
    if !estimator.has_adjustment() {
        return Err(Error::InvalidSpec(format!(
            "Satterthwaite requires an adjustment-based estimator, got {estimator}"
        )));
    }
    let c = &fit.cache;
    if contrast.len() != c.n_params {
        return Err(Error::InvalidSpec(format!(
            "contrast length {} does not match {} fixed effects",
            contrast.len(),
            c.n_params
        )));
    }
    let (adj, _) = rve::adjustment_matrices(fit, estimator)?;
    let gc = &fit.model_vcov * contrast;
    let n_seq = c.b.len();
    // Per-sequence pieces: quadratic form t'Qt and projected weight B't.
    let mut qt = vec![0.0; n_seq];
    let mut d = vec![DVector::zeros(c.n_params); n_seq];
    for s in 0..n_seq {
        let Some(a) = &adj[s] else { continue };
        let w = &c.q_inv[s] * &c.b[s] * &gc;
        let t = a.transpose() * w;
        qt[s] = (&c.q_mat[s] * &t).dot(&t);
        d[s] = c.b[s].transpose() * t;
    }
    let k = c.k;
    let i_n = c.seq_of.len();
    let mut omega = nalgebra::DMatrix::zeros(i_n, i_n);
    for (i, &si) in c.seq_of.iter().enumerate() {
        for (j, &sj) in c.seq_of.iter().enumerate() {
            let cross = (&fit.model_vcov * &d[sj]).dot(&d[si]);
            let mut v = -k * k * cross;
            if i == j {
                v += k * qt[si];
            }
            omega[(i, j)] = v;
        }
    }
    let trace = omega.trace();
    if trace <= 0.0 {
        return Err(Error::NonPositiveDof { trace });
    }
    let trace_sq: f64 = omega.iter().map(|v| v * v).sum();
    Ok(trace * trace / trace_sq)
}

/// Unit contrast selecting the treatment coefficient.
fn treatment_contrast(fit: &FitResult) -> DVector<f64> {
    let mut c = DVector::zeros(fit.n_params());
    c[fit.n_params() - 1] = 1.0;
    c
}

/// Two-sided Wald t-test of `H0: θ = null` for the treatment effect.
pub fn wald_test(
    fit: &FitResult,
    source: VarianceSource,
    dof_rule: DofRule,
    null: f64,
    alpha: f64,
) -> Result<WaldResult> {
    if !fit.converged {
        return Err(Error::NotConverged);
    }
    if !(0.0..1.0).contains(&alpha) || alpha <= 0.0 {
        return Err(Error::InvalidSpec(format!("alpha {alpha} outside (0,1)")));
    }
    let se = match source {
        VarianceSource::Model => fit.theta_model_se(),
        VarianceSource::Robust(e) => rve::robust_vcov(fit, e)?.treatment_se,
    };
    let dof = match dof_rule {
        DofRule::FixedIMinus2 => {
            let d = fit.n_clusters() as f64 - 2.0;
            if d <= 0.0 {
                return Err(Error::InvalidDof(d));
            }
            d
        }
        DofRule::Satterthwaite => {
            let VarianceSource::Robust(e) = source else {
                return Err(Error::InvalidSpec(
                    "Satterthwaite applies to adjustment-based robust variances only".into(),
                ));
            };
            let d = satterthwaite_dof(fit, e, &treatment_contrast(fit))?;
            if d <= 0.0 {
                return Err(Error::InvalidDof(d));
            }
            d
        }
    };
    let estimate = fit.theta_hat();
    let t_stat = (estimate - null) / se;
    let p_value = (2.0 * dist::t_cdf(-t_stat.abs(), dof)?).min(1.0);
    let q = dist::t_quantile(1.0 - alpha / 2.0, dof)?;
    Ok(WaldResult {
        estimate,
        se,
        dof,
        t_stat,
        p_value,
        ci_low: estimate - q * se,
        ci_high: estimate + q * se,
        alpha,
    })
}
