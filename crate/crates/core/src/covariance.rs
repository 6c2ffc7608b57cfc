//! Random-effects structures, marginal covariance assembly, and
//! ICC/variance-component conversions.
//!
//! Four working structures are supported, named by the within-cluster
//! correlation they induce:
//!
//! - `EXCH` — a cluster random intercept (`τ_α²`): exchangeable.
//! - `NE` — cluster intercept + independent cluster-period effects
//!   (`τ_α², τ_γ²`): nested exchangeable.
//! - `NE_RI` — `NE` plus a cluster-level random intervention effect
//!   (`τ_v²`) that loads on the treatment indicator.
//! - `DTD_RI` — AR(1) cluster-period effects (`τ_γ²`, decay `r`) plus the
//!   random intervention effect: discrete-time decay.
//!
//! The marginal covariance between observations `(j,k)` and `(l,m)` of one
//! cluster is
//!
//! ```text
//! σ_ε²·1[(j,k)=(l,m)] + τ_α² + τ_γ²·c_γ(j,l) + τ_v²·x_j·x_l
//! ```
//!
//! with `c_γ(j,l) = 1[j=l]` for the nested-exchangeable family and
//! `r^|j−l|` under discrete-time decay.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::design::TrialDesign;
use crate::error::{Error, Result};

/// Working/generating random-effects structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Structure {
    /// Cluster random intercept only.
    #[serde(rename = "exch")]
    Exchangeable,
    /// Cluster intercept + iid cluster-period effects.
    #[serde(rename = "ne")]
    NestedExchangeable,
    /// Nested exchangeable + random intervention effect.
    #[serde(rename = "ne_ri")]
    NestedExchangeableRi,
    /// AR(1) cluster-period effects + random intervention effect.
    #[serde(rename = "dtd_ri")]
    DiscreteTimeDecayRi,
}

impl Structure {
    /// Short display token (used in CSV/JSON output).
    #[must_use]
    pub fn token(&self) -> &'static str {
        match self {
            Structure::Exchangeable => "EXCH",
            Structure::NestedExchangeable => "NE",
            Structure::NestedExchangeableRi => "NE_RI",
            Structure::DiscreteTimeDecayRi => "DTD_RI",
        }
    }

    /// Parse a token (case-insensitive; accepts `exch`, `ne`, `ne_ri`,
    /// `dtd_ri`).
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exch" => Ok(Structure::Exchangeable),
            "ne" => Ok(Structure::NestedExchangeable),
            "ne_ri" => Ok(Structure::NestedExchangeableRi),
            "dtd_ri" => Ok(Structure::DiscreteTimeDecayRi),
            other => Err(Error::InvalidSpec(format!(
                "unknown structure token `{other}` (expected exch, ne, ne_ri, dtd_ri)"
            ))),
        }
    }

    /// Whether the structure includes the cluster random intercept.
    #[must_use]
    pub fn has_cluster_intercept(&self) -> bool {
        !matches!(self, Structure::DiscreteTimeDecayRi)
    }

    /// Whether the structure includes cluster-period effects.
    #[must_use]
    pub fn has_cluster_period(&self) -> bool {
        !matches!(self, Structure::Exchangeable)
    }

    /// Whether the structure includes the random intervention effect.
    #[must_use]
    pub fn has_random_intervention(&self) -> bool {
        matches!(
            self,
            Structure::NestedExchangeableRi | Structure::DiscreteTimeDecayRi
        )
    }

    /// Whether the cluster-period effects decay with lag (AR(1)).
    #[must_use]
    pub fn has_decay(&self) -> bool {
        matches!(self, Structure::DiscreteTimeDecayRi)
    }

    /// Number of random-effect columns `q` for a `J`-period design:
    /// optional intercept column + `J` period columns + optional
    /// treatment column.
    #[must_use]
    pub fn n_re_cols(&self, n_periods: usize) -> usize {
        let mut q = 0;
        if self.has_cluster_intercept() {
            q += 1;
        }
        if self.has_cluster_period() {
            q += n_periods;
        }
        if self.has_random_intervention() {
            q += 1;
        }
        q
    }

    /// Number of free covariance parameters once `σ_ε²` is profiled out
    /// (the variance ratios, plus the decay rate for DTD).
    #[must_use]
    pub fn n_free_ratios(&self) -> usize {
        match self {
            Structure::Exchangeable => 1,
            Structure::NestedExchangeable => 2,
            Structure::NestedExchangeableRi => 3,
            Structure::DiscreteTimeDecayRi => 3,
        }
    }
}

impl std::fmt::Display for Structure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.token())
    }
}

/// Variance components; each structure uses the relevant subset and the
/// rest must be zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponents {
    /// Cluster random-intercept variance `τ_α²`.
    pub tau_alpha_sq: f64,
    /// Cluster-period variance `τ_γ²`.
    pub tau_gamma_sq: f64,
    /// Random-intervention variance `τ_v²`.
    pub tau_v_sq: f64,
    /// AR(1) decay rate `r ∈ [0,1)` (0 for the nested-exchangeable family).
    pub decay: f64,
    /// Individual error variance `σ_ε² > 0`.
    pub sigma_eps_sq: f64,
}

impl VarianceComponents {
    /// All-zero random effects with unit error variance.
    #[must_use]
    pub fn error_only(sigma_eps_sq: f64) -> Self {
        Self {
            tau_alpha_sq: 0.0,
            tau_gamma_sq: 0.0,
            tau_v_sq: 0.0,
            decay: 0.0,
            sigma_eps_sq,
        }
    }

    /// Validate ranges and structure consistency: nonnegative variances,
    /// positive error variance, `r ∈ [0,1)`, and zero components outside
    /// the structure's subset.
    pub fn validate_for(&self, structure: Structure) -> Result<()> {
        if !(self.sigma_eps_sq > 0.0) {
            return Err(Error::InvalidSpec(format!(
                "sigma_eps_sq must be positive, got {}",
                self.sigma_eps_sq
            )));
        }
        for (name, v) in [
            ("tau_alpha_sq", self.tau_alpha_sq),
            ("tau_gamma_sq", self.tau_gamma_sq),
            ("tau_v_sq", self.tau_v_sq),
        ] {
            if !(v >= 0.0) {
                return Err(Error::InvalidSpec(format!("{name} must be nonnegative, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.decay) {
            return Err(Error::InvalidSpec(format!(
                "decay must lie in [0,1), got {}",
                self.decay
            )));
        }
        let check_zero = |name: &str, v: f64, allowed: bool| -> Result<()> {
            if !allowed && v != 0.0 {
                return Err(Error::InvalidSpec(format!(
                    "{name} = {v} but structure {structure} does not include it"
                )));
            }
            Ok(())
        };
        check_zero("tau_alpha_sq", self.tau_alpha_sq, structure.has_cluster_intercept())?;
        check_zero("tau_gamma_sq", self.tau_gamma_sq, structure.has_cluster_period())?;
        check_zero("tau_v_sq", self.tau_v_sq, structure.has_random_intervention())?;
        check_zero("decay", self.decay, structure.has_decay())?;
        Ok(())
    }
}

/// ICC/CAC parameterization of a generator: within-period ICCs in the
/// control and intervention conditions plus the control-condition cluster
/// autocorrelation (under decay, the per-period rate).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IccSpec {
    /// Control-condition within-period ICC `ρ0 ∈ (0,1)`.
    pub rho0: f64,
    /// Intervention-condition within-period ICC `ρ1 ∈ (0,1)`, `ρ1 ≥ ρ0`.
    pub rho1: f64,
    /// Control-condition cluster autocorrelation `∈ (0,1]`.
    pub cac: f64,
    /// Individual error SD `σ_ε > 0`.
    pub sigma_eps: f64,
}

impl IccSpec {
    fn validate(&self) -> Result<()> {
        for (name, v) in [("rho0", self.rho0), ("rho1", self.rho1)] {
            if !(0.0 < v && v < 1.0) {
                return Err(Error::InvalidSpec(format!("{name} must lie in (0,1), got {v}")));
            }
        }
        if !(0.0 < self.cac && self.cac <= 1.0) {
            return Err(Error::InvalidSpec(format!(
                "cac must lie in (0,1], got {}",
                self.cac
            )));
        }
        if !(self.sigma_eps > 0.0) {
            return Err(Error::InvalidSpec(format!(
                "sigma_eps must be positive, got {}",
                self.sigma_eps
            )));
        }
        Ok(())
    }
}

/// Invert an ICC/CAC spec into variance components for a generator
/// structure (`NE_RI` or `DTD_RI`).
///
/// For `NE_RI`: `τ_α² + τ_γ² = ρ0·σ²/(1−ρ0)`, split by the CAC
/// (`τ_α² = CAC·(τ_α²+τ_γ²)`). For `DTD_RI`: `τ_γ² = ρ0·σ²/(1−ρ0)` and
/// the CAC is the decay rate. In both cases the intervention variance
/// solves the intervention-arm within-period ICC:
/// `τ_v² = σ²·[ρ1/(1−ρ1) − ρ0/(1−ρ0)]`, which requires `ρ1 ≥ ρ0`.
pub fn icc_to_components(spec: &IccSpec, structure: Structure) -> Result<VarianceComponents> {
    spec.validate()?;
    if !structure.has_random_intervention() {
        return Err(Error::InvalidSpec(format!(
            "icc_to_components targets a random-intervention generator, got {structure}"
        )));
    }
    let s2 = spec.sigma_eps * spec.sigma_eps;
    let base = spec.rho0 / (1.0 - spec.rho0) * s2;
    let tau_v_sq = s2 * (spec.rho1 / (1.0 - spec.rho1) - spec.rho0 / (1.0 - spec.rho0));
    if tau_v_sq < -1e-15 {
        return Err(Error::InfeasibleIcc {
            rho0: spec.rho0,
            rho1: spec.rho1,
        });
    }
    let tau_v_sq = tau_v_sq.max(0.0);
    let vc = match structure {
        Structure::NestedExchangeableRi => VarianceComponents {
            tau_alpha_sq: spec.cac * base,
            tau_gamma_sq: (1.0 - spec.cac) * base,
            tau_v_sq,
            decay: 0.0,
            sigma_eps_sq: s2,
        },
        Structure::DiscreteTimeDecayRi => VarianceComponents {
            tau_alpha_sq: 0.0,
            tau_gamma_sq: base,
            tau_v_sq,
            // CAC = 1 would degenerate to nested exchangeable; the decay
            // parameterization requires r < 1.
            decay: if spec.cac < 1.0 {
                spec.cac
            } else {
                return Err(Error::InvalidSpec(
                    "cac = 1 is not a valid decay rate (use ne_ri instead)".into(),
                ));
            },
            sigma_eps_sq: s2,
        },
        _ => unreachable!(),
    };
    Ok(vc)
}

/// The ICC/CAC panel induced by a set of variance components: within- and
/// between-period ICCs and CACs in both arms. Between-period quantities
/// depend on the lag under decay; the `*_at` methods take `lag ≥ 1`.
#[derive(Debug, Clone, Copy)]
pub struct IccPanel {
    structure: Structure,
    vc: VarianceComponents,
}

impl IccPanel {
    /// Control-arm within-period ICC.
    #[must_use]
    pub fn wpicc_control(&self) -> f64 {
        let b = self.vc.tau_alpha_sq + self.vc.tau_gamma_sq;
        b / (b + self.vc.sigma_eps_sq)
    }

    /// Intervention-arm within-period ICC.
    #[must_use]
    pub fn wpicc_intervention(&self) -> f64 {
        let b = self.vc.tau_alpha_sq + self.vc.tau_gamma_sq + self.vc.tau_v_sq;
        b / (b + self.vc.sigma_eps_sq)
    }

    /// Control-arm between-period ICC at a lag.
    #[must_use]
    pub fn bpicc_control_at(&self, lag: usize) -> f64 {
        let num = self.vc.tau_alpha_sq + self.vc.tau_gamma_sq * self.gamma_corr(lag);
        num / (self.vc.tau_alpha_sq + self.vc.tau_gamma_sq + self.vc.sigma_eps_sq)
    }

    /// Intervention-arm between-period ICC at a lag (both periods treated).
    #[must_use]
    pub fn bpicc_intervention_at(&self, lag: usize) -> f64 {
        let num = self.vc.tau_alpha_sq
            + self.vc.tau_gamma_sq * self.gamma_corr(lag)
            + self.vc.tau_v_sq;
        num / (self.vc.tau_alpha_sq + self.vc.tau_gamma_sq + self.vc.tau_v_sq + self.vc.sigma_eps_sq)
    }

    /// Control-arm cluster autocorrelation at a lag
    /// (between-period over within-period ICC); absent when the
    /// cluster-level variance is zero.
    #[must_use]
    pub fn cac_control_at(&self, lag: usize) -> Option<f64> {
        let denom = self.vc.tau_alpha_sq + self.vc.tau_gamma_sq;
        if denom == 0.0 {
            return None;
        }
        Some((self.vc.tau_alpha_sq + self.vc.tau_gamma_sq * self.gamma_corr(lag)) / denom)
    }

    /// Intervention-arm cluster autocorrelation at a lag; absent when the
    /// cluster-level variance is zero.
    #[must_use]
    pub fn cac_intervention_at(&self, lag: usize) -> Option<f64> {
        let denom = self.vc.tau_alpha_sq + self.vc.tau_gamma_sq + self.vc.tau_v_sq;
        if denom == 0.0 {
            return None;
        }
        Some(
            (self.vc.tau_alpha_sq + self.vc.tau_gamma_sq * self.gamma_corr(lag) + self.vc.tau_v_sq)
                / denom,
        )
    }

    fn gamma_corr(&self, lag: usize) -> f64 {
        if self.structure.has_decay() {
            self.vc.decay.powi(lag as i32)
        } else if lag == 0 {
            1.0
        } else {
            0.0
        }
    }
}

/// Evaluate the full ICC/CAC panel for components under a structure.
pub fn components_to_icc(vc: &VarianceComponents, structure: Structure) -> Result<IccPanel> {
    vc.validate_for(structure)?;
    Ok(IccPanel { structure, vc: *vc })
}

/// Recover the generator's `IccSpec` (within-period ICCs + lag-1 control
/// CAC) from components; inverse of [`icc_to_components`] on its range.
pub fn components_to_icc_spec(vc: &VarianceComponents, structure: Structure) -> Result<IccSpec> {
    let panel = components_to_icc(vc, structure)?;
    let cac = match structure {
        Structure::DiscreteTimeDecayRi => vc.decay,
        _ => panel
            .cac_control_at(1)
            .ok_or_else(|| Error::InvalidSpec("CAC undefined: zero cluster-level variance".into()))?,
    };
    Ok(IccSpec {
        rho0: panel.wpicc_control(),
        rho1: panel.wpicc_intervention(),
        cac,
        sigma_eps: vc.sigma_eps_sq.sqrt(),
    })
}

/// Entry of the within-cluster covariance between period `j`, individual
/// `k` and period `l`, individual `m`, given the treatment row `x`.
fn cov_entry(
    structure: Structure,
    vc: &VarianceComponents,
    x: &[f64],
    j: usize,
    k: usize,
    l: usize,
    m: usize,
) -> f64 {
    let mut v = vc.tau_alpha_sq;
    if structure.has_cluster_period() {
        let c = if structure.has_decay() {
            vc.decay.powi((j as i32 - l as i32).abs())
        } else if j == l {
            1.0
        } else {
            0.0
        };
        v += vc.tau_gamma_sq * c;
    }
    v += vc.tau_v_sq * x[j] * x[l];
    if j == l && k == m {
        v += vc.sigma_eps_sq;
    }
    v
}

/// Dense per-cluster marginal covariance `V_i` (`n_i × n_i`,
/// period-major ordering) for the cluster's sequence.
pub fn build_v(
    design: &TrialDesign,
    seq: usize,
    structure: Structure,
    vc: &VarianceComponents,
) -> Result<DMatrix<f64>> {
    vc.validate_for(structure)?;
    let x = design.treatment_row(seq)?;
    let j_len = design.n_periods();
    let k = design.per_cell();
    let n = j_len * k;
    let mut v = DMatrix::zeros(n, n);
    for j in 0..j_len {
        for kk in 0..k {
            for l in 0..j_len {
                for mm in 0..k {
                    v[(j * k + kk, l * k + mm)] = cov_entry(structure, vc, &x, j, kk, l, mm);
                }
            }
        }
    }
    Ok(v)
}

/// Random-effects design of one cluster collapsed to periods: the
/// `J × q` matrix whose per-observation expansion repeats each row `K`
/// times. Columns: optional intercept column of ones, `J` period
/// indicators, optional treatment column.
pub fn period_re_design(
    design: &TrialDesign,
    seq: usize,
    structure: Structure,
) -> Result<DMatrix<f64>> {
    let j_len = design.n_periods();
    let x = design.treatment_row(seq)?;
    let q = structure.n_re_cols(j_len);
    let mut z = DMatrix::zeros(j_len, q);
    let mut col = 0;
    if structure.has_cluster_intercept() {
        for j in 0..j_len {
            z[(j, col)] = 1.0;
        }
        col += 1;
    }
    if structure.has_cluster_period() {
        for j in 0..j_len {
            z[(j, col + j)] = 1.0;
        }
        col += j_len;
    }
    if structure.has_random_intervention() {
        for j in 0..j_len {
            z[(j, col)] = x[j];
        }
    }
    Ok(z)
}

/// Random-effects covariance `R` (`q × q`): block-diagonal with `τ_α²`,
/// `τ_γ²·Z̃` (`Z̃ = I` for the nested family, AR(1) under decay), `τ_v²`.
pub fn re_cov(
    design: &TrialDesign,
    structure: Structure,
    vc: &VarianceComponents,
) -> Result<DMatrix<f64>> {
    vc.validate_for(structure)?;
    let j_len = design.n_periods();
    let q = structure.n_re_cols(j_len);
    let mut r = DMatrix::zeros(q, q);
    let mut col = 0;
    if structure.has_cluster_intercept() {
        r[(col, col)] = vc.tau_alpha_sq;
        col += 1;
    }
    if structure.has_cluster_period() {
        for j in 0..j_len {
            for l in 0..j_len {
                let c = if structure.has_decay() {
                    vc.decay.powi((j as i32 - l as i32).abs())
                } else if j == l {
                    1.0
                } else {
                    0.0
                };
                r[(col + j, col + l)] = vc.tau_gamma_sq * c;
            }
        }
        col += j_len;
    }
    if structure.has_random_intervention() {
        r[(col, col)] = vc.tau_v_sq;
    }
    Ok(r)
}

/// Per-observation random-effects design `Z_i` (`n_i × q`) and covariance
/// `R`; `Z_i R Z_i' + σ_ε² I` equals [`build_v`].
pub fn build_z_r(
    design: &TrialDesign,
    seq: usize,
    structure: Structure,
    vc: &VarianceComponents,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let zp = period_re_design(design, seq, structure)?;
    let r = re_cov(design, structure, vc)?;
    let j_len = design.n_periods();
    let k = design.per_cell();
    let q = zp.ncols();
    let mut z = DMatrix::zeros(j_len * k, q);
    for j in 0..j_len {
        for kk in 0..k {
            for c in 0..q {
                z[(j * k + kk, c)] = zp[(j, c)];
            }
        }
    }
    Ok((z, r))
}

/// Lower Cholesky factor of the `J × J` AR(1) correlation matrix with
/// rate `r`, in closed form: `L[j,0] = r^j`, `L[j,k] = r^(j−k)·√(1−r²)`
/// for `1 ≤ k ≤ j`.
#[must_use]
pub fn ar1_cholesky(n_periods: usize, r: f64) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(n_periods, n_periods);
    let s = (1.0 - r * r).sqrt();
    for j in 0..n_periods {
        l[(j, 0)] = r.powi(j as i32);
        for k in 1..=j {
            l[(j, k)] = r.powi((j - k) as i32) * s;
        }
    }
    l
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn d(i: usize, s: usize, k: usize) -> TrialDesign {
        TrialDesign::new(i, s, k).unwrap()
    }

    #[test]
    fn taus_for_the_three_grid_icc_pairs() {
        // The three within-period ICC pairs used throughout the study at
        // CAC 0.8 and unit error SD give intervention-effect SDs
        // 0.21, 0.24, 0.35 (2 d.p.).
        for (rho0, rho1, tau_v) in [(0.01, 0.05, 0.21), (0.05, 0.10, 0.24), (0.05, 0.15, 0.35)] {
            for structure in [Structure::NestedExchangeableRi, Structure::DiscreteTimeDecayRi] {
                let vc = icc_to_components(
                    &IccSpec { rho0, rho1, cac: 0.8, sigma_eps: 1.0 },
                    structure,
                )
                .unwrap();
                assert_abs_diff_eq!(vc.tau_v_sq.sqrt(), tau_v, epsilon = 5e-3);
            }
        }
    }

    #[test]
    fn component_split_for_large_icc_pair() {
        let vc = icc_to_components(
            &IccSpec { rho0: 0.05, rho1: 0.15, cac: 0.8, sigma_eps: 1.0 },
            Structure::NestedExchangeableRi,
        )
        .unwrap();
        assert_abs_diff_eq!(vc.tau_alpha_sq + vc.tau_gamma_sq, 0.052632, epsilon = 1e-6);
        assert_abs_diff_eq!(vc.tau_alpha_sq, 0.042105, epsilon = 1e-6);
        assert_abs_diff_eq!(vc.tau_gamma_sq, 0.010526, epsilon = 1e-6);
        assert_abs_diff_eq!(vc.tau_v_sq, 0.123839, epsilon = 1e-6);
    }

    #[test]
    fn equal_arm_iccs_force_zero_intervention_variance() {
        let vc = icc_to_components(
            &IccSpec { rho0: 0.05, rho1: 0.05, cac: 0.5, sigma_eps: 1.0 },
            Structure::NestedExchangeableRi,
        )
        .unwrap();
        assert_eq!(vc.tau_v_sq, 0.0);
    }

    #[test]
    fn infeasible_icc_rejected() {
        let r = icc_to_components(
            &IccSpec { rho0: 0.10, rho1: 0.05, cac: 0.8, sigma_eps: 1.0 },
            Structure::NestedExchangeableRi,
        );
        assert!(matches!(r, Err(Error::InfeasibleIcc { .. })));
    }

    #[test]
    fn round_trip_icc_components_icc() {
        for structure in [Structure::NestedExchangeableRi, Structure::DiscreteTimeDecayRi] {
            for (rho0, rho1) in [(0.01, 0.05), (0.05, 0.10), (0.05, 0.15)] {
                let spec = IccSpec { rho0, rho1, cac: 0.8, sigma_eps: 1.0 };
                let vc = icc_to_components(&spec, structure).unwrap();
                let back = components_to_icc_spec(&vc, structure).unwrap();
                assert_abs_diff_eq!(back.rho0, spec.rho0, epsilon = 1e-12);
                assert_abs_diff_eq!(back.rho1, spec.rho1, epsilon = 1e-12);
                assert_abs_diff_eq!(back.cac, spec.cac, epsilon = 1e-12);
                assert_abs_diff_eq!(back.sigma_eps, spec.sigma_eps, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn forward_check_intervention_wpicc() {
        let vc = icc_to_components(
            &IccSpec { rho0: 0.05, rho1: 0.15, cac: 0.8, sigma_eps: 1.0 },
            Structure::NestedExchangeableRi,
        )
        .unwrap();
        let panel = components_to_icc(&vc, Structure::NestedExchangeableRi).unwrap();
        assert_abs_diff_eq!(panel.wpicc_intervention(), 0.15, epsilon = 1e-10);
    }

    #[test]
    fn decay_between_period_icc() {
        // Between-period ICC at lag 2 under decay: rho0·r².
        let vc = VarianceComponents {
            tau_alpha_sq: 0.0,
            tau_gamma_sq: 0.052632,
            tau_v_sq: 0.0,
            decay: 0.8,
            sigma_eps_sq: 1.0,
        };
        let panel = components_to_icc(&vc, Structure::DiscreteTimeDecayRi).unwrap();
        assert_abs_diff_eq!(panel.bpicc_control_at(2), 0.05 * 0.64, epsilon = 1e-4);
        assert_abs_diff_eq!(panel.cac_control_at(1).unwrap(), 0.8, epsilon = 1e-12);
    }

    #[test]
    fn decay_intervention_cac_mixes_decayed_and_static_variance() {
        let vc = VarianceComponents {
            tau_alpha_sq: 0.0,
            tau_gamma_sq: 0.05,
            tau_v_sq: 0.02,
            decay: 0.8,
            sigma_eps_sq: 1.0,
        };
        let panel = components_to_icc(&vc, Structure::DiscreteTimeDecayRi).unwrap();
        let want = (0.05 * 0.8 + 0.02) / (0.05 + 0.02);
        assert_abs_diff_eq!(panel.cac_intervention_at(1).unwrap(), want, epsilon = 1e-12);
    }

    #[test]
    fn cac_absent_when_no_cluster_variance() {
        let vc = VarianceComponents::error_only(1.0);
        let panel = components_to_icc(&vc, Structure::NestedExchangeableRi).unwrap();
        assert_eq!(panel.wpicc_control(), 0.0);
        assert!(panel.cac_control_at(1).is_none());
    }

    #[test]
    fn build_v_zero_components_is_identity() {
        let design = d(4, 2, 3);
        let v = build_v(&design, 0, Structure::Exchangeable, &VarianceComponents::error_only(1.0))
            .unwrap();
        assert_eq!(v, DMatrix::identity(9, 9));
    }

    #[test]
    fn build_v_hand_case_two_periods() {
        // Two periods, one subject each: diagonal τα²+τγ²+σ², off-diagonal τα².
        let design = d(2, 1, 1);
        let vc = VarianceComponents {
            tau_alpha_sq: 0.008,
            tau_gamma_sq: 0.002,
            tau_v_sq: 0.0,
            decay: 0.0,
            sigma_eps_sq: 1.0,
        };
        let v = build_v(&design, 0, Structure::NestedExchangeable, &vc).unwrap();
        assert_abs_diff_eq!(v[(0, 0)], 1.010, epsilon = 1e-12);
        assert_abs_diff_eq!(v[(1, 1)], 1.010, epsilon = 1e-12);
        assert_abs_diff_eq!(v[(0, 1)], 0.008, epsilon = 1e-12);
        assert_abs_diff_eq!(v[(1, 0)], 0.008, epsilon = 1e-12);
    }

    #[test]
    fn decay_off_diagonal_blocks_scale_by_lag() {
        let design = d(4, 2, 2);
        let vc = VarianceComponents {
            tau_alpha_sq: 0.0,
            tau_gamma_sq: 0.05,
            tau_v_sq: 0.01,
            decay: 0.6,
            sigma_eps_sq: 1.0,
        };
        let v = build_v(&design, 1, Structure::DiscreteTimeDecayRi, &vc).unwrap();
        let k = 2;
        // Sequence 1 (J=3) is control in periods 0,1 and treated in period 2.
        // Lag-1 control pair: τγ²·r.
        assert_abs_diff_eq!(v[(0, k)], 0.05 * 0.6, epsilon = 1e-12);
        // Lag-2 pair between periods 0 (control) and 2 (treated): x0·x2 = 0.
        assert_abs_diff_eq!(v[(0, 2 * k)], 0.05 * 0.36, epsilon = 1e-12);
        // Both treated (periods 2 and 2, different subjects): τγ² + τv².
        assert_abs_diff_eq!(v[(2 * k, 2 * k + 1)], 0.05 + 0.01, epsilon = 1e-12);
    }

    #[test]
    fn z_r_consistency_with_dense_v() {
        let cases = [
            (Structure::Exchangeable, 0.3, 0.0, 0.0, 0.0),
            (Structure::NestedExchangeable, 0.3, 0.1, 0.0, 0.0),
            (Structure::NestedExchangeableRi, 0.3, 0.1, 0.2, 0.0),
            (Structure::DiscreteTimeDecayRi, 0.0, 0.25, 0.15, 0.7),
        ];
        let design = d(8, 4, 3);
        for (structure, ta, tg, tv, r) in cases {
            let vc = VarianceComponents {
                tau_alpha_sq: ta,
                tau_gamma_sq: tg,
                tau_v_sq: tv,
                decay: r,
                sigma_eps_sq: 1.3,
            };
            for seq in 0..design.n_sequences() {
                let v = build_v(&design, seq, structure, &vc).unwrap();
                let (z, rr) = build_z_r(&design, seq, structure, &vc).unwrap();
                let n = v.nrows();
                let rebuilt = &z * rr * z.transpose() + DMatrix::identity(n, n) * vc.sigma_eps_sq;
                let err = (&v - &rebuilt).abs().max();
                assert!(err < 1e-12, "{structure} seq {seq}: max err {err}");
            }
        }
    }

    #[test]
    fn re_col_counts() {
        assert_eq!(Structure::Exchangeable.n_re_cols(5), 1);
        assert_eq!(Structure::NestedExchangeable.n_re_cols(5), 6);
        assert_eq!(Structure::NestedExchangeableRi.n_re_cols(5), 7);
        assert_eq!(Structure::DiscreteTimeDecayRi.n_re_cols(5), 6);
    }

    #[test]
    fn build_v_symmetric_and_min_eigen_bounded() {
        let design = d(8, 4, 2);
        let vc = icc_to_components(
            &IccSpec { rho0: 0.05, rho1: 0.15, cac: 0.8, sigma_eps: 1.0 },
            Structure::DiscreteTimeDecayRi,
        )
        .unwrap();
        let v = build_v(&design, 2, Structure::DiscreteTimeDecayRi, &vc).unwrap();
        assert_eq!(v, v.transpose());
        let eig = v.clone().symmetric_eigen();
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min >= vc.sigma_eps_sq - 1e-10);
    }

    #[test]
    fn decay_near_one_approaches_nested_exchangeable() {
        let design = d(4, 2, 2);
        let vc_dtd = VarianceComponents {
            tau_alpha_sq: 0.0,
            tau_gamma_sq: 0.07,
            tau_v_sq: 0.02,
            decay: 1.0 - 1e-9,
            sigma_eps_sq: 1.0,
        };
        // r → 1 collapses the AR(1) block onto a shared cluster effect.
        let vc_ne = VarianceComponents {
            tau_alpha_sq: 0.07,
            tau_gamma_sq: 0.0,
            tau_v_sq: 0.02,
            decay: 0.0,
            sigma_eps_sq: 1.0,
        };
        let a = build_v(&design, 0, Structure::DiscreteTimeDecayRi, &vc_dtd).unwrap();
        let b = build_v(&design, 0, Structure::NestedExchangeableRi, &vc_ne).unwrap();
        assert!((a - b).abs().max() < 1e-6);
    }

    #[test]
    fn ar1_cholesky_reproduces_correlation() {
        for r in [0.0, 0.3, 0.8, 0.99] {
            let l = ar1_cholesky(6, r);
            let c = &l * l.transpose();
            for j in 0..6 {
                for k in 0..6 {
                    let want = r.powi((j as i32 - k as i32).abs());
                    assert_abs_diff_eq!(c[(j, k)], want, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn validate_rejects_foreign_components() {
        let vc = VarianceComponents {
            tau_alpha_sq: 0.1,
            tau_gamma_sq: 0.1,
            tau_v_sq: 0.0,
            decay: 0.0,
            sigma_eps_sq: 1.0,
        };
        assert!(vc.validate_for(Structure::Exchangeable).is_err());
        assert!(vc.validate_for(Structure::NestedExchangeable).is_ok());
    }

    #[test]
    fn structure_tokens_round_trip() {
        for s in [
            Structure::Exchangeable,
            Structure::NestedExchangeable,
            Structure::NestedExchangeableRi,
            Structure::DiscreteTimeDecayRi,
        ] {
            assert_eq!(Structure::parse(s.token()).unwrap(), s);
        }
        assert!(Structure::parse("bogus").is_err());
    }
}
