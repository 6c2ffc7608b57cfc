//! Performance measures accumulated over converged replicates.
//!
//! All statistics are computed in a single streaming pass with
//! compensated (Neumaier) summation, shifted by the first estimate so
//! the variance accumulation is centered near zero. The empirical SE is
//! the population standard deviation of the estimates around their own
//! mean.

use serde::Serialize;

use crate::error::{Error, Result};

/// One converged analysis of one replicate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellOutcome {
    pub estimate: f64,
    pub se: f64,
    /// Confidence interval contained the generating effect.
    pub covered: bool,
    /// Null hypothesis of zero effect was rejected.
    pub rejected: bool,
}

/// Summary of one analysis over a scenario's replicates.
///
/// `pct_se_err` is absent when the empirical SE is zero (all estimates
/// identical) and both it and `emp_se` require at least two converged
/// replicates.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Measures {
    pub n_converged: usize,
    pub bias: f64,
    pub coverage: f64,
    pub avg_se: f64,
    pub emp_se: f64,
    pub pct_se_err: Option<f64>,
    pub reject_rate: f64,
    pub mcse: f64,
}

/// Compensated accumulator (Neumaier variant of Kahan summation).
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct CompensatedSum {
    sum: f64,
    correction: f64,
}

impl CompensatedSum {
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.correction += (self.sum - t) + x;
        } else {
            self.correction += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.correction
    }
}

/// Monte Carlo standard error of a coverage (or rejection) proportion.
#[must_use]
pub fn coverage_mcse(coverage: f64, n_converged: usize) -> f64 {
    if n_converged == 0 {
        return f64::NAN;
    }
    (coverage * (1.0 - coverage) / n_converged as f64).sqrt()
}

/// Reduce the converged outcomes of one analysis.
///
/// The iteration order of `outcomes` is fixed by the caller (replicate
/// order), which makes the compensated reduction bit-reproducible
/// regardless of how the replicates were scheduled.
pub fn summarize<'a, T>(outcomes: T, theta_true: f64) -> Result<Measures>
where
    T: IntoIterator<Item = &'a CellOutcome>,
{
    let mut n = 0usize;
    let mut shift = 0.0;
    let mut sum_d = CompensatedSum::default();
    let mut sum_d2 = CompensatedSum::default();
    let mut sum_se = CompensatedSum::default();
    let mut n_covered = 0usize;
    let mut n_rejected = 0usize;
    for o in outcomes {
        if n == 0 {
            shift = o.estimate;
        }
        let d = o.estimate - shift;
        sum_d.add(d);
        sum_d2.add(d * d);
        sum_se.add(o.se);
        if o.covered {
            n_covered += 1;
        }
        if o.rejected {
            n_rejected += 1;
        }
        n += 1;
    }
    if n < 2 {
        return Err(Error::DegenerateSample { n, min: 2 });
    }
    let nf = n as f64;
    let mean_d = sum_d.value() / nf;
    let mean = shift + mean_d;
    let var = (sum_d2.value() / nf - mean_d * mean_d).max(0.0);
    let emp_se = var.sqrt();
    let avg_se = sum_se.value() / nf;
    let coverage = n_covered as f64 / nf;
    let pct_se_err = if emp_se > 0.0 {
        Some(100.0 * (avg_se / emp_se - 1.0))
    } else {
        None
    };
    Ok(Measures {
        n_converged: n,
        bias: mean - theta_true,
        coverage,
        avg_se,
        emp_se,
        pct_se_err,
        reject_rate: n_rejected as f64 / nf,
        mcse: coverage_mcse(coverage, n),
    })
}
