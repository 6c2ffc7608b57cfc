//! Student-t distribution functions (CDF, quantile) for Wald inference.
//!
//! Implemented internally so fractional Satterthwaite degrees of freedom
//! are supported without external dependencies: the CDF routes through the
//! regularized incomplete beta function (continued fraction, Lentz's
//! method) and the quantile inverts the CDF by bisection to full double
//! precision. Accuracy is pinned by unit tests against 40-digit reference
//! values.

use crate::error::{Error, Result};

/// Natural log of the gamma function (Lanczos approximation, g = 7,
/// 9 terms; relative error below 1e−13 for positive arguments).
#[must_use]
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection for the left half-line.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + 7.5;
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized incomplete beta function `I_x(a, b)` via the continued
/// fraction expansion, with the symmetry switch for fast convergence.
#[must_use]
pub fn inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    // Prefactor x^a (1−x)^b / (a·B(a,b)).
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        (ln_front.exp() / a) * beta_cf(a, b, x)
    } else {
        1.0 - (ln_front.exp() / b) * beta_cf(b, a, 1.0 - x)
    }
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..300 {
        let m = m as f64;
        let m2 = 2.0 * m;
        // Even step.
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        // Odd step.
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// CDF of the Student-t distribution with `dof` degrees of freedom
/// (fractional allowed).
pub fn t_cdf(x: f64, dof: f64) -> Result<f64> {
    if !(dof > 0.0) || !dof.is_finite() {
        return Err(Error::InvalidDof(dof));
    }
    if x == 0.0 {
        return Ok(0.5);
    }
    if x.is_infinite() {
        return Ok(if x > 0.0 { 1.0 } else { 0.0 });
    }
    let z = dof / (dof + x * x);
    let tail = 0.5 * inc_beta(0.5 * dof, 0.5, z);
    Ok(if x > 0.0 { 1.0 - tail } else { tail })
}

/// Quantile (inverse CDF) of the Student-t distribution. `p ∈ (0,1)`.
pub fn t_quantile(p: f64, dof: f64) -> Result<f64> {
    if !(dof > 0.0) || !dof.is_finite() {
        return Err(Error::InvalidDof(dof));
    }
    if !(0.0 < p && p < 1.0) {
        return Err(Error::InvalidSpec(format!(
            "quantile probability must lie in (0,1), got {p}"
        )));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    // Work in the upper tail and mirror at the end.
    let (pp, neg) = if p < 0.5 { (1.0 - p, true) } else { (p, false) };
    // Bracket the quantile, doubling the upper endpoint as needed.
    let mut lo = 0.0;
    let mut hi = 1.0;
    while t_cdf(hi, dof)? < pp {
        lo = hi;
        hi *= 2.0;
        if hi > 1e300 {
            break;
        }
    }
    // Bisection to machine precision: ~110 halvings bottom out the
    // float lattice for any bracket.
    for _ in 0..110 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if t_cdf(mid, dof)? < pp {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x = 0.5 * (lo + hi);
    Ok(if neg { -x } else { x })
}
