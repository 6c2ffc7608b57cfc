//! Bounded derivative-free quadratic-approximation trust-region search.
//!
//! Minimizes a smooth black-box function of 1–3 variables inside a box.
//! Each iteration builds a local quadratic model from finite differences
//! (central for gradient and curvature diagonal, one extra corner
//! evaluation per off-diagonal), solves a ridged Newton step clipped to
//! the box and trust region, and adapts the radius from the
//! actual-vs-predicted decrease ratio. A projected steepest-descent step
//! is the fallback when the model has no usable curvature.
//!
//! The function must be defined (finite or NaN) everywhere the stencil
//! can poke, including slightly outside the box; NaN evaluations are
//! treated as +∞ and simply rejected.

use nalgebra::{Cholesky, DMatrix, DVector};

/// Box constraints, one interval per coordinate.
#[derive(Debug, Clone)]
pub struct Bounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Bounds {
    /// Clamp a point into the box.
    pub fn project(&self, x: &mut [f64]) {
        for i in 0..x.len() {
            x[i] = x[i].clamp(self.lo[i], self.hi[i]);
        }
    }

    /// Whether any coordinate sits within `tol` of a bound.
    #[must_use]
    pub fn at_bound(&self, x: &[f64], tol: f64) -> bool {
        x.iter()
            .enumerate()
            .any(|(i, &v)| v - self.lo[i] < tol || self.hi[i] - v < tol)
    }
}

/// Termination settings.
#[derive(Debug, Clone)]
pub struct Options {
    /// Iteration cap.
    pub max_iter: usize,
    /// Accepted-step objective decrease below this (together with
    /// `x_tol`) declares convergence.
    pub f_tol: f64,
    /// Accepted-step length (∞-norm) below this (together with `f_tol`)
    /// declares convergence.
    pub x_tol: f64,
    /// Starting trust-region radius.
    pub initial_radius: f64,
}

impl Default for Options {
    fn default() -> Self {
        Self {
            max_iter: 500,
            f_tol: 1e-8,
            x_tol: 1e-6,
            initial_radius: 0.5,
        }
    }
}

/// Search result.
#[derive(Debug, Clone)]
pub struct Outcome {
    /// Best point found.
    pub x: Vec<f64>,
    /// Objective value there.
    pub value: f64,
    pub n_iter: usize,
    pub n_evals: usize,
    /// Whether a convergence test fired (vs. the iteration cap).
    pub converged: bool,
    /// Whether the final point touches the box (within 1e−6).
    pub at_bound: bool,
}

/// Minimize `f` over the box from `x0`.
pub fn minimize<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    bounds: &Bounds,
    opts: &Options,
) -> Outcome {
    let n = x0.len();
    assert!(n > 0 && bounds.lo.len() == n && bounds.hi.len() == n);
    let mut n_evals = 0usize;
    let mut eval = |x: &[f64], n_evals: &mut usize| -> f64 {
        *n_evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut x = x0.to_vec();
    bounds.project(&mut x);
    let mut fx = eval(&x, &mut n_evals);
    let mut delta = opts.initial_radius;
    let mut converged = false;
    let mut n_iter = 0;

    let mut g = DVector::zeros(n);
    let mut hess = DMatrix::zeros(n, n);
    let mut f_plus = vec![0.0; n];
    let mut last_step = f64::INFINITY;

    while n_iter < opts.max_iter {
        n_iter += 1;
        // The difference step tracks both the trust radius and the scale
        // of recent progress: a model built at a coarser scale than the
        // steps being taken picks up higher-order bias and can stall at a
        // spurious stationary point of the biased model.
        let h = (delta / 4.0).min(4.0 * last_step).clamp(1e-7, 1e-2);

        // Finite-difference quadratic model around x.
        let mut model_ok = true;
        for i in 0..n {
            let mut xp = x.clone();
            xp[i] += h;
            let fp = eval(&xp, &mut n_evals);
            let mut xm = x.clone();
            xm[i] -= h;
            let fm = eval(&xm, &mut n_evals);
            if !fp.is_finite() || !fm.is_finite() {
                model_ok = false;
                break;
            }
            g[i] = (fp - fm) / (2.0 * h);
            hess[(i, i)] = (fp - 2.0 * fx + fm) / (h * h);
            f_plus[i] = fp;
        }
        if model_ok {
            for i in 0..n {
                for j in (i + 1)..n {
                    let mut xpp = x.clone();
                    xpp[i] += h;
                    xpp[j] += h;
                    let fpp = eval(&xpp, &mut n_evals);
                    if !fpp.is_finite() {
                        model_ok = false;
                    }
                    let hij = (fpp - f_plus[i] - f_plus[j] + fx) / (h * h);
                    hess[(i, j)] = hij;
                    hess[(j, i)] = hij;
                }
            }
        }
        if !model_ok {
            delta *= 0.5;
            if delta < 1e-10 {
                break;
            }
            continue;
        }

        let p = tr_step(&g, &hess, &x, bounds, delta);
        let pred = -(g.dot(&p) + 0.5 * (&hess * &p).dot(&p));
        let step_inf = p.amax();
        if !(pred > 0.0) || step_inf == 0.0 {
            // Model sees no descent at this scale.
            delta *= 0.5;
            if delta < 1e-9 {
                converged = true;
                break;
            }
            continue;
        }

        let mut xn = x.clone();
        for i in 0..n {
            xn[i] += p[i];
        }
        bounds.project(&mut xn);
        let fn_ = eval(&xn, &mut n_evals);
        let act = fx - fn_;
        if act > 0.0 {
            let rho = act / pred;
            x = xn;
            fx = fn_;
            last_step = step_inf;
            // A tiny accepted step only signals a minimum when the trust
            // region did not clip it: a clipped step is small because the
            // radius is, not because the model's minimizer is near.
            if act < opts.f_tol && step_inf < opts.x_tol && step_inf < 0.99 * delta {
                converged = true;
                break;
            }
            if rho > 0.75 && step_inf > 0.8 * delta {
                delta = (2.0 * delta).min(16.0);
            } else if rho < 0.25 {
                delta = (0.5 * delta).max(1e-12);
            }
        } else {
            delta *= 0.5;
            if delta < 1e-9 {
                converged = true;
                break;
            }
        }
    }

    let at_bound = bounds.at_bound(&x, 1e-6);
    Outcome {
        x,
        value: fx,
        n_iter,
        n_evals,
        converged,
        at_bound,
    }
}

/// Solve the model subproblem: ridged Newton direction clipped to the
/// box-intersected trust region, with a projected-gradient fallback.
fn tr_step(
    g: &DVector<f64>,
    hess: &DMatrix<f64>,
    x: &[f64],
    bounds: &Bounds,
    delta: f64,
) -> DVector<f64> {
    let n = g.len();
    let clip = |p: &mut DVector<f64>| {
        for i in 0..n {
            let lo = (bounds.lo[i] - x[i]).max(-delta);
            let hi = (bounds.hi[i] - x[i]).min(delta);
            p[i] = p[i].clamp(lo.min(0.0), hi.max(0.0));
        }
    };
    let model = |p: &DVector<f64>| g.dot(p) + 0.5 * (hess * p).dot(p);

    let scale = hess.diagonal().amax().max(1.0);
    let mut lambda = 0.0;
    for _ in 0..40 {
        let mut hl = hess.clone();
        for i in 0..n {
            hl[(i, i)] += lambda;
        }
        if let Some(ch) = Cholesky::new(hl) {
            let mut p = ch.solve(g);
            p.neg_mut();
            clip(&mut p);
            if model(&p) < 0.0 {
                return p;
            }
        }
        lambda = if lambda == 0.0 { 1e-8 * scale } else { lambda * 4.0 };
    }

    // Projected steepest descent within box ∩ trust region.
    let mut d = -g.clone();
    for i in 0..n {
        if (x[i] - bounds.lo[i] < 1e-12 && d[i] < 0.0)
            || (bounds.hi[i] - x[i] < 1e-12 && d[i] > 0.0)
        {
            d[i] = 0.0;
        }
    }
    let dmax = d.amax();
    if dmax == 0.0 {
        return DVector::zeros(n);
    }
    // Largest multiplier keeping x + t·d inside the clipped region.
    let mut t_max = delta / dmax;
    for i in 0..n {
        if d[i] > 0.0 {
            t_max = t_max.min((bounds.hi[i] - x[i]) / d[i]);
        } else if d[i] < 0.0 {
            t_max = t_max.min((bounds.lo[i] - x[i]) / d[i]);
        }
    }
    t_max = t_max.max(0.0);
    let curv = (hess * &d).dot(&d);
    let slope = g.dot(&d); // negative
    let t = if curv > 0.0 {
        (-slope / curv).min(t_max)
    } else {
        t_max
    };
    d * t
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run<F: FnMut(&[f64]) -> f64>(f: F, x0: &[f64], lo: &[f64], hi: &[f64]) -> Outcome {
        minimize(
            f,
            x0,
            &Bounds {
                lo: lo.to_vec(),
                hi: hi.to_vec(),
            },
            &Options::default(),
        )
    }

    #[test]
    fn one_dim_quadratic() {
        let out = run(|x| (x[0] - 2.0).powi(2), &[-3.0], &[-5.0], &[5.0]);
        assert!(out.converged);
        assert!((out.x[0] - 2.0).abs() < 1e-6, "x = {}", out.x[0]);
        assert!(!out.at_bound);
    }

    #[test]
    fn boundary_minimum_is_flagged() {
        let out = run(|x| (x[0] + 2.0).powi(2), &[0.7], &[0.0], &[1.0]);
        assert!(out.converged);
        assert!(out.x[0].abs() < 1e-8, "x = {}", out.x[0]);
        assert!(out.at_bound);
    }

    #[test]
    fn rosenbrock_in_box() {
        let out = run(
            |x| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
            &[-1.2, 1.0],
            &[-2.0, -2.0],
            &[2.0, 2.0],
        );
        assert!(out.converged, "iterations {}", out.n_iter);
        assert!(
            (out.x[0] - 1.0).abs() < 1e-4 && (out.x[1] - 1.0).abs() < 1e-4,
            "x = {:?}",
            out.x
        );
    }

    #[test]
    fn three_dim_ill_conditioned_quadratic() {
        let out = run(
            |x| {
                1e3 * (x[0] - 0.3).powi(2)
                    + (x[1] + 0.4).powi(2)
                    + 1e-2 * (x[2] - 1.5).powi(2)
                    + 0.3 * (x[0] - 0.3) * (x[1] + 0.4)
            },
            &[0.0, 0.0, 0.0],
            &[-3.0, -3.0, -3.0],
            &[3.0, 3.0, 3.0],
        );
        assert!(out.converged);
        assert!((out.x[0] - 0.3).abs() < 1e-4, "x = {:?}", out.x);
        assert!((out.x[1] + 0.4).abs() < 1e-4, "x = {:?}", out.x);
        assert!((out.x[2] - 1.5).abs() < 1e-3, "x = {:?}", out.x);
    }

    #[test]
    fn nan_regions_are_avoided() {
        // NaN outside the unit disc; minimum at the origin-side edge.
        let out = run(
            |x| {
                let r2 = x[0] * x[0] + x[1] * x[1];
                if r2 > 1.0 {
                    f64::NAN
                } else {
                    (x[0] - 0.2).powi(2) + x[1] * x[1]
                }
            },
            &[0.0, 0.0],
            &[-0.9, -0.9],
            &[0.9, 0.9],
        );
        assert!((out.x[0] - 0.2).abs() < 1e-5);
    }

    #[test]
    fn respects_iteration_cap() {
        let opts = Options {
            max_iter: 3,
            ..Options::default()
        };
        let out = minimize(
            |x| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
            &[-1.2, 1.0],
            &Bounds {
                lo: vec![-2.0, -2.0],
                hi: vec![2.0, 2.0],
            },
            &opts,
        );
        assert_eq!(out.n_iter, 3);
        assert!(!out.converged);
    }
}

