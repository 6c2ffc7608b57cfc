//! Permutation test for the treatment effect.
//!
//! The randomization distribution is generated by re-randomizing the
//! cluster → sequence assignment: the balanced multiset of sequence
//! labels is shuffled across clusters, which permutes whole treatment
//! sequences and preserves the stepped-wedge staircase. The test
//! statistic is the REML treatment-effect estimate under the chosen
//! working structure, refitted on every permuted assignment (the outcome
//! data never move, so the collapsed per-cluster statistics are reused).
//!
//! Decision rule: the observed assignment is included among the draws;
//! the null is rejected when the observed statistic falls strictly
//! outside the closed central percentile interval (ties do not reject).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::Serialize;

use crate::covariance::Structure;
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::lmm::{self, CollapsedData, FitOptions};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Settings for a permutation test.
#[derive(Debug, Clone)]
pub struct PermutationOptions {
    /// Number of permuted assignments drawn (the observed assignment is
    /// added on top when forming percentiles).
    pub n_permutations: usize,
    /// Two-sided level; percentile bounds sit at `α/2` and `1 − α/2`.
    pub alpha: f64,
    pub seed: u64,
    pub fit: FitOptions,
}

impl Default for PermutationOptions {
    fn default() -> Self {
        Self {
            n_permutations: 1000,
            alpha: 0.05,
            seed: 0,
            fit: FitOptions::default(),
        }
    }
}

/// Outcome of a permutation test.
#[derive(Debug, Clone, Serialize)]
pub struct PermutationResult {
    pub observed_stat: f64,
    /// Permutations requested.
    pub n_permutations: usize,
    /// Permutation refits that converged (the percentile sample size is
    /// this plus one for the observed assignment).
    pub n_converged: usize,
    /// Permutation refits dropped for non-convergence.
    pub n_failed: usize,
    /// Central-interval percentile bounds of the permutation
    /// distribution (observed included).
    pub lower_bound: f64,
    pub upper_bound: f64,
    /// Observed statistic strictly outside the closed interval.
    pub reject: bool,
    /// Two-sided rank p-value `#{|θ*| ≥ |θ̂|} / (B + 1)`.
    pub p_value: f64,
    /// The converged permutation statistics (observed not included).
    pub permutation_stats: Vec<f64>,
}

/// Linear-interpolation percentile (the common type-7 definition) of a
/// sorted sample.
fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

/// Run the permutation test on a dataset.
pub fn permutation_test(
    data: &Dataset,
    structure: Structure,
    options: &PermutationOptions,
) -> Result<PermutationResult> {
    permutation_test_collapsed(&CollapsedData::from_dataset(data), structure, options)
}

/// Run the permutation test on pre-collapsed statistics.
pub fn permutation_test_collapsed(
    data: &CollapsedData,
    structure: Structure,
    options: &PermutationOptions,
) -> Result<PermutationResult> {
    if options.n_permutations < 100 {
        return Err(Error::InvalidSpec(format!(
            "need at least 100 permutations, got {}",
            options.n_permutations
        )));
    }
    if !(options.alpha > 0.0 && options.alpha < 1.0) {
        return Err(Error::InvalidSpec(format!(
            "alpha {} outside (0,1)",
            options.alpha
        )));
    }
    let observed_fit = lmm::reml_fit_collapsed(data, structure, &options.fit)?;
    let observed = observed_fit.theta_hat();
    // Permuted refits start from the observed optimum: the variance
    // geometry changes little under relabeling, which makes warm starts
    // highly effective.
    let warm = lmm::fitted_phi(&observed_fit);
    let refit_options = FitOptions {
        warm_start: Some(warm),
        ..options.fit.clone()
    };

    // Draw all assignments up front so the result is identical however
    // the refits are scheduled.
    let base: Vec<usize> = data.clusters.iter().map(|c| c.seq).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(options.seed);
    let assignments: Vec<Vec<usize>> = (0..options.n_permutations)
        .map(|_| {
            let mut labels = base.clone();
            labels.shuffle(&mut rng);
            labels
        })
        .collect();

    let refit = |labels: &Vec<usize>| -> Option<f64> {
        let permuted = data.reassigned(labels).ok()?;
        lmm::reml_fit_collapsed(&permuted, structure, &refit_options)
            .ok()
            .map(|f| f.theta_hat())
    };
    #[cfg(feature = "parallel")]
    let outcomes: Vec<Option<f64>> = assignments.par_iter().map(refit).collect();
    #[cfg(not(feature = "parallel"))]
    let outcomes: Vec<Option<f64>> = assignments.iter().map(refit).collect();

    let stats: Vec<f64> = outcomes.iter().filter_map(|o| *o).collect();
    let n_failed = options.n_permutations - stats.len();
    if 5 * n_failed > options.n_permutations {
        return Err(Error::TooFewConverged {
            failed: n_failed,
            total: options.n_permutations,
        });
    }

    let mut pooled = stats.clone();
    pooled.push(observed);
    pooled.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lower = percentile_sorted(&pooled, options.alpha / 2.0);
    let upper = percentile_sorted(&pooled, 1.0 - options.alpha / 2.0);
    let reject = observed < lower || observed > upper;
    let exceed = 1 + stats.iter().filter(|s| s.abs() >= observed.abs()).count();
    let p_value = exceed as f64 / (stats.len() + 1) as f64;

    Ok(PermutationResult {
        observed_stat: observed,
        n_permutations: options.n_permutations,
        n_converged: stats.len(),
        n_failed,
        lower_bound: lower,
        upper_bound: upper,
        reject,
        p_value,
        permutation_stats: stats,
    })
}
