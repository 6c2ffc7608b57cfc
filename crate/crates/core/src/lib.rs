//! Simulation and analysis toolkit for cross-sectional stepped-wedge
//! cluster-randomized trials.
//!
//! The crate covers the full loop of a methods study:
//!
//! - [`design`]: balanced stepped-wedge layouts and fixed-effects design matrices.
//! - [`covariance`]: random-effects structures (exchangeable, nested
//!   exchangeable, discrete-time decay, each optionally with a random
//!   intervention effect), marginal covariance assembly, and conversions
//!   between variance components and ICC/CAC parameterizations.
//! - [`datagen`]: reproducible outcome generation under those structures.
//! - [`lmm`]: profiled-REML fitting of linear mixed models through the
//!   low-rank (Woodbury) representation of the per-cluster covariance.
//! - [`rve`]: the CR0/CR1/CR1P/CR1S/CR2/CR3 family of cluster-robust
//!   sandwich variance estimators.
//! - [`inference`]: Wald t tests with fixed (I−2) or Satterthwaite degrees
//!   of freedom; [`dist`] carries the Student-t CDF/quantile they use.
//! - [`permutation`]: randomization tests that reshuffle treatment
//!   sequences across clusters.
//! - [`sim`]: the Monte Carlo harness (scenario grids, performance
//!   measures, CSV output) with parallel and sequential replicate engines.
//!
//! All randomness flows from explicit seeds; replicates use independent
//! counter-derived substreams so results are identical regardless of
//! thread count or evaluation order.

pub mod covariance;
pub mod datagen;
pub mod design;
pub mod dist;
pub mod error;
pub mod inference;
pub mod lmm;
pub mod optim;
pub mod permutation;
pub mod rve;
pub mod sim;

pub use covariance::{IccPanel, IccSpec, Structure, VarianceComponents};
pub use datagen::{Dataset, GenSpec};
pub use design::TrialDesign;
pub use error::Error;
pub use lmm::FitResult;
pub use rve::{Estimator, RobustVcov};
