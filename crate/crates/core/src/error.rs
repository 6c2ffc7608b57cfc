//! Crate-wide error type.
//!
//! One enum covers every module so results compose without conversion
//! boilerplate; variants carry enough context to diagnose a failure from a
//! log line alone.

use thiserror::Error;

/// Errors produced by design construction, component conversion, fitting,
/// variance estimation, testing, and the simulation harness.
#[derive(Debug, Error)]
pub enum Error {
    /// A dimension argument was below its minimum (e.g. zero clusters).
    #[error("invalid dimension: {what} = {value}, minimum {min}")]
    InvalidDimension {
        what: &'static str,
        value: usize,
        min: usize,
    },

    /// Cluster count is not a multiple of the sequence count.
    #[error("unbalanced design: {n_clusters} clusters cannot split evenly over {n_sequences} sequences")]
    UnbalancedDesign {
        n_clusters: usize,
        n_sequences: usize,
    },

    /// An index argument was out of range.
    #[error("index out of range: {what} = {value}, limit {limit}")]
    IndexOutOfRange {
        what: &'static str,
        value: usize,
        limit: usize,
    },

    /// A parameter specification failed validation.
    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    /// The requested ICC pair cannot be produced by any nonnegative
    /// variance components (intervention ICC below control ICC).
    #[error("infeasible ICC spec: rho1 = {rho1} < rho0 = {rho0} forces a negative intervention variance")]
    InfeasibleIcc { rho0: f64, rho1: f64 },

    /// The REML optimizer failed to converge after all restarts.
    #[error("REML fit did not converge after {restarts} starts ({detail})")]
    NonConvergence { restarts: usize, detail: String },

    /// An operation that requires a converged fit received a failed one.
    #[error("fit has not converged; downstream quantity undefined")]
    NotConverged,

    /// X'V⁻¹X is rank-deficient.
    #[error("singular design: X'V⁻¹X is not positive definite")]
    SingularDesign,

    /// CR1P correction factor I/(I−P) is undefined or negative.
    #[error("CR1P correction undefined: I = {n_clusters} <= P = {n_params}")]
    UndefinedCorrection { n_clusters: usize, n_params: usize },

    /// A cluster leverage adjustment (I−H) could not be inverted.
    #[error("singular leverage adjustment for cluster {cluster}")]
    SingularLeverage { cluster: usize },

    /// The CR2 square-root adjustment met an (essentially) zero eigenvalue.
    #[error("degenerate CR2 adjustment for cluster {cluster}: eigenvalue {eigenvalue:.3e} below floor")]
    DegenerateAdjustment { cluster: usize, eigenvalue: f64 },

    /// Satterthwaite moment matching produced a nonpositive trace.
    #[error("nonpositive Satterthwaite degrees of freedom (tr = {trace:.3e})")]
    NonPositiveDof { trace: f64 },

    /// Degrees of freedom for a t reference were not positive.
    #[error("invalid degrees of freedom: {0}")]
    InvalidDof(f64),

    /// Too few values to compute a dispersion measure.
    #[error("degenerate sample: {n} converged replicates, need at least {min}")]
    DegenerateSample { n: usize, min: usize },

    /// Too many permutation refits failed for the test to be trustworthy.
    #[error("too few converged permutation refits: {failed}/{total} failed")]
    TooFewConverged { failed: usize, total: usize },

    /// Dataset rows do not form a balanced stepped-wedge layout.
    #[error("malformed dataset: {0}")]
    MalformedDataset(String),

    /// Configuration file failed validation.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// CSV serialization/deserialization failure.
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    /// Underlying IO failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
