//! Error type shared by all modules in this crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CwError>;

#[derive(Debug, Error)]
pub enum CwError {
    /// Tensor extents incompatible with the requested operation.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An API contract was violated (e.g. backward on a non-scalar).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Batch too small or otherwise unusable for statistics.
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    /// Covariance or another matrix is not usable (non-PD, zero trace, ...).
    #[error("conditioning failure: {0}")]
    Conditioning(String),

    /// Invalid configuration (duplicate axes, infeasible data spec, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Problem with supplied data (empty concept batch, zero-norm latent, ...).
    #[error("data error: {0}")]
    Data(String),

    /// A label is outside its admissible range.
    #[error("label error: {0}")]
    Label(String),

    /// An axis or sample index is out of range.
    #[error("index error: {0}")]
    Index(String),

    /// Cayley update could not be taken at the requested step size.
    #[error("step-size error: {0}")]
    StepSize(String),

    /// Non-finite values where finite ones are required.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Training diverged (non-finite loss or gradients).
    #[error("divergence: {0}")]
    Divergence(String),

    /// Model structure does not match the request (e.g. no BN at index).
    #[error("structure error: {0}")]
    Structure(String),

    /// A metric is undefined for the given input (single-class AUC, ...).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Error raised inside a training step, annotated with the step index.
    #[error("step {step}: {source}")]
    TrainStep {
        step: usize,
        #[source]
        source: Box<CwError>,
    },
}

impl CwError {
    pub(crate) fn at_step(self, step: usize) -> CwError {
        CwError::TrainStep {
            step,
            source: Box::new(self),
        }
    }
}
