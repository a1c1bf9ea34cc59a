//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the pose-estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A pose, geometry or layout parameter violated its invariant.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Input points were coincident, collinear where they must not be,
    /// or otherwise insufficient to determine a result.
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// An unknown phantom preset name was requested.
    #[error("unknown phantom preset: {0}")]
    UnknownPreset(String),

    /// A point at or behind the x-ray source cannot be projected.
    #[error("point at or behind the source (depth {0} mm)")]
    BehindSource(f64),

    /// Tensor or weight shapes do not match the network configuration.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    /// The rejection-sampling retry budget was exhausted.
    #[error("generation retry budget exhausted for record {record}: {detail}")]
    RetryBudgetExhausted { record: usize, detail: String },

    /// Iterative estimation left the image; carries the per-iteration trace.
    #[error("pose estimate left the image at iteration {iteration}")]
    EstimateOutOfBounds {
        iteration: usize,
        trace: Vec<crate::geometry::Pose>,
    },

    /// Optimization budget smaller than one population.
    #[error("optimization budget {budget} is smaller than the population size {lambda}")]
    BudgetTooSmall { budget: usize, lambda: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    /// A file had an unexpected header, magic number or version.
    #[error("format error in {path}: {detail}")]
    Format { path: String, detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;
