use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the explanation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },

    #[error("{path}: empty file")]
    EmptyFile { path: PathBuf },

    #[error("missing column `{column}`")]
    MissingColumn { column: String },

    #[error("unexpected column `{column}` not declared in schema")]
    UnexpectedColumn { column: String },

    #[error("row {row}, column `{column}`: cannot parse `{value}` as {kind}")]
    Parse {
        row: usize,
        column: String,
        value: String,
        kind: &'static str,
    },

    #[error("non-finite value in column `{column}` at row {row}")]
    NonFinite { row: usize, column: String },

    #[error("invalid grouping rule: {0}")]
    Grouping(String),

    #[error("meta-feature undefined: `{column}` is zero at row {row}")]
    ZeroDenominator { row: usize, column: String },

    #[error("groups {groups:?} are present in one role but empty in the other")]
    EmptyGroups { groups: Vec<usize> },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("sinkhorn did not converge in {iters} iterations (marginal residual {residual:.3e})")]
    NotConverged { iters: usize, residual: f64 },

    #[error("degenerate denominator: source and target are indistinguishable (W2^2 = {0:.3e})")]
    DegenerateDenominator(f64),

    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    /// Gradient descent left the region where the loss can be evaluated,
    /// almost always because the learning rate is too large.
    #[error("optimization diverged at iteration {iteration} ({cause}); try a smaller learning rate")]
    Diverged { iteration: usize, cause: Box<Error> },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
