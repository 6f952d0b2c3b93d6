//! Crate-wide error type.

use thiserror::Error;

/// Errors raised by ingestion, model construction, inference and simulation.
#[derive(Debug, Error)]
pub enum Error {
    /// A CSV file violates the expected schema.
    #[error("ingest error at {path}:{line}: {reason}")]
    Ingest {
        path: String,
        line: usize,
        reason: String,
    },

    /// A domain-type invariant is violated (duplicate sites, bad shapes, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// Coordinate projection is not defined for the requested inputs.
    #[error("projection error: {0}")]
    Projection(String),

    /// An argument lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The requested bivariate density does not exist (complete dependence).
    #[error("degenerate pair: {0}")]
    Degenerate(String),

    /// A numerical routine produced non-finite or unusable values.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// A parameter violates its box bound.
    #[error("parameter '{name}' = {value} outside [{lower}, {upper}]")]
    Bounds {
        name: String,
        value: f64,
        lower: f64,
        upper: f64,
    },

    /// The objective is not finite at an optimization stage's initial point.
    #[error("initialization error in stage '{stage}': {reason}")]
    Initialization { stage: String, reason: String },

    /// The TIC Hessian is numerically singular.
    #[error("TIC error: Hessian numerically singular (condition number {condition:.3e})")]
    Tic { condition: f64 },

    /// Too many bootstrap replicates failed to converge.
    #[error("bootstrap error: {0}")]
    Bootstrap(String),

    /// Site-wise GEV fitting failed.
    #[error("margin fit error at site '{site}': {reason}")]
    MarginFit { site: String, reason: String },

    /// Not enough complete observations for an estimator.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Exact simulation cannot proceed.
    #[error("simulation error: {0}")]
    Simulation(String),

    /// The request would exceed a hard resource cap.
    #[error("resource error: {0}")]
    Resource(String),
}

pub type Result<T> = std::result::Result<T, Error>;
