//! Error types shared across the crate.

use thiserror::Error;

/// Errors from network construction and lookups.
#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("intersection ({row}, {col}) not found")]
    UnknownIntersection { row: u16, col: u16 },
}

/// Errors from simulator driving contracts.
#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("set_phase called outside a decision instant at ({row}, {col})")]
    NotAtDecisionInstant { row: u16, col: u16 },
    #[error("intersection ({row}, {col}) not found")]
    UnknownIntersection { row: u16, col: u16 },
    #[error("invalid flow spec: {0}")]
    InvalidSpec(String),
}

/// Errors from the text-policy wire protocol.
#[derive(Debug, Error)]
pub enum WireError {
    #[error("wire i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("request {id} timed out after {timeout_s} s")]
    Timeout { id: String, timeout_s: f64 },
    #[error("wire connection closed")]
    Closed,
}

/// Errors from the optimization stack.
#[derive(Debug, Error, PartialEq)]
pub enum RlError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("training diverged at iteration {iteration}: {detail}")]
    Diverged { iteration: usize, detail: String },
}

/// Errors from incident fixture files.
#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("fixture i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {detail}")]
    Parse { line: usize, detail: String },
}
