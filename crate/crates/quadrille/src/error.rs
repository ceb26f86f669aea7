//! Crate-wide error type.
//!
//! Every fallible operation in the crate returns [`Result`]. The variants
//! draw a line between caller mistakes (bad configuration, shape mismatches,
//! protocol misuse) and environment problems (I/O, malformed files), because
//! the command-line layer maps them to different exit codes: infeasibility is
//! distinct from a parse failure.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid grid or run configuration (zero factors, product mismatch, ...).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Matrix or vector dimensions incompatible with the requested operation.
    /// The message names the offending axis or dimension.
    #[error("shape error: {0}")]
    Shape(String),

    /// A collective was invoked with inconsistent per-member data.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// An operation was called in the wrong order, e.g. backward before forward.
    #[error("state error: {0}")]
    State(String),

    /// No grid configuration satisfies the given constraints.
    #[error("no feasible configuration: {0}")]
    Infeasible(String),

    /// The cluster description lacks an intra-node bandwidth entry.
    #[error("missing intra-node bandwidth entry for (inner_product={inner_product}, group_size={group_size})")]
    MissingBandwidth {
        inner_product: usize,
        group_size: usize,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
