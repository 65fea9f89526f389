//! Reduced-order modeling toolkit for parameterized Burgers-type PDEs.
//!
//! The pipeline: implicit full-order solves produce snapshot trajectories;
//! snapshots feed either a linear POD basis or a shallow masked autoencoder;
//! reduced trajectories are computed with Galerkin or LSPG solvers on the
//! chosen representation, optionally hyper-reduced by gappy POD over a sampled
//! index set; error metrics, a-posteriori bounds, and flop cost models close
//! the loop.

pub mod analysis;
pub mod autoencoder;
pub mod burgers;
pub mod harness;
pub mod hyper;
pub mod io;
pub mod linalg;
pub mod par;
pub mod pod;
pub mod rom;
pub mod subnet;
#[doc(hidden)]
pub mod testutil;
pub mod timestep;

/// Unified error type for every module in this crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shape or index mismatch between operands.
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    /// An argument violates a documented precondition.
    #[error("invalid argument: {0}")]
    Invalid(String),
    /// A numerical guard tripped (singularity, ill-conditioning, non-finite values).
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// An iterative solver exhausted its iteration budget.
    #[error("convergence failure: {0}")]
    Convergence(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    /// Malformed or inconsistent on-disk data.
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
