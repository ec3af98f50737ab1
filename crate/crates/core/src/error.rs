//! Error type shared by every solver module.

use thiserror::Error;

/// Errors raised by grid construction, solvers and the experiment runner.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A grid, solver or experiment parameter is out of range.
    #[error("configuration error: {0}")]
    Config(String),

    /// Two grid objects that must live on the same grid do not.
    #[error("grid mismatch: expected {expected} values, got {got}")]
    GridMismatch { expected: usize, got: usize },

    /// A density or grid function is not admissible (negative, NaN, zero mass, ...).
    #[error("invalid density: {0}")]
    InvalidDensity(String),

    /// A density value left the open domain of the internal energy.
    #[error("value {value} at node {node} is outside the domain ({lower}, {upper})")]
    Domain {
        node: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },

    /// An iterative solver hit its iteration cap.
    #[error("{solver} did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    /// The scalar root solve of the marginal update failed.
    #[error("root solve failed at node {node}: bracket [{lo:e}, {hi:e}] after {doublings} doublings")]
    RootBracket {
        node: usize,
        lo: f64,
        hi: f64,
        doublings: usize,
    },

    /// Time step larger than the explicit stability bound.
    #[error("time step {dt:e} violates the stability bound {bound:e}")]
    Cfl { dt: f64, bound: f64 },

    /// Explicit solver produced NaN, negative mass or an unusable time step.
    #[error("PDE solver blow-up at t = {time}: {reason}")]
    BlowUp { time: f64, reason: String },

    /// Input outside the admissible range of a metric or oracle.
    #[error("{0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;
