use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("matrix dimensions must be positive, got {rows}x{cols}")]
    EmptyMatrix { rows: usize, cols: usize },

    #[error("ragged matrix: row {row} has {found} entries, expected {expected}")]
    RaggedRows { row: usize, found: usize, expected: usize },

    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    /// `index` is zero-based; `pivot` is the failing pivot relative to the
    /// largest diagonal entry.
    #[error("matrix is not positive definite: pivot {} of {dim} is {pivot:e}", index + 1)]
    NotPositiveDefinite { index: usize, dim: usize, pivot: f64 },

    #[error("{what} is not positive semidefinite (minimum eigenvalue bound {bound:e})")]
    NotPositiveSemidefinite { what: &'static str, bound: f64 },

    #[error("channel count {0} is outside the supported range 1..=30")]
    ChannelCount(usize),

    #[error(
        "arrival probability of channel {channel} is {value}; it must lie in (0, 1]. \
         A channel that never delivers should be removed (drop column {channel} of B)"
    )]
    ArrivalProbability { channel: usize, value: f64 },

    #[error("subset mask {mask:#b} does not fit {m} channels")]
    MaskOutOfRange { mask: u64, m: usize },

    #[error(
        "masked curvature sum_I eta_I^2 N_I (U + B'XB) N_I is singular{}: \
         choose U positive definite or start from a positive definite S0, \
         and keep every arrival probability above zero",
        match iteration { Some(k) => format!(" at iteration {k}"), None => String::new() }
    )]
    SingularCurvature { iteration: Option<usize> },

    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),

    #[error("{0}")]
    SizeGuard(String),

    #[error(
        "power iteration did not converge after {iterations} iterations \
         (estimate {estimate:e}, residual {residual:e})"
    )]
    PowerIteration {
        estimate: f64,
        residual: f64,
        iterations: usize,
    },

    #[error("closed loop is not mean-square stable: second moment is unbounded")]
    Unbounded,

    #[error("fixed-point iteration undecided after {iterations} iterations (residual {residual:e})")]
    Inconclusive { iterations: usize, residual: f64 },

    #[error("cost weight W is singular; enable regularization (W + eps*I) to build the LMI")]
    SingularCostWeight,

    #[error("MARE solution did not converge ({0}); no certificate can be built from it")]
    NotConverged(String),

    #[error("square root iteration did not converge (residual {residual:e})")]
    SquareRoot { residual: f64 },

    #[error("no crossing in range: both ends are {0}")]
    NoCrossing(String),
}

pub type Result<T> = std::result::Result<T, Error>;
