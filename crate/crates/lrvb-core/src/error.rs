//! Crate-wide error type.

/// Errors raised by factor maps, the optimizer, the linear-response engine,
/// and the oracle suite.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    /// A parameter left the admissible natural/mean domain of its family.
    #[error("domain error: {0}")]
    Domain(String),

    /// An iterative numeric routine (root find, inner Newton) did not converge.
    #[error("no convergence: {0}")]
    NoConvergence(String),

    /// Coordinate ascent hit its sweep budget before reaching tolerance.
    #[error("max sweeps exceeded after {0} sweeps (residual {1:.3e})")]
    MaxSweepsExceeded(usize, f64),

    /// Block layout and operand shapes disagree.
    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),

    /// Vector/matrix dimensions disagree.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// `(I - VH)` (or an inner z-block) is singular or failed its residual check.
    #[error("singular system: {0}")]
    SingularSystem(String),

    /// A numeric consistency check failed (asymmetry, non-finite values, ...).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Invalid run configuration.
    #[error("config error: {0}")]
    Config(String),

    /// A chain is too short to summarize.
    #[error("too few draws: {0} (need at least {1})")]
    TooFewDraws(usize, usize),

    /// Tensor-grid quadrature only supports low dimensions.
    #[error("dimension too large for quadrature: {0} (max {1})")]
    DimensionTooLarge(usize, usize),

    /// Component relabeling detected in a mixture chain.
    #[error("label switching detected in chain: {0}")]
    LabelSwitch(String),

    /// An effective-sample-size gate failed.
    #[error("effective sample size too low: {0}")]
    EssTooLow(String),
}

pub type Result<T> = std::result::Result<T, Error>;
