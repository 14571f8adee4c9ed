use thiserror::Error;

/// Errors surfaced by the numerical pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite input in {context}")]
    NonFinite { context: &'static str },

    #[error("|u| = {norm} is outside the open unit ball; the inverse velocity map is undefined")]
    OutsideUnitBall { norm: f64 },

    #[error("unknown field preset `{0}`")]
    UnknownPreset(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(
        "quadrature did not converge within budget (last = {last:.6e}, previous = {previous:.6e}, \
         levels = {levels})"
    )]
    QuadratureNoConvergence {
        last: f64,
        previous: f64,
        levels: usize,
    },

    #[error("step size underflow at s = {s} (h = {h:.3e}) while integrating a characteristic")]
    StepSizeUnderflow { s: f64, h: f64 },

    #[error("fixed-point iteration is not contracting: last difference ratios {ratios:?}")]
    NonContraction { ratios: Vec<f64> },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("resolution {requested} exceeds the configured budget {budget}")]
    ResolutionBudget { requested: usize, budget: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed snapshot: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
