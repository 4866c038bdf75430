use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("jet order {0} exceeds the configured ceiling (8, 8, 2)")]
    OrderCeiling(String),

    #[error("jet operands disagree: {0}")]
    Mismatch(String),

    #[error("index ({a}, {b}, {c}) outside jet order ({oz}, {ozb}, {ot})")]
    IndexOutOfRange {
        a: usize,
        b: usize,
        c: usize,
        oz: usize,
        ozb: usize,
        ot: usize,
    },

    #[error("jet order exhausted while differentiating: {0}")]
    OrderExhausted(String),

    #[error("singular composition: {0}")]
    SingularComposition(String),

    #[error("point outside chart domain: {0}")]
    ChartDomain(String),

    #[error("degenerate metric: {0}")]
    DegenerateMetric(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("operation not supported for this target: {0}")]
    UnsupportedTarget(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("setup failed: {0}")]
    Setup(String),

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("i/o failure: {0}")]
    Io(String),
}
