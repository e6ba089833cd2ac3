use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (bad ranges, K > M, wrong shapes in a config file).
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed or inconsistent data (labels out of range, bad files).
    #[error("data error: {0}")]
    Data(String),

    /// A caller broke an operation's precondition.
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// No CTC alignment of the transcript fits in the available frames.
    /// The loss is infinite; this is reported separately from other data errors.
    #[error("infeasible CTC alignment: {frames} frames cannot emit {labels} labels ({required} frames needed)")]
    InfeasibleAlignment {
        frames: usize,
        labels: usize,
        required: usize,
    },

    #[error("undefined statistic: {0}")]
    UndefinedStatistic(&'static str),

    /// Weight vectors of different lengths met during aggregation.
    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("round {round}: no client survived filtering")]
    EmptyRound { round: usize },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),
}
