use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid tree: {0}")]
    Tree(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("time order violated: t = {t} must not exceed s = {s}")]
    TimeOrder { t: usize, s: usize },

    #[error("time {time} is outside 0..={horizon}")]
    TimeRange { time: usize, horizon: usize },

    #[error("linear program: {0}")]
    Lp(#[from] crate::lp::LpError),

    #[error("LP ended with status {status:?} while computing {context}")]
    LpStatus {
        status: crate::lp::LpStatus,
        context: String,
    },

    #[error("solvency model violates its standing assumptions: {0}")]
    Assumption(String),

    #[error("market admits arbitrage: {0}")]
    Arbitrage(String),

    #[error("invalid risk specification: {0}")]
    Spec(String),

    #[error("no price systems supplied")]
    EmptySamples,

    #[error("unknown node id `{0}`")]
    UnknownNode(String),

    #[error("{0}")]
    Unsupported(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
