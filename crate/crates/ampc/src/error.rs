//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A state became non-finite or left the declared physical box while
    /// integrating; the step index identifies where.
    #[error("integration diverged at step {step}: {detail}")]
    IntegrationDiverged { step: usize, detail: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// Requested order exceeds what the data supports.
    #[error("rank deficiency: requested order {requested} exceeds numerical rank {rank}")]
    RankDeficient { requested: usize, rank: usize },

    /// The identification data does not excite the system enough for the
    /// projections to be meaningful.
    #[error("persistence of excitation failure: {0}")]
    PersistenceOfExcitation(String),

    /// A channel with max == min cannot be scaled to [-1, 1].
    #[error("degenerate scaling on channel {channel}: min == max == {value}")]
    ScalingDegenerate { channel: usize, value: f64 },

    #[error("optimization infeasible: {0}")]
    Infeasible(String),

    #[error("training diverged (non-finite loss at epoch {epoch}); try a smaller learning rate")]
    TrainingDiverged { epoch: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown channel '{name}'; available: {available}")]
    UnknownChannel { name: String, available: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code per the CLI contract: 2 for config problems,
    /// 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::UnknownChannel { .. } | Error::Io(_) => 2,
            _ => 3,
        }
    }
}
