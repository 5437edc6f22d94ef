//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("no feasible power allocation: every sub-channel gain is zero")]
    NoFeasibleAllocation,

    #[error("infeasible bit load: cannot split {requested} bits over {subchannels} sub-channels with sizes {{0,1,2,4,6}}")]
    InfeasibleBitLoad { requested: u32, subchannels: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("training diverged: non-finite loss {loss} at round {round}, channel {channel}")]
    Diverged { round: u32, channel: u32, loss: f64 },

    #[error("refusing to overwrite existing file {0} (pass --force to allow)")]
    WouldOverwrite(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
