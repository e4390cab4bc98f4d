use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown environment `{0}` (expected markov_rps, grid_pass or push_duel)")]
    UnknownEnv(String),

    #[error("parameter `{name}` = {value} is out of range ({range})")]
    ParamOutOfRange {
        name: &'static str,
        value: String,
        range: &'static str,
    },

    #[error("invalid game: {0}")]
    InvalidGame(String),

    #[error("observation has {got} coordinates, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("incompatible action spaces ({0} vs {1} actions)")]
    IncompatibleActions(usize, usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("value iteration did not converge in {iterations} sweeps (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("empty batch: {0}")]
    EmptyBatch(&'static str),

    #[error("stale batch: collected under a different parameter snapshot ({0})")]
    StaleBatch(&'static str),

    #[error("rejection sampling stalled after {0} attempts")]
    SamplingStalled(usize),

    #[error("unsupported schema_version {found} (this build reads version {expected})")]
    SchemaVersion { found: u64, expected: u32 },

    #[error("corrupt file {path}: {msg}")]
    Corrupt { path: PathBuf, msg: String },

    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(PathBuf),

    #[error("{path}: line {line}: {msg}")]
    MalformedCsv {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors caused by bad user input rather than a failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::UnknownEnv(_)
                | Error::ParamOutOfRange { .. }
                | Error::InvalidArgument(_)
                | Error::IncompatibleActions(..)
                | Error::DimensionMismatch { .. }
                | Error::SchemaVersion { .. }
                | Error::Corrupt { .. }
                | Error::MissingCheckpoint(_)
                | Error::MalformedCsv { .. }
                | Error::Config(_)
        )
    }
}
