use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model `{model}`: {reason}")]
    InvalidSpec { model: String, reason: String },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("{test}: {reason}")]
    InvalidSample { test: &'static str, reason: String },

    #[error("empty p-value list")]
    EmptyPValues,

    #[error("covariate has no split points")]
    NoSplitPoints,

    #[error("cannot build {k} environments: {reason}")]
    InvalidPartition { k: usize, reason: String },

    #[error("categorical level {0} was not seen when the tree was fitted")]
    UnknownLevel(f64),

    #[error("underdetermined system: {rows} rows for {params} parameters")]
    Underdetermined { rows: usize, params: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("graphs have different node sets")]
    NodeMismatch,

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: u64,
        reason: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
