//! Shared domain types: tables and values, input loading, deterministic
//! profiling, plans, pipeline state, and the case folder.

pub mod case;
pub mod io;
pub mod plan;
pub mod profile;
pub mod state;
pub mod table;
pub mod value;

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error at {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("checkpoint id already exists: {0}")]
    DuplicateCheckpoint(String),
    #[error("checkpoint not found: {0}")]
    MissingCheckpoint(String),
    #[error("case folder is closed")]
    CaseClosed,
    #[error("event timestamp {offered} precedes stream head {last}")]
    NonMonotonicEvent { last: i64, offered: i64 },
    #[error("corrupt case data at {path}: {detail}")]
    Corrupt { path: String, detail: String },
}

impl ModelError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        ModelError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
