use std::path::PathBuf;

use thiserror::Error;

use crate::model::Checkpoint;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate vector: {context} has norm <= 1e-12")]
    DegenerateVector { context: String },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("non-finite evaluation at coordinate {coordinate}")]
    NonFiniteEvaluation { coordinate: usize },

    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("speaker {0} has no utterances in the batch")]
    EmptySpeaker(usize),

    #[error("batch has {0} distinct speakers, need at least 2")]
    InsufficientSpeakers(usize),

    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),

    #[error("invalid batch plan: {0}")]
    InvalidPlan(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("trial list needs at least one target and one impostor (targets={targets}, impostors={impostors})")]
    DegenerateTrials { targets: usize, impostors: usize },

    #[error("config inconsistency in `{field}`: {reason}")]
    ConfigInconsistency { field: String, reason: String },

    #[error("non-finite loss at step {step}; last good state is from step {}", last_good.step)]
    NonFiniteLoss {
        step: usize,
        last_good: Box<Checkpoint>,
    },

    #[error("parse error in {source_name}: {message}")]
    Parse {
        source_name: String,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::ShapeMismatch {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn degenerate(context: impl Into<String>) -> Self {
        Error::DegenerateVector {
            context: context.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::ConfigInconsistency {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn parse(source_name: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
