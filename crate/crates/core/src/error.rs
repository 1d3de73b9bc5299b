use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("no person detected in keypoint document")]
    EmptyDetection,

    #[error("joint {joint} is missing in every frame")]
    UnreconstructableJoint { joint: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("degenerate dataset: {0}")]
    DegenerateDataset(String),

    #[error("unsupported audio format: {0}")]
    Format(String),

    #[error("insufficient audio: need {needed} samples, have {available}")]
    InsufficientAudio { needed: usize, available: usize },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("state error: {0}")]
    State(String),

    #[error("non-finite value in loss term `{term}`")]
    NonFinite { term: String },

    #[error("checkpoint migration error: {0}")]
    Migration(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Process exit code for the command-line front end: 2 configuration,
    /// 3 data, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Migration(_) | Error::State(_) => 2,
            Error::NonFinite { .. } => 4,
            _ => 3,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<hound::Error> for Error {
    fn from(e: hound::Error) -> Self {
        match e {
            hound::Error::IoError(io) => Error::Io(io),
            other => Error::Format(other.to_string()),
        }
    }
}
