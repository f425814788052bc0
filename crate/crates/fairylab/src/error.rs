//! Crate-wide error type. Each variant maps to a stable CLI exit category.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration; the message lists every violation found.
    #[error("config error:\n{0}")]
    Config(String),

    /// An argument violated an operation precondition.
    #[error("validation error: {0}")]
    Validation(String),

    /// Tensor shape mismatch.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Tensor archive or adapter bank could not be read or written.
    #[error("archive error: {0}")]
    Archive(String),

    /// Training aborted (non-finite loss or activations).
    #[error("training aborted: {0}")]
    Training(String),

    /// Storyboard planner failed or returned irreparable output.
    #[error("planner error: {0}")]
    Planner(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    /// Stable exit code per error category, used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Validation(_) => 3,
            Error::Shape(_) => 4,
            Error::Archive(_) => 5,
            Error::Training(_) => 6,
            Error::Planner(_) => 7,
            Error::Io(_) => 8,
            Error::Json(_) => 9,
            Error::Image(_) => 10,
        }
    }
}
