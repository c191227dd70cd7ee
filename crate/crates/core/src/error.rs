use thiserror::Error;

/// Errors produced anywhere in the prompt-to-embedding pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive semidefinite (eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("tape does not match parameters: {0}")]
    StaleTape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown question id `{0}`")]
    UnknownQuestion(String),

    #[error("answer {value} is out of range for question `{question}`")]
    AnswerOutOfRange { question: String, value: i64 },

    #[error("question `{0}` is not answered in this record")]
    Unanswered(String),

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Diverged {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("non-finite loss at sample {index}")]
    NonFiniteSample { index: usize },

    #[error("integration produced a non-finite state at step {0}")]
    IntegrationDiverged(usize),

    #[error("undefined statistic: {0}")]
    Undefined(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(context: &str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::Dimension {
            context: context.to_string(),
            expected,
            actual,
        });
    }
    Ok(())
}
