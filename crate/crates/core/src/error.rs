use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Backend,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed line {line}: {detail}")]
    MalformedLine { line: usize, detail: String },

    #[error("record {0}: answer_start does not point at the answer")]
    SpanMismatch(String),

    #[error("item {id} violates an invariant: {detail}")]
    InvariantViolation { id: String, detail: String },

    #[error("empty field: {0}")]
    EmptyField(&'static str),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("backend error: {0}")]
    Backend(String),

    #[error("answer {answer:?} not found in sentence {sentence:?}")]
    AnswerNotLocated { answer: String, sentence: String },

    #[error("masked sentence contains no mask token {0:?}")]
    NoMask(String),

    #[error("masked sentence contains {count} mask tokens {token:?}")]
    MultipleMasks { token: String, count: usize },

    #[error("tagger error: {0}")]
    Tagger(String),

    #[error("entity recognizer error: {0}")]
    Ner(String),

    #[error("encoder error: {0}")]
    Encoder(String),

    #[error("llm client error: {0}")]
    Client(String),

    #[error("index {index} out of range for {what} (size {size})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },

    #[error("triple store is empty")]
    EmptyStore,

    #[error("labels {first:?} and {second:?} normalize to the same label")]
    DuplicateLabel { first: String, second: String },

    #[error("both kg and context scores are missing")]
    BothMissing,

    #[error("no distractors to assemble")]
    EmptyTop,

    #[error("no records")]
    Empty,

    #[error("correlation needs at least two records")]
    EmptyOrSingleton,

    #[error("record {0}: probabilities do not sum to 1")]
    ProbSumViolation(String),

    #[error("unknown item id {0}")]
    UnknownItem(String),

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) => ErrorClass::Config,
            Error::Backend(_) | Error::Tagger(_) | Error::Ner(_) | Error::Encoder(_) | Error::Client(_) => {
                ErrorClass::Backend
            }
            _ => ErrorClass::Data,
        }
    }
}
