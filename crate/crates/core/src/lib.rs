//! Multiple-choice question generation from extractive QA data, plus an
//! evaluation harness for scoring language models on the generated items.

pub mod backend;
pub mod candidates;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod filters;
pub mod kg;
pub mod model;
pub mod numwords;
pub mod pipeline;
pub mod qgen;
pub mod rank;
pub mod taxonomy;
pub mod text;
pub mod workers;

pub use error::{Error, ErrorClass, Result};
pub use model::{
    Candidate, ContentLabel, FilterStage, FilterVerdict, FusionWeights, ItemFlag, McqItem, PipelineConfig, Provenance,
    QType, QaRecord, ShuffleScope,
};
