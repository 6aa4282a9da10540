//! Curation of pseudo-labelled speech manifests into ASR and speech
//! translation training data.

pub mod asr_filters;
pub mod ast_filters;
pub mod clients;
pub mod config;
pub mod decision;
pub mod lang;
pub mod manifest;
pub mod pipeline;
pub mod pnc;
pub mod segmentation;
pub mod stats;

pub use config::{PipelineConfig, Stage};
pub use decision::{FilterDecision, Flag, Verdict};
pub use manifest::UtteranceRecord;
pub use pipeline::{Pipeline, RunSummary};
