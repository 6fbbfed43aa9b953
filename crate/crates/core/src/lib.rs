//! Core library for classroom discussion analytics.
//!
//! Transcripts are segmented into speaker turns and argumentative discourse
//! units (ADUs). Each student ADU is coded for argument move and specificity,
//! and each student turn for its collaboration move relative to an earlier
//! reference turn. This crate holds the domain model, the canonical CSV
//! format, the embedding and softmax classification pipeline, the analytics
//! derived from coded discussions, and the agreement metrics used to score
//! predictions against gold labels.

pub mod analytics;
pub mod classifiers;
pub mod corpus_model;
pub mod embedding;
pub mod evaluation;
pub mod ingestion;
pub mod protocol;
pub mod sample;

pub use corpus_model::{
    Adu, ArgumentMove, CollaborationType, Dimension, Discussion, Label, LabelDistribution,
    LabelSource, Provenance, SpeakerRole, SpecificityLevel, Turn, ValidationIssue,
};
