//! Bundled gold-coded sample discussion used for demos and tests.

use crate::classifiers::{train_task, ClassifierError, HeadSet, TrainConfig, WindowConfig};
use crate::corpus_model::{Dimension, Discussion};
use crate::embedding::EmbeddingBackend;
use crate::ingestion::{parse_transcript, TranscriptMeta};

pub const SAMPLE_TRANSCRIPT: &str = include_str!("../data/sample_discussion.csv");
pub const SAMPLE_ID: &str = "sample-of-mice-and-men";

pub fn sample_meta() -> TranscriptMeta {
    TranscriptMeta {
        discussion_id: Some(SAMPLE_ID.to_string()),
        title: Some("Of Mice and Men, chapters 3-6".to_string()),
        recorded_at: chrono::NaiveDate::from_ymd_opt(2020, 2, 14),
    }
}

pub fn sample_discussion() -> Discussion {
    parse_transcript(SAMPLE_TRANSCRIPT, &sample_meta()).expect("bundled sample is valid")
}

/// Heads trained on the sample alone. Only good for demos: the sample is far
/// too small to say anything about accuracy.
pub fn train_demo_heads(
    backend: &dyn EmbeddingBackend,
    window: WindowConfig,
) -> Result<HeadSet, ClassifierError> {
    let corpus = [sample_discussion()];
    let cfg = TrainConfig::default();
    let train = |task| train_task(task, &corpus, backend, window, &cfg).map(|(head, _)| head);
    Ok(HeadSet {
        argument: train(Dimension::Argument)?,
        specificity: train(Dimension::Specificity)?,
        collaboration: train(Dimension::Collaboration)?,
    })
}
