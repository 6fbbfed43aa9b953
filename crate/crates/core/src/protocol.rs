//! JSON bodies exchanged between the service and its clients.

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::classifiers::{TrainConfig, WindowConfig};
use crate::corpus_model::{Dimension, Discussion, Label, LabelDistribution, LabelSource, Provenance, SpeakerRole};
use crate::evaluation::EvaluationOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub backend: String,
    pub dimension: usize,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<serde_json::Value>,
}

/// Query parameters accepted alongside an uploaded CSV body.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UploadParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recorded_at: Option<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UploadResponse {
    pub discussion_id: String,
    pub version: u32,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscussionSummary {
    pub discussion_id: String,
    pub title: String,
    pub recorded_at: Option<NaiveDate>,
    pub latest_version: u32,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadIds {
    pub argument: String,
    pub specificity: String,
    pub collaboration: String,
}

impl HeadIds {
    pub fn demo() -> Self {
        Self {
            argument: "demo-argument".into(),
            specificity: "demo-specificity".into(),
            collaboration: "demo-collaboration".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassifyRequest {
    /// Must name the configured backend when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_ids: Option<HeadIds>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<WindowConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRequest {
    pub task: Dimension,
    /// Defaults to every stored discussion.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discussion_ids: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<WindowConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRequest {
    pub discussion_ids: Vec<String>,
    #[serde(default)]
    pub options: EvaluationOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSummary {
    pub head_id: String,
    pub task: Dimension,
    pub feature_dim: usize,
    pub backend: String,
    pub embedding_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<WindowConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateGoal {
    pub discussion_id: String,
    pub dimension: Dimension,
    pub label: String,
    pub target_percentage: f64,
    #[serde(default)]
    pub note: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Classify,
    Train,
    Evaluate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobState {
    /// `Queued -> Running -> {Done, Failed}` only.
    pub fn can_become(self, next: JobState) -> bool {
        matches!(
            (self, next),
            (JobState::Queued, JobState::Running)
                | (JobState::Running, JobState::Done)
                | (JobState::Running, JobState::Failed)
        )
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Done | JobState::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub job_id: String,
    pub kind: JobKind,
    pub state: JobState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discussion_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result_ref: Option<String>,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassProbability {
    pub label: String,
    pub probability: f64,
}

/// A label as shown on the annotated transcript, with class probabilities
/// when it is a prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedLabel {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probabilities: Option<Vec<ClassProbability>>,
}

impl AnnotatedLabel {
    fn gold<L: Label>(label: L) -> Self {
        Self {
            label: label.as_str().to_string(),
            probabilities: None,
        }
    }

    fn predicted<L: Label>(dist: &LabelDistribution<L>) -> Self {
        Self {
            label: dist.argmax().as_str().to_string(),
            probabilities: Some(
                L::ALL
                    .iter()
                    .map(|l| ClassProbability {
                        label: l.as_str().to_string(),
                        probability: dist.probability(*l),
                    })
                    .collect(),
            ),
        }
    }

    fn pick<L: Label>(
        source: LabelSource,
        gold: Option<L>,
        predicted: Option<&LabelDistribution<L>>,
    ) -> Option<Self> {
        match source {
            LabelSource::Gold => gold.map(Self::gold),
            LabelSource::Predicted => predicted.map(Self::predicted),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptAdu {
    pub adu_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub argument: Option<AnnotatedLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub specificity: Option<AnnotatedLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptTurn {
    pub turn_index: usize,
    pub speaker_id: String,
    pub role: SpeakerRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_turn_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collaboration: Option<AnnotatedLabel>,
    pub adus: Vec<TranscriptAdu>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptView {
    pub discussion_id: String,
    pub title: String,
    pub annotations: LabelSource,
    pub turns: Vec<TranscriptTurn>,
}

impl TranscriptView {
    pub fn build(d: &Discussion, annotations: LabelSource) -> Self {
        let turns = d
            .turns
            .iter()
            .map(|t| TranscriptTurn {
                turn_index: t.turn_index,
                speaker_id: t.speaker_id.clone(),
                role: t.role,
                reference_turn_index: t.reference_turn_index,
                collaboration: AnnotatedLabel::pick(
                    annotations,
                    t.gold_collaboration,
                    t.predicted_collaboration.as_ref(),
                ),
                adus: t
                    .adus
                    .iter()
                    .map(|a| TranscriptAdu {
                        adu_id: a.adu_id.clone(),
                        text: a.text.clone(),
                        argument: AnnotatedLabel::pick(
                            annotations,
                            a.gold_argument,
                            a.predicted_argument.as_ref(),
                        ),
                        specificity: AnnotatedLabel::pick(
                            annotations,
                            a.gold_specificity,
                            a.predicted_specificity.as_ref(),
                        ),
                    })
                    .collect(),
            })
            .collect();
        Self {
            discussion_id: d.discussion_id.clone(),
            title: d.title.clone(),
            annotations,
            turns,
        }
    }
}
