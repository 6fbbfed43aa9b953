//! Softmax heads over pooled embeddings for the three coded dimensions.
//!
//! Feature construction per dimension:
//! - argument move: the target ADU's embedding concatenated with a window of
//!   neighbouring student ADUs (zero vectors past either end);
//! - specificity: the target ADU's embedding alone;
//! - collaboration: element-wise product of the target and reference turn
//!   embeddings.
//!
//! Heads are linear layers trained with Adam on mean cross-entropy, with
//! early stopping on a held-out validation split.

mod adam;
mod classify;
pub mod crossval;
mod dataset;
mod features;
mod head_io;
mod training;

pub use adam::Adam;
pub use classify::{classify_discussion, HeadSet};
pub use dataset::{EmbeddedAdu, EmbeddedDiscussion, EmbeddedTurn, Example};
pub use features::{
    build_argument_features, build_collaboration_features, build_specificity_features,
};
pub use head_io::{load_head, load_head_for, save_head, ModelError, HEAD_FORMAT_VERSION, HEAD_MAGIC};
pub use training::{
    cross_entropy_gradient, mean_loss, train_head, train_task, EarlyStopping, Gradient,
    StopDecision,
};

use serde::{Deserialize, Serialize};

use crate::corpus_model::{Dimension, Label, LabelDistribution};
use crate::embedding::EmbeddingError;

pub const MAX_WINDOW: usize = 8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClassifierError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("index {index} out of range for sequence of length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("need at least {required} training examples, got {found}")]
    InsufficientData { required: usize, found: usize },
    #[error("training labels contain a single class")]
    DegenerateLabels,
    #[error("class index {index} is not below the class count {classes}")]
    InvalidClassIndex { index: usize, classes: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("incompatible head: {0}")]
    IncompatibleHead(String),
    #[error("discussion is not valid: {0}")]
    InvalidDiscussion(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

/// Number of student ADUs before and after the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WindowConfig {
    pub before: usize,
    pub after: usize,
}

impl WindowConfig {
    pub fn new(before: usize, after: usize) -> Result<Self, ClassifierError> {
        let w = Self { before, after };
        w.check()?;
        Ok(w)
    }

    pub fn symmetric(size: usize) -> Result<Self, ClassifierError> {
        Self::new(size, size)
    }

    pub fn check(&self) -> Result<(), ClassifierError> {
        if self.before > MAX_WINDOW || self.after > MAX_WINDOW {
            return Err(ClassifierError::InvalidConfig(format!(
                "window sizes must be at most {MAX_WINDOW}, got ({}, {})",
                self.before, self.after
            )));
        }
        Ok(())
    }

    /// Number of embeddings concatenated per argument feature vector.
    pub fn span(&self) -> usize {
        self.before + 1 + self.after
    }
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            before: 2,
            after: 2,
        }
    }
}

impl std::fmt::Display for WindowConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.before, self.after)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation-loss improvement before stopping.
    pub patience: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            max_epochs: 500,
            patience: 5,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<(), ClassifierError> {
        let bad = |msg: &str| Err(ClassifierError::InvalidConfig(msg.to_string()));
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 0.5) {
            return bad("validation_fraction must lie in (0, 0.5)");
        }
        if self.patience < 1 {
            return bad("patience must be at least 1");
        }
        if self.batch_size < 1 || self.max_epochs < 1 {
            return bad("batch_size and max_epochs must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite())
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.epsilon > 0.0 && self.epsilon.is_finite())
        {
            return bad("Adam hyperparameters out of range");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub epochs_run: usize,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub initial_train_loss: f64,
    pub train_loss_per_epoch: Vec<f64>,
    pub val_loss_per_epoch: Vec<f64>,
    pub final_train_accuracy: f64,
    pub train_examples: usize,
    pub validation_examples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadMetadata {
    pub backend: String,
    pub embedding_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<WindowConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingReport>,
}

/// Linear layer plus softmax: `p = softmax(W x + b)`, `W` stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxHead {
    pub task: Dimension,
    pub classes: Vec<String>,
    pub feature_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub metadata: HeadMetadata,
}

/// Feature dimension a head for `task` needs over `embedding_dim` vectors.
pub fn feature_dim(task: Dimension, embedding_dim: usize, window: WindowConfig) -> usize {
    match task {
        Dimension::Argument => window.span() * embedding_dim,
        Dimension::Specificity | Dimension::Collaboration => embedding_dim,
    }
}

impl SoftmaxHead {
    pub fn zeros(task: Dimension, feature_dim: usize, metadata: HeadMetadata) -> Self {
        let classes: Vec<String> = task.vocabulary().into_iter().map(String::from).collect();
        let k = classes.len();
        Self {
            task,
            classes,
            feature_dim,
            weights: vec![0.0; k * feature_dim],
            bias: vec![0.0; k],
            metadata,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>, ClassifierError> {
        if x.len() != self.feature_dim {
            return Err(ClassifierError::DimensionMismatch {
                expected: self.feature_dim,
                found: x.len(),
            });
        }
        Ok(self
            .weights
            .chunks_exact(self.feature_dim.max(1))
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, ClassifierError> {
        Ok(softmax(&self.logits(x)?))
    }

    /// Forward pass returning a distribution over a typed label set.
    pub fn predict<L: Label>(&self, x: &[f64]) -> Result<LabelDistribution<L>, ClassifierError> {
        self.check_labels::<L>()?;
        Ok(LabelDistribution::from_probs_unchecked(self.forward(x)?))
    }

    pub(crate) fn check_labels<L: Label>(&self) -> Result<(), ClassifierError> {
        let expected: Vec<&str> = L::ALL.iter().map(|l| l.as_str()).collect();
        if self.task != L::DIMENSION || self.classes != expected {
            return Err(ClassifierError::IncompatibleHead(format!(
                "head is for {} with classes {:?}, expected {} with {:?}",
                self.task,
                self.classes,
                L::DIMENSION,
                expected
            )));
        }
        Ok(())
    }

    pub fn parameters_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Softmax forward pass for a head on one feature vector.
pub fn softmax_forward(head: &SoftmaxHead, x: &[f64]) -> Result<Vec<f64>, ClassifierError> {
    head.forward(x)
}
