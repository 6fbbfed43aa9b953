//! Versioned JSON container for trained heads.
//!
//! ```json
//! {"magic": "DTHEAD", "version": 1, "task": "argument",
//!  "classes": [...], "feature_dim": D, "weights": [K*D row-major], "bias": [K],
//!  "metadata": {...}}
//! ```

use serde::{Deserialize, Serialize};

use super::{feature_dim, HeadMetadata, SoftmaxHead, WindowConfig};
use crate::corpus_model::Dimension;

pub const HEAD_MAGIC: &str = "DTHEAD";
pub const HEAD_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("corrupt model file: {0}")]
    CorruptModel(String),
    #[error("model format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("model needs feature dimension {expected} for this backend but has {found}")]
    IncompatibleDimension { expected: usize, found: usize },
}

#[derive(Deserialize)]
struct Probe {
    magic: String,
    version: u32,
}

#[derive(Serialize, Deserialize)]
struct HeadFile {
    magic: String,
    version: u32,
    task: Dimension,
    classes: Vec<String>,
    feature_dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    metadata: HeadMetadata,
}

pub fn save_head(head: &SoftmaxHead) -> Vec<u8> {
    let file = HeadFile {
        magic: HEAD_MAGIC.to_string(),
        version: HEAD_FORMAT_VERSION,
        task: head.task,
        classes: head.classes.clone(),
        feature_dim: head.feature_dim,
        weights: head.weights.clone(),
        bias: head.bias.clone(),
        metadata: head.metadata.clone(),
    };
    serde_json::to_vec(&file).expect("head serialization cannot fail")
}

pub fn load_head(bytes: &[u8]) -> Result<SoftmaxHead, ModelError> {
    let corrupt = |e: serde_json::Error| ModelError::CorruptModel(e.to_string());
    let probe: Probe = serde_json::from_slice(bytes).map_err(corrupt)?;
    if probe.magic != HEAD_MAGIC {
        return Err(ModelError::CorruptModel(format!(
            "magic {:?} is not {HEAD_MAGIC:?}",
            probe.magic
        )));
    }
    if probe.version != HEAD_FORMAT_VERSION {
        return Err(ModelError::VersionMismatch {
            found: probe.version,
            expected: HEAD_FORMAT_VERSION,
        });
    }
    let file: HeadFile = serde_json::from_slice(bytes).map_err(corrupt)?;
    let k = file.classes.len();
    if file.classes != file.task.vocabulary() {
        return Err(ModelError::CorruptModel(format!(
            "classes {:?} do not match the {} label set",
            file.classes, file.task
        )));
    }
    if file.weights.len() != k * file.feature_dim || file.bias.len() != k {
        return Err(ModelError::CorruptModel(format!(
            "parameter shapes do not match {k} classes x {} features",
            file.feature_dim
        )));
    }
    let head = SoftmaxHead {
        task: file.task,
        classes: file.classes,
        feature_dim: file.feature_dim,
        weights: file.weights,
        bias: file.bias,
        metadata: file.metadata,
    };
    if !head.parameters_finite() {
        return Err(ModelError::CorruptModel("non-finite parameter".into()));
    }
    Ok(head)
}

/// Loads a head and rejects it unless its feature dimension fits
/// `embedding_dim` under the window recorded in its metadata.
pub fn load_head_for(bytes: &[u8], embedding_dim: usize) -> Result<SoftmaxHead, ModelError> {
    let head = load_head(bytes)?;
    let window = head.metadata.window.unwrap_or(WindowConfig {
        before: 0,
        after: 0,
    });
    let expected = feature_dim(head.task, embedding_dim, window);
    if head.feature_dim != expected {
        return Err(ModelError::IncompatibleDimension {
            expected,
            found: head.feature_dim,
        });
    }
    Ok(head)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_head(task: Dimension, d: usize, window: Option<WindowConfig>) -> SoftmaxHead {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let span = window.map(|w| w.span()).unwrap_or(1);
        let mut head = SoftmaxHead::zeros(
            task,
            span * d,
            HeadMetadata {
                backend: "deterministic".into(),
                embedding_dim: d,
                window,
                training: None,
            },
        );
        for w in head.weights.iter_mut().chain(head.bias.iter_mut()) {
            *w = rng.random_range(-1.0..1.0) * 1e-3_f64.powi(rng.random_range(0..3));
        }
        head
    }

    #[test]
    fn round_trip_is_exact() {
        let head = random_head(Dimension::Specificity, 16, None);
        assert_eq!(load_head(&save_head(&head)).unwrap(), head);
    }

    #[test]
    fn argument_head_reports_task_and_window() {
        let head = random_head(Dimension::Argument, 768, Some(WindowConfig::default()));
        assert_eq!(head.feature_dim, 5 * 768);
        let loaded = load_head_for(&save_head(&head), 768).unwrap();
        assert_eq!(loaded.task, Dimension::Argument);
        assert_eq!(loaded.metadata.window, Some(WindowConfig { before: 2, after: 2 }));
        assert_eq!(loaded, head);
        assert_eq!(
            load_head_for(&save_head(&head), 384),
            Err(ModelError::IncompatibleDimension {
                expected: 5 * 384,
                found: 5 * 768
            })
        );
    }

    #[test]
    fn truncated_bytes_are_corrupt() {
        let bytes = save_head(&random_head(Dimension::Collaboration, 8, None));
        assert!(matches!(
            load_head(&bytes[..bytes.len() / 2]),
            Err(ModelError::CorruptModel(_))
        ));
        assert!(matches!(load_head(b""), Err(ModelError::CorruptModel(_))));
    }

    #[test]
    fn magic_and_version_are_checked() {
        let bytes = save_head(&random_head(Dimension::Collaboration, 4, None));
        let text = String::from_utf8(bytes).unwrap();
        let wrong_version = text.replace("\"version\":1", "\"version\":7");
        assert_eq!(
            load_head(wrong_version.as_bytes()),
            Err(ModelError::VersionMismatch {
                found: 7,
                expected: 1
            })
        );
        let wrong_magic = text.replace("DTHEAD", "NOTHEAD");
        assert!(matches!(
            load_head(wrong_magic.as_bytes()),
            Err(ModelError::CorruptModel(_))
        ));
        assert!(text.starts_with("{\"magic\":\"DTHEAD\",\"version\":1,"));
    }

    #[test]
    fn shape_mismatch_is_corrupt() {
        let mut head = random_head(Dimension::Specificity, 4, None);
        head.bias.pop();
        assert!(matches!(
            load_head(&save_head(&head)),
            Err(ModelError::CorruptModel(_))
        ));
    }
}
