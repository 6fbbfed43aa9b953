use super::{ClassifierError, WindowConfig};
use crate::embedding::EmbeddingVector;

/// Concatenates `[e(i-before) .. e(i) .. e(i+after)]` over the student ADU
/// sequence; positions outside the sequence contribute zero vectors.
pub fn build_argument_features(
    seq: &[EmbeddingVector],
    index: usize,
    window: WindowConfig,
) -> Result<Vec<f64>, ClassifierError> {
    let target = seq.get(index).ok_or(ClassifierError::IndexOutOfRange {
        index,
        len: seq.len(),
    })?;
    let d = target.dimension();
    let mut features = Vec::with_capacity(window.span() * d);
    let start = index as isize - window.before as isize;
    let end = index + window.after;
    for pos in start..=end as isize {
        match usize::try_from(pos).ok().and_then(|p| seq.get(p)) {
            Some(e) => {
                if e.dimension() != d {
                    return Err(ClassifierError::DimensionMismatch {
                        expected: d,
                        found: e.dimension(),
                    });
                }
                features.extend_from_slice(e.as_slice());
            }
            None => features.extend(std::iter::repeat_n(0.0, d)),
        }
    }
    Ok(features)
}

pub fn build_specificity_features(embedding: &EmbeddingVector) -> Vec<f64> {
    embedding.as_slice().to_vec()
}

/// Element-wise product of target and reference turn embeddings.
pub fn build_collaboration_features(
    target: &EmbeddingVector,
    reference: &EmbeddingVector,
) -> Result<Vec<f64>, ClassifierError> {
    if target.dimension() != reference.dimension() {
        return Err(ClassifierError::DimensionMismatch {
            expected: target.dimension(),
            found: reference.dimension(),
        });
    }
    Ok(target
        .as_slice()
        .iter()
        .zip(reference.as_slice())
        .map(|(a, b)| a * b)
        .collect())
}
