use serde::{Deserialize, Serialize};

use super::dataset::EmbeddedDiscussion;
use super::{
    build_argument_features, build_collaboration_features, build_specificity_features, feature_dim,
    ClassifierError, SoftmaxHead, WindowConfig,
};
use crate::corpus_model::{
    ArgumentMove, CollaborationType, Discussion, LabelDistribution, Provenance,
    SpecificityLevel,
};
use crate::embedding::{EmbeddingBackend, EmbeddingCache, EmbeddingVector};

/// One trained head per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSet {
    pub argument: SoftmaxHead,
    pub specificity: SoftmaxHead,
    pub collaboration: SoftmaxHead,
}

impl HeadSet {
    /// Checks label sets and feature dimensions against a backend and window.
    pub fn check(&self, embedding_dim: usize, window: WindowConfig) -> Result<(), ClassifierError> {
        window.check()?;
        self.argument.check_labels::<ArgumentMove>()?;
        self.specificity.check_labels::<SpecificityLevel>()?;
        self.collaboration.check_labels::<CollaborationType>()?;
        for head in [&self.argument, &self.specificity, &self.collaboration] {
            let expected = feature_dim(head.task, embedding_dim, window);
            if head.feature_dim != expected {
                return Err(ClassifierError::IncompatibleHead(format!(
                    "{} head has feature dimension {}, but embedding dimension {embedding_dim} with window {window} needs {expected}",
                    head.task, head.feature_dim
                )));
            }
        }
        if let Some(trained) = self.argument.metadata.window {
            if trained != window {
                return Err(ClassifierError::IncompatibleHead(format!(
                    "argument head was trained with window {trained}, requested {window}"
                )));
            }
        }
        Ok(())
    }
}

/// Returns a copy of `d` with predictions on every student ADU and turn.
///
/// Student turns without a reference turn get `{new: 1.0}`. The input is
/// never modified; on error nothing is returned.
pub fn classify_discussion(
    d: &Discussion,
    heads: &HeadSet,
    backend: &dyn EmbeddingBackend,
    window: WindowConfig,
) -> Result<Discussion, ClassifierError> {
    heads.check(backend.dimension(), window)?;
    let mut cache = EmbeddingCache::new(backend);
    let embedded = EmbeddedDiscussion::new(d, &mut cache)?;
    let sequence: Vec<EmbeddingVector> = embedded.adus.iter().map(|a| a.embedding.clone()).collect();

    let mut adu_predictions = Vec::with_capacity(sequence.len());
    for (i, embedding) in sequence.iter().enumerate() {
        let argument = heads
            .argument
            .predict::<ArgumentMove>(&build_argument_features(&sequence, i, window)?)?;
        let specificity = heads
            .specificity
            .predict::<SpecificityLevel>(&build_specificity_features(embedding))?;
        adu_predictions.push((argument, specificity));
    }
    let mut turn_predictions = Vec::with_capacity(embedded.turns.len());
    for turn in &embedded.turns {
        let dist = match &turn.pair {
            Some((target, reference)) => heads
                .collaboration
                .predict::<CollaborationType>(&build_collaboration_features(target, reference)?)?,
            None => LabelDistribution::certain(CollaborationType::New),
        };
        turn_predictions.push(dist);
    }

    let mut out = d.clone();
    let mut adu_iter = adu_predictions.into_iter();
    let mut turn_iter = turn_predictions.into_iter();
    for turn in out.turns.iter_mut().filter(|t| t.is_student()) {
        for adu in turn.adus.iter_mut() {
            let (argument, specificity) = adu_iter.next().expect("one prediction per student ADU");
            adu.predicted_argument = Some(argument);
            adu.predicted_specificity = Some(specificity);
        }
        turn.predicted_collaboration = Some(turn_iter.next().expect("one prediction per student turn"));
    }
    out.provenance = if has_gold(&out) {
        Provenance::Mixed
    } else {
        Provenance::AutoCoded
    };
    Ok(out)
}

fn has_gold(d: &Discussion) -> bool {
    d.student_turns().any(|t| {
        t.gold_collaboration.is_some()
            || t
                .adus
                .iter()
                .any(|a| a.gold_argument.is_some() || a.gold_specificity.is_some())
    })
}
