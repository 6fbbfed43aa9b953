use serde::{Deserialize, Serialize};

use super::{
    build_argument_features, build_collaboration_features, build_specificity_features,
    ClassifierError, WindowConfig,
};
use crate::corpus_model::{
    validate_discussion, ArgumentMove, CollaborationType, Dimension, Discussion, Label,
    SpecificityLevel,
};
use crate::embedding::{EmbeddingCache, EmbeddingVector};

/// One training or evaluation instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub features: Vec<f64>,
    pub class: usize,
}

#[derive(Debug, Clone)]
pub struct EmbeddedAdu {
    pub turn_index: usize,
    pub adu_id: String,
    pub embedding: EmbeddingVector,
    pub gold_argument: Option<ArgumentMove>,
    pub gold_specificity: Option<SpecificityLevel>,
}

#[derive(Debug, Clone)]
pub struct EmbeddedTurn {
    pub turn_index: usize,
    pub gold_collaboration: Option<CollaborationType>,
    /// Target and reference turn embeddings, when the turn has a reference.
    pub pair: Option<(EmbeddingVector, EmbeddingVector)>,
}

/// Pooled embeddings for every student unit of a discussion.
#[derive(Debug, Clone)]
pub struct EmbeddedDiscussion {
    pub discussion_id: String,
    pub adus: Vec<EmbeddedAdu>,
    pub turns: Vec<EmbeddedTurn>,
}

impl EmbeddedDiscussion {
    pub fn new(d: &Discussion, cache: &mut EmbeddingCache<'_>) -> Result<Self, ClassifierError> {
        if let Some(issue) = validate_discussion(d).first() {
            return Err(ClassifierError::InvalidDiscussion(format!(
                "{}: {issue}",
                d.discussion_id
            )));
        }
        let sequence = d.student_adu_sequence();
        let turn_texts: Vec<String> = d.turns.iter().map(|t| t.text()).collect();
        let mut needed: Vec<&str> = sequence.iter().map(|(_, a)| a.text.as_str()).collect();
        for turn in d.student_turns() {
            if let Some(r) = turn.reference_turn_index {
                needed.push(&turn_texts[turn.turn_index]);
                needed.push(&turn_texts[r]);
            }
        }
        cache.prefetch(needed)?;

        let mut adus = Vec::with_capacity(sequence.len());
        for (turn_index, adu) in sequence {
            adus.push(EmbeddedAdu {
                turn_index,
                adu_id: adu.adu_id.clone(),
                embedding: cache.pooled(&adu.text)?,
                gold_argument: adu.gold_argument,
                gold_specificity: adu.gold_specificity,
            });
        }
        let mut turns = Vec::new();
        for turn in d.student_turns() {
            let pair = match turn.reference_turn_index {
                Some(r) => Some((
                    cache.pooled(&turn_texts[turn.turn_index])?,
                    cache.pooled(&turn_texts[r])?,
                )),
                None => None,
            };
            turns.push(EmbeddedTurn {
                turn_index: turn.turn_index,
                gold_collaboration: turn.gold_collaboration,
                pair,
            });
        }
        Ok(Self {
            discussion_id: d.discussion_id.clone(),
            adus,
            turns,
        })
    }

    fn sequence(&self) -> Vec<EmbeddingVector> {
        self.adus.iter().map(|a| a.embedding.clone()).collect()
    }

    /// Gold-labeled examples for `task`. ADUs without a gold label still
    /// serve as context for their neighbours.
    pub fn examples(&self, task: Dimension, window: WindowConfig) -> Result<Vec<Example>, ClassifierError> {
        let mut out = Vec::new();
        match task {
            Dimension::Argument => {
                let seq = self.sequence();
                for (i, adu) in self.adus.iter().enumerate() {
                    if let Some(label) = adu.gold_argument {
                        out.push(Example {
                            features: build_argument_features(&seq, i, window)?,
                            class: label.index(),
                        });
                    }
                }
            }
            Dimension::Specificity => {
                for adu in &self.adus {
                    if let Some(label) = adu.gold_specificity {
                        out.push(Example {
                            features: build_specificity_features(&adu.embedding),
                            class: label.index(),
                        });
                    }
                }
            }
            Dimension::Collaboration => {
                for turn in &self.turns {
                    if let (Some(label), Some((target, reference))) =
                        (turn.gold_collaboration, &turn.pair)
                    {
                        out.push(Example {
                            features: build_collaboration_features(target, reference)?,
                            class: label.index(),
                        });
                    }
                }
            }
        }
        Ok(out)
    }
}
