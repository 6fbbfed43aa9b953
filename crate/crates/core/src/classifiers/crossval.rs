//! K-fold cross-validation by discussion, used to pick the context window.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{EmbeddedDiscussion, Example};
use super::{train_head, ClassifierError, HeadMetadata, TrainConfig, WindowConfig};
use crate::corpus_model::{Dimension, Discussion};
use crate::embedding::{EmbeddingBackend, EmbeddingCache};
use crate::evaluation::{cohen_kappa, f1_scores, quadratic_weighted_kappa, ConfusionMatrix};

pub const DEFAULT_FOLDS: usize = 5;

/// Symmetric candidates `(0,0)` through `(3,3)`.
pub fn default_candidates() -> Vec<WindowConfig> {
    (0..=3)
        .map(|s| WindowConfig {
            before: s,
            after: s,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldScore {
    pub fold: usize,
    pub held_out: Vec<String>,
    pub n_units: usize,
    pub kappa: f64,
    pub macro_f1: f64,
    pub micro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowScore {
    pub window: WindowConfig,
    pub mean_kappa: f64,
    pub mean_macro_f1: f64,
    pub mean_micro_f1: f64,
    pub folds: Vec<FoldScore>,
}

/// Seeded assignment of discussions to `k` folds.
pub fn assign_folds(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![0; n];
    for (position, &discussion) in order.iter().enumerate() {
        folds[discussion] = position % k;
    }
    folds
}

fn score(task: Dimension, gold: &[usize], pred: &[usize]) -> Result<(f64, f64, f64), ClassifierError> {
    let classes = task.vocabulary().into_iter().map(String::from).collect();
    let m = ConfusionMatrix::from_indices(gold, pred, classes)
        .map_err(|e| ClassifierError::InvalidConfig(e.to_string()))?
        .with_ordinal(task.is_ordinal());
    let metric = |e: crate::evaluation::MetricError| ClassifierError::InvalidConfig(e.to_string());
    let kappa = if task.is_ordinal() {
        quadratic_weighted_kappa(&m).map_err(metric)?
    } else {
        cohen_kappa(&m).map_err(metric)?
    };
    let f1 = f1_scores(&m).map_err(metric)?;
    Ok((kappa, f1.macro_f1, f1.micro_f1))
}

/// Runs k-fold cross-validation for every candidate window and reports mean
/// held-out metrics per window, in candidate order. Folds whose held-out
/// discussions contribute no labeled units are skipped.
pub fn search_window(
    task: Dimension,
    discussions: &[Discussion],
    backend: &dyn EmbeddingBackend,
    candidates: &[WindowConfig],
    k: usize,
    cfg: &TrainConfig,
) -> Result<Vec<WindowScore>, ClassifierError> {
    if k < 2 || k > discussions.len() {
        return Err(ClassifierError::InvalidConfig(format!(
            "need 2 <= k <= {} discussions, got k = {k}",
            discussions.len()
        )));
    }
    let mut cache = EmbeddingCache::new(backend);
    let embedded = discussions
        .iter()
        .map(|d| EmbeddedDiscussion::new(d, &mut cache))
        .collect::<Result<Vec<_>, _>>()?;
    let folds = assign_folds(discussions.len(), k, cfg.seed);

    let mut results = Vec::with_capacity(candidates.len());
    for &window in candidates {
        window.check()?;
        let per_discussion: Vec<Vec<Example>> = embedded
            .iter()
            .map(|e| e.examples(task, window))
            .collect::<Result<_, _>>()?;

        let mut fold_scores = Vec::new();
        for fold in 0..k {
            let (mut train, mut test) = (Vec::new(), Vec::new());
            let mut held_out = Vec::new();
            for (i, examples) in per_discussion.iter().enumerate() {
                if folds[i] == fold {
                    held_out.push(embedded[i].discussion_id.clone());
                    test.extend(examples.iter().cloned());
                } else {
                    train.extend(examples.iter().cloned());
                }
            }
            if test.is_empty() {
                continue;
            }
            let metadata = HeadMetadata {
                backend: backend.name().to_string(),
                embedding_dim: backend.dimension(),
                window: (task == Dimension::Argument).then_some(window),
                training: None,
            };
            let (head, _) = train_head(&train, cfg, task, metadata)?;
            let gold: Vec<usize> = test.iter().map(|e| e.class).collect();
            let pred = test
                .iter()
                .map(|e| {
                    let p = head.forward(&e.features)?;
                    let mut best = 0;
                    for (i, v) in p.iter().enumerate() {
                        if *v > p[best] {
                            best = i;
                        }
                    }
                    Ok(best)
                })
                .collect::<Result<Vec<usize>, ClassifierError>>()?;
            let (kappa, macro_f1, micro_f1) = score(task, &gold, &pred)?;
            fold_scores.push(FoldScore {
                fold,
                held_out,
                n_units: test.len(),
                kappa,
                macro_f1,
                micro_f1,
            });
        }
        let n = fold_scores.len().max(1) as f64;
        results.push(WindowScore {
            window,
            mean_kappa: fold_scores.iter().map(|f| f.kappa).sum::<f64>() / n,
            mean_macro_f1: fold_scores.iter().map(|f| f.macro_f1).sum::<f64>() / n,
            mean_micro_f1: fold_scores.iter().map(|f| f.micro_f1).sum::<f64>() / n,
            folds: fold_scores,
        });
    }
    Ok(results)
}

/// Candidate windows ranked by mean macro-F1, best first.
pub fn rank_windows(scores: &[WindowScore]) -> Vec<WindowConfig> {
    let mut ranked: Vec<&WindowScore> = scores.iter().collect();
    ranked.sort_by(|a, b| b.mean_macro_f1.total_cmp(&a.mean_macro_f1));
    ranked.into_iter().map(|s| s.window).collect()
}
