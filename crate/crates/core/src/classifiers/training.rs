use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::{EmbeddedDiscussion, Example};
use super::{
    feature_dim, softmax, Adam, ClassifierError, HeadMetadata, SoftmaxHead, TrainConfig,
    TrainingReport, WindowConfig,
};
use crate::corpus_model::{Dimension, Discussion};
use crate::embedding::{EmbeddingBackend, EmbeddingCache};

pub const MIN_TRAINING_EXAMPLES: usize = 10;
const INIT_RANGE: f64 = 0.05;

/// Mean cross-entropy gradient over a batch, laid out like the head's
/// parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub loss: f64,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Mean of `-ln p_gold` and its gradient. With `p = softmax(Wx + b)`,
/// `dL/dz = p - onehot(gold)`, so `dL/dW = (p - y) x^T` and `dL/db = p - y`.
pub fn cross_entropy_gradient(
    head: &SoftmaxHead,
    batch: &[&Example],
) -> Result<Gradient, ClassifierError> {
    let k = head.num_classes();
    let d = head.feature_dim;
    let mut grad = Gradient {
        loss: 0.0,
        weights: vec![0.0; k * d],
        bias: vec![0.0; k],
    };
    if batch.is_empty() {
        return Ok(grad);
    }
    for example in batch {
        let p = head.forward(&example.features)?;
        grad.loss -= p[example.class].max(f64::MIN_POSITIVE).ln();
        for (c, pc) in p.iter().enumerate() {
            let delta = pc - if c == example.class { 1.0 } else { 0.0 };
            grad.bias[c] += delta;
            for (g, x) in grad.weights[c * d..(c + 1) * d].iter_mut().zip(&example.features) {
                *g += delta * x;
            }
        }
    }
    let n = batch.len() as f64;
    grad.loss /= n;
    grad.weights.iter_mut().for_each(|g| *g /= n);
    grad.bias.iter_mut().for_each(|g| *g /= n);
    Ok(grad)
}

/// Mean cross-entropy of `head` over `examples`.
pub fn mean_loss(head: &SoftmaxHead, examples: &[&Example]) -> Result<f64, ClassifierError> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for e in examples {
        let p = head.forward(&e.features)?;
        total -= p[e.class].max(f64::MIN_POSITIVE).ln();
    }
    Ok(total / examples.len() as f64)
}

fn accuracy(head: &SoftmaxHead, examples: &[&Example]) -> Result<f64, ClassifierError> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for e in examples {
        let logits = head.logits(&e.features)?;
        let p = softmax(&logits);
        let mut best = 0;
        for (i, v) in p.iter().enumerate() {
            if *v > p[best] {
                best = i;
            }
        }
        correct += (best == e.class) as usize;
    }
    Ok(correct as f64 / examples.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    NoImprovement,
    Stop,
}

/// Stops after `patience` consecutive epochs without a strictly lower
/// validation loss.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best_loss: f64,
    best_epoch: usize,
    epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best_loss: f64::INFINITY,
            best_epoch: 0,
            epoch: 0,
            stale: 0,
        }
    }

    pub fn observe(&mut self, val_loss: f64) -> StopDecision {
        self.epoch += 1;
        if val_loss < self.best_loss {
            self.best_loss = val_loss;
            self.best_epoch = self.epoch;
            self.stale = 0;
            return StopDecision::Improved;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::NoImprovement
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn epochs_seen(&self) -> usize {
        self.epoch
    }
}

/// Trains a softmax head with Adam and early stopping.
///
/// A seeded uniform sample of `max(1, floor(validation_fraction * N))`
/// examples is held out for validation. Mini-batches are reshuffled every
/// epoch from the same seeded stream, so results depend only on the inputs
/// and `cfg.seed`. The parameters from the best validation epoch are
/// returned.
pub fn train_head(
    examples: &[Example],
    cfg: &TrainConfig,
    task: Dimension,
    metadata: HeadMetadata,
) -> Result<(SoftmaxHead, TrainingReport), ClassifierError> {
    cfg.check()?;
    let classes = task.vocabulary();
    let k = classes.len();
    if examples.len() < MIN_TRAINING_EXAMPLES {
        return Err(ClassifierError::InsufficientData {
            required: MIN_TRAINING_EXAMPLES,
            found: examples.len(),
        });
    }
    let d = examples[0].features.len();
    for e in examples {
        if e.class >= k {
            return Err(ClassifierError::InvalidClassIndex {
                index: e.class,
                classes: k,
            });
        }
        if e.features.len() != d {
            return Err(ClassifierError::DimensionMismatch {
                expected: d,
                found: e.features.len(),
            });
        }
    }
    if examples.iter().all(|e| e.class == examples[0].class) {
        return Err(ClassifierError::DegenerateLabels);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((cfg.validation_fraction * examples.len() as f64).floor() as usize).max(1);
    let validation: Vec<&Example> = order[..n_val].iter().map(|&i| &examples[i]).collect();
    let mut train: Vec<&Example> = order[n_val..].iter().map(|&i| &examples[i]).collect();

    let mut head = SoftmaxHead::zeros(task, d, metadata);
    for w in head.weights.iter_mut() {
        *w = rng.random_range(-INIT_RANGE..=INIT_RANGE);
    }

    let mut adam = Adam::new(cfg, k * d + k);
    let mut params = vec![0.0; k * d + k];
    let initial_train_loss = mean_loss(&head, &train)?;
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = head.clone();
    let mut train_losses = Vec::new();
    let mut val_losses = Vec::new();

    for _ in 0..cfg.max_epochs {
        train.shuffle(&mut rng);
        for batch in train.chunks(cfg.batch_size) {
            let grad = cross_entropy_gradient(&head, batch)?;
            params[..k * d].copy_from_slice(&head.weights);
            params[k * d..].copy_from_slice(&head.bias);
            let grads: Vec<f64> = grad.weights.into_iter().chain(grad.bias).collect();
            adam.step(&mut params, &grads);
            head.weights.copy_from_slice(&params[..k * d]);
            head.bias.copy_from_slice(&params[k * d..]);
        }
        train_losses.push(mean_loss(&head, &train)?);
        val_losses.push(mean_loss(&head, &validation)?);
        match stopper.observe(*val_losses.last().expect("pushed above")) {
            StopDecision::Improved => best = head.clone(),
            StopDecision::NoImprovement => {}
            StopDecision::Stop => break,
        }
    }

    let report = TrainingReport {
        epochs_run: stopper.epochs_seen(),
        best_epoch: stopper.best_epoch(),
        initial_train_loss,
        train_loss_per_epoch: train_losses,
        val_loss_per_epoch: val_losses,
        final_train_accuracy: accuracy(&best, &train)?,
        train_examples: train.len(),
        validation_examples: validation.len(),
    };
    best.metadata.training = Some(report.clone());
    Ok((best, report))
}

/// Embeds `discussions`, extracts gold-labeled examples for `task` and trains
/// a head for it.
pub fn train_task(
    task: Dimension,
    discussions: &[Discussion],
    backend: &dyn EmbeddingBackend,
    window: WindowConfig,
    cfg: &TrainConfig,
) -> Result<(SoftmaxHead, TrainingReport), ClassifierError> {
    window.check()?;
    let mut cache = EmbeddingCache::new(backend);
    let mut examples = Vec::new();
    for d in discussions {
        let embedded = EmbeddedDiscussion::new(d, &mut cache)?;
        examples.extend(embedded.examples(task, window)?);
    }
    let metadata = HeadMetadata {
        backend: backend.name().to_string(),
        embedding_dim: backend.dimension(),
        window: (task == Dimension::Argument).then_some(window),
        training: None,
    };
    let (head, report) = train_head(&examples, cfg, task, metadata)?;
    debug_assert_eq!(
        head.feature_dim,
        feature_dim(task, backend.dimension(), window)
    );
    Ok((head, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(dim: usize) -> HeadMetadata {
        HeadMetadata {
            backend: "test".into(),
            embedding_dim: dim,
            window: None,
            training: None,
        }
    }

    fn gradient_oracle(head: &SoftmaxHead, batch: &[&Example], h: f64) -> (Vec<f64>, Vec<f64>) {
        let mut probe = head.clone();
        let mut gw = Vec::new();
        for i in 0..head.weights.len() {
            probe.weights[i] = head.weights[i] + h;
            let up = mean_loss(&probe, batch).unwrap();
            probe.weights[i] = head.weights[i] - h;
            let down = mean_loss(&probe, batch).unwrap();
            probe.weights[i] = head.weights[i];
            gw.push((up - down) / (2.0 * h));
        }
        let mut gb = Vec::new();
        for i in 0..head.bias.len() {
            probe.bias[i] = head.bias[i] + h;
            let up = mean_loss(&probe, batch).unwrap();
            probe.bias[i] = head.bias[i] - h;
            let down = mean_loss(&probe, batch).unwrap();
            probe.bias[i] = head.bias[i];
            gb.push((up - down) / (2.0 * h));
        }
        (gw, gb)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut head = SoftmaxHead::zeros(Dimension::Collaboration, 6, meta(6));
        for w in head.weights.iter_mut() {
            *w = rng.random_range(-1.0..1.0);
        }
        let examples: Vec<Example> = (0..5)
            .map(|i| Example {
                features: (0..6).map(|_| rng.random_range(-2.0..2.0)).collect(),
                class: i % 4,
            })
            .collect();
        let batch: Vec<&Example> = examples.iter().collect();
        let grad = cross_entropy_gradient(&head, &batch).unwrap();
        let (gw, gb) = gradient_oracle(&head, &batch, 1e-5);
        for (a, n) in grad.weights.iter().zip(&gw).chain(grad.bias.iter().zip(&gb)) {
            assert!((a - n).abs() <= 1e-4 * a.abs().max(n.abs()).max(1e-6), "{a} vs {n}");
        }
        assert!((grad.loss - mean_loss(&head, &batch).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn early_stopping_fires_on_schedule() {
        let mut stop = EarlyStopping::new(2);
        let decisions: Vec<_> = [1.0, 0.9, 0.95, 0.96]
            .into_iter()
            .map(|l| stop.observe(l))
            .collect();
        assert_eq!(
            decisions,
            vec![
                StopDecision::Improved,
                StopDecision::Improved,
                StopDecision::NoImprovement,
                StopDecision::Stop
            ]
        );
        assert_eq!(stop.best_epoch(), 2);
        assert_eq!(stop.epochs_seen(), 4);
    }

    fn separable(n: usize, d: usize, seed: u64) -> Vec<Example> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let class = i % 3;
                let mut features: Vec<f64> = (0..d).map(|_| rng.random_range(-0.2..0.2)).collect();
                features[class] += 1.0;
                Example { features, class }
            })
            .collect()
    }

    #[test]
    fn preconditions() {
        let cfg = TrainConfig::default();
        let few = separable(9, 4, 1);
        assert!(matches!(
            train_head(&few, &cfg, Dimension::Argument, meta(4)),
            Err(ClassifierError::InsufficientData { found: 9, .. })
        ));
        let mut one_class = separable(12, 4, 1);
        one_class.iter_mut().for_each(|e| e.class = 1);
        assert_eq!(
            train_head(&one_class, &cfg, Dimension::Argument, meta(4)).unwrap_err(),
            ClassifierError::DegenerateLabels
        );
        let mut bad = separable(12, 4, 1);
        bad[3].class = 3;
        assert!(matches!(
            train_head(&bad, &cfg, Dimension::Argument, meta(4)),
            Err(ClassifierError::InvalidClassIndex { index: 3, .. })
        ));
    }

    #[test]
    fn training_is_deterministic_and_fits() {
        let data = separable(120, 8, 3);
        let cfg = TrainConfig {
            seed: 42,
            ..Default::default()
        };
        let (a, ra) = train_head(&data, &cfg, Dimension::Argument, meta(8)).unwrap();
        let (b, rb) = train_head(&data, &cfg, Dimension::Argument, meta(8)).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert!(ra.final_train_accuracy >= 0.95, "{ra:?}");
        assert!(ra.best_epoch <= ra.epochs_run);
        assert_eq!(ra.val_loss_per_epoch.len(), ra.epochs_run);
        assert_eq!(ra.validation_examples, 12);
        assert!(a.parameters_finite());
    }

    #[test]
    fn full_batch_loss_at_best_epoch_not_above_initial() {
        let data = separable(60, 5, 9);
        let cfg = TrainConfig {
            batch_size: 60,
            seed: 5,
            ..Default::default()
        };
        let (_, report) = train_head(&data, &cfg, Dimension::Argument, meta(5)).unwrap();
        let at_best = report.train_loss_per_epoch[report.best_epoch - 1];
        assert!(at_best <= report.initial_train_loss);
    }
}
