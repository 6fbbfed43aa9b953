#![allow(dead_code)]

use dt_core::corpus_model::{
    ArgumentMove, CollaborationType, Discussion, Label, LabelDistribution, Provenance, SpecificityLevel, Turn,
};
use dt_core::ingestion::adu_id;
use dt_core::Adu;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: &[&str] = &[
    "lennie", "george", "rabbits", "dream", "page", "\"quoted\"", "ranch,", "friend", "because", "loneliness",
    "candy's", "dog", "curley", "crooks", "so", "I", "think", "the", "end", "naïve", "ünïcode",
];

fn sentence(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(1..12);
    let mut words: Vec<String> = (0..n)
        .map(|_| WORDS[rng.random_range(0..WORDS.len())].to_string())
        .collect();
    if rng.random_bool(0.1) {
        words.insert(n / 2, "line\nbreak".into());
    }
    words.join(" ")
}

fn pick<L: Label>(rng: &mut ChaCha8Rng) -> L {
    L::ALL[rng.random_range(0..L::ALL.len())]
}

/// Softmax of random logits, rejected until the top two classes differ by
/// more than the serialized precision.
fn distribution<L: Label>(rng: &mut ChaCha8Rng) -> LabelDistribution<L> {
    loop {
        let logits: Vec<f64> = (0..L::ALL.len()).map(|_| rng.random_range(-3.0..3.0)).collect();
        let max = logits.iter().cloned().fold(f64::MIN, f64::max);
        let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = exp.iter().sum();
        let probs: Vec<f64> = exp.iter().map(|e| e / sum).collect();
        let mut sorted = probs.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        if sorted[0] - sorted[1] > 1e-4 {
            return LabelDistribution::new(probs).unwrap();
        }
    }
}

/// A valid discussion with gold labels on every student unit and, when
/// `predictions` is set, predicted distributions as well.
pub fn random_discussion(seed: u64, predictions: bool) -> Discussion {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_turns = rng.random_range(1..16);
    let mut turns = Vec::new();
    let mut students: Vec<usize> = Vec::new();
    for t in 0..n_turns {
        if rng.random_bool(0.2) {
            turns.push(Turn::teacher(t, "teacher", &sentence(&mut rng)));
            continue;
        }
        let speaker = format!("S{}", rng.random_range(0..5));
        let adus = (0..rng.random_range(1..4))
            .map(|a| {
                let mut adu = Adu::new(adu_id(t, a), sentence(&mut rng))
                    .with_gold(pick::<ArgumentMove>(&mut rng), pick::<SpecificityLevel>(&mut rng));
                if predictions {
                    adu.predicted_argument = Some(distribution(&mut rng));
                    adu.predicted_specificity = Some(distribution(&mut rng));
                }
                adu
            })
            .collect();
        let mut turn = Turn::student(t, speaker, adus);
        if !students.is_empty() && rng.random_bool(0.7) {
            turn.reference_turn_index = Some(students[rng.random_range(0..students.len())]);
            turn.gold_collaboration = Some(pick(&mut rng));
        } else {
            turn.gold_collaboration = Some(CollaborationType::New);
        }
        if predictions {
            turn.predicted_collaboration = Some(distribution(&mut rng));
        }
        students.push(t);
        turns.push(turn);
    }
    let mut d = Discussion {
        discussion_id: format!("random-{seed}"),
        title: format!("Random {seed}"),
        recorded_at: None,
        turns,
        provenance: Provenance::Uncoded,
    };
    d.provenance = d.infer_provenance();
    d
}
