use dt_core::analytics::{build_bundle, build_collaboration_map, compute_distributions, default_rules};
use dt_core::classifiers::{classify_discussion, save_head, load_head_for, WindowConfig};
use dt_core::corpus_model::{CollaborationType, LabelSource, Provenance};
use dt_core::embedding::{DeterministicBackend, DEFAULT_DIMENSION};
use dt_core::evaluation::{evaluate_discussions, EvaluationOptions};
use dt_core::ingestion::serialize_transcript;
use dt_core::sample::{sample_discussion, train_demo_heads};

#[test]
fn sample_pipeline_end_to_end() {
    let backend = DeterministicBackend::new(DEFAULT_DIMENSION);
    let window = WindowConfig::default();
    let heads = train_demo_heads(&backend, window).unwrap();
    let gold = sample_discussion();

    let coded = classify_discussion(&gold, &heads, &backend, window).unwrap();
    assert_eq!(coded.provenance, Provenance::Mixed);
    for turn in coded.student_turns() {
        assert!(turn.predicted_collaboration.is_some());
        for adu in &turn.adus {
            assert!(adu.predicted_argument.is_some() && adu.predicted_specificity.is_some());
        }
        if turn.reference_turn_index.is_none() {
            assert_eq!(
                turn.predicted_collaboration.as_ref().unwrap().argmax(),
                CollaborationType::New
            );
        }
    }
    for turn in coded.turns.iter().filter(|t| !t.is_student()) {
        assert!(turn.predicted_collaboration.is_none());
        assert!(turn.adus.iter().all(|a| a.predicted_argument.is_none()));
    }

    for source in [LabelSource::Gold, LabelSource::Predicted] {
        for summary in compute_distributions(&coded, source).unwrap() {
            assert!((summary.percentage_sum() - 100.0).abs() <= 0.01);
        }
        let map = build_collaboration_map(&coded, source).unwrap();
        let expected = coded
            .student_turns()
            .filter(|t| t.reference_turn_index.is_some())
            .filter(|t| {
                let label = match source {
                    LabelSource::Gold => t.gold_collaboration.unwrap(),
                    LabelSource::Predicted => t.predicted_collaboration.as_ref().unwrap().argmax(),
                };
                label != CollaborationType::New
            })
            .count();
        assert_eq!(map.edges.len(), expected);
        assert_eq!(map.nodes.len(), coded.student_turns().count());
        build_bundle(&coded, source, &default_rules(), &[]).unwrap();
    }

    let report = evaluate_discussions(std::slice::from_ref(&coded), EvaluationOptions::default()).unwrap();
    assert_eq!(report.rows.len(), 3);
    for row in &report.rows {
        assert!((-1.0..=1.0).contains(&row.headline_kappa()));
        assert!((0.0..=1.0).contains(&row.macro_f1) && (0.0..=1.0).contains(&row.micro_f1));
    }
    let table = report.to_table();
    let header: Vec<&str> = table.lines().next().unwrap().split('|').map(str::trim).collect();
    assert_eq!(header, ["Code", "N", "Kappa", "Macro F", "Micro F"]);
    assert_eq!(table.lines().count(), 5);
    assert!(table.contains("ADUs") && table.contains("Turns"));
}

#[test]
fn classification_is_byte_reproducible() {
    let backend = DeterministicBackend::new(DEFAULT_DIMENSION);
    let window = WindowConfig::default();
    let run = || {
        let heads = train_demo_heads(&backend, window).unwrap();
        let coded = classify_discussion(&sample_discussion(), &heads, &backend, window).unwrap();
        serialize_transcript(&coded, true)
    };
    assert_eq!(run(), run());
}

#[test]
fn saved_heads_classify_identically() {
    let backend = DeterministicBackend::new(64);
    let window = WindowConfig::symmetric(1).unwrap();
    let heads = train_demo_heads(&backend, window).unwrap();
    let reloaded = dt_core::classifiers::HeadSet {
        argument: load_head_for(&save_head(&heads.argument), 64).unwrap(),
        specificity: load_head_for(&save_head(&heads.specificity), 64).unwrap(),
        collaboration: load_head_for(&save_head(&heads.collaboration), 64).unwrap(),
    };
    let d = sample_discussion();
    assert_eq!(
        classify_discussion(&d, &heads, &backend, window).unwrap(),
        classify_discussion(&d, &reloaded, &backend, window).unwrap()
    );
    assert!(classify_discussion(&d, &heads, &DeterministicBackend::new(32), window).is_err());
    assert!(classify_discussion(&d, &heads, &backend, WindowConfig::default()).is_err());
}
