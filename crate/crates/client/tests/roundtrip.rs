use std::sync::Arc;
use std::time::Duration;

use dt_client::{Client, ClientError};
use dt_core::analytics::AssessmentRule;
use dt_core::corpus_model::{Dimension, LabelSource};
use dt_core::protocol::{ClassifyRequest, CreateGoal, EvaluationRequest, JobState, TrainRequest, UploadParams};
use dt_core::sample::{sample_discussion, SAMPLE_ID, SAMPLE_TRANSCRIPT};
use dt_server::{AppState, Config};

async fn serve() -> (Client, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let config = Config {
        data_root: dir.path().to_path_buf(),
        embedding_dim: 24,
        ..Config::default()
    };
    let state = tokio::task::spawn_blocking(move || {
        let s = AppState::open(config).unwrap();
        s.seed();
        Arc::new(s)
    })
    .await
    .unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, dt_server::api::router(state)).await });
    (Client::new(format!("http://{addr}/")), dir)
}

fn sample_params() -> UploadParams {
    UploadParams {
        id: Some(SAMPLE_ID.into()),
        title: Some("Of Mice and Men, chapters 3-6".into()),
        recorded_at: chrono::NaiveDate::from_ymd_opt(2020, 2, 14),
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn full_pipeline_through_the_client() {
    let (client, _dir) = serve().await;
    assert_eq!(client.health().await.unwrap().dimension, 24);

    let created = client.upload(SAMPLE_TRANSCRIPT, &sample_params()).await.unwrap();
    assert_eq!(created.discussion_id, SAMPLE_ID);
    assert_eq!(client.discussion(SAMPLE_ID, None).await.unwrap(), sample_discussion());
    let dup = client.upload(SAMPLE_TRANSCRIPT, &sample_params()).await.unwrap_err();
    assert_eq!(dup.status(), Some(reqwest::StatusCode::CONFLICT));

    let job = client.classify(SAMPLE_ID, &ClassifyRequest::default()).await.unwrap();
    let done = client.wait_for_job(&job.job_id, Duration::from_secs(60)).await.unwrap();
    assert_eq!(done.state, JobState::Done);
    assert_eq!(client.discussion(SAMPLE_ID, Some(1)).await.unwrap(), sample_discussion());

    let bundle = client.analytics(SAMPLE_ID, LabelSource::Predicted).await.unwrap();
    assert_eq!(bundle.distributions.len(), 3);
    let view = client.transcript(SAMPLE_ID, LabelSource::Predicted).await.unwrap();
    assert_eq!(view.turns.len(), 22);
    let csv = client.export(SAMPLE_ID, true, None).await.unwrap();
    assert!(csv.starts_with("turn_index,speaker_id"));
    assert_eq!(client.export(SAMPLE_ID, false, Some(1)).await.unwrap().lines().count(), SAMPLE_TRANSCRIPT.lines().count());
    let report = client.evaluation(SAMPLE_ID, true).await.unwrap();
    assert_eq!(report.rows.len(), 3);
    assert!(client.evaluation_table(SAMPLE_ID, false).await.unwrap().contains("Macro F"));
    assert_eq!(client.history(LabelSource::Gold).await.unwrap().entries.len(), 1);

    let goal = client
        .create_goal(&CreateGoal {
            discussion_id: SAMPLE_ID.into(),
            dimension: Dimension::Collaboration,
            label: "challenge_probe".into(),
            target_percentage: 20.0,
            note: String::new(),
        })
        .await
        .unwrap();
    assert_eq!(client.goals(Some(SAMPLE_ID)).await.unwrap(), [goal]);
    assert!(client.goals(Some("other")).await.unwrap().is_empty());

    let rules = vec![AssessmentRule::new(Dimension::Specificity, "high", 5.0, 50.0)];
    assert_eq!(client.put_rules(&rules).await.unwrap(), rules);
    assert_eq!(client.rules().await.unwrap(), rules);
    assert!(client.resources().await.unwrap().is_empty());

    let bytes = client.head_bytes("demo-collaboration").await.unwrap();
    client.upload_head("collab-copy", bytes, false).await.unwrap();
    assert_eq!(client.heads().await.unwrap().len(), 4);

    let train = client
        .train(&TrainRequest {
            task: Dimension::Collaboration,
            discussion_ids: None,
            window: None,
            config: None,
            head_id: Some("collab-2".into()),
        })
        .await
        .unwrap();
    let trained = client.wait_for_job(&train.job_id, Duration::from_secs(60)).await.unwrap();
    assert_eq!(trained.result_ref.as_deref(), Some("collab-2"));

    let eval = client
        .evaluate(&EvaluationRequest {
            discussion_ids: vec![SAMPLE_ID.into()],
            options: Default::default(),
        })
        .await
        .unwrap();
    let eval = client.wait_for_job(&eval.job_id, Duration::from_secs(60)).await.unwrap();
    let stored = client.report(eval.result_ref.as_deref().unwrap()).await.unwrap();
    assert_eq!(stored["report"]["rows"].as_array().unwrap().len(), 3);
    assert_eq!(client.jobs().await.unwrap().len(), 3);
}

#[tokio::test(flavor = "multi_thread")]
async fn errors_carry_the_server_body() {
    let (client, _dir) = serve().await;
    let bad = SAMPLE_TRANSCRIPT.replacen("claim", "assertion", 1);
    match client.upload(bad, &UploadParams::default()).await {
        Err(ClientError::Api { status, body }) => {
            assert_eq!(status, reqwest::StatusCode::BAD_REQUEST);
            assert_eq!(body.line, Some(3));
        }
        other => panic!("{other:?}"),
    }
    let missing = client.analytics("nope", LabelSource::Gold).await.unwrap_err();
    assert_eq!(missing.status(), Some(reqwest::StatusCode::NOT_FOUND));
    assert!(missing.to_string().contains("404"));

    let offline = Client::new("http://127.0.0.1:9");
    assert!(matches!(offline.health().await, Err(ClientError::Http(_))));
}
