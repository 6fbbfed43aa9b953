//! HTTP routes. Handlers are thin projections over the store and the core
//! modules; errors map to `ErrorBody` JSON.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use serde::de::DeserializeOwned;
use serde::Deserialize;

use dt_core::analytics::{build_bundle, compare_history, AnalyticsError, AssessmentRule, GoalRecord, HistorySeries};
use dt_core::classifiers::{load_head, ClassifierError};
use dt_core::corpus_model::{Discussion, LabelSource};
use dt_core::evaluation::{evaluate_discussions, EvaluationError, EvaluationOptions};
use dt_core::ingestion::{content_id, parse_transcript, serialize_transcript, TranscriptMeta};
use dt_core::protocol::{
    ClassifyRequest, CreateGoal, ErrorBody, EvaluationRequest, HeadIds, Health, JobKind, TrainRequest,
    TranscriptView, UploadParams,
};

use crate::app::AppState;
use crate::jobs::{new_job, submit};
use crate::store::{check_id, StoreError};
use crate::work;

type Shared = Arc<AppState>;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, error: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                error: error.into(),
                line: None,
                detail: None,
            },
        }
    }

    fn bad_request(error: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, error)
    }

    fn unprocessable(error: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, error)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match &e {
            StoreError::NotFound { .. } => StatusCode::NOT_FOUND,
            StoreError::Duplicate { .. } => StatusCode::CONFLICT,
            StoreError::InvalidId(_) => StatusCode::BAD_REQUEST,
            StoreError::Io { .. } | StoreError::Corrupt { .. } => {
                tracing::error!("store failure: {e}");
                StatusCode::INTERNAL_SERVER_ERROR
            }
        };
        Self::new(status, e.to_string())
    }
}

impl From<AnalyticsError> for ApiError {
    fn from(e: AnalyticsError) -> Self {
        let status = match e {
            AnalyticsError::MissingLabels { .. } => StatusCode::CONFLICT,
            AnalyticsError::InvalidRule(_) | AnalyticsError::InvalidTarget(_) | AnalyticsError::UnknownLabel { .. } => {
                StatusCode::BAD_REQUEST
            }
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        let detail = serde_json::to_value(&e).ok();
        let mut err = Self::new(status, e.to_string());
        err.body.detail = detail;
        err
    }
}

impl From<EvaluationError> for ApiError {
    fn from(e: EvaluationError) -> Self {
        let status = match e {
            EvaluationError::MissingLabels { .. } | EvaluationError::NoUnits(_) => StatusCode::CONFLICT,
            EvaluationError::Metric(_) => StatusCode::UNPROCESSABLE_ENTITY,
        };
        Self::new(status, e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// JSON bodies are parsed by hand so that every malformed body is a 400 with
/// an `ErrorBody`. An empty body reads as `default`.
fn parse_body<T: DeserializeOwned>(body: &Bytes, default: Option<T>) -> ApiResult<T> {
    if body.iter().all(u8::is_ascii_whitespace) {
        if let Some(d) = default {
            return Ok(d);
        }
    }
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/discussions", post(upload).get(list_discussions))
        .route("/api/discussions/{id}", get(get_discussion))
        .route("/api/discussions/{id}/versions", get(get_versions))
        .route("/api/discussions/{id}/classify", post(classify))
        .route("/api/discussions/{id}/analytics", get(analytics))
        .route("/api/discussions/{id}/transcript", get(transcript))
        .route("/api/discussions/{id}/export", get(export))
        .route("/api/discussions/{id}/evaluation", get(evaluation))
        .route("/api/history", get(history))
        .route("/api/goals", get(list_goals).post(create_goal))
        .route("/api/rules", get(get_rules).put(put_rules))
        .route("/api/resources", get(resources))
        .route("/api/heads", get(list_heads).post(upload_head))
        .route("/api/heads/{id}", get(get_head))
        .route("/api/train", post(train))
        .route("/api/evaluations", post(evaluate))
        .route("/api/reports/{id}", get(get_report))
        .route("/api/jobs", get(list_jobs))
        .route("/api/jobs/{id}", get(get_job))
        .with_state(state)
}

async fn health(State(s): State<Shared>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        backend: s.backend.name().to_string(),
        dimension: s.backend.dimension(),
        version: env!("CARGO_PKG_VERSION").into(),
    })
}

async fn upload(
    State(s): State<Shared>,
    Query(params): Query<UploadParams>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let content = String::from_utf8(body.to_vec()).map_err(|_| ApiError::bad_request("body is not UTF-8"))?;
    let id = params.id.unwrap_or_else(|| content_id(&content));
    check_id(&id)?;
    let meta = TranscriptMeta {
        discussion_id: Some(id),
        title: params.title,
        recorded_at: params.recorded_at,
    };
    let discussion = parse_transcript(&content, &meta).map_err(|e| {
        let mut err = ApiError::bad_request(e.reason.clone());
        err.body.line = Some(e.line);
        err
    })?;
    let created = blocking(move || Ok(s.store.insert_discussion(&discussion)?)).await?;
    Ok((StatusCode::CREATED, Json(created)))
}

async fn list_discussions(State(s): State<Shared>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.store.list_discussions()?))
}

#[derive(Debug, Default, Deserialize)]
struct VersionQuery {
    version: Option<u32>,
}

async fn get_discussion(
    State(s): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<VersionQuery>,
) -> ApiResult<Json<Discussion>> {
    Ok(Json(s.store.discussion(&id, q.version)?))
}

async fn get_versions(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.store.discussion_record(&id)?))
}

async fn classify(
    State(s): State<Shared>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let req: ClassifyRequest = parse_body(&body, Some(ClassifyRequest::default()))?;
    s.store.discussion_record(&id)?;
    if let Some(name) = &req.backend {
        if name != s.backend.name() {
            return Err(ApiError::unprocessable(format!(
                "backend {name:?} is not available; this service runs {:?}",
                s.backend.name()
            )));
        }
    }
    let ids = req.head_ids.unwrap_or_else(HeadIds::demo);
    let heads = s.head_set(&ids).map_err(|e| match e {
        StoreError::NotFound { id, .. } => ApiError::unprocessable(format!("missing head {id:?}")),
        other => other.into(),
    })?;
    let window = req
        .window
        .or(heads.argument.metadata.window)
        .unwrap_or_default();
    heads
        .check(s.backend.dimension(), window)
        .map_err(|e| ApiError::unprocessable(e.to_string()))?;
    for head in [&heads.argument, &heads.specificity, &heads.collaboration] {
        if head.metadata.backend != s.backend.name() {
            return Err(ApiError::unprocessable(format!(
                "{} head was trained on backend {:?}, this service runs {:?}",
                head.task,
                head.metadata.backend,
                s.backend.name()
            )));
        }
    }
    let job = new_job(JobKind::Classify, Some(id));
    let status = submit(s.clone(), job, work::classify(heads, window))?;
    Ok((StatusCode::ACCEPTED, Json(status)))
}

#[derive(Debug, Deserialize)]
struct SourceQuery {
    #[serde(default = "gold")]
    source: LabelSource,
    version: Option<u32>,
}

fn gold() -> LabelSource {
    LabelSource::Gold
}

async fn analytics(
    State(s): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<SourceQuery>,
) -> ApiResult<impl IntoResponse> {
    let d = s.store.discussion(&id, q.version)?;
    let bundle = build_bundle(&d, q.source, &s.rules()?, &s.resources)?;
    Ok(Json(bundle))
}

#[derive(Debug, Deserialize)]
struct TranscriptQuery {
    #[serde(default = "gold")]
    annotations: LabelSource,
    version: Option<u32>,
}

async fn transcript(
    State(s): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<TranscriptQuery>,
) -> ApiResult<impl IntoResponse> {
    let d = s.store.discussion(&id, q.version)?;
    Ok(Json(TranscriptView::build(&d, q.annotations)))
}

#[derive(Debug, Default, Deserialize)]
struct ExportQuery {
    #[serde(default)]
    predictions: bool,
    version: Option<u32>,
}

async fn export(
    State(s): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<ExportQuery>,
) -> ApiResult<impl IntoResponse> {
    let d = s.store.discussion(&id, q.version)?;
    Ok((
        [(header::CONTENT_TYPE, "text/csv; charset=utf-8")],
        serialize_transcript(&d, q.predictions),
    ))
}

#[derive(Debug, Default, Deserialize)]
struct EvaluationQuery {
    #[serde(default)]
    exclude_fallback: bool,
    #[serde(default)]
    format: Option<String>,
    version: Option<u32>,
}

async fn evaluation(
    State(s): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<EvaluationQuery>,
) -> ApiResult<Response> {
    let d = s.store.discussion(&id, q.version)?;
    let report = evaluate_discussions(
        &[d],
        EvaluationOptions {
            exclude_fallback: q.exclude_fallback,
        },
    )?;
    Ok(match q.format.as_deref() {
        None | Some("json") => Json(report).into_response(),
        Some("table") => ([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], report.to_table()).into_response(),
        Some(other) => return Err(ApiError::bad_request(format!("unknown format {other:?}; expected json|table"))),
    })
}

#[derive(Debug, Deserialize)]
struct HistoryQuery {
    #[serde(default = "gold")]
    source: LabelSource,
}

async fn history(State(s): State<Shared>, Query(q): Query<HistoryQuery>) -> ApiResult<Json<HistorySeries>> {
    let discussions = blocking({
        let s = s.clone();
        move || Ok(s.store.latest_discussions()?)
    })
    .await?;
    if discussions.is_empty() {
        return Ok(Json(HistorySeries {
            entries: Vec::new(),
            skipped: Vec::new(),
        }));
    }
    let refs: Vec<&Discussion> = discussions.iter().collect();
    Ok(Json(compare_history(&refs, q.source)?))
}

#[derive(Debug, Default, Deserialize)]
struct GoalQuery {
    discussion_id: Option<String>,
}

async fn list_goals(State(s): State<Shared>, Query(q): Query<GoalQuery>) -> ApiResult<impl IntoResponse> {
    let goals: Vec<GoalRecord> = s
        .store
        .list_goals()?
        .into_iter()
        .filter(|g| q.discussion_id.as_ref().is_none_or(|id| &g.discussion_id == id))
        .collect();
    Ok(Json(goals))
}

async fn create_goal(State(s): State<Shared>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let req: CreateGoal = parse_body(&body, None)?;
    let goal = GoalRecord {
        goal_id: format!("goal-{}", uuid::Uuid::new_v4().simple()),
        discussion_id: req.discussion_id,
        dimension: req.dimension,
        label: req.label,
        target_percentage: req.target_percentage,
        created_at: Utc::now(),
        note: req.note,
    };
    goal.check()?;
    s.store.discussion_record(&goal.discussion_id)?;
    s.store.put_goal(&goal)?;
    Ok((StatusCode::CREATED, Json(goal)))
}

async fn get_rules(State(s): State<Shared>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.rules()?))
}

async fn put_rules(State(s): State<Shared>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let rules: Vec<AssessmentRule> = parse_body(&body, None)?;
    for r in &rules {
        r.check()?;
    }
    s.store.put_rules(&rules)?;
    Ok(Json(rules))
}

async fn resources(State(s): State<Shared>) -> Json<Vec<dt_core::analytics::ResourceLink>> {
    Json(s.resources.clone())
}

async fn list_heads(State(s): State<Shared>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.store.list_heads()?))
}

async fn get_head(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(([(header::CONTENT_TYPE, "application/json")], s.store.head_bytes(&id)?))
}

#[derive(Debug, Deserialize)]
struct HeadUploadQuery {
    id: String,
    #[serde(default)]
    overwrite: bool,
}

async fn upload_head(
    State(s): State<Shared>,
    Query(q): Query<HeadUploadQuery>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let head = load_head(&body).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let summary = s.store.put_head(&q.id, &head, q.overwrite)?;
    Ok((StatusCode::CREATED, Json(summary)))
}

async fn train(State(s): State<Shared>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let req: TrainRequest = parse_body(&body, None)?;
    let window = req.window.unwrap_or_default();
    let cfg = req.config.clone().unwrap_or_default();
    let invalid = |e: ClassifierError| ApiError::bad_request(e.to_string());
    window.check().map_err(invalid)?;
    cfg.check().map_err(invalid)?;
    if let Some(id) = &req.head_id {
        check_id(id)?;
    }
    if let Some(ids) = &req.discussion_ids {
        for id in ids {
            s.store.discussion_record(id)?;
        }
    }
    let job = new_job(JobKind::Train, None);
    let status = submit(s.clone(), job, work::train(req, window, cfg))?;
    Ok((StatusCode::ACCEPTED, Json(status)))
}

async fn evaluate(State(s): State<Shared>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let req: EvaluationRequest = parse_body(&body, None)?;
    if req.discussion_ids.is_empty() {
        return Err(ApiError::bad_request("discussion_ids is empty"));
    }
    for id in &req.discussion_ids {
        s.store.discussion_record(id)?;
    }
    let job = new_job(JobKind::Evaluate, None);
    let status = submit(s.clone(), job, work::evaluate(req))?;
    Ok((StatusCode::ACCEPTED, Json(status)))
}

async fn get_report(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.store.report(&id)?))
}

async fn list_jobs(State(s): State<Shared>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.store.list_jobs()?))
}

async fn get_job(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.store.job(&id)?))
}
