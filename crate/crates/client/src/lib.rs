//! Async client for the discussion analytics JSON API.

use std::time::{Duration, Instant};

use reqwest::{Method, RequestBuilder, Response, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;

use dt_core::analytics::{AnalyticsBundle, AssessmentRule, GoalRecord, HistorySeries, ResourceLink};
use dt_core::corpus_model::{Discussion, LabelSource};
use dt_core::evaluation::EvaluationReport;
use dt_core::protocol::{
    ClassifyRequest, CreateGoal, DiscussionSummary, ErrorBody, EvaluationRequest, HeadSummary, Health, JobStatus,
    TrainRequest, TranscriptView, UploadParams, UploadResponse,
};

pub const DEFAULT_SERVER: &str = "http://127.0.0.1:8080";

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Http(#[from] reqwest::Error),
    #[error("server answered {status}: {}{}", .body.error, .body.line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Api { status: StatusCode, body: ErrorBody },
    #[error("job {job_id} did not finish within {waited:?}")]
    Timeout { job_id: String, waited: Duration },
}

impl ClientError {
    pub fn status(&self) -> Option<StatusCode> {
        match self {
            ClientError::Api { status, .. } => Some(*status),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

fn source_str(source: LabelSource) -> &'static str {
    match source {
        LabelSource::Gold => "gold",
        LabelSource::Predicted => "predicted",
    }
}

impl Client {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base: base_url.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn request(&self, method: Method, path: &str) -> RequestBuilder {
        self.http.request(method, format!("{}{path}", self.base))
    }

    /// Non-2xx answers become `ClientError::Api`, keeping the server's body
    /// when it is an `ErrorBody`.
    async fn checked(req: RequestBuilder) -> Result<Response> {
        let resp = req.send().await?;
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let text = resp.text().await.unwrap_or_default();
        let body = serde_json::from_str(&text).unwrap_or(ErrorBody {
            error: text,
            line: None,
            detail: None,
        });
        Err(ClientError::Api { status, body })
    }

    async fn json<T: DeserializeOwned>(req: RequestBuilder) -> Result<T> {
        Ok(Self::checked(req).await?.json().await?)
    }

    async fn text(req: RequestBuilder) -> Result<String> {
        Ok(Self::checked(req).await?.text().await?)
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        Self::json(self.request(Method::GET, path)).await
    }

    async fn post<B: Serialize + ?Sized, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        Self::json(self.request(Method::POST, path).json(body)).await
    }

    pub async fn health(&self) -> Result<Health> {
        self.get("/api/health").await
    }

    pub async fn upload(&self, csv: impl Into<String>, params: &UploadParams) -> Result<UploadResponse> {
        let req = self
            .request(Method::POST, "/api/discussions")
            .query(params)
            .header(reqwest::header::CONTENT_TYPE, "text/csv")
            .body(csv.into());
        Self::json(req).await
    }

    pub async fn discussions(&self) -> Result<Vec<DiscussionSummary>> {
        self.get("/api/discussions").await
    }

    pub async fn discussion(&self, id: &str, version: Option<u32>) -> Result<Discussion> {
        let req = self
            .request(Method::GET, &format!("/api/discussions/{id}"))
            .query(&[("version", version)]);
        Self::json(req).await
    }

    pub async fn versions(&self, id: &str) -> Result<serde_json::Value> {
        self.get(&format!("/api/discussions/{id}/versions")).await
    }

    pub async fn classify(&self, id: &str, req: &ClassifyRequest) -> Result<JobStatus> {
        self.post(&format!("/api/discussions/{id}/classify"), req).await
    }

    pub async fn job(&self, job_id: &str) -> Result<JobStatus> {
        self.get(&format!("/api/jobs/{job_id}")).await
    }

    pub async fn jobs(&self) -> Result<Vec<JobStatus>> {
        self.get("/api/jobs").await
    }

    /// Polls until the job is `Done` or `Failed`.
    pub async fn wait_for_job(&self, job_id: &str, timeout: Duration) -> Result<JobStatus> {
        let start = Instant::now();
        let mut delay = Duration::from_millis(20);
        loop {
            let job = self.job(job_id).await?;
            if job.state.is_terminal() {
                return Ok(job);
            }
            if start.elapsed() >= timeout {
                return Err(ClientError::Timeout {
                    job_id: job_id.to_string(),
                    waited: start.elapsed(),
                });
            }
            tokio::time::sleep(delay).await;
            delay = (delay * 2).min(Duration::from_millis(500));
        }
    }

    pub async fn analytics(&self, id: &str, source: LabelSource) -> Result<AnalyticsBundle> {
        let req = self
            .request(Method::GET, &format!("/api/discussions/{id}/analytics"))
            .query(&[("source", source_str(source))]);
        Self::json(req).await
    }

    pub async fn transcript(&self, id: &str, annotations: LabelSource) -> Result<TranscriptView> {
        let req = self
            .request(Method::GET, &format!("/api/discussions/{id}/transcript"))
            .query(&[("annotations", source_str(annotations))]);
        Self::json(req).await
    }

    /// Canonical CSV of the latest (or given) version.
    pub async fn export(&self, id: &str, predictions: bool, version: Option<u32>) -> Result<String> {
        let mut req = self
            .request(Method::GET, &format!("/api/discussions/{id}/export"))
            .query(&[("predictions", predictions)]);
        if let Some(v) = version {
            req = req.query(&[("version", v)]);
        }
        Self::text(req).await
    }

    pub async fn evaluation(&self, id: &str, exclude_fallback: bool) -> Result<EvaluationReport> {
        let req = self
            .request(Method::GET, &format!("/api/discussions/{id}/evaluation"))
            .query(&[("exclude_fallback", exclude_fallback)]);
        Self::json(req).await
    }

    pub async fn evaluation_table(&self, id: &str, exclude_fallback: bool) -> Result<String> {
        let req = self
            .request(Method::GET, &format!("/api/discussions/{id}/evaluation"))
            .query(&[("exclude_fallback", exclude_fallback.to_string()), ("format", "table".into())]);
        Self::text(req).await
    }

    pub async fn history(&self, source: LabelSource) -> Result<HistorySeries> {
        Self::json(self.request(Method::GET, "/api/history").query(&[("source", source_str(source))])).await
    }

    pub async fn goals(&self, discussion_id: Option<&str>) -> Result<Vec<GoalRecord>> {
        Self::json(self.request(Method::GET, "/api/goals").query(&[("discussion_id", discussion_id)])).await
    }

    pub async fn create_goal(&self, goal: &CreateGoal) -> Result<GoalRecord> {
        self.post("/api/goals", goal).await
    }

    pub async fn rules(&self) -> Result<Vec<AssessmentRule>> {
        self.get("/api/rules").await
    }

    pub async fn put_rules(&self, rules: &[AssessmentRule]) -> Result<Vec<AssessmentRule>> {
        Self::json(self.request(Method::PUT, "/api/rules").json(rules)).await
    }

    pub async fn resources(&self) -> Result<Vec<ResourceLink>> {
        self.get("/api/resources").await
    }

    pub async fn heads(&self) -> Result<Vec<HeadSummary>> {
        self.get("/api/heads").await
    }

    /// The model file as stored.
    pub async fn head_bytes(&self, id: &str) -> Result<Vec<u8>> {
        let resp = Self::checked(self.request(Method::GET, &format!("/api/heads/{id}"))).await?;
        Ok(resp.bytes().await?.to_vec())
    }

    pub async fn upload_head(&self, id: &str, model_file: Vec<u8>, overwrite: bool) -> Result<HeadSummary> {
        let req = self
            .request(Method::POST, "/api/heads")
            .query(&[("id", id.to_string()), ("overwrite", overwrite.to_string())])
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(model_file);
        Self::json(req).await
    }

    pub async fn train(&self, req: &TrainRequest) -> Result<JobStatus> {
        self.post("/api/train", req).await
    }

    pub async fn evaluate(&self, req: &EvaluationRequest) -> Result<JobStatus> {
        self.post("/api/evaluations", req).await
    }

    pub async fn report(&self, report_id: &str) -> Result<serde_json::Value> {
        self.get(&format!("/api/reports/{report_id}")).await
    }
}
