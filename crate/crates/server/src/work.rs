//! Job bodies. Each runs on the blocking pool and returns the id of what it
//! produced.

use chrono::Utc;
use dt_core::classifiers::{classify_discussion, train_task, HeadSet, TrainConfig, WindowConfig};
use dt_core::evaluation::evaluate_discussions;
use dt_core::protocol::{EvaluationRequest, TrainRequest};

use crate::jobs::Work;
use crate::store::{ReportRecord, StoredReport, VersionOrigin};

/// Classifies the latest version and stores the result as a new version.
/// `result_ref` is `<discussion_id>/v<version>`.
pub fn classify(heads: HeadSet, window: WindowConfig) -> Work {
    Box::new(move |state, job| {
        let id = job.discussion_id.as_deref().ok_or("classify job without a discussion")?;
        let d = state.store.discussion(id, None).map_err(|e| e.to_string())?;
        let coded = classify_discussion(&d, &heads, state.backend.as_ref(), window).map_err(|e| e.to_string())?;
        let version = state
            .store
            .add_version(&coded, VersionOrigin::Classify, Some(&job.job_id))
            .map_err(|e| e.to_string())?;
        Ok(format!("{id}/v{version}"))
    })
}

/// Trains one head on the gold labels of the chosen (or all) discussions.
pub fn train(req: TrainRequest, window: WindowConfig, cfg: TrainConfig) -> Work {
    Box::new(move |state, job| {
        let discussions = match &req.discussion_ids {
            Some(ids) => ids
                .iter()
                .map(|id| state.store.discussion(id, None))
                .collect::<Result<Vec<_>, _>>(),
            None => state.store.latest_discussions(),
        }
        .map_err(|e| e.to_string())?;
        let (head, _) =
            train_task(req.task, &discussions, state.backend.as_ref(), window, &cfg).map_err(|e| e.to_string())?;
        let head_id = req
            .head_id
            .clone()
            .unwrap_or_else(|| format!("{}-{}", req.task, job.job_id.trim_start_matches("job-")));
        state
            .store
            .put_head(&head_id, &head, req.head_id.is_some())
            .map_err(|e| e.to_string())?;
        Ok(head_id)
    })
}

/// Pools the latest versions of the listed discussions into one report.
pub fn evaluate(req: EvaluationRequest) -> Work {
    Box::new(move |state, job| {
        let discussions = req
            .discussion_ids
            .iter()
            .map(|id| state.store.discussion(id, None))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        let report = evaluate_discussions(&discussions, req.options).map_err(|e| e.to_string())?;
        let report_id = format!("report-{}", job.job_id.trim_start_matches("job-"));
        state
            .store
            .put_report(&StoredReport {
                record: ReportRecord {
                    report_id: report_id.clone(),
                    discussion_ids: req.discussion_ids.clone(),
                    created_at: Utc::now(),
                },
                report,
            })
            .map_err(|e| e.to_string())?;
        Ok(report_id)
    })
}
