//! In-process job queue. Work runs on the blocking pool; jobs touching the
//! same discussion run one at a time, in submission order.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use chrono::Utc;
use dt_core::protocol::{JobKind, JobState, JobStatus};

use crate::app::AppState;
use crate::store::{Store, StoreError};

pub const INTERRUPTED: &str = "interrupted: the service stopped before the job finished";

pub fn new_job(kind: JobKind, discussion_id: Option<String>) -> JobStatus {
    let now = Utc::now();
    JobStatus {
        job_id: format!("job-{}", uuid::Uuid::new_v4().simple()),
        kind,
        state: JobState::Queued,
        discussion_id,
        error: None,
        result_ref: None,
        created_at: now,
        updated_at: now,
    }
}

/// Persists a legal state change; illegal ones are a programming error.
pub fn transition(
    store: &Store,
    job: &mut JobStatus,
    next: JobState,
    outcome: Option<Result<String, String>>,
) -> Result<(), StoreError> {
    assert!(
        job.state.can_become(next),
        "illegal job transition {:?} -> {next:?}",
        job.state
    );
    job.state = next;
    job.updated_at = Utc::now();
    match outcome {
        Some(Ok(result_ref)) => job.result_ref = Some(result_ref),
        Some(Err(error)) => job.error = Some(error),
        None => {}
    }
    store.put_job(job)
}

/// Marks jobs left unfinished by a previous process as failed, going
/// through `Running` so the state machine is respected.
pub fn recover(store: &Store) -> Result<usize, StoreError> {
    let mut n = 0;
    for mut job in store.list_jobs()? {
        if job.state.is_terminal() {
            continue;
        }
        if job.state == JobState::Queued {
            transition(store, &mut job, JobState::Running, None)?;
        }
        transition(store, &mut job, JobState::Failed, Some(Err(INTERRUPTED.into())))?;
        n += 1;
    }
    Ok(n)
}

#[derive(Default)]
pub struct DiscussionLocks(Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>);

impl DiscussionLocks {
    fn get(&self, id: &str) -> Arc<tokio::sync::Mutex<()>> {
        let mut map = self.0.lock().unwrap_or_else(|e| e.into_inner());
        map.entry(id.to_string()).or_default().clone()
    }
}

pub type Work = Box<dyn FnOnce(&AppState, &JobStatus) -> Result<String, String> + Send>;

/// Stores `job` as queued and runs `work` in the background. The work's
/// `Ok` value becomes `result_ref`.
pub fn submit(state: Arc<AppState>, mut job: JobStatus, work: Work) -> Result<JobStatus, StoreError> {
    state.store.put_job(&job)?;
    let queued = job.clone();
    tokio::spawn(async move {
        let lock = job.discussion_id.as_deref().map(|id| state.locks.get(id));
        let _guard = match &lock {
            Some(l) => Some(l.lock().await),
            None => None,
        };
        if let Err(e) = transition(&state.store, &mut job, JobState::Running, None) {
            tracing::error!(job = %job.job_id, "cannot record job start: {e}");
            return;
        }
        let worker_state = state.clone();
        let running = job.clone();
        let outcome = tokio::task::spawn_blocking(move || work(&worker_state, &running))
            .await
            .unwrap_or_else(|e| Err(format!("job panicked: {e}")));
        let next = if outcome.is_ok() {
            JobState::Done
        } else {
            JobState::Failed
        };
        if let Err(e) = &outcome {
            tracing::warn!(job = %job.job_id, "job failed: {e}");
        }
        if let Err(e) = transition(&state.store, &mut job, next, Some(outcome)) {
            tracing::error!(job = %job.job_id, "cannot record job result: {e}");
        }
    });
    Ok(queued)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovery_fails_unfinished_jobs() {
        let dir = tempfile::tempdir().unwrap();
        let (store, _) = Store::open(dir.path()).unwrap();
        let queued = new_job(JobKind::Classify, Some("d".into()));
        let mut running = new_job(JobKind::Train, None);
        running.state = JobState::Running;
        let mut done = new_job(JobKind::Evaluate, None);
        done.state = JobState::Done;
        for j in [&queued, &running, &done] {
            store.put_job(j).unwrap();
        }
        assert_eq!(recover(&store).unwrap(), 2);
        assert_eq!(store.job(&queued.job_id).unwrap().state, JobState::Failed);
        assert_eq!(store.job(&running.job_id).unwrap().error.as_deref(), Some(INTERRUPTED));
        assert_eq!(store.job(&done.job_id).unwrap().state, JobState::Done);
        assert_eq!(recover(&store).unwrap(), 0);
    }

    #[test]
    #[should_panic(expected = "illegal job transition")]
    fn illegal_transitions_panic() {
        let dir = tempfile::tempdir().unwrap();
        let (store, _) = Store::open(dir.path()).unwrap();
        let mut job = new_job(JobKind::Classify, None);
        transition(&store, &mut job, JobState::Done, None).unwrap();
    }
}
