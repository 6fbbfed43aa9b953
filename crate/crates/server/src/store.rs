//! One JSON document per entity plus an `index.json` per collection.
//!
//! ```text
//! <root>/discussions/index.json
//! <root>/discussions/<id>/v<n>.json
//! <root>/heads/index.json        <root>/heads/<id>.json
//! <root>/goals/...  <root>/jobs/...  <root>/reports/...  <root>/rules/...
//! ```
//!
//! Every file is written to a temporary sibling, synced and renamed into
//! place. Entities are written before the index that lists them, so a crash
//! leaves at worst an unlisted file, never a listed one that is missing.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::Write;
use std::marker::PhantomData;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard};

use chrono::{DateTime, NaiveDate, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use dt_core::analytics::{AssessmentRule, GoalRecord};
use dt_core::classifiers::{load_head, save_head, SoftmaxHead};
use dt_core::corpus_model::{Discussion, Provenance};
use dt_core::evaluation::EvaluationReport;
use dt_core::protocol::{DiscussionSummary, HeadSummary, JobStatus, UploadResponse};

const INDEX: &str = "index.json";
const TMP_SUFFIX: &str = ".tmp";
const MAX_ID_LEN: usize = 128;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("corrupt store file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("no {collection} entry {id:?}")]
    NotFound { collection: &'static str, id: String },
    #[error("{collection} entry {id:?} already exists")]
    Duplicate { collection: &'static str, id: String },
    #[error("invalid id {0:?}: use 1-128 characters from [A-Za-z0-9._-], not starting with '.'")]
    InvalidId(String),
}

type Result<T> = std::result::Result<T, StoreError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id.len() <= MAX_ID_LEN
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'));
    if ok {
        Ok(())
    } else {
        Err(StoreError::InvalidId(id.to_string()))
    }
}

/// Temp file in the target directory, fsync, rename, then fsync the directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().expect("store paths have a parent");
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut tmp = tempfile::Builder::new()
        .prefix(".")
        .suffix(TMP_SUFFIX)
        .tempfile_in(dir)
        .map_err(io_err(dir))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| StoreError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    if let Ok(d) = File::open(dir) {
        let _ = d.sync_all();
    }
    Ok(())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|e| StoreError::Corrupt {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("store types serialize");
    bytes.push(b'\n');
    bytes
}

/// Removes temp files left behind by interrupted writes.
fn sweep_temp_files(dir: &Path) -> Result<usize> {
    let mut removed = 0;
    let Ok(entries) = fs::read_dir(dir) else {
        return Ok(0);
    };
    for entry in entries {
        let entry = entry.map_err(io_err(dir))?;
        let path = entry.path();
        if path.is_dir() {
            removed += sweep_temp_files(&path)?;
        } else if path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.starts_with('.') && n.ends_with(TMP_SUFFIX))
        {
            fs::remove_file(&path).map_err(io_err(&path))?;
            removed += 1;
        }
    }
    Ok(removed)
}

struct Collection<S> {
    name: &'static str,
    dir: PathBuf,
    lock: Mutex<()>,
    _summary: PhantomData<S>,
}

impl<S: Serialize + DeserializeOwned + Clone> Collection<S> {
    fn new(root: &Path, name: &'static str) -> Self {
        Self {
            name,
            dir: root.join(name),
            lock: Mutex::new(()),
            _summary: PhantomData,
        }
    }

    fn guard(&self) -> MutexGuard<'_, ()> {
        self.lock.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn index_path(&self) -> PathBuf {
        self.dir.join(INDEX)
    }

    fn entity_path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    fn read_index(&self) -> Result<BTreeMap<String, S>> {
        let path = self.index_path();
        if !path.exists() {
            return Ok(BTreeMap::new());
        }
        read_json(&path)
    }

    fn write_index(&self, index: &BTreeMap<String, S>) -> Result<()> {
        write_atomic(&self.index_path(), &to_json(index))
    }

    fn not_found(&self, id: &str) -> StoreError {
        StoreError::NotFound {
            collection: self.name,
            id: id.to_string(),
        }
    }

    fn summary(&self, id: &str) -> Result<S> {
        self.read_index()?.remove(id).ok_or_else(|| self.not_found(id))
    }

    /// Writes the entity then lists it. `overwrite = false` rejects ids that
    /// are already listed.
    fn put<T: Serialize>(&self, id: &str, entity: &T, summary: S, overwrite: bool) -> Result<()> {
        check_id(id)?;
        let _g = self.guard();
        let mut index = self.read_index()?;
        if !overwrite && index.contains_key(id) {
            return Err(StoreError::Duplicate {
                collection: self.name,
                id: id.to_string(),
            });
        }
        write_atomic(&self.entity_path(id), &to_json(entity))?;
        index.insert(id.to_string(), summary);
        self.write_index(&index)
    }

    fn get<T: DeserializeOwned>(&self, id: &str) -> Result<T> {
        check_id(id)?;
        if !self.read_index()?.contains_key(id) {
            return Err(self.not_found(id));
        }
        read_json(&self.entity_path(id))
    }

    /// Parses the index and every entity it lists.
    fn verify<T: DeserializeOwned>(&self, keys: impl Fn(&str, &S) -> Vec<String>) -> Result<usize> {
        let index = self.read_index()?;
        let mut n = 0;
        for (id, summary) in &index {
            for key in keys(id, summary) {
                read_json::<T>(&self.entity_path(&key))?;
                n += 1;
            }
        }
        Ok(n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VersionOrigin {
    Upload,
    Classify,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VersionRecord {
    pub version: u32,
    pub provenance: Provenance,
    pub origin: VersionOrigin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub job_id: Option<String>,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscussionRecord {
    pub discussion_id: String,
    pub title: String,
    pub recorded_at: Option<NaiveDate>,
    pub versions: Vec<VersionRecord>,
}

impl DiscussionRecord {
    pub fn latest(&self) -> &VersionRecord {
        self.versions.last().expect("records hold at least one version")
    }

    pub fn summary(&self) -> DiscussionSummary {
        let latest = self.latest();
        DiscussionSummary {
            discussion_id: self.discussion_id.clone(),
            title: self.title.clone(),
            recorded_at: self.recorded_at,
            latest_version: latest.version,
            provenance: latest.provenance,
        }
    }
}

fn version_key(id: &str, version: u32) -> String {
    format!("{id}/v{version}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub report_id: String,
    pub discussion_ids: Vec<String>,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredReport {
    pub record: ReportRecord,
    pub report: EvaluationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RulesRecord {
    pub updated_at: DateTime<Utc>,
    pub count: usize,
}

const RULES_ID: &str = "current";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub temp_files_removed: usize,
    pub discussion_versions: usize,
    pub heads: usize,
    pub goals: usize,
    pub jobs: usize,
    pub reports: usize,
}

pub struct Store {
    root: PathBuf,
    discussions: Collection<DiscussionRecord>,
    heads: Collection<HeadSummary>,
    goals: Collection<GoalRecord>,
    jobs: Collection<JobStatus>,
    reports: Collection<ReportRecord>,
    rules: Collection<RulesRecord>,
}

impl Store {
    /// Opens (creating if needed) the store at `root`, removes leftover temp
    /// files and checks that every index and listed entity parses.
    pub fn open(root: impl Into<PathBuf>) -> Result<(Self, VerifyReport)> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        let removed = sweep_temp_files(&root)?;
        let store = Self {
            discussions: Collection::new(&root, "discussions"),
            heads: Collection::new(&root, "heads"),
            goals: Collection::new(&root, "goals"),
            jobs: Collection::new(&root, "jobs"),
            reports: Collection::new(&root, "reports"),
            rules: Collection::new(&root, "rules"),
            root,
        };
        let mut report = store.verify()?;
        report.temp_files_removed = removed;
        Ok((store, report))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn verify(&self) -> Result<VerifyReport> {
        Ok(VerifyReport {
            temp_files_removed: 0,
            discussion_versions: self.discussions.verify::<Discussion>(|id, r| {
                r.versions.iter().map(|v| version_key(id, v.version)).collect()
            })?,
            heads: self.heads.verify::<serde_json::Value>(|id, _| vec![id.to_string()])?,
            goals: self.goals.verify::<GoalRecord>(|id, _| vec![id.to_string()])?,
            jobs: self.jobs.verify::<JobStatus>(|id, _| vec![id.to_string()])?,
            reports: self.reports.verify::<StoredReport>(|id, _| vec![id.to_string()])?,
        })
    }

    // Discussions.

    pub fn insert_discussion(&self, d: &Discussion) -> Result<UploadResponse> {
        let c = &self.discussions;
        check_id(&d.discussion_id)?;
        let _g = c.guard();
        let mut index = c.read_index()?;
        if index.contains_key(&d.discussion_id) {
            return Err(StoreError::Duplicate {
                collection: c.name,
                id: d.discussion_id.clone(),
            });
        }
        write_atomic(&c.entity_path(&version_key(&d.discussion_id, 1)), &to_json(d))?;
        index.insert(
            d.discussion_id.clone(),
            DiscussionRecord {
                discussion_id: d.discussion_id.clone(),
                title: d.title.clone(),
                recorded_at: d.recorded_at,
                versions: vec![VersionRecord {
                    version: 1,
                    provenance: d.provenance,
                    origin: VersionOrigin::Upload,
                    job_id: None,
                    created_at: Utc::now(),
                }],
            },
        );
        c.write_index(&index)?;
        Ok(UploadResponse {
            discussion_id: d.discussion_id.clone(),
            version: 1,
            provenance: d.provenance,
        })
    }

    /// Stores `d` as the next version of its discussion.
    pub fn add_version(&self, d: &Discussion, origin: VersionOrigin, job_id: Option<&str>) -> Result<u32> {
        let c = &self.discussions;
        let _g = c.guard();
        let mut index = c.read_index()?;
        let record = index
            .get_mut(&d.discussion_id)
            .ok_or_else(|| c.not_found(&d.discussion_id))?;
        let version = record.latest().version + 1;
        write_atomic(&c.entity_path(&version_key(&d.discussion_id, version)), &to_json(d))?;
        record.versions.push(VersionRecord {
            version,
            provenance: d.provenance,
            origin,
            job_id: job_id.map(String::from),
            created_at: Utc::now(),
        });
        c.write_index(&index)?;
        Ok(version)
    }

    pub fn discussion_record(&self, id: &str) -> Result<DiscussionRecord> {
        check_id(id)?;
        self.discussions.summary(id)
    }

    /// The latest version unless `version` is given.
    pub fn discussion(&self, id: &str, version: Option<u32>) -> Result<Discussion> {
        let record = self.discussion_record(id)?;
        let version = match version {
            Some(v) => record
                .versions
                .iter()
                .find(|r| r.version == v)
                .ok_or_else(|| StoreError::NotFound {
                    collection: "discussion versions",
                    id: version_key(id, v),
                })?
                .version,
            None => record.latest().version,
        };
        read_json(&self.discussions.entity_path(&version_key(id, version)))
    }

    pub fn list_discussions(&self) -> Result<Vec<DiscussionSummary>> {
        Ok(self
            .discussions
            .read_index()?
            .values()
            .map(DiscussionRecord::summary)
            .collect())
    }

    pub fn latest_discussions(&self) -> Result<Vec<Discussion>> {
        self.discussions
            .read_index()?
            .values()
            .map(|r| read_json(&self.discussions.entity_path(&version_key(&r.discussion_id, r.latest().version))))
            .collect()
    }

    // Heads are stored in their own model-file format.

    pub fn put_head(&self, id: &str, head: &SoftmaxHead, overwrite: bool) -> Result<HeadSummary> {
        check_id(id)?;
        let c = &self.heads;
        let summary = HeadSummary {
            head_id: id.to_string(),
            task: head.task,
            feature_dim: head.feature_dim,
            backend: head.metadata.backend.clone(),
            embedding_dim: head.metadata.embedding_dim,
            window: head.metadata.window,
        };
        let _g = c.guard();
        let mut index = c.read_index()?;
        if !overwrite && index.contains_key(id) {
            return Err(StoreError::Duplicate {
                collection: c.name,
                id: id.to_string(),
            });
        }
        write_atomic(&c.entity_path(id), &save_head(head))?;
        index.insert(id.to_string(), summary.clone());
        c.write_index(&index)?;
        Ok(summary)
    }

    pub fn head_bytes(&self, id: &str) -> Result<Vec<u8>> {
        check_id(id)?;
        self.heads.summary(id)?;
        let path = self.heads.entity_path(id);
        fs::read(&path).map_err(io_err(&path))
    }

    pub fn head(&self, id: &str) -> Result<SoftmaxHead> {
        let bytes = self.head_bytes(id)?;
        load_head(&bytes).map_err(|e| StoreError::Corrupt {
            path: self.heads.entity_path(id),
            reason: e.to_string(),
        })
    }

    pub fn head_summary(&self, id: &str) -> Result<HeadSummary> {
        check_id(id)?;
        self.heads.summary(id)
    }

    pub fn list_heads(&self) -> Result<Vec<HeadSummary>> {
        Ok(self.heads.read_index()?.into_values().collect())
    }

    // Goals.

    pub fn put_goal(&self, goal: &GoalRecord) -> Result<()> {
        self.goals.put(&goal.goal_id, goal, goal.clone(), false)
    }

    pub fn list_goals(&self) -> Result<Vec<GoalRecord>> {
        let mut goals: Vec<GoalRecord> = self.goals.read_index()?.into_values().collect();
        goals.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.goal_id.cmp(&b.goal_id)));
        Ok(goals)
    }

    // Jobs.

    pub fn put_job(&self, job: &JobStatus) -> Result<()> {
        self.jobs.put(&job.job_id, job, job.clone(), true)
    }

    pub fn job(&self, id: &str) -> Result<JobStatus> {
        self.jobs.get(id)
    }

    pub fn list_jobs(&self) -> Result<Vec<JobStatus>> {
        let mut jobs: Vec<JobStatus> = self.jobs.read_index()?.into_values().collect();
        jobs.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.job_id.cmp(&b.job_id)));
        Ok(jobs)
    }

    // Evaluation reports.

    pub fn put_report(&self, stored: &StoredReport) -> Result<()> {
        self.reports
            .put(&stored.record.report_id, stored, stored.record.clone(), false)
    }

    pub fn report(&self, id: &str) -> Result<StoredReport> {
        self.reports.get(id)
    }

    // Assessment rules: a single document.

    pub fn rules(&self) -> Result<Option<Vec<AssessmentRule>>> {
        match self.rules.get(RULES_ID) {
            Ok(rules) => Ok(Some(rules)),
            Err(StoreError::NotFound { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn put_rules(&self, rules: &[AssessmentRule]) -> Result<()> {
        let record = RulesRecord {
            updated_at: Utc::now(),
            count: rules.len(),
        };
        self.rules.put(RULES_ID, &rules, record, true)
    }
}
