use std::net::SocketAddr;
use std::sync::Arc;

use dt_core::analytics::{default_rules, AssessmentRule, ResourceLink};
use dt_core::classifiers::{HeadSet, WindowConfig};
use dt_core::embedding::{DeterministicBackend, EmbeddingBackend, ExternalBackend};
use dt_core::protocol::HeadIds;
use dt_core::sample::{sample_discussion, train_demo_heads};

use crate::config::{BackendKind, Config};
use crate::jobs::{self, DiscussionLocks};
use crate::store::{Store, StoreError};

pub struct AppState {
    pub store: Store,
    pub backend: Arc<dyn EmbeddingBackend>,
    pub config: Config,
    pub resources: Vec<ResourceLink>,
    file_rules: Option<Vec<AssessmentRule>>,
    pub(crate) locks: DiscussionLocks,
}

#[derive(Debug, thiserror::Error)]
pub enum StartupError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("cannot load {what} from {path}: {reason}")]
    File {
        what: &'static str,
        path: String,
        reason: String,
    },
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("server error: {0}")]
    Serve(std::io::Error),
}

fn load_list<T: serde::de::DeserializeOwned>(
    what: &'static str,
    path: &std::path::Path,
) -> Result<Vec<T>, StartupError> {
    let err = |reason: String| StartupError::File {
        what,
        path: path.display().to_string(),
        reason,
    };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| err(e.to_string()))
}

pub fn make_backend(config: &Config) -> Arc<dyn EmbeddingBackend> {
    match config.backend {
        BackendKind::Deterministic => Arc::new(DeterministicBackend::new(config.embedding_dim)),
        BackendKind::External => Arc::new(ExternalBackend::new(
            config.backend_url.clone().unwrap_or_default(),
            config.model.clone(),
            config.embedding_dim,
        )),
    }
}

impl AppState {
    /// Opens the store, fails unfinished jobs and loads rule and resource
    /// files. Blocking; call from a blocking context.
    pub fn open(config: Config) -> Result<Self, StartupError> {
        let (store, report) = Store::open(&config.data_root)?;
        tracing::info!(?report, root = %config.data_root.display(), "store opened");
        let failed = jobs::recover(&store)?;
        if failed > 0 {
            tracing::warn!("marked {failed} interrupted job(s) as failed");
        }
        let file_rules = match &config.rules_path {
            Some(p) => {
                let rules: Vec<AssessmentRule> = load_list("rules", p)?;
                for r in &rules {
                    r.check().map_err(|e| StartupError::File {
                        what: "rules",
                        path: p.display().to_string(),
                        reason: e.to_string(),
                    })?;
                }
                Some(rules)
            }
            None => None,
        };
        let resources = match &config.resources_path {
            Some(p) => load_list("resources", p)?,
            None => Vec::new(),
        };
        Ok(Self {
            store,
            backend: make_backend(&config),
            config,
            resources,
            file_rules,
            locks: DiscussionLocks::default(),
        })
    }

    /// Stored rules, else the rules file, else the shipped defaults.
    pub fn rules(&self) -> Result<Vec<AssessmentRule>, StoreError> {
        Ok(match self.store.rules()? {
            Some(r) => r,
            None => self.file_rules.clone().unwrap_or_else(default_rules),
        })
    }

    pub fn head_set(&self, ids: &HeadIds) -> Result<HeadSet, StoreError> {
        Ok(HeadSet {
            argument: self.store.head(&ids.argument)?,
            specificity: self.store.head(&ids.specificity)?,
            collaboration: self.store.head(&ids.collaboration)?,
        })
    }

    fn demo_heads_current(&self) -> bool {
        let ids = HeadIds::demo();
        [ids.argument, ids.specificity, ids.collaboration].iter().all(|id| {
            self.store.head_summary(id).is_ok_and(|h| {
                h.backend == self.backend.name() && h.embedding_dim == self.backend.dimension()
            })
        })
    }

    /// Trains the demo heads on the bundled sample unless heads for the
    /// configured backend already exist.
    pub fn seed_demo_heads(&self) -> Result<bool, String> {
        if self.demo_heads_current() {
            return Ok(false);
        }
        let heads = train_demo_heads(self.backend.as_ref(), WindowConfig::default()).map_err(|e| e.to_string())?;
        let ids = HeadIds::demo();
        for (id, head) in [
            (&ids.argument, &heads.argument),
            (&ids.specificity, &heads.specificity),
            (&ids.collaboration, &heads.collaboration),
        ] {
            self.store.put_head(id, head, true).map_err(|e| e.to_string())?;
        }
        Ok(true)
    }

    pub fn seed_sample(&self) -> Result<bool, StoreError> {
        if !self.store.list_discussions()?.is_empty() {
            return Ok(false);
        }
        self.store.insert_discussion(&sample_discussion())?;
        Ok(true)
    }

    /// Runs the configured seeding steps; failures are logged, not fatal.
    pub fn seed(&self) {
        if self.config.seed_demo_heads {
            match self.seed_demo_heads() {
                Ok(true) => tracing::info!("trained demo heads on the bundled sample"),
                Ok(false) => {}
                Err(e) => tracing::warn!("demo heads unavailable: {e}"),
            }
        }
        if self.config.seed_sample {
            if let Err(e) = self.seed_sample() {
                tracing::warn!("cannot store the sample discussion: {e}");
            }
        }
    }
}

/// Opens state, binds and serves until ctrl-c. The bound address is printed
/// on stdout as `listening on http://<addr>`.
pub async fn run(config: Config) -> Result<(), StartupError> {
    let state = tokio::task::spawn_blocking(move || {
        let state = AppState::open(config)?;
        state.seed();
        Ok::<_, StartupError>(Arc::new(state))
    })
    .await
    .expect("startup task does not panic")?;

    let addr = format!("{}:{}", state.config.host, state.config.port);
    let listener = tokio::net::TcpListener::bind(&addr)
        .await
        .map_err(|source| StartupError::Bind { addr, source })?;
    let local: SocketAddr = listener.local_addr().map_err(StartupError::Serve)?;
    println!("listening on http://{local}");
    use std::io::Write;
    let _ = std::io::stdout().flush();

    axum::serve(listener, crate::api::router(state.clone()))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(StartupError::Serve)?;
    // The external backend owns a blocking HTTP client, which must not be
    // dropped on an async worker.
    let _ = tokio::task::spawn_blocking(move || drop(state)).await;
    Ok(())
}
