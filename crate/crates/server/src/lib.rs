//! Discussion analytics service: a file-backed store, an in-process job
//! queue and a JSON API over the core pipeline.

pub mod api;
pub mod app;
pub mod config;
pub mod jobs;
pub mod store;
pub mod work;

pub use app::{run, AppState, StartupError};
pub use config::{BackendKind, Config};
