//! `dt`: ingest, classify and evaluate discussions through the service, train
//! heads locally, or run the service itself.

mod train;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use dt_client::{Client, DEFAULT_SERVER};
use dt_core::classifiers::WindowConfig;
use dt_core::corpus_model::LabelSource;
use dt_core::protocol::{ClassifyRequest, HeadIds, JobState, UploadParams};
use dt_core::sample::SAMPLE_TRANSCRIPT;
use dt_server::{BackendKind, Config};

#[derive(Parser)]
#[command(name = "dt", version, about = "Discussion coding and analytics")]
struct Cli {
    /// Service base URL.
    #[arg(long, global = true, env = "DT_SERVER", default_value = DEFAULT_SERVER)]
    server: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Upload a transcript CSV and print its discussion id.
    Ingest {
        file: PathBuf,
        #[arg(long)]
        id: Option<String>,
        #[arg(long)]
        title: Option<String>,
        /// YYYY-MM-DD
        #[arg(long)]
        recorded_at: Option<chrono::NaiveDate>,
    },
    /// Print the bundled sample transcript.
    Sample,
    /// Classify a stored discussion and wait for the result.
    Classify {
        id: String,
        /// Head ids as argument,specificity,collaboration.
        #[arg(long, value_parser = parse_heads)]
        heads: Option<HeadIds>,
        /// Argument window as before,after.
        #[arg(long, value_parser = parse_window)]
        window: Option<WindowConfig>,
        /// Write the classified transcript (with predictions) here; `-` for stdout.
        #[arg(long, short)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = 300)]
        timeout_secs: u64,
    },
    /// Print predictions-vs-gold agreement for a discussion.
    Evaluate {
        id: String,
        /// Drop turns whose collaboration label is the missing-reference fallback.
        #[arg(long)]
        exclude_fallback: bool,
        #[arg(long)]
        json: bool,
    },
    /// Print the analytics bundle for a discussion as JSON.
    Analytics {
        id: String,
        #[arg(long, default_value = "gold")]
        source: LabelSource,
    },
    /// Train a head on a directory of gold-coded CSV transcripts.
    Train(train::TrainArgs),
    /// Run the service.
    Serve(ServeArgs),
}

#[derive(Args)]
struct ServeArgs {
    /// TOML or JSON configuration file; DT_* variables override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    port: Option<u16>,
    #[arg(long)]
    host: Option<String>,
    #[arg(long)]
    data_root: Option<PathBuf>,
    #[command(flatten)]
    backend: BackendArgs,
    /// Store the bundled sample when the store is empty.
    #[arg(long)]
    seed_sample: bool,
    /// Do not train demo heads at startup.
    #[arg(long)]
    no_demo_heads: bool,
}

#[derive(Args, Clone)]
pub struct BackendArgs {
    /// deterministic or external.
    #[arg(long, value_parser = parse_backend)]
    backend: Option<BackendKind>,
    #[arg(long)]
    backend_url: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    embedding_dim: Option<usize>,
}

impl BackendArgs {
    pub fn apply(&self, cfg: &mut Config) {
        if let Some(b) = self.backend {
            cfg.backend = b;
        }
        if let Some(u) = &self.backend_url {
            cfg.backend_url = Some(u.clone());
        }
        if let Some(m) = &self.model {
            cfg.model = m.clone();
        }
        if let Some(d) = self.embedding_dim {
            cfg.embedding_dim = d;
        }
    }
}

fn parse_backend(s: &str) -> Result<BackendKind, String> {
    match s {
        "deterministic" => Ok(BackendKind::Deterministic),
        "external" => Ok(BackendKind::External),
        _ => Err(format!("unknown backend {s:?}; expected deterministic|external")),
    }
}

pub fn parse_window(s: &str) -> Result<WindowConfig, String> {
    let (b, a) = s.split_once(',').ok_or("expected before,after")?;
    let n = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    WindowConfig::new(n(b)?, n(a)?).map_err(|e| e.to_string())
}

fn parse_heads(s: &str) -> Result<HeadIds, String> {
    match s.split(',').map(str::trim).collect::<Vec<_>>()[..] {
        [a, b, c] if !a.is_empty() && !b.is_empty() && !c.is_empty() => Ok(HeadIds {
            argument: a.into(),
            specificity: b.into(),
            collaboration: c.into(),
        }),
        _ => Err("expected argument,specificity,collaboration head ids".into()),
    }
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("cannot start async runtime")
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let client = Client::new(&cli.server);
    match cli.command {
        Command::Sample => {
            print!("{SAMPLE_TRANSCRIPT}");
            Ok(())
        }
        Command::Train(args) => train::run(args, &cli.server),
        Command::Serve(args) => {
            let mut cfg = Config::load(args.config.as_deref())?;
            if let Some(p) = args.port {
                cfg.port = p;
            }
            if let Some(h) = args.host {
                cfg.host = h;
            }
            if let Some(d) = args.data_root {
                cfg.data_root = d;
            }
            args.backend.apply(&mut cfg);
            cfg.seed_sample |= args.seed_sample;
            cfg.seed_demo_heads &= !args.no_demo_heads;
            cfg.check()?;
            runtime()?.block_on(dt_server::run(cfg))?;
            Ok(())
        }
        Command::Ingest {
            file,
            id,
            title,
            recorded_at,
        } => {
            let csv = std::fs::read_to_string(&file).with_context(|| format!("cannot read {}", file.display()))?;
            let params = UploadParams { id, title, recorded_at };
            let created = runtime()?.block_on(client.upload(csv, &params))?;
            println!("{}", created.discussion_id);
            Ok(())
        }
        Command::Classify {
            id,
            heads,
            window,
            output,
            timeout_secs,
        } => runtime()?.block_on(async {
            let req = ClassifyRequest {
                backend: None,
                head_ids: heads,
                window,
            };
            let job = client.classify(&id, &req).await?;
            let job = client.wait_for_job(&job.job_id, Duration::from_secs(timeout_secs)).await?;
            if job.state != JobState::Done {
                bail!("classification failed: {}", job.error.unwrap_or_default());
            }
            let result = job.result_ref.unwrap_or_default();
            let version = result
                .rsplit_once("/v")
                .and_then(|(_, v)| v.parse().ok())
                .context("job result does not name a version")?;
            match output {
                Some(path) => {
                    let csv = client.export(&id, true, Some(version)).await?;
                    if path.as_os_str() == "-" {
                        print!("{csv}");
                    } else {
                        std::fs::write(&path, csv).with_context(|| format!("cannot write {}", path.display()))?;
                        eprintln!("wrote {}", path.display());
                    }
                }
                None => println!("{result}"),
            }
            Ok(())
        }),
        Command::Evaluate {
            id,
            exclude_fallback,
            json,
        } => runtime()?.block_on(async {
            if json {
                let report = client.evaluation(&id, exclude_fallback).await?;
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{}", client.evaluation_table(&id, exclude_fallback).await?);
            }
            Ok(())
        }),
        Command::Analytics { id, source } => runtime()?.block_on(async {
            let bundle = client.analytics(&id, source).await?;
            println!("{}", serde_json::to_string_pretty(&bundle)?);
            Ok(())
        }),
    }
}
