//! Local head training. Runs without a service unless `--upload` is given.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::Args;

use dt_client::Client;
use dt_core::classifiers::crossval::{default_candidates, rank_windows, search_window, DEFAULT_FOLDS};
use dt_core::classifiers::{save_head, train_task, TrainConfig, WindowConfig};
use dt_core::corpus_model::{Dimension, Discussion};
use dt_core::ingestion::{parse_transcript, TranscriptMeta};
use dt_server::Config;

use crate::{parse_window, BackendArgs};

#[derive(Args)]
pub struct TrainArgs {
    /// argument, specificity or collaboration.
    #[arg(long)]
    task: Dimension,
    /// Directory of gold-coded *.csv transcripts; file stems become ids.
    #[arg(long)]
    corpus: PathBuf,
    /// Argument window as before,after.
    #[arg(long, value_parser = parse_window)]
    window: Option<WindowConfig>,
    /// Pick the argument window by cross-validation over the corpus.
    #[arg(long, conflicts_with = "window")]
    search_window: bool,
    #[arg(long, default_value_t = DEFAULT_FOLDS)]
    folds: usize,
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Output model file; defaults to `<task>.dthead.json`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also upload the trained head to the service under this id.
    #[arg(long)]
    upload: Option<String>,
}

pub fn load_corpus(dir: &Path) -> Result<Vec<Discussion>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("cannot read {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no .csv transcripts in {}", dir.display());
    }
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
            let meta = TranscriptMeta {
                discussion_id: Some(p.file_stem().unwrap_or_default().to_string_lossy().into_owned()),
                title: None,
                recorded_at: None,
            };
            parse_transcript(&text, &meta).with_context(|| format!("{}", p.display()))
        })
        .collect()
}

pub fn run(args: TrainArgs, server: &str) -> Result<()> {
    if args.search_window && args.task != Dimension::Argument {
        bail!("--search-window applies to the argument task only");
    }
    let mut cfg = Config::default();
    args.backend.apply(&mut cfg);
    cfg.check()?;
    let backend = dt_server::app::make_backend(&cfg);

    let corpus = load_corpus(&args.corpus)?;
    let mut train_cfg = TrainConfig {
        seed: args.seed,
        ..TrainConfig::default()
    };
    if let Some(n) = args.max_epochs {
        train_cfg.max_epochs = n;
    }
    train_cfg.check()?;

    let window = if args.search_window {
        let scores = search_window(
            args.task,
            &corpus,
            backend.as_ref(),
            &default_candidates(),
            args.folds,
            &train_cfg,
        )?;
        println!("{:<8} | {:>6} | {:>7} | {:>7}", "Window", "Kappa", "Macro F", "Micro F");
        for s in &scores {
            println!(
                "{:<8} | {:>6.3} | {:>7.3} | {:>7.3}",
                s.window.to_string(),
                s.mean_kappa,
                s.mean_macro_f1,
                s.mean_micro_f1
            );
        }
        let best = rank_windows(&scores)[0];
        println!("selected window {best}");
        best
    } else {
        args.window.unwrap_or_default()
    };

    let (head, report) = train_task(args.task, &corpus, backend.as_ref(), window, &train_cfg)?;
    let bytes = save_head(&head);
    let out = args
        .out
        .unwrap_or_else(|| PathBuf::from(format!("{}.dthead.json", args.task.as_str())));
    std::fs::write(&out, &bytes).with_context(|| format!("cannot write {}", out.display()))?;
    println!(
        "trained {} head: {} epochs (best {}), train accuracy {:.3}, wrote {}",
        args.task.as_str(),
        report.epochs_run,
        report.best_epoch,
        report.final_train_accuracy,
        out.display()
    );

    if let Some(id) = args.upload {
        let rt = crate::runtime()?;
        let summary = rt.block_on(async {
            let client = Client::new(server);
            tokio::time::timeout(Duration::from_secs(60), client.upload_head(&id, bytes, true)).await
        })??;
        println!("uploaded head {}", summary.head_id);
    }
    // The external backend holds a blocking client; drop it outside any runtime.
    drop(backend);
    Ok(())
}
