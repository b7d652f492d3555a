//! `cosem` command-line tool: synth, prepare, train, eval.
//!
//! stdout carries only `key=value` lines and tables; diagnostics go to
//! stderr. Exit codes: 0 ok, 1 usage, 2 parse/format, 3 empty, 4 i/o,
//! 5 divergence, 6 every evaluation instance skipped.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cosem::corpus::{synthesize, Coupling, InputFormat, SynthConfig};
use cosem::evaluation::{evaluate, render_table, Mru, NamedReport, RandomRanker, Ranker};
use cosem::model::Variant;
use cosem::pipeline::{evaluate_checkpoint, prepare, train_bundle, CorpusBundle, ReportDocument, RunConfig, SplitName};
use cosem::training::{load, save, EpochRecord};
use cosem::Error;

#[derive(Parser)]
#[command(
    name = "cosem",
    version,
    about = "App usage prediction from semantic context and app history"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic JSONL event log.
    Synth(SynthArgs),
    /// Ingest, filter, window and split an event log into a corpus bundle.
    Prepare(PrepareArgs),
    /// Train a model on a corpus bundle and write a checkpoint.
    Train(TrainArgs),
    /// Score checkpoints and baselines on one split of a corpus bundle.
    Eval(EvalArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    users: usize,
    #[arg(long, default_value_t = 30)]
    apps: usize,
    #[arg(long, default_value_t = 20)]
    chunks: usize,
    #[arg(long, default_value_t = 2000)]
    events_per_user: usize,
    /// joint, history-only or semantic-only.
    #[arg(long, default_value = "joint")]
    coupling: Coupling,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PrepareArgs {
    #[arg(long)]
    input: PathBuf,
    /// jsonl or csv.
    #[arg(long, default_value = "jsonl")]
    format: InputFormat,
    #[arg(long)]
    out: PathBuf,
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    min_app_count: Option<usize>,
    #[arg(long)]
    min_user_records: Option<usize>,
    /// Stopword file, one token per line.
    #[arg(long)]
    stopwords: Option<PathBuf>,
    #[arg(long)]
    window_seconds: Option<i64>,
    #[arg(long)]
    history_len: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// JSON run configuration; defaults to the one stored in the bundle.
    #[arg(long)]
    config: Option<PathBuf>,
    /// cosem, dnn-a or dnn-s.
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    hidden_layers: Option<usize>,
    #[arg(long)]
    hidden_width: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// Seeds both initialization and shuffling.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    checkpoint: Vec<PathBuf>,
    /// mru or random; repeatable.
    #[arg(long)]
    baseline: Vec<Baseline>,
    #[arg(long, default_value = "test")]
    split: SplitName,
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Write the JSON report here.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Seed of the random baseline.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Baseline {
    Mru,
    Random,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidArgument(_) => 1,
        Error::Parse { .. }
        | Error::Json(_)
        | Error::VersionMismatch { .. }
        | Error::CorruptCheckpoint(_)
        | Error::UnknownToken(_)
        | Error::ShapeMismatch { .. }
        | Error::IndexOutOfRange { .. } => 2,
        Error::EmptyCorpus | Error::EmptyTrainSet => 3,
        Error::FileNotFound(_) | Error::Io(_) => 4,
        Error::Divergence { .. } => 5,
        Error::AllInstancesSkipped(_) => 6,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Prepare(a) => cmd_prepare(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn cmd_synth(a: SynthArgs) -> cosem::Result<()> {
    let events = synthesize(&SynthConfig {
        seed: a.seed,
        users: a.users,
        apps: a.apps,
        chunks: a.chunks,
        events_per_user: a.events_per_user,
        coupling: a.coupling,
    })?;
    let mut out = std::io::BufWriter::new(std::fs::File::create(&a.out)?);
    for e in &events {
        let line = serde_json::json!({
            "user": e.user_id,
            "ts": e.timestamp,
            "app": e.app,
            "sem": e.semantic_chunks,
        });
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    println!("events={} out={}", events.len(), a.out.display());
    Ok(())
}

fn load_config(path: Option<&Path>, fallback: impl FnOnce() -> RunConfig) -> cosem::Result<RunConfig> {
    match path {
        Some(p) => RunConfig::from_file(p),
        None => Ok(fallback()),
    }
}

fn cmd_prepare(a: PrepareArgs) -> cosem::Result<()> {
    let mut cfg = load_config(a.config.as_deref(), RunConfig::default)?;
    let f = &mut cfg.filters;
    f.min_app_count = a.min_app_count.unwrap_or(f.min_app_count);
    f.min_user_records = a.min_user_records.unwrap_or(f.min_user_records);
    if a.stopwords.is_some() {
        f.stopwords = a.stopwords;
    }
    cfg.window.window_seconds = a.window_seconds.unwrap_or(cfg.window.window_seconds);
    cfg.window.history_len = a.history_len.unwrap_or(cfg.window.history_len);

    let bundle = prepare(&a.input, a.format, &cfg)?;
    bundle.save(&a.out)?;
    let s = &bundle.stats;
    println!(
        "events={} malformed={} kept={}",
        s.events_ingested, s.malformed_lines, s.events_kept
    );
    println!("users={} instances={}", s.users, s.instances);
    println!("train={} validation={} test={}", s.train, s.validation, s.test);
    println!("apps={} chunks={}", s.apps, s.chunks);
    Ok(())
}

fn cmd_train(a: TrainArgs) -> cosem::Result<()> {
    let bundle = CorpusBundle::load(&a.corpus)?;
    let mut cfg = load_config(a.config.as_deref(), || bundle.config.clone())?;
    let m = &mut cfg.model;
    m.variant = a.variant.unwrap_or(m.variant);
    m.embed_dim = a.embed_dim.unwrap_or(m.embed_dim);
    m.hidden_layers = a.hidden_layers.unwrap_or(m.hidden_layers);
    m.hidden_width = a.hidden_width.unwrap_or(m.hidden_width);
    let t = &mut cfg.train;
    t.learning_rate = a.learning_rate.unwrap_or(t.learning_rate);
    t.batch_size = a.batch_size.unwrap_or(t.batch_size);
    t.max_epochs = a.max_epochs.unwrap_or(t.max_epochs);
    t.patience = a.patience.unwrap_or(t.patience);
    if let Some(seed) = a.seed {
        m.seed = seed;
        t.seed = seed;
    }

    let ckpt = train_bundle(&bundle, &cfg, |r: &EpochRecord| {
        println!("epoch={} loss={:.6} val_mrr={:.6}", r.epoch, r.train_loss, r.val_mrr);
    })?;
    save(&ckpt, &a.out)?;
    println!(
        "best_epoch={} val_mrr={:.6} variant={}",
        ckpt.best_epoch,
        ckpt.best_val_mrr().unwrap_or(0.0),
        ckpt.model.config.variant
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> cosem::Result<()> {
    if a.checkpoint.is_empty() && a.baseline.is_empty() {
        return Err(Error::InvalidArgument(
            "give at least one --checkpoint or --baseline".into(),
        ));
    }
    let bundle = CorpusBundle::load(&a.corpus)?;
    let mut rows = Vec::new();
    for path in &a.checkpoint {
        let ckpt = load(path)?;
        let report = evaluate_checkpoint(&ckpt, &bundle, a.split, a.k)?;
        rows.push(NamedReport {
            model: ckpt.model.name(),
            report,
        });
    }
    let instances = bundle.split(a.split);
    for b in &a.baseline {
        let ranker: Box<dyn Ranker> = match b {
            Baseline::Mru => Box::new(Mru),
            Baseline::Random => Box::new(RandomRanker {
                seed: a.seed,
                app_count: bundle.corpus.app_vocab.len(),
            }),
        };
        rows.push(NamedReport {
            model: ranker.name(),
            report: evaluate(ranker.as_ref(), instances, a.k)?,
        });
    }
    if let Some(path) = &a.report {
        let doc = ReportDocument {
            k: a.k,
            split: a.split,
            rows: rows.clone(),
        };
        let mut bytes = serde_json::to_vec_pretty(&doc)?;
        bytes.push(b'\n');
        std::fs::write(path, bytes)?;
    }
    print!("{}", render_table(&rows));
    Ok(())
}
