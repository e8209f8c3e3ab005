//! Command-line front end: ingest, fit-temporal, train, eval, query, curves
//! and synth.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric failure.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use tcm::config::RunConfig;
use tcm::corpus::{load_corpus, split, write_bundle, Bundle, Corpus, Split};
use tcm::projection::Checkpoint;
use tcm::retrieval::{self, query_topk, Direction, Query};
use tcm::synth::{generate, SynthSpec};
use tcm::temporal::{TemporalKind, TemporalModel};
use tcm::train::{evaluate_checkpoint, fit_temporal, train};
use tcm::Error;

#[derive(Parser)]
#[command(name = "tcm", version, about = "Temporal cross-media subspace learning and retrieval")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a manifest and features file and write a corpus bundle.
    Ingest {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        features: PathBuf,
        /// Authoritative vocabulary, one token per line.
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Fit a temporal correlation model on the training split.
    FitTemporal {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum)]
        kind: KindArg,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train the projection networks and write the best checkpoint.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        /// Fitted temporal model; required unless lambda = 0.
        #[arg(long)]
        temporal: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// JSON Lines training log (default: `<out>.log.jsonl`).
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Evaluate both retrieval directions on the test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        /// Comma-separated precision-scope cut-offs.
        #[arg(long)]
        k_list: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Rank the test split against a text or an image query.
    Query {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Whitespace-separated tokens.
        #[arg(long)]
        text: Option<String>,
        /// Row of the corpus features file to use as the image query.
        #[arg(long)]
        image_row: Option<usize>,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Write precision-scope curves and, optionally, temporal model curves.
    Curves {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        k_list: Option<String>,
        /// Temporal model whose curves are written as well.
        #[arg(long)]
        temporal: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Generate a synthetic corpus bundle.
    Synth {
        #[arg(long, value_enum, default_value_t = Preset::Separable)]
        preset: Preset,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Documents per category (default: the preset's).
        #[arg(long)]
        docs_per_category: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Recency,
    Category,
    Topic,
}

impl From<KindArg> for TemporalKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Recency => TemporalKind::Recency,
            KindArg::Category => TemporalKind::Category,
            KindArg::Topic => TemporalKind::Topic,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum Preset {
    Separable,
    TwoMode,
    Drifting,
    Periodic,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) | Failure::Core(Error::Config(_)) => 1,
            Failure::Core(e) if e.is_numeric() => 3,
            Failure::Core(_) => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage: {m}"),
            Failure::Core(e) => e.fmt(f),
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn io_error(path: &Path, source: std::io::Error) -> Failure {
    Failure::Core(Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn load_config(args: &ConfigArgs, base: Option<RunConfig>) -> CliResult<RunConfig> {
    let mut cfg = match (&args.config, base) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(base)) => base,
        (None, None) => RunConfig::default(),
    };
    for o in &args.overrides {
        cfg.apply_override(o)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_bundle(dir: &Path, cfg: &RunConfig) -> CliResult<Corpus> {
    Ok(Bundle::new(dir).load(&cfg.load_options())?.0)
}

fn parse_k_list(text: &str) -> CliResult<Vec<usize>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Failure::Usage(format!("bad k_list entry `{s}`")))
        })
        .collect()
}

/// The configuration stored in a checkpoint, with command-line overrides.
fn checkpoint_config(ckpt: &Checkpoint, args: &ConfigArgs) -> CliResult<RunConfig> {
    let stored = RunConfig::parse(&ckpt.config)?;
    load_config(args, Some(stored))
}

fn test_split(corpus: &Corpus, cfg: &RunConfig) -> CliResult<Split> {
    Ok(split(corpus, &cfg.split_spec())?)
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json value"));
}

fn write_text(path: &Path, text: &str) -> CliResult {
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

fn cmd_ingest(manifest: &Path, features: &Path, vocab: Option<&Path>, out: &Path, config: &ConfigArgs) -> CliResult {
    let cfg = load_config(config, None)?;
    let (corpus, report) = load_corpus(manifest, features, vocab, &cfg.load_options())?;
    write_bundle(&corpus, out)?;
    print_json(&serde_json::to_value(report).expect("report"));
    Ok(())
}

fn cmd_fit_temporal(corpus: &Path, kind: TemporalKind, out: &Path, config: &ConfigArgs) -> CliResult {
    let cfg = load_config(config, None)?;
    let corpus = load_bundle(corpus, &cfg)?;
    let parts = test_split(&corpus, &cfg)?;
    let model = fit_temporal(kind, &parts.train, &cfg)?;
    model.save(out)?;
    print_json(&json!({
        "kind": kind.name(),
        "train_documents": parts.train.len(),
        "num_slices": parts.train.time_axis.num_slices,
        "out": out,
    }));
    Ok(())
}

fn cmd_train(corpus: &Path, temporal: Option<&Path>, out: &Path, log: Option<&Path>, config: &ConfigArgs) -> CliResult {
    let cfg = load_config(config, None)?;
    let corpus = load_bundle(corpus, &cfg)?;
    let parts = test_split(&corpus, &cfg)?;
    let temporal = match temporal {
        Some(p) => Some(TemporalModel::load(p)?),
        None if cfg.lambda > 0.0 => {
            return Err(Failure::Usage("--temporal is required when lambda > 0".into()));
        }
        None => None,
    };
    let log_path = log.map(Path::to_path_buf).unwrap_or_else(|| {
        let mut p = out.as_os_str().to_owned();
        p.push(".log.jsonl");
        PathBuf::from(p)
    });
    let file = File::create(&log_path).map_err(|e| io_error(&log_path, e))?;
    let mut writer = BufWriter::new(file);
    let mut write_err = None;
    let outcome = train(&parts.train, &parts.val, temporal.as_ref(), &cfg, |entry| {
        let line = serde_json::to_string(entry).expect("log entry");
        if let Err(e) = writeln!(writer, "{line}").and_then(|_| writer.flush()) {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(io_error(&log_path, e));
    }
    outcome.checkpoint.save(out)?;
    print_json(&json!({
        "epochs": outcome.log.len(),
        "best_epoch": outcome.best_epoch,
        "stopped_early": outcome.stopped_early,
        "best_val_map": outcome.log[outcome.best_epoch - 1].val_map,
        "checkpoint": out,
        "log": log_path,
    }));
    Ok(())
}

fn cmd_eval(checkpoint: &Path, corpus: &Path, k: Option<usize>, k_list: Option<&str>, out: &Path, config: &ConfigArgs) -> CliResult {
    let ckpt = Checkpoint::load(checkpoint)?;
    let mut cfg = checkpoint_config(&ckpt, config)?;
    if let Some(k) = k {
        cfg.k = k;
    }
    if let Some(list) = k_list {
        cfg.k_list = parse_k_list(list)?;
    }
    cfg.validate()?;
    let corpus = load_bundle(corpus, &cfg)?;
    let parts = test_split(&corpus, &cfg)?;
    let reports = evaluate_checkpoint(&ckpt, &parts.test, &cfg)?;
    for r in &reports {
        r.write_to_dir(out)?;
    }
    let summary: Vec<_> = reports
        .iter()
        .map(|r| {
            json!({
                "direction": r.direction,
                "k": r.k,
                "map_at_k": r.map_at_k,
                "ndcg_at_k": r.ndcg_at_k,
                "temporal_fit": r.temporal_fit,
                "queries": r.queries,
            })
        })
        .collect();
    print_json(&json!(summary));
    Ok(())
}

fn cmd_query(
    checkpoint: &Path,
    corpus_dir: &Path,
    text: Option<&str>,
    image_row: Option<usize>,
    k: usize,
    config: &ConfigArgs,
) -> CliResult {
    let query_corpus = |cfg: &RunConfig| load_bundle(corpus_dir, cfg);
    let ckpt = Checkpoint::load(checkpoint)?;
    let cfg = checkpoint_config(&ckpt, config)?;
    let corpus = query_corpus(&cfg)?;
    let query = match (text, image_row) {
        (Some(text), None) => {
            let mut counts = BTreeMap::new();
            let mut unknown = 0usize;
            for tok in text.split_whitespace() {
                match corpus.token_index(tok) {
                    Some(w) => *counts.entry(w).or_insert(0u32) += 1,
                    None => unknown += 1,
                }
            }
            if counts.is_empty() {
                return Err(Failure::Core(Error::Empty(format!(
                    "empty projection: none of the {unknown} query tokens is in the vocabulary"
                ))));
            }
            Query::text(counts)
        }
        (None, Some(row)) => {
            let doc = corpus.documents.get(row).ok_or_else(|| {
                Failure::Core(Error::Features(format!(
                    "image row {row} out of range ({} rows)",
                    corpus.len()
                )))
            })?;
            Query::image(doc.image_feat.clone())
        }
        _ => return Err(Failure::Usage("give exactly one of --text or --image-row".into())),
    };
    let parts = test_split(&corpus, &cfg)?;
    let index = retrieval::build_index(&parts.test, &ckpt.model, &ckpt.frequencies)?;
    let top = query_topk(&index, &ckpt.model, &ckpt.frequencies, &query, k)?;
    let axis = corpus.time_axis;
    let hits: Vec<_> = top
        .hits
        .iter()
        .map(|h| {
            json!({
                "doc_id": h.doc_id,
                "score": h.score,
                "timestamp": axis.to_epoch_seconds(h.timestamp),
                "labels": h.labels.iter().map(|&l| corpus.categories[l].as_str()).collect::<Vec<_>>(),
            })
        })
        .collect();
    print_json(&json!({ "truncated": top.truncated, "results": hits }));
    Ok(())
}

fn cmd_curves(
    checkpoint: &Path,
    corpus: &Path,
    k_list: Option<&str>,
    temporal: Option<&Path>,
    out: &Path,
    config: &ConfigArgs,
) -> CliResult {
    let ckpt = Checkpoint::load(checkpoint)?;
    let mut cfg = checkpoint_config(&ckpt, config)?;
    if let Some(list) = k_list {
        cfg.k_list = parse_k_list(list)?;
        cfg.k = *cfg.k_list.last().expect("non-empty k_list");
    }
    cfg.validate()?;
    let corpus = load_bundle(corpus, &cfg)?;
    let parts = test_split(&corpus, &cfg)?;
    let index = retrieval::build_index(&parts.test, &ckpt.model, &ckpt.frequencies)?;
    std::fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
    let mut written = Vec::new();
    for dir in Direction::BOTH {
        let report = retrieval::evaluate(&index, dir, &cfg.eval_options())?;
        let path = out.join(format!("scope_{}.csv", dir.short()));
        write_text(&path, &report.scope_csv())?;
        written.push(path);
    }
    if let Some(p) = temporal {
        let model = TemporalModel::load(p)?;
        let path = out.join(format!("temporal_model_{}.csv", model.kind().name()));
        write_text(&path, &temporal_curves_csv(&model, &corpus))?;
        written.push(path);
    }
    print_json(&json!({ "written": written }));
    Ok(())
}

/// Long-format curves of a temporal model.
fn temporal_curves_csv(model: &TemporalModel, corpus: &Corpus) -> String {
    let mut s = String::new();
    match model {
        TemporalModel::Recency(m) => {
            s.push_str("dt,sim\n");
            for i in 0..=100 {
                let dt = 5.0 * m.h * i as f64 / 100.0;
                s.push_str(&format!("{dt},{}\n", m.sim(0.0, dt)));
            }
        }
        TemporalModel::Category(m) => {
            s.push_str("category,t,density\n");
            let step = m.span / (m.grid_size - 1) as f64;
            for (c, curve) in m.curves.iter().enumerate() {
                let Some(curve) = curve else { continue };
                let name = corpus.categories.get(c).map_or_else(|| c.to_string(), Clone::clone);
                for (g, v) in curve.grid.iter().enumerate() {
                    s.push_str(&format!("{name},{},{v}\n", g as f64 * step));
                }
            }
        }
        TemporalModel::Topic(m) => {
            s.push_str("word,slice,mass\n");
            for (w, curve) in m.phi.iter().enumerate() {
                let Some(curve) = curve else { continue };
                let name = corpus.vocabulary.get(w).map_or_else(|| w.to_string(), Clone::clone);
                for (slice, v) in curve.iter().enumerate() {
                    s.push_str(&format!("{name},{slice},{v}\n"));
                }
            }
        }
    }
    s
}

fn cmd_synth(preset: Preset, seed: u64, docs: Option<usize>, out: &Path) -> CliResult {
    let mut spec = match preset {
        Preset::Separable => SynthSpec::separable(seed),
        Preset::TwoMode => SynthSpec::two_mode(seed),
        Preset::Drifting => SynthSpec::drifting(seed),
        Preset::Periodic => SynthSpec::periodic(seed),
    };
    if let Some(d) = docs {
        spec.docs_per_category = d;
    }
    let (corpus, _) = generate(&spec)?;
    write_bundle(&corpus, out)?;
    let spec_path = out.join("spec.json");
    write_text(&spec_path, &serde_json::to_string_pretty(&spec).expect("spec"))?;
    print_json(&json!({
        "documents": corpus.len(),
        "categories": corpus.categories.len(),
        "vocabulary": corpus.d_text(),
        "d_image": corpus.d_image,
        "num_slices": corpus.time_axis.num_slices,
        "out": out,
    }));
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Ingest {
            manifest,
            features,
            vocab,
            out,
            config,
        } => cmd_ingest(&manifest, &features, vocab.as_deref(), &out, &config),
        Command::FitTemporal { corpus, kind, out, config } => cmd_fit_temporal(&corpus, kind.into(), &out, &config),
        Command::Train {
            corpus,
            temporal,
            out,
            log,
            config,
        } => cmd_train(&corpus, temporal.as_deref(), &out, log.as_deref(), &config),
        Command::Eval {
            checkpoint,
            corpus,
            k,
            k_list,
            out,
            config,
        } => cmd_eval(&checkpoint, &corpus, k, k_list.as_deref(), &out, &config),
        Command::Query {
            checkpoint,
            corpus,
            text,
            image_row,
            k,
            config,
        } => cmd_query(&checkpoint, &corpus, text.as_deref(), image_row, k, &config),
        Command::Curves {
            checkpoint,
            corpus,
            k_list,
            temporal,
            out,
            config,
        } => cmd_curves(&checkpoint, &corpus, k_list.as_deref(), temporal.as_deref(), &out, &config),
        Command::Synth {
            preset,
            seed,
            docs_per_category,
            out,
        } => cmd_synth(preset, seed, docs_per_category, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
