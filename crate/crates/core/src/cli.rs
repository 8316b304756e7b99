//! Command-line surface. Every command writes JSON or JSONL.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::backbone::BackboneKind;
use crate::corpus::{attach_image_features, load_corpus, split, Event, SplitPart};
use crate::error::{Error, Result};
use crate::graph::{build_graph, GraphOptions, WordGraph};
use crate::model::{Heads, LossConfig, ModelConfig, PredictionBreakdown};
use crate::predict::Predictor;
use crate::semb::EmbeddingFile;
use crate::synth::{generate, SynthConfig};
use crate::train::{Checkpoint, Schedule, TrainConfig, Trainer};

#[derive(Debug, Parser)]
#[command(
    name = "smn",
    version,
    about = "Interpretable event popularity prediction over a PMI word graph"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the word graph from a corpus and word embeddings.
    BuildGraph(BuildGraphArgs),
    /// Train a model and write a checkpoint plus a JSONL training log.
    Train(TrainArgs),
    /// Ranking and regression metrics on one split.
    Evaluate(EvaluateArgs),
    /// Per-event additive breakdown on the raw popularity scale.
    Predict(PredictArgs),
    /// Top keywords by self-excitation score for every event.
    Explain(ExplainArgs),
    /// Generate a corpus from a planted additive model.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct BuildGraphArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Word embeddings in `.semb` format.
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Required embedding width; defaults to the file's.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Seed for embeddings of words missing from the file.
    #[arg(long, default_value_t = 0)]
    pub oov_seed: u64,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Image features in `.semb` format keyed by event id, replacing any
    /// in-line features.
    #[arg(long)]
    pub images: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "gcn")]
    pub backbone: BackboneKind,
    /// Base learning rate.
    #[arg(long, default_value_t = 0.01, allow_negative_numbers = true)]
    pub lr: f64,
    /// L1 weight on word self-excitation scores.
    #[arg(long, default_value_t = 0.001, allow_negative_numbers = true)]
    pub lambda1: f64,
    /// L1 weight on pairwise excitation entries.
    #[arg(long, default_value_t = 0.001, allow_negative_numbers = true)]
    pub lambda2: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub huber_delta: f64,
    /// Fraction of graph nodes kept by pooling, in (0, 1].
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub pool_ratio: f64,
    /// Percentage of self-excitation weights kept by the sparsity mask.
    #[arg(long, default_value_t = 50.0, allow_negative_numbers = true)]
    pub delta: f64,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 150)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated subset of base,self,mutual,image.
    #[arg(long, default_value = "base,self,mutual,image")]
    pub heads: Heads,
    /// First warm-restart period in epochs.
    #[arg(long, default_value_t = 10)]
    pub t0: usize,
    /// Period multiplier after each restart.
    #[arg(long, default_value_t = 2)]
    pub t_mult: usize,
    #[arg(long, default_value_t = 64)]
    pub image_hidden: usize,
    /// Include j = k terms in the mutual excitation sum.
    #[arg(long)]
    pub mutual_diagonal: bool,
    /// Apply relu to the image MLP output as well.
    #[arg(long)]
    pub image_relu_output: bool,
    /// Log squared instead of absolute validation error.
    #[arg(long)]
    pub mse_squared: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Training log path; defaults to `<out>.log.jsonl`.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// train, val, test or all.
    #[arg(long, default_value = "test")]
    pub split: Selection,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "all")]
    pub split: Selection,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "all")]
    pub split: Selection,
    /// Keywords listed per event.
    #[arg(long, default_value_t = 8)]
    pub top: usize,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 300)]
    pub events: usize,
    #[arg(long, default_value_t = 60)]
    pub vocab: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for events.jsonl, words.semb and planted.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 4)]
    pub topics: usize,
    /// Noise standard deviation on the [0, 1] popularity scale.
    #[arg(long, default_value_t = 0.02)]
    pub noise: f64,
    /// Scales every planted component; 0 makes all events equal.
    #[arg(long, default_value_t = 1.0)]
    pub strength: f64,
    /// Width of in-line image features; 0 means text only.
    #[arg(long, default_value_t = 0)]
    pub image_dim: usize,
}

/// A split part or the whole corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    All,
    Part(SplitPart),
}

impl std::str::FromStr for Selection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            Ok(Selection::All)
        } else {
            s.parse().map(Selection::Part)
        }
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::BuildGraph(a) => build_graph_cmd(a, out),
        Command::Train(a) => train_cmd(a, out),
        Command::Evaluate(a) => evaluate_cmd(a, out),
        Command::Predict(a) => predict_cmd(a, out),
        Command::Explain(a) => explain_cmd(a, out),
        Command::Synth(a) => synth_cmd(a, out),
    }
}

fn emit(out: &mut dyn Write, value: &impl Serialize) -> Result<()> {
    let line = serde_json::to_string(value).expect("output serializes");
    writeln!(out, "{line}").map_err(|e| Error::io("<stdout>", e))
}

fn build_graph_cmd(a: BuildGraphArgs, out: &mut dyn Write) -> Result<()> {
    let (_, events) = load_corpus(&a.corpus)?;
    let embeddings = EmbeddingFile::load(&a.embeddings)?;
    let graph = build_graph(
        &events,
        &embeddings,
        GraphOptions {
            dim: a.dim,
            oov_seed: a.oov_seed,
        },
    )?;
    graph.save(&a.out)?;
    emit(
        out,
        &serde_json::json!({
            "nodes": graph.n_nodes(),
            "edges": graph.n_edges(),
            "dim": graph.dim(),
            "oov": graph.oov.len(),
        }),
    )
}

/// Graph, events and the image feature width they carry.
fn load_data(a: &DataArgs) -> Result<(WordGraph, Vec<Event>, Option<usize>)> {
    let graph = WordGraph::load(&a.graph)?;
    let (header, mut events) = load_corpus(&a.corpus)?;
    let image_dim = match &a.images {
        Some(path) => {
            let images = EmbeddingFile::load(path)?;
            attach_image_features(&mut events, &images);
            Some(images.dim())
        }
        None => header.fc,
    };
    Ok((graph, events, image_dim))
}

fn train_cmd(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let config = TrainConfig {
        model: ModelConfig {
            backbone: a.backbone,
            layers: a.layers,
            pool_ratio: a.pool_ratio,
            delta: a.delta,
            heads: a.heads,
            image_hidden: a.image_hidden,
            mutual_diagonal: a.mutual_diagonal,
            image_relu_output: a.image_relu_output,
        },
        loss: LossConfig {
            lambda1: a.lambda1,
            lambda2: a.lambda2,
            huber_delta: a.huber_delta,
        },
        schedule: Schedule {
            lr0: a.lr,
            lr_min: 0.0,
            t0: a.t0,
            t_mult: a.t_mult,
        },
        epochs: a.epochs,
        seed: a.seed,
        val_mse_squared: a.mse_squared,
        ..TrainConfig::default()
    };
    config.validate()?;
    let (graph, events, image_dim) = load_data(&a.data)?;
    let mut trainer = Trainer::new(&events, &graph, image_dim, config)?;

    let log_path = a.log.unwrap_or_else(|| suffixed(&a.out, ".log.jsonl"));
    let file = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut log = BufWriter::new(file);
    let mut write_err = None;
    trainer.run(|entry| {
        if write_err.is_none() {
            if let Err(e) = emit(&mut log, entry) {
                write_err = Some(e);
            }
        }
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    trainer.checkpoint().save(&a.out)?;

    let val = trainer.split.select(SplitPart::Val, &events);
    let report = if val.is_empty() {
        None
    } else {
        Some(Predictor::from_trainer(&trainer).report(&val)?)
    };
    emit(out, &serde_json::json!({ "epochs": trainer.epoch(), "val": report }))
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Checkpoint, predictor and the selected events.
fn inference(ckpt: &Path, data: &DataArgs, selection: Selection) -> Result<(Predictor, Vec<Event>)> {
    let ckpt = Checkpoint::load(ckpt)?;
    let (graph, events, _) = load_data(data)?;
    let predictor = Predictor::from_checkpoint(&ckpt, &graph)?;
    let selected = match selection {
        Selection::All => events,
        Selection::Part(part) => {
            let s = split(&events, ckpt.config.split, ckpt.config.seed)?;
            s.select(part, &events).into_iter().cloned().collect()
        }
    };
    if selected.is_empty() {
        return Err(Error::Config("selected split is empty".into()));
    }
    Ok((predictor, selected))
}

fn evaluate_cmd(a: EvaluateArgs, out: &mut dyn Write) -> Result<()> {
    let (predictor, events) = inference(&a.ckpt, &a.data, a.split)?;
    let refs: Vec<&Event> = events.iter().collect();
    emit(out, &predictor.report(&refs)?)
}

/// A breakdown on the raw popularity scale. The base component carries the
/// scale's offset, so the total stays the sum of the four components.
pub fn denormalize(b: &PredictionBreakdown, min: f64, max: f64) -> PredictionBreakdown {
    let range = max - min;
    let y_base = min + range * b.y_base;
    let y_self = range * b.y_self;
    let y_mutual = range * b.y_mutual;
    let y_image = range * b.y_image;
    PredictionBreakdown {
        y_base,
        y_self,
        y_mutual,
        y_image,
        y_total: y_base + y_self + y_mutual + y_image,
    }
}

#[derive(Serialize)]
struct PredictLine<'a> {
    id: &'a str,
    #[serde(flatten)]
    raw: PredictionBreakdown,
    normalized: PredictionBreakdown,
}

fn predict_cmd(a: PredictArgs, out: &mut dyn Write) -> Result<()> {
    let (predictor, events) = inference(&a.ckpt, &a.data, a.split)?;
    let refs: Vec<&Event> = events.iter().collect();
    let scale = predictor.scale;
    for p in predictor.predict(&refs)? {
        emit(
            out,
            &PredictLine {
                id: &p.id,
                raw: denormalize(&p.breakdown, scale.min, scale.max),
                normalized: p.breakdown,
            },
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ExplainLine<'a> {
    id: &'a str,
    keywords: Vec<(String, f64)>,
    components: PredictionBreakdown,
}

fn explain_cmd(a: ExplainArgs, out: &mut dyn Write) -> Result<()> {
    let (predictor, events) = inference(&a.ckpt, &a.data, a.split)?;
    let refs: Vec<&Event> = events.iter().collect();
    for p in predictor.predict(&refs)? {
        let mut keywords = p.word_scores.clone();
        // Stable: equal scores keep first-occurrence order.
        keywords.sort_by(|x, y| y.1.total_cmp(&x.1));
        keywords.truncate(a.top);
        emit(
            out,
            &ExplainLine {
                id: &p.id,
                keywords,
                components: p.breakdown,
            },
        )?;
    }
    Ok(())
}

fn synth_cmd(a: SynthArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = SynthConfig {
        events: a.events,
        vocab: a.vocab,
        seed: a.seed,
        dim: a.dim,
        topics: a.topics,
        noise: a.noise,
        strength: a.strength,
        image_dim: a.image_dim,
        ..SynthConfig::default()
    };
    let corpus = generate(&cfg)?;
    corpus.write(&a.out)?;
    let used: std::collections::BTreeSet<&str> = corpus
        .events
        .iter()
        .flat_map(|e| e.tokens.iter().map(String::as_str))
        .collect();
    emit(
        out,
        &serde_json::json!({
            "events": corpus.events.len(),
            "vocab": a.vocab,
            "used_words": used.len(),
            "out": a.out,
        }),
    )
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
/// Failures print one line, `error: <kind>: <message>`, to `err`.
pub fn main_with(args: impl IntoIterator<Item = String>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if !e.use_stderr() {
                let _ = write!(out, "{}", e.render());
                return 0;
            }
            let rendered = e.render().to_string();
            let first = rendered.lines().next().unwrap_or_default();
            let _ = writeln!(err, "error: usage: {}", first.trim_start_matches("error: "));
            return 2;
        }
    };
    match run(cli, out) {
        Ok(()) => 0,
        Err(Error::Io { source, .. }) if source.kind() == std::io::ErrorKind::BrokenPipe => 0,
        Err(e) => {
            let message = e.to_string().replace('\n', " ");
            let _ = writeln!(err, "error: {}: {message}", e.kind());
            2
        }
    }
}
