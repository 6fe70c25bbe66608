//! Command-line front end: one subcommand per pipeline stage.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::augment::{
    mix_strategies, AugmentConfig, Backends, CropTarget, MixSpec, NgramLm, SalienceScorer, SelfScorer,
    SpanConfig, Strategy, DEFAULT_LAMBDAS,
};
use crate::corpus::{ingest, Document, RawRecord, RecordFormat};
use crate::encoder::Model;
use crate::evaluator::{evaluate_run, load_qrels, Metric, Query, System};
use crate::io::{read_jsonl, write_jsonl, write_sidecar_meta};
use crate::lexical::{build_bm25_index, Bm25Index, Bm25Params};
use crate::tqgen::{ClientConfig, HttpGenerator, QueryGenerator, RemoteScorer, SamplingParams, StubGenerator};
use crate::trainer::{run_adapt, run_finetune, run_pretrain, Arch, LossDirection, TrainConfig, TrainData};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

pub const THREADS_ENV: &str = "AUGTRIEVER_THREADS";

#[derive(Debug, Parser)]
#[command(name = "augr", version, about = "Annotation-free dense retrieval pipeline", args_override_self = true)]
pub struct Cli {
    /// Worker threads for every stage (output does not depend on it).
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,

    /// Flat `key = value` file; keys are flag names. Flags given on the
    /// command line win over the file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalize raw records into a document file.
    Ingest(IngestArgs),
    /// Build a BM25 index over a document file.
    #[command(name = "index-bm25")]
    IndexBm25(IndexArgs),
    /// Produce pseudo query/document pairs.
    Augment(AugmentArgs),
    /// Pretrain an encoder from pairs or from documents with on-the-fly augmentation.
    Train(TrainArgs),
    /// Continue training on pairs that carry hard negatives.
    Finetune(FinetuneArgs),
    /// Continue training on topic pseudo queries for a target corpus.
    Adapt(AdaptArgs),
    /// Score a dense model or a BM25 index on queries with judgments.
    Eval(EvalArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value = "generic")]
    pub format: RecordFormat,
}

#[derive(Debug, Args, Serialize)]
pub struct IndexArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 1.2)]
    pub k1: f64,
    #[arg(long, default_value_t = 0.75)]
    pub b: f64,
}

/// Generation backend selection.
#[derive(Debug, Args, Serialize)]
pub struct GenArgs {
    /// Base URL of a generation service.
    #[arg(long, conflicts_with = "gen_stub")]
    pub gen_endpoint: Option<String>,
    /// Deterministic in-process generator instead of a service.
    #[arg(long)]
    pub gen_stub: bool,
    #[arg(long, default_value_t = 0.9)]
    pub top_p: f64,
    #[arg(long, default_value_t = 0)]
    pub top_k: u32,
    /// Sampling temperature of the generator.
    #[arg(long, default_value_t = 1.0)]
    pub gen_temperature: f64,
    #[arg(long, default_value_t = 64)]
    pub max_new_tokens: u32,
    #[arg(long, default_value_t = crate::tqgen::DEFAULT_ATTEMPTS)]
    pub gen_attempts: usize,
    #[arg(long, default_value_t = crate::tqgen::DEFAULT_IN_FLIGHT)]
    pub gen_in_flight: usize,
    /// Request timeout in seconds.
    #[arg(long, default_value_t = 60)]
    pub gen_timeout: u64,
}

impl GenArgs {
    fn sampling(&self) -> SamplingParams {
        SamplingParams {
            top_p: self.top_p,
            top_k: self.top_k,
            max_new_tokens: self.max_new_tokens,
            temperature: self.gen_temperature,
        }
    }

    fn client(&self) -> ClientConfig {
        ClientConfig {
            attempts: self.gen_attempts,
            in_flight: self.gen_in_flight,
            timeout: Duration::from_secs(self.gen_timeout),
            ..ClientConfig::default()
        }
    }

    fn generator<'a>(&self, index: Option<&'a Bm25Index>) -> Option<Box<dyn QueryGenerator + 'a>> {
        match (&self.gen_endpoint, self.gen_stub) {
            (Some(url), _) => Some(Box::new(HttpGenerator::new(url, self.client()))),
            (None, true) => Some(Box::new(StubGenerator::new(index))),
            (None, false) => None,
        }
    }
}

/// Span and salience settings shared by `augment` and on-the-fly `train`.
#[derive(Debug, Args, Serialize)]
pub struct SpanArgs {
    /// Candidate spans per document.
    #[arg(long, default_value_t = 16)]
    pub span_count: usize,
    #[arg(long, default_value_t = 4)]
    pub span_min: usize,
    #[arg(long, default_value_t = 16)]
    pub span_max: usize,
    #[arg(long, value_enum, default_value = "span")]
    pub crop_target: CropTarget,
    /// Divide span negative log-likelihood by its token count.
    #[arg(long)]
    pub lm_per_token: bool,
    /// Score `qext-plm` spans with a service instead of the n-gram model.
    #[arg(long)]
    pub score_endpoint: Option<String>,
    /// Encoder used by `qext-self` when augmenting offline.
    #[arg(long)]
    pub self_model: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct AugmentArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub output: PathBuf,
    /// A strategy name, `mix50:<strategy>`, `hybrid-all`, `hybrid-tqgen` or `name=p,...`.
    #[arg(long, default_value = "randomcrop")]
    pub strategy: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub spans: SpanArgs,
    #[command(flatten)]
    pub gen: GenArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainParams {
    #[arg(long, value_enum)]
    pub arch: Option<ArchArg>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Defaults to a tenth of the steps.
    #[arg(long)]
    pub warmup_steps: Option<usize>,
    /// Softmax temperature of the contrastive loss.
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub queue_size: Option<usize>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long, value_enum)]
    pub loss_direction: Option<LossDirection>,
    /// Cosine similarity instead of the inner product (pretraining only).
    #[arg(long)]
    pub normalize: bool,
    #[arg(long)]
    pub min_freq: Option<u64>,
}

#[derive(Debug, Clone, Copy, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ArchArg {
    Inbatch,
    Moco,
}

impl TrainParams {
    fn resolve(&self, base: TrainConfig) -> TrainConfig {
        TrainConfig {
            arch: match self.arch {
                Some(ArchArg::Inbatch) => Arch::InBatch,
                Some(ArchArg::Moco) => Arch::MoCo,
                None => base.arch,
            },
            steps: self.steps.unwrap_or(base.steps),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            lr: self.lr.unwrap_or(base.lr),
            warmup_steps: self.warmup_steps.or(base.warmup_steps),
            temperature: self.temperature.unwrap_or(base.temperature),
            queue_size: self.queue_size.unwrap_or(base.queue_size),
            momentum: self.momentum.unwrap_or(base.momentum),
            seed: self.seed,
            dim: self.dim.unwrap_or(base.dim),
            loss_direction: self.loss_direction.unwrap_or(base.loss_direction),
            normalize: self.normalize || base.normalize,
            min_freq: self.min_freq.unwrap_or(base.min_freq),
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Pair file; mutually exclusive with `--corpus`.
    #[arg(long, conflicts_with = "corpus", required_unless_present = "corpus")]
    pub pairs: Option<PathBuf>,
    /// Document file augmented afresh at every step.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Augmentation mix for `--corpus` training.
    #[arg(long, default_value = "randomcrop")]
    pub strategy: String,
    #[arg(long)]
    #[serde(skip)]
    pub output: PathBuf,
    /// Per-step loss and learning rate, one JSON record per line.
    #[arg(long)]
    #[serde(skip)]
    pub log: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainParams,
    #[command(flatten)]
    pub spans: SpanArgs,
    #[command(flatten)]
    pub gen: GenArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub output: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub log: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainParams,
}

#[derive(Debug, Args, Serialize)]
pub struct AdaptArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Target-domain document file.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub output: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub log: Option<PathBuf>,
    /// Also write the generated topic pairs here.
    #[arg(long)]
    #[serde(skip)]
    pub pairs_output: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainParams,
    #[command(flatten)]
    pub gen: GenArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Query file: `{"qid" | "_id", "text", "answers"?}` per line.
    #[arg(long)]
    pub queries: PathBuf,
    /// Judgments as `qid 0 docid grade` lines.
    #[arg(long)]
    pub qrels: Option<PathBuf>,
    #[arg(long, conflicts_with = "bm25", required_unless_present = "bm25")]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub bm25: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "ndcg@10,recall@20")]
    pub metrics: Vec<String>,
    /// Report path; standard output when absent.
    #[arg(long)]
    #[serde(skip)]
    pub output: Option<PathBuf>,
}

/// Parses a `key = value` file into flags. `#` starts a comment; `true`
/// becomes a bare switch and `false` drops the key.
pub fn config_file_args(text: &str) -> anyhow::Result<Vec<OsString>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .with_context(|| format!("config line {}: expected key = value", i + 1))?;
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        let value = value.trim().trim_matches('"');
        if key.is_empty() {
            bail!("config line {}: empty key", i + 1);
        }
        match value {
            "true" => out.push(format!("--{key}").into()),
            "false" => {}
            _ => {
                out.push(format!("--{key}").into());
                out.push(value.into());
            }
        }
    }
    Ok(out)
}

fn config_path(argv: &[OsString]) -> Option<PathBuf> {
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

const SUBCOMMANDS: [&str; 7] = ["ingest", "index-bm25", "augment", "train", "finetune", "adapt", "eval"];

/// Splices config-file flags in right after the subcommand name so that any
/// flag on the command line, which comes later, overrides them.
pub fn expand_config(argv: Vec<OsString>) -> anyhow::Result<Vec<OsString>> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let text = fs::read_to_string(&path).with_context(|| format!("reading config {}", path.display()))?;
    let extra = config_file_args(&text)?;
    let at = argv
        .iter()
        .position(|a| SUBCOMMANDS.contains(&a.to_string_lossy().as_ref()))
        .map(|i| i + 1)
        .unwrap_or(argv.len());
    let mut out = argv[..at].to_vec();
    out.extend(extra);
    out.extend_from_slice(&argv[at..]);
    Ok(out)
}

/// Entry point shared by the binary and the tests.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let argv = match expand_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return EXIT_DATA;
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let threads = cli.threads.unwrap_or(0);
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_DATA;
        }
    };
    match pool.install(|| run(&cli.command)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_DATA
        }
    }
}

fn run(cmd: &Command) -> anyhow::Result<()> {
    match cmd {
        Command::Ingest(a) => cmd_ingest(a),
        Command::IndexBm25(a) => cmd_index(a),
        Command::Augment(a) => cmd_augment(a),
        Command::Train(a) => cmd_train(a),
        Command::Finetune(a) => cmd_finetune(a),
        Command::Adapt(a) => cmd_adapt(a),
        Command::Eval(a) => cmd_eval(a),
    }
}

fn load_docs(path: &Path) -> anyhow::Result<Vec<Document>> {
    read_jsonl(path).with_context(|| format!("reading documents from {}", path.display()))
}

fn echo<T: Serialize>(command: &str, args: &T) -> serde_json::Value {
    serde_json::json!({"command": command, "args": args, "version": env!("CARGO_PKG_VERSION")})
}

fn cmd_ingest(a: &IngestArgs) -> anyhow::Result<()> {
    let records: Vec<RawRecord> = read_jsonl(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let (docs, stats) = ingest(&records, a.format);
    if stats.skipped_empty + stats.skipped_duplicate > 0 {
        eprintln!(
            "warning: skipped {} empty and {} duplicate records",
            stats.skipped_empty, stats.skipped_duplicate
        );
    }
    write_jsonl(&a.output, &docs)?;
    write_sidecar_meta(&a.output, &serde_json::json!({"run": echo("ingest", a), "stats": stats}))?;
    eprintln!("{} documents from {} records", stats.documents, stats.records);
    Ok(())
}

fn cmd_index(a: &IndexArgs) -> anyhow::Result<()> {
    let docs = load_docs(&a.corpus)?;
    let mut index = build_bm25_index(&docs, Bm25Params { k1: a.k1, b: a.b })?;
    index.set_metadata(echo("index-bm25", a).to_string());
    index.save(&a.output)?;
    eprintln!("indexed {} documents", index.n_docs());
    Ok(())
}

impl SpanArgs {
    fn augment_config(&self, sampling: SamplingParams) -> AugmentConfig {
        AugmentConfig {
            spans: SpanConfig { n: self.span_count, min_len: self.span_min, max_len: self.span_max },
            crop_target: self.crop_target,
            sampling,
        }
    }
}

/// Owns whatever the strategies of a mix need, so `Backends` can borrow it.
struct BackendStore {
    index: Option<Bm25Index>,
    lm: Option<Box<dyn SalienceScorer>>,
    self_model: Option<Model>,
}

impl BackendStore {
    fn build(docs: &[Document], spec: &MixSpec, spans: &SpanArgs, gen: &GenArgs) -> anyhow::Result<Self> {
        let uses = |s: Strategy| spec.strategies().any(|t| t == s);
        let needs_index = uses(Strategy::QextBm25) || (gen.gen_stub && spec.strategies().any(|s| s.gen_task().is_some()));
        let index = if needs_index { Some(build_bm25_index(docs, Bm25Params::default())?) } else { None };
        let lm: Option<Box<dyn SalienceScorer>> = if !uses(Strategy::QextPlm) {
            None
        } else if let Some(url) = &spans.score_endpoint {
            Some(Box::new(RemoteScorer::new(url, gen.client())))
        } else {
            let texts: Vec<&str> = docs.iter().map(|d| d.text.as_str()).collect();
            Some(Box::new(NgramLm::from_texts(&texts, DEFAULT_LAMBDAS)?.with_length_normalization(spans.lm_per_token)))
        };
        let self_model = spans.self_model.as_deref().map(Model::load).transpose()?;
        Ok(Self { index, lm, self_model })
    }
}

fn cmd_augment(a: &AugmentArgs) -> anyhow::Result<()> {
    let docs = load_docs(&a.corpus)?;
    let spec: MixSpec = a.strategy.parse()?;
    let store = BackendStore::build(&docs, &spec, &a.spans, &a.gen)?;
    let generator = a.gen.generator(store.index.as_ref());
    let self_scorer = store.self_model.as_ref().map(|m| SelfScorer::new(&m.vocab, &m.params));
    let backends = Backends {
        bm25: store.index.as_ref(),
        lm: store.lm.as_deref(),
        encoder: self_scorer.as_ref().map(|s| s as &dyn SalienceScorer),
        generator: generator.as_deref(),
    };
    let cfg = a.spans.augment_config(a.gen.sampling());
    let (pairs, stats) = mix_strategies(&docs, &spec, &cfg, a.seed, &backends)?;
    for (reason, n) in &stats.skipped {
        eprintln!("warning: skipped {n} documents ({reason})");
    }
    write_jsonl(&a.output, &pairs)?;
    let meta = serde_json::json!({
        "run": echo("augment", a),
        "mix": spec.to_string(),
        "seed": a.seed,
        "generator": generator.as_ref().map(|g| g.model_id()),
        "stats": stats,
    });
    write_sidecar_meta(&a.output, &meta)?;
    eprintln!("{} pairs from {} documents", pairs.len(), docs.len());
    Ok(())
}

fn write_log(path: Option<&Path>, log: &[crate::trainer::StepLog], meta: &serde_json::Value) -> anyhow::Result<()> {
    if let Some(p) = path {
        write_jsonl(p, log)?;
        write_sidecar_meta(p, meta)?;
    }
    Ok(())
}

fn attach_run(model: &mut Model, run: serde_json::Value) {
    let mut meta: serde_json::Value = serde_json::from_str(&model.metadata).unwrap_or_default();
    if let Some(obj) = meta.as_object_mut() {
        obj.insert("run".into(), run);
    }
    model.metadata = meta.to_string();
}

fn report_warnings(w: &[String]) {
    for s in w {
        eprintln!("warning: {s}");
    }
}

fn summarize(log: &[crate::trainer::StepLog]) {
    if let (Some(first), Some(last)) = (log.first(), log.last()) {
        eprintln!("{} steps, loss {:.4} -> {:.4}", log.len(), first.loss, last.loss);
    }
}

fn cmd_train(a: &TrainArgs) -> anyhow::Result<()> {
    let cfg = a.train.resolve(TrainConfig::default());
    let outcome = match (&a.pairs, &a.corpus) {
        (Some(p), _) => {
            let pairs = read_jsonl(p).with_context(|| format!("reading pairs from {}", p.display()))?;
            run_pretrain(&cfg, &TrainData::Pairs(&pairs))?
        }
        (None, Some(c)) => {
            let docs = load_docs(c)?;
            let spec: MixSpec = a.strategy.parse()?;
            let store = BackendStore::build(&docs, &spec, &a.spans, &a.gen)?;
            let generator = a.gen.generator(store.index.as_ref());
            let backends = Backends {
                bm25: store.index.as_ref(),
                lm: store.lm.as_deref(),
                encoder: None,
                generator: generator.as_deref(),
            };
            let augment = a.spans.augment_config(a.gen.sampling());
            run_pretrain(&cfg, &TrainData::Docs { docs: &docs, mix: &spec, augment: &augment, backends })?
        }
        (None, None) => bail!("one of --pairs or --corpus is required"),
    };
    report_warnings(&outcome.warnings);
    let run = echo("train", a);
    let mut model = outcome.model;
    attach_run(&mut model, run.clone());
    model.save(&a.output)?;
    write_log(a.log.as_deref(), &outcome.log, &serde_json::json!({"run": run, "config": cfg}))?;
    summarize(&outcome.log);
    Ok(())
}

fn cmd_finetune(a: &FinetuneArgs) -> anyhow::Result<()> {
    let cfg = a.train.resolve(TrainConfig::finetune_defaults());
    let model = Model::load(&a.model)?;
    let pairs: Vec<crate::augment::TrainingPair> =
        read_jsonl(&a.pairs).with_context(|| format!("reading pairs from {}", a.pairs.display()))?;
    let outcome = run_finetune(model, &pairs, &cfg)?;
    report_warnings(&outcome.warnings);
    let run = echo("finetune", a);
    let mut model = outcome.model;
    attach_run(&mut model, run.clone());
    model.save(&a.output)?;
    write_log(a.log.as_deref(), &outcome.log, &serde_json::json!({"run": run, "config": cfg}))?;
    summarize(&outcome.log);
    Ok(())
}

fn cmd_adapt(a: &AdaptArgs) -> anyhow::Result<()> {
    let cfg = a.train.resolve(TrainConfig::adapt_defaults());
    let model = Model::load(&a.model)?;
    let docs = load_docs(&a.corpus)?;
    let index = if a.gen.gen_endpoint.is_none() { Some(build_bm25_index(&docs, Bm25Params::default())?) } else { None };
    let generator = a
        .gen
        .generator(index.as_ref())
        .context("adaptation needs a generator: pass --gen-stub or --gen-endpoint")?;
    let augment = AugmentConfig { sampling: a.gen.sampling(), ..AugmentConfig::default() };
    let (outcome, pairs) = run_adapt(model, &docs, &cfg, generator.as_ref(), &augment)?;
    report_warnings(&outcome.warnings);
    let run = echo("adapt", a);
    let mut model = outcome.model;
    attach_run(&mut model, run.clone());
    model.save(&a.output)?;
    write_log(a.log.as_deref(), &outcome.log, &serde_json::json!({"run": run, "config": cfg}))?;
    if let Some(p) = &a.pairs_output {
        write_jsonl(p, &pairs)?;
        write_sidecar_meta(p, &serde_json::json!({"run": run, "generator": generator.model_id()}))?;
    }
    summarize(&outcome.log);
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> anyhow::Result<()> {
    let docs = load_docs(&a.corpus)?;
    let queries: Vec<Query> = read_jsonl(&a.queries).with_context(|| format!("reading {}", a.queries.display()))?;
    let qrels = a.qrels.as_deref().map(load_qrels).transpose()?;
    let metrics: Vec<Metric> = a.metrics.iter().map(|m| m.parse()).collect::<Result<_, _>>()?;
    if qrels.is_none() && metrics.iter().any(|m| !matches!(m, Metric::AnswerRecall(_))) {
        bail!("--qrels is required for {}", a.metrics.join(","));
    }
    let model;
    let index;
    let system = match (&a.model, &a.bm25) {
        (Some(p), _) => {
            model = Model::load(p)?;
            System::Dense(&model)
        }
        (None, Some(p)) => {
            index = Bm25Index::load(p)?;
            System::Bm25(&index)
        }
        (None, None) => bail!("one of --model or --bm25 is required"),
    };
    let mut report = evaluate_run(&system, &docs, &queries, qrels.as_ref(), &metrics)?;
    if let Some(obj) = report.config.as_object_mut() {
        obj.insert("run".into(), echo("eval", a));
    }
    let skipped = report.config["skipped_queries"].as_u64().unwrap_or(0);
    if skipped > 0 {
        eprintln!("warning: {skipped} queries without judgments were skipped");
    }
    let json = serde_json::to_string_pretty(&report)? + "\n";
    match &a.output {
        Some(p) => crate::io::write_bytes(p, json.as_bytes())?,
        None => std::io::stdout().lock().write_all(json.as_bytes())?,
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn config_lines_become_flags() {
        let got = config_file_args("# defaults\nsteps = 50\nbatch_size=8\nnormalize = true\ngen-stub = false\n").unwrap();
        assert_eq!(got, os(&["--steps", "50", "--batch-size", "8", "--normalize"]));
        assert!(config_file_args("no equals sign").is_err());
    }

    #[test]
    fn command_line_beats_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        fs::write(&cfg, "steps = 50\nlr = 0.01\n").unwrap();
        let argv = os(&["augr", "train", "--pairs", "p.jsonl", "--output", "m.bin", "--config", cfg.to_str().unwrap(), "--steps", "7"]);
        let cli = Cli::try_parse_from(expand_config(argv).unwrap()).unwrap();
        let Command::Train(t) = cli.command else { panic!("wrong subcommand") };
        assert_eq!(t.train.steps, Some(7));
        assert_eq!(t.train.lr, Some(0.01));
        let cfg = t.train.resolve(TrainConfig::default());
        assert_eq!(cfg.batch_size, 32);
    }

    #[test]
    fn mode_defaults() {
        let p = TrainParams {
            arch: None,
            steps: None,
            batch_size: None,
            lr: None,
            warmup_steps: None,
            temperature: None,
            queue_size: None,
            momentum: None,
            seed: 0,
            dim: None,
            loss_direction: None,
            normalize: false,
            min_freq: None,
        };
        assert_eq!(p.resolve(TrainConfig::adapt_defaults()).steps, 2000);
        assert_eq!(p.resolve(TrainConfig::adapt_defaults()).lr, 1e-5);
        assert_eq!(p.resolve(TrainConfig::finetune_defaults()).steps, 10_000);
        assert_eq!(p.resolve(TrainConfig::default()), TrainConfig::default());
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(dispatch(["augr", "train", "--no-such-flag"]), EXIT_USAGE);
        assert_eq!(dispatch(["augr"]), EXIT_USAGE);
        assert_eq!(dispatch(["augr", "--help"]), EXIT_OK);
    }
}
