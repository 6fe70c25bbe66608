//! Contrastive training of the bi-encoder: pretraining on pseudo pairs,
//! fine-tuning with hard negatives, and domain adaptation.

mod loss;
mod moco;
mod optim;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{
    augment_document, mix_strategies, AugmentConfig, AugmentError, Backends, MixSpec, SelfScorer, Strategy,
    TrainingPair,
};
use crate::corpus::{Document, UNK};
use crate::encoder::{encode, encode_backward, normalize, normalize_backward, EncoderError, EncoderParams, GradientSet, Model, Scalar};
use crate::rng::{derive_seed, item_rng, unit_interval};
use crate::tqgen::QueryGenerator;

pub use loss::{inbatch_loss, moco_loss, LossDirection, MocoLoss};
pub use moco::{momentum_update, MoCoState};
pub use optim::{adam_step, lr_at, AdamState};

/// Queue sizes above this are allowed but reported as a warning.
pub const QUEUE_WARN_ABOVE: usize = 1 << 14;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("non-finite value in loss or gradients")]
    NonFinite,
    #[error("invalid training configuration: {0}")]
    BadConfig(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("batch of {batch} exceeds queue capacity {capacity}")]
    BatchExceedsQueue { batch: usize, capacity: usize },
    #[error("need at least {need} training examples, have {have}")]
    NotEnoughPairs { have: usize, need: usize },
    #[error("pair {0:?} has no hard negative")]
    MissingHardNegative(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    #[default]
    #[value(name = "inbatch")]
    InBatch,
    #[value(name = "moco")]
    MoCo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub arch: Arch,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Defaults to a tenth of `steps`.
    pub warmup_steps: Option<usize>,
    pub temperature: f64,
    pub queue_size: usize,
    pub momentum: f64,
    pub seed: u64,
    pub dim: usize,
    pub loss_direction: LossDirection,
    /// Cosine similarity instead of the raw inner product (pretraining only;
    /// continued training keeps the model's setting).
    pub normalize: bool,
    pub min_freq: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            arch: Arch::InBatch,
            steps: 1000,
            batch_size: 32,
            lr: 5e-5,
            warmup_steps: None,
            temperature: 0.05,
            queue_size: 1 << 10,
            momentum: 0.999,
            seed: 0,
            dim: 32,
            loss_direction: LossDirection::Q2d,
            normalize: false,
            min_freq: 1,
        }
    }
}

impl TrainConfig {
    /// Defaults for continued training on a target domain.
    pub fn adapt_defaults() -> Self {
        Self { steps: 2000, lr: 1e-5, ..Self::default() }
    }

    pub fn finetune_defaults() -> Self {
        Self { steps: 10_000, lr: 1e-5, ..Self::default() }
    }

    pub fn warmup(&self) -> usize {
        self.warmup_steps.unwrap_or(self.steps / 10)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::BadConfig(m));
        if self.warmup() > self.steps {
            return bad(format!("warmup {} exceeds steps {}", self.warmup(), self.steps));
        }
        if self.batch_size == 0 || (self.arch == Arch::InBatch && self.batch_size < 2) {
            return bad(format!("batch size {} too small for {:?}", self.batch_size, self.arch));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature {} must be positive", self.temperature));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {}", self.lr));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return bad(format!("momentum {} not in [0, 1]", self.momentum));
        }
        if self.dim == 0 {
            return bad("dimension must be positive".into());
        }
        if self.arch == Arch::MoCo {
            if !self.queue_size.is_power_of_two() {
                return bad(format!("queue size {} is not a power of two", self.queue_size));
            }
            if self.batch_size > self.queue_size {
                return Err(TrainError::BatchExceedsQueue { batch: self.batch_size, capacity: self.queue_size });
            }
            if self.loss_direction == LossDirection::Bidirectional {
                return bad("the bidirectional loss applies to in-batch training only".into());
            }
        }
        Ok(())
    }

    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.arch == Arch::MoCo && self.queue_size > QUEUE_WARN_ABOVE {
            w.push(format!(
                "queue size {} is above {QUEUE_WARN_ABOVE}; larger queues have been observed to hurt retrieval quality",
                self.queue_size
            ));
        }
        w
    }
}

/// Tokenized training example; `neg` is the optional hard negative.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub query: Vec<u32>,
    pub pos: Vec<u32>,
    pub neg: Option<Vec<u32>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

struct Encoded {
    v: Vec<f64>,
    norm: Option<f64>,
}

fn encode_many<T: Scalar>(params: &EncoderParams<T>, seqs: &[&[u32]], cosine: bool) -> Result<Vec<Encoded>, TrainError> {
    seqs.par_iter()
        .map(|s| {
            let mut e = encode(params, s)?;
            let norm = cosine.then(|| normalize(&mut e));
            Ok(Encoded { v: e.0, norm })
        })
        .collect()
}

/// Backpropagates per-vector upstream gradients and sums them in input order.
fn backward_many<T: Scalar>(
    params: &EncoderParams<T>,
    seqs: &[&[u32]],
    enc: &[Encoded],
    upstream: Vec<Vec<f64>>,
) -> Result<GradientSet, TrainError> {
    let parts: Vec<GradientSet> = seqs
        .par_iter()
        .zip(enc)
        .zip(upstream)
        .map(|((s, e), g)| {
            let g = match e.norm {
                Some(n) => normalize_backward(&e.v, n, &g),
                None => g,
            };
            encode_backward(params, s, &g)
        })
        .collect::<Result<_, _>>()?;
    let mut total = GradientSet::zeros(params.dim);
    for p in &parts {
        total.add_assign(p);
    }
    Ok(total)
}

/// Loss and parameter gradients of the in-batch objective for one batch.
/// With hard negatives, candidates are `[positives; negatives]`, so each query
/// sees one positive and `2B − 1` negatives.
pub fn inbatch_gradients<T: Scalar>(
    params: &EncoderParams<T>,
    batch: &[Example],
    tau: f64,
    direction: LossDirection,
    cosine: bool,
) -> Result<(f64, GradientSet), TrainError> {
    let b = batch.len();
    let with_neg = batch.iter().filter(|e| e.neg.is_some()).count();
    if with_neg != 0 && with_neg != b {
        return Err(TrainError::Shape("hard negatives must be present for all or none of the batch".into()));
    }
    let queries: Vec<&[u32]> = batch.iter().map(|e| e.query.as_slice()).collect();
    let mut cands: Vec<&[u32]> = batch.iter().map(|e| e.pos.as_slice()).collect();
    cands.extend(batch.iter().filter_map(|e| e.neg.as_deref()));
    let c = cands.len();
    let q = encode_many(params, &queries, cosine)?;
    let d = encode_many(params, &cands, cosine)?;
    let scores: Vec<f64> = q
        .iter()
        .flat_map(|qi| d.iter().map(move |dj| crate::encoder::dot(&qi.v, &dj.v)))
        .collect();
    let (loss, ds) = inbatch_loss(&scores, b, c, tau, direction)?;
    let h = params.dim;
    let mut dq = vec![vec![0.0; h]; b];
    let mut dd = vec![vec![0.0; h]; c];
    for i in 0..b {
        for j in 0..c {
            let g = ds[i * c + j];
            for x in 0..h {
                dq[i][x] += g * d[j].v[x];
                dd[j][x] += g * q[i].v[x];
            }
        }
    }
    let mut grads = backward_many(params, &queries, &q, dq)?;
    grads.add_assign(&backward_many(params, &cands, &d, dd)?);
    Ok((loss, grads))
}

/// Momentum-contrast batch: queries through the online encoder, keys through
/// the key encoder (no gradient). Returns the loss, the query-side gradients
/// and the new keys for the queue.
pub fn moco_gradients<T: Scalar>(
    params: &EncoderParams<T>,
    key_params: &EncoderParams<T>,
    batch: &[Example],
    queue: &[f64],
    tau: f64,
    cosine: bool,
) -> Result<(f64, GradientSet, Vec<Vec<f64>>), TrainError> {
    let queries: Vec<&[u32]> = batch.iter().map(|e| e.query.as_slice()).collect();
    let docs: Vec<&[u32]> = batch.iter().map(|e| e.pos.as_slice()).collect();
    let q = encode_many(params, &queries, cosine)?;
    let keys: Vec<Vec<f64>> = encode_many(key_params, &docs, cosine)?.into_iter().map(|e| e.v).collect();
    let qv: Vec<Vec<f64>> = q.iter().map(|e| e.v.clone()).collect();
    let out = moco_loss(&qv, &keys, queue, tau)?;
    let grads = backward_many(params, &queries, &q, out.d_q)?;
    Ok((out.loss, grads, keys))
}

/// Where training examples come from.
pub enum TrainData<'a> {
    /// A fixed pair file, reshuffled every epoch.
    Pairs(&'a [TrainingPair]),
    /// Documents augmented afresh at every step; `qext-self` spans are scored
    /// with the current parameters.
    Docs {
        docs: &'a [Document],
        mix: &'a MixSpec,
        augment: &'a AugmentConfig,
        backends: Backends<'a>,
    },
}

impl TrainData<'_> {
    fn texts(&self) -> Vec<&str> {
        match self {
            TrainData::Pairs(pairs) => pairs
                .iter()
                .flat_map(|p| [Some(p.query.as_str()), Some(p.doc_text.as_str()), p.neg_doc.as_deref()])
                .flatten()
                .collect(),
            TrainData::Docs { docs, .. } => docs
                .iter()
                .flat_map(|d| {
                    std::iter::once(d.text.as_str())
                        .chain(d.title.as_deref())
                        .chain(d.anchors.iter().map(String::as_str))
                })
                .collect(),
        }
    }

    fn len(&self) -> usize {
        match self {
            TrainData::Pairs(p) => p.len(),
            TrainData::Docs { docs, .. } => docs.len(),
        }
    }
}

/// Epoch-wise shuffled index stream.
struct Shuffler {
    n: usize,
    seed: u64,
    epoch: usize,
    order: Vec<usize>,
    pos: usize,
}

impl Shuffler {
    fn new(n: usize, seed: u64) -> Self {
        Self { n, seed, epoch: 0, order: Vec::new(), pos: n }
    }

    fn next(&mut self) -> usize {
        if self.pos >= self.order.len() {
            self.order = (0..self.n).collect();
            self.order.shuffle(&mut item_rng(self.seed, "epoch", &self.epoch.to_string()));
            self.epoch += 1;
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

fn token_ids(model: &Model, text: &str) -> Vec<u32> {
    let t = model.vocab.tokenize(text).tokens;
    if t.is_empty() {
        vec![UNK]
    } else {
        t
    }
}

fn pair_example(model: &Model, p: &TrainingPair) -> Example {
    Example {
        query: token_ids(model, &p.query),
        pos: token_ids(model, &p.doc_text),
        neg: p.neg_doc.as_deref().map(|n| token_ids(model, n)),
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<StepLog>,
    pub warnings: Vec<String>,
}

struct Loop<'c> {
    cfg: &'c TrainConfig,
    adam: AdamState,
    moco: Option<MoCoState>,
    log: Vec<StepLog>,
}

impl<'c> Loop<'c> {
    fn new(cfg: &'c TrainConfig, model: &Model) -> Self {
        Self {
            cfg,
            adam: AdamState::new(&model.params),
            moco: (cfg.arch == Arch::MoCo).then(|| MoCoState::new(&model.params, cfg.queue_size, cfg.momentum)),
            log: Vec::with_capacity(cfg.steps),
        }
    }

    fn step(&mut self, model: &mut Model, step: usize, batch: &[Example]) -> Result<(), TrainError> {
        let cfg = self.cfg;
        let lr = lr_at(step, cfg.lr, cfg.warmup(), cfg.steps);
        let cosine = model.normalize;
        let loss = match self.moco.as_mut() {
            None => {
                let (loss, grads) = inbatch_gradients(&model.params, batch, cfg.temperature, cfg.loss_direction, cosine)?;
                adam_step(&mut model.params, &grads, &mut self.adam, lr)?;
                loss
            }
            Some(state) => {
                let (loss, grads, keys) = moco_gradients(
                    &model.params,
                    &state.momentum_params,
                    batch,
                    state.keys(),
                    cfg.temperature,
                    cosine,
                )?;
                adam_step(&mut model.params, &grads, &mut self.adam, lr)?;
                momentum_update(&mut state.momentum_params, &model.params, state.momentum);
                state.queue_push(&keys)?;
                loss
            }
        };
        self.log.push(StepLog { step, loss, lr });
        Ok(())
    }
}

fn run_steps(model: &mut Model, cfg: &TrainConfig, data: &TrainData<'_>) -> Result<Vec<StepLog>, TrainError> {
    let b = cfg.batch_size;
    if data.len() < b {
        return Err(TrainError::NotEnoughPairs { have: data.len(), need: b });
    }
    let mut lp = Loop::new(cfg, model);
    match data {
        TrainData::Pairs(pairs) => {
            let examples: Vec<Example> = pairs.par_iter().map(|p| pair_example(model, p)).collect();
            let mut order = Shuffler::new(examples.len(), cfg.seed);
            for step in 0..cfg.steps {
                let batch: Vec<Example> = (0..b).map(|_| examples[order.next()].clone()).collect();
                lp.step(model, step, &batch)?;
            }
        }
        TrainData::Docs { docs, mix, augment, backends } => {
            mix.validate()?;
            let mut order = Shuffler::new(docs.len(), cfg.seed);
            for step in 0..cfg.steps {
                let step_seed = derive_seed(cfg.seed, "step", &step.to_string());
                let scorer = SelfScorer::new(&model.vocab, &model.params);
                let live = Backends { encoder: Some(&scorer), ..*backends };
                live.check(mix)?;
                let mut batch = Vec::with_capacity(b);
                let mut misses = 0usize;
                while batch.len() < b {
                    let doc = &docs[order.next()];
                    let strategy = mix.pick(unit_interval(step_seed, "mix", &doc.id));
                    match augment_document(doc, strategy, augment, step_seed, &live) {
                        Ok(p) => batch.push(p),
                        Err(AugmentError::MissingBackend(s)) => return Err(AugmentError::MissingBackend(s).into()),
                        Err(_) => {
                            misses += 1;
                            if misses > docs.len() {
                                return Err(TrainError::NotEnoughPairs { have: batch.len(), need: b });
                            }
                        }
                    }
                }
                let examples: Vec<Example> = batch.iter().map(|p| pair_example(model, p)).collect();
                lp.step(model, step, &examples)?;
            }
        }
    }
    Ok(lp.log)
}

fn metadata(mode: &str, cfg: &TrainConfig, model: &Model, examples: usize, extra: serde_json::Value) -> String {
    serde_json::json!({
        "mode": mode,
        "config": cfg,
        "seed": cfg.seed,
        "warmup_steps": cfg.warmup(),
        "vocab_size": model.vocab.len(),
        "training_examples": examples,
        "extra": extra,
    })
    .to_string()
}

/// Trains a fresh encoder. The vocabulary covers every training text; with
/// `steps = 0` the returned parameters are the initialization.
pub fn run_pretrain(cfg: &TrainConfig, data: &TrainData<'_>) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let vocab = crate::corpus::build_vocab(&data.texts(), cfg.min_freq);
    let mut model = Model::new(vocab, cfg.dim, cfg.seed);
    model.normalize = cfg.normalize;
    let log = if cfg.steps == 0 { Vec::new() } else { run_steps(&mut model, cfg, data)? };
    let extra = match data {
        TrainData::Pairs(_) => serde_json::json!({"data": "pairs"}),
        TrainData::Docs { mix, augment, .. } => serde_json::json!({"data": "docs", "mix": mix.to_string(), "augment": augment}),
    };
    model.metadata = metadata("pretrain", cfg, &model, data.len(), extra);
    Ok(TrainOutcome { model, log, warnings: cfg.warnings() })
}

/// Adds unseen terms of `texts` to the model vocabulary with freshly
/// initialized embedding rows.
pub fn extend_vocab(model: &mut Model, texts: &[&str], seed: u64) -> usize {
    let added = model.vocab.extend(texts, model.vocab.min_freq());
    model.params.grow_vocab(model.vocab.len(), derive_seed(seed, "grow", ""));
    added
}

fn continue_training(
    mut model: Model,
    pairs: &[TrainingPair],
    cfg: &TrainConfig,
    mode: &str,
    extra: serde_json::Value,
) -> Result<TrainOutcome, TrainError> {
    let data = TrainData::Pairs(pairs);
    let texts = data.texts();
    let added = extend_vocab(&mut model, &texts, cfg.seed);
    let log = run_steps(&mut model, cfg, &TrainData::Pairs(pairs))?;
    let prior: serde_json::Value = serde_json::from_str(&model.metadata).unwrap_or(serde_json::Value::Null);
    let extra = serde_json::json!({"added_terms": added, "previous": prior, "details": extra});
    model.metadata = metadata(mode, cfg, &model, pairs.len(), extra);
    Ok(TrainOutcome { model, log, warnings: cfg.warnings() })
}

/// Continues training with one hard negative per pair (`B × 2B` candidates).
pub fn run_finetune(model: Model, pairs: &[TrainingPair], cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if cfg.arch != Arch::InBatch {
        return Err(TrainError::BadConfig("fine-tuning uses the in-batch objective".into()));
    }
    if let Some(p) = pairs.iter().find(|p| p.hard_negative().is_none()) {
        return Err(TrainError::MissingHardNegative(p.qid.clone()));
    }
    if cfg.steps == 0 {
        return Ok(TrainOutcome { model, log: Vec::new(), warnings: cfg.warnings() });
    }
    continue_training(model, pairs, cfg, "finetune", serde_json::Value::Null)
}

/// Builds topic pseudo queries for the target documents and continues
/// training on them. With `steps = 0` the model is returned unchanged.
pub fn run_adapt(
    model: Model,
    docs: &[Document],
    cfg: &TrainConfig,
    generator: &dyn QueryGenerator,
    augment: &AugmentConfig,
) -> Result<(TrainOutcome, Vec<TrainingPair>), TrainError> {
    cfg.validate()?;
    if cfg.steps == 0 {
        return Ok((TrainOutcome { model, log: Vec::new(), warnings: cfg.warnings() }, Vec::new()));
    }
    let backends = Backends { generator: Some(generator), ..Default::default() };
    let (pairs, stats) = mix_strategies(docs, &MixSpec::single(Strategy::TqgenTopic), augment, cfg.seed, &backends)?;
    let extra = serde_json::json!({
        "generator": generator.model_id(),
        "target_docs": docs.len(),
        "skipped": stats.skipped,
    });
    let out = continue_training(model, &pairs, cfg, "adapt", extra)?;
    Ok((out, pairs))
}
