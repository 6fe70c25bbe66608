//! Pseudo query–document pair construction.
//!
//! Strategies: random cropping, salient span extraction (QExt) under three
//! salience scorers, document titles, anchor texts, and generated queries
//! (see [`crate::tqgen`]). [`mix_strategies`] assigns one strategy per
//! document by hashing `(seed, doc id)`.

mod lm;
mod score;
mod spans;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{word_spans, Document};
use crate::lexical::Bm25Index;
use crate::rng::{item_rng, unit_interval};
use crate::tqgen::{self, GenError, GenTask, QueryGenerator, SamplingParams};

pub use lm::{lm_span_nll, NgramLm, DEFAULT_LAMBDAS};
pub use score::{score_spans, Bm25Scorer, SalienceScorer, SelfScorer};
pub use spans::{sample_spans, SpanConfig};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AugmentError {
    #[error("document {0:?} is too short for this strategy")]
    TooShort(String),
    #[error("document {0:?} has no title")]
    NoTitle(String),
    #[error("document {0:?} has no anchors")]
    NoAnchor(String),
    #[error("empty input")]
    EmptyInput,
    #[error("span has no tokens")]
    EmptySpan,
    #[error("scored spans mix polarities")]
    MixedPolarity,
    #[error("invalid mix specification: {0}")]
    BadSpec(String),
    #[error("no backend configured for strategy {0}")]
    MissingBackend(Strategy),
    #[error("scorer backend failed: {0}")]
    Backend(String),
    #[error(transparent)]
    Generation(#[from] GenError),
}

impl AugmentError {
    /// Short label used when counting skipped documents.
    pub fn reason(&self) -> &'static str {
        match self {
            AugmentError::TooShort(_) => "too_short",
            AugmentError::NoTitle(_) => "no_title",
            AugmentError::NoAnchor(_) => "no_anchor",
            AugmentError::EmptyInput | AugmentError::EmptySpan => "empty",
            AugmentError::MixedPolarity => "mixed_polarity",
            AugmentError::BadSpec(_) => "bad_spec",
            AugmentError::MissingBackend(_) => "missing_backend",
            AugmentError::Backend(_) => "backend_error",
            AugmentError::Generation(GenError::EmptyGeneration) => "empty_generation",
            AugmentError::Generation(_) => "gen_unavailable",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "randomcrop")]
    RandomCrop,
    #[serde(rename = "doc-title")]
    DocTitle,
    #[serde(rename = "doc-anchor")]
    DocAnchor,
    #[serde(rename = "qext-bm25")]
    QextBm25,
    #[serde(rename = "qext-plm")]
    QextPlm,
    #[serde(rename = "qext-self")]
    QextSelf,
    #[serde(rename = "tqgen-topic")]
    TqgenTopic,
    #[serde(rename = "tqgen-title")]
    TqgenTitle,
    #[serde(rename = "tqgen-absum")]
    TqgenAbsum,
    #[serde(rename = "tqgen-exsum")]
    TqgenExsum,
    #[serde(rename = "external")]
    External,
}

impl Strategy {
    pub const ALL: [Strategy; 11] = [
        Strategy::RandomCrop,
        Strategy::DocTitle,
        Strategy::DocAnchor,
        Strategy::QextBm25,
        Strategy::QextPlm,
        Strategy::QextSelf,
        Strategy::TqgenTopic,
        Strategy::TqgenTitle,
        Strategy::TqgenAbsum,
        Strategy::TqgenExsum,
        Strategy::External,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::RandomCrop => "randomcrop",
            Strategy::DocTitle => "doc-title",
            Strategy::DocAnchor => "doc-anchor",
            Strategy::QextBm25 => "qext-bm25",
            Strategy::QextPlm => "qext-plm",
            Strategy::QextSelf => "qext-self",
            Strategy::TqgenTopic => "tqgen-topic",
            Strategy::TqgenTitle => "tqgen-title",
            Strategy::TqgenAbsum => "tqgen-absum",
            Strategy::TqgenExsum => "tqgen-exsum",
            Strategy::External => "external",
        }
    }

    pub fn gen_task(self) -> Option<GenTask> {
        match self {
            Strategy::TqgenTopic => Some(GenTask::Topic),
            Strategy::TqgenTitle => Some(GenTask::Title),
            Strategy::TqgenAbsum => Some(GenTask::AbSum),
            Strategy::TqgenExsum => Some(GenTask::ExSum),
            _ => None,
        }
    }

    pub fn from_task(task: GenTask) -> Strategy {
        match task {
            GenTask::Topic => Strategy::TqgenTopic,
            GenTask::Title => Strategy::TqgenTitle,
            GenTask::AbSum => Strategy::TqgenAbsum,
            GenTask::ExSum => Strategy::TqgenExsum,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = AugmentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str() == s.trim())
            .ok_or_else(|| AugmentError::BadSpec(format!("unknown strategy {s:?}")))
    }
}

/// A pseudo query with its positive document, serialized as one line of a
/// pair file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub qid: String,
    pub query: String,
    pub doc_id: String,
    #[serde(rename = "doc")]
    pub doc_text: String,
    pub strategy: Strategy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neg_doc_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neg_doc: Option<String>,
    /// `[start, len]` in words of the source document (random crops only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_span: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc_span: Option<[usize; 2]>,
}

impl TrainingPair {
    pub fn new(doc: &Document, query: impl Into<String>, doc_text: impl Into<String>, strategy: Strategy) -> Self {
        Self {
            qid: format!("{}:{}", doc.id, strategy),
            query: query.into(),
            doc_id: doc.id.clone(),
            doc_text: doc_text.into(),
            strategy,
            neg_doc_id: None,
            neg_doc: None,
            query_span: None,
            doc_span: None,
        }
    }

    pub fn hard_negative(&self) -> Option<(&str, &str)> {
        Some((self.neg_doc_id.as_deref()?, self.neg_doc.as_deref()?))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanCandidate {
    pub start: usize,
    pub len: usize,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    HigherIsBetter,
    LowerIsBetter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSpan {
    pub span: SpanCandidate,
    pub score: f64,
    pub polarity: Polarity,
}

/// Best span under its polarity; ties go to the smallest start, then the
/// smallest length.
pub fn select_query(scored: &[ScoredSpan]) -> Result<&SpanCandidate, AugmentError> {
    let first = scored.first().ok_or(AugmentError::EmptyInput)?;
    if scored.iter().any(|s| s.polarity != first.polarity) {
        return Err(AugmentError::MixedPolarity);
    }
    let better = |a: &ScoredSpan, b: &ScoredSpan| -> bool {
        let ord = match first.polarity {
            Polarity::HigherIsBetter => a.score.total_cmp(&b.score),
            Polarity::LowerIsBetter => b.score.total_cmp(&a.score),
        };
        ord.then_with(|| b.span.start.cmp(&a.span.start))
            .then_with(|| b.span.len.cmp(&a.span.len))
            .is_gt()
    };
    let mut best = first;
    for s in &scored[1..] {
        if better(s, best) {
            best = s;
        }
    }
    Ok(&best.span)
}

/// Which text a random crop pairs with its query span.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CropTarget {
    #[default]
    Span,
    Document,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub spans: SpanConfig,
    pub crop_target: CropTarget,
    pub sampling: SamplingParams,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            spans: SpanConfig::default(),
            crop_target: CropTarget::Span,
            sampling: SamplingParams::default(),
        }
    }
}

pub const CROP_MIN_WORDS: usize = 4;
pub const CROP_MAX_WORDS: usize = 128;

/// Length bounds `[max(4, ⌈0.1·T⌉), min(128, ⌈0.5·T⌉)]` for a `T`-word
/// document; the lower bound is capped at the upper one for very long documents.
pub fn crop_length_bounds(words: usize) -> (usize, usize) {
    let hi = CROP_MAX_WORDS.min(words.div_ceil(2));
    let lo = CROP_MIN_WORDS.max(words.div_ceil(10)).min(hi);
    (lo, hi)
}

/// Two independently drawn contiguous spans of the same document.
pub fn random_crop_pair(doc: &Document, seed: u64, target: CropTarget) -> Result<TrainingPair, AugmentError> {
    let words = word_spans(&doc.text);
    let n = words.len();
    if n < 2 * CROP_MIN_WORDS {
        return Err(AugmentError::TooShort(doc.id.clone()));
    }
    let (lo, hi) = crop_length_bounds(n);
    let mut rng = item_rng(seed, "randomcrop", &doc.id);
    let mut draw = || {
        let len = rng.random_range(lo..=hi);
        let start = rng.random_range(0..=n - len);
        (start, len)
    };
    let (qs, ql) = draw();
    let (ds, dl) = draw();
    let slice = |s: usize, l: usize| &doc.text[words[s].start..words[s + l - 1].end];
    let positive = match target {
        CropTarget::Span => slice(ds, dl).to_string(),
        CropTarget::Document => doc.text.clone(),
    };
    let mut pair = TrainingPair::new(doc, slice(qs, ql), positive, Strategy::RandomCrop);
    pair.query_span = Some([qs, ql]);
    pair.doc_span = Some([ds, dl]);
    Ok(pair)
}

pub fn title_query(doc: &Document) -> Result<TrainingPair, AugmentError> {
    match doc.title.as_deref().map(str::trim) {
        Some(t) if !t.is_empty() => Ok(TrainingPair::new(doc, t, doc.text.clone(), Strategy::DocTitle)),
        _ => Err(AugmentError::NoTitle(doc.id.clone())),
    }
}

pub fn anchor_query(doc: &Document, seed: u64) -> Result<TrainingPair, AugmentError> {
    if doc.anchors.is_empty() {
        return Err(AugmentError::NoAnchor(doc.id.clone()));
    }
    let i = item_rng(seed, "anchor", &doc.id).random_range(0..doc.anchors.len());
    Ok(TrainingPair::new(doc, doc.anchors[i].clone(), doc.text.clone(), Strategy::DocAnchor))
}

/// Samples candidate spans, scores them and keeps the most salient one as the
/// query. The document text is left intact.
pub fn qext_pair(
    doc: &Document,
    scorer: &dyn SalienceScorer,
    strategy: Strategy,
    cfg: &SpanConfig,
    seed: u64,
) -> Result<TrainingPair, AugmentError> {
    let spans = sample_spans(doc, cfg, seed);
    if spans.is_empty() {
        return Err(AugmentError::EmptyInput);
    }
    let scored = score_spans(scorer, doc, &spans)?;
    let best = select_query(&scored)?;
    let mut pair = TrainingPair::new(doc, best.text.clone(), doc.text.clone(), strategy);
    pair.query_span = Some([best.start, best.len]);
    Ok(pair)
}

/// Mixture of strategies with proportions summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixSpec {
    pub parts: Vec<(Strategy, f64)>,
}

impl MixSpec {
    pub fn new(parts: Vec<(Strategy, f64)>) -> Result<Self, AugmentError> {
        let spec = Self { parts };
        spec.validate()?;
        Ok(spec)
    }

    pub fn single(s: Strategy) -> Self {
        Self { parts: vec![(s, 1.0)] }
    }

    /// Half random crops, half `other`.
    pub fn mix50(other: Strategy) -> Self {
        Self {
            parts: vec![(Strategy::RandomCrop, 0.5), (other, 0.5)],
        }
    }

    /// 20% random crop, 10% QExt-PLM, and the remaining 70% split evenly over
    /// titles and the four generation tasks.
    pub fn hybrid_all() -> Self {
        Self {
            parts: vec![
                (Strategy::RandomCrop, 0.2),
                (Strategy::QextPlm, 0.1),
                (Strategy::DocTitle, 0.14),
                (Strategy::TqgenTopic, 0.14),
                (Strategy::TqgenTitle, 0.14),
                (Strategy::TqgenAbsum, 0.14),
                (Strategy::TqgenExsum, 0.14),
            ],
        }
    }

    /// 20% random crop, 80% generated queries split over the four tasks.
    pub fn hybrid_tqgen() -> Self {
        Self {
            parts: vec![
                (Strategy::RandomCrop, 0.2),
                (Strategy::TqgenTopic, 0.2),
                (Strategy::TqgenTitle, 0.2),
                (Strategy::TqgenAbsum, 0.2),
                (Strategy::TqgenExsum, 0.2),
            ],
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        if self.parts.is_empty() {
            return Err(AugmentError::BadSpec("no strategies".into()));
        }
        for (s, p) in &self.parts {
            if *s == Strategy::External {
                return Err(AugmentError::BadSpec("external pairs cannot be generated".into()));
            }
            if !(0.0..=1.0).contains(p) {
                return Err(AugmentError::BadSpec(format!("proportion {p} for {s}")));
            }
        }
        let total: f64 = self.parts.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(AugmentError::BadSpec(format!("proportions sum to {total}")));
        }
        Ok(())
    }

    /// Strategy whose cumulative interval contains `u ∈ [0, 1)`.
    pub fn pick(&self, u: f64) -> Strategy {
        let mut acc = 0.0;
        for (s, p) in &self.parts {
            acc += p;
            if u < acc {
                return *s;
            }
        }
        // u beyond the rounded total: last strategy with mass
        self.parts
            .iter()
            .rev()
            .find(|(_, p)| *p > 0.0)
            .map_or(self.parts[0].0, |(s, _)| *s)
    }

    pub fn strategies(&self) -> impl Iterator<Item = Strategy> + '_ {
        self.parts.iter().filter(|(_, p)| *p > 0.0).map(|(s, _)| *s)
    }
}

impl FromStr for MixSpec {
    type Err = AugmentError;

    /// Accepts `hybrid-all`, `hybrid-tqgen`, `mix50:<strategy>`, a single
    /// strategy name, or `name=p,name=p,...`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let spec = match s {
            "hybrid-all" => MixSpec::hybrid_all(),
            "hybrid-tqgen" => MixSpec::hybrid_tqgen(),
            _ if s.starts_with("mix50:") => MixSpec::mix50(s["mix50:".len()..].parse()?),
            _ if s.contains('=') => {
                let mut parts = Vec::new();
                for item in s.split(',') {
                    let (name, p) = item
                        .split_once('=')
                        .ok_or_else(|| AugmentError::BadSpec(format!("expected name=proportion in {item:?}")))?;
                    let p: f64 = p
                        .trim()
                        .parse()
                        .map_err(|_| AugmentError::BadSpec(format!("bad proportion {p:?}")))?;
                    parts.push((name.parse()?, p));
                }
                MixSpec { parts }
            }
            _ => MixSpec::single(s.parse()?),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for MixSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let items: Vec<String> = self.parts.iter().map(|(s, p)| format!("{s}={p}")).collect();
        f.write_str(&items.join(","))
    }
}

/// Scorers and generators that strategies may need. Only the ones named by
/// the mix have to be present.
#[derive(Default, Clone, Copy)]
pub struct Backends<'a> {
    pub bm25: Option<&'a Bm25Index>,
    pub lm: Option<&'a dyn SalienceScorer>,
    pub encoder: Option<&'a dyn SalienceScorer>,
    pub generator: Option<&'a dyn QueryGenerator>,
}

impl Backends<'_> {
    pub fn check(&self, spec: &MixSpec) -> Result<(), AugmentError> {
        for s in spec.strategies() {
            let present = match s {
                Strategy::QextBm25 => self.bm25.is_some(),
                Strategy::QextPlm => self.lm.is_some(),
                Strategy::QextSelf => self.encoder.is_some(),
                s if s.gen_task().is_some() => self.generator.is_some(),
                _ => true,
            };
            if !present {
                return Err(AugmentError::MissingBackend(s));
            }
        }
        Ok(())
    }
}

/// Builds the pair for one document under one strategy.
pub fn augment_document(
    doc: &Document,
    strategy: Strategy,
    cfg: &AugmentConfig,
    seed: u64,
    backends: &Backends<'_>,
) -> Result<TrainingPair, AugmentError> {
    let missing = || AugmentError::MissingBackend(strategy);
    match strategy {
        Strategy::RandomCrop => random_crop_pair(doc, seed, cfg.crop_target),
        Strategy::DocTitle => title_query(doc),
        Strategy::DocAnchor => anchor_query(doc, seed),
        Strategy::QextBm25 => {
            let scorer = Bm25Scorer::new(backends.bm25.ok_or_else(missing)?);
            qext_pair(doc, &scorer, strategy, &cfg.spans, seed)
        }
        Strategy::QextPlm => qext_pair(doc, backends.lm.ok_or_else(missing)?, strategy, &cfg.spans, seed),
        Strategy::QextSelf => qext_pair(doc, backends.encoder.ok_or_else(missing)?, strategy, &cfg.spans, seed),
        Strategy::External => Err(AugmentError::BadSpec("external pairs cannot be generated".into())),
        s => {
            let task = s.gen_task().expect("remaining strategies are generation tasks");
            let generator = backends.generator.ok_or_else(missing)?;
            Ok(tqgen::generate_query(generator, doc, task, &cfg.sampling, seed)?)
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AugmentStats {
    pub documents: usize,
    pub produced: BTreeMap<Strategy, usize>,
    pub skipped: BTreeMap<String, usize>,
}

impl AugmentStats {
    pub fn total_skipped(&self) -> usize {
        self.skipped.values().sum()
    }
}

/// Assigns each document a strategy from `spec` and builds its pair.
///
/// Documents whose strategy fails (no title, too short, generator down, ...)
/// are skipped and counted. Output is sorted by document id and does not
/// depend on input order or on the number of worker threads.
pub fn mix_strategies(
    docs: &[Document],
    spec: &MixSpec,
    cfg: &AugmentConfig,
    seed: u64,
    backends: &Backends<'_>,
) -> Result<(Vec<TrainingPair>, AugmentStats), AugmentError> {
    spec.validate()?;
    backends.check(spec)?;
    let results: Vec<(Strategy, Result<TrainingPair, AugmentError>)> = docs
        .par_iter()
        .map(|doc| {
            let strategy = spec.pick(unit_interval(seed, "mix", &doc.id));
            (strategy, augment_document(doc, strategy, cfg, seed, backends))
        })
        .collect();
    let mut stats = AugmentStats {
        documents: docs.len(),
        ..Default::default()
    };
    let mut pairs = Vec::with_capacity(results.len());
    for (strategy, res) in results {
        match res {
            Ok(p) => {
                *stats.produced.entry(strategy).or_insert(0) += 1;
                pairs.push(p);
            }
            Err(e) => *stats.skipped.entry(e.reason().to_string()).or_insert(0) += 1,
        }
    }
    pairs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id).then_with(|| a.qid.cmp(&b.qid)));
    Ok((pairs, stats))
}
