use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::AugmentError;
use crate::corpus::{tokenize, TermCounts};

/// Interpolation weights for (document bigram, document unigram, corpus
/// unigram, uniform).
pub const DEFAULT_LAMBDAS: [f64; 4] = [0.4, 0.3, 0.2, 0.1];

/// Document-conditioned interpolated n-gram model used to score how likely a
/// span is given its document.
#[derive(Debug, Clone, PartialEq)]
pub struct NgramLm {
    counts: HashMap<String, u64>,
    total: u64,
    lambdas: [f64; 4],
    per_token: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LmSummary {
    types: usize,
    tokens: u64,
    lambdas: [f64; 4],
    length_normalized: bool,
}

impl NgramLm {
    pub fn new(counts: TermCounts, lambdas: [f64; 4]) -> Result<Self, AugmentError> {
        if lambdas.iter().any(|l| !(0.0..=1.0).contains(l)) || lambdas[3] <= 0.0 {
            return Err(AugmentError::BadSpec(format!("invalid interpolation weights {lambdas:?}")));
        }
        let sum: f64 = lambdas.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(AugmentError::BadSpec(format!("interpolation weights sum to {sum}")));
        }
        let total = counts.0.values().sum();
        Ok(Self { counts: counts.0, total, lambdas, per_token: false })
    }

    pub fn from_texts<S: AsRef<str> + Sync>(texts: &[S], lambdas: [f64; 4]) -> Result<Self, AugmentError> {
        Self::new(TermCounts::from_texts(texts), lambdas)
    }

    /// Divide span scores by the number of span tokens. Off by default: raw
    /// totals favour short spans.
    pub fn with_length_normalization(mut self, on: bool) -> Self {
        self.per_token = on;
        self
    }

    pub fn length_normalized(&self) -> bool {
        self.per_token
    }

    /// Size of the uniform floor's support: corpus types plus one slot for
    /// unseen words.
    pub fn vocab_size(&self) -> usize {
        self.counts.len() + 1
    }

    pub fn lambdas(&self) -> [f64; 4] {
        self.lambdas
    }

    fn corpus_prob(&self, w: &str) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        self.counts.get(w).copied().unwrap_or(0) as f64 / self.total as f64
    }

    pub fn summary(&self) -> serde_json::Value {
        serde_json::to_value(LmSummary {
            types: self.counts.len(),
            tokens: self.total,
            lambdas: self.lambdas,
            length_normalized: self.per_token,
        })
        .expect("plain struct serializes")
    }
}

/// Per-document bigram and unigram counts.
struct DocStats<'a> {
    unigram: HashMap<&'a str, u64>,
    /// Occurrences of each word as the left side of a bigram.
    history: HashMap<&'a str, u64>,
    bigram: HashMap<(&'a str, &'a str), u64>,
    len: usize,
}

impl<'a> DocStats<'a> {
    fn new(tokens: &'a [String]) -> Self {
        let mut unigram = HashMap::new();
        let mut history = HashMap::new();
        let mut bigram = HashMap::new();
        for t in tokens {
            *unigram.entry(t.as_str()).or_insert(0) += 1;
        }
        for w in tokens.windows(2) {
            *history.entry(w[0].as_str()).or_insert(0) += 1;
            *bigram.entry((w[0].as_str(), w[1].as_str())).or_insert(0) += 1;
        }
        Self { unigram, history, bigram, len: tokens.len() }
    }

    fn unigram_prob(&self, w: &str) -> f64 {
        if self.len == 0 {
            return 0.0;
        }
        self.unigram.get(w).copied().unwrap_or(0) as f64 / self.len as f64
    }

    fn bigram_prob(&self, prev: Option<&str>, w: &str) -> f64 {
        let Some(prev) = prev else { return 0.0 };
        match self.history.get(prev) {
            Some(&h) if h > 0 => self.bigram.get(&(prev, w)).copied().unwrap_or(0) as f64 / h as f64,
            _ => 0.0,
        }
    }
}

/// Total negative log-likelihood `Σ −ln p(wᵢ | wᵢ₋₁, doc)` of the span's
/// tokens, without length normalization. The document acts as the prefix, so
/// the word preceding the first span token is the last document token.
pub fn lm_span_nll(lm: &NgramLm, doc_text: &str, span_text: &str) -> Result<f64, AugmentError> {
    let span = tokenize(span_text);
    if span.is_empty() {
        return Err(AugmentError::EmptySpan);
    }
    let doc = tokenize(doc_text);
    let stats = DocStats::new(&doc);
    let [l1, l2, l3, l4] = lm.lambdas;
    let uniform = 1.0 / lm.vocab_size() as f64;
    let mut prev = doc.last().map(String::as_str);
    let mut nll = 0.0;
    for w in &span {
        let p = l1 * stats.bigram_prob(prev, w)
            + l2 * stats.unigram_prob(w)
            + l3 * lm.corpus_prob(w)
            + l4 * uniform;
        nll -= p.ln();
        prev = Some(w.as_str());
    }
    Ok(nll)
}
