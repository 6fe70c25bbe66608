use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SpanCandidate;
use crate::corpus::{word_spans, Document};
use crate::rng::item_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanConfig {
    pub n: usize,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for SpanConfig {
    fn default() -> Self {
        Self { n: 16, min_len: 4, max_len: 16 }
    }
}

/// Draws up to `cfg.n` distinct contiguous word spans of `doc`.
///
/// Each length is uniform in `[min_len, max_len]` (clamped to the document
/// length) and each start uniform over valid positions. A duplicate
/// `(start, len)` is redrawn; after `8·n` draws the sampler gives up, so short
/// documents may yield fewer than `n` spans. A document shorter than `min_len`
/// yields the whole text as its only candidate.
pub fn sample_spans(doc: &Document, cfg: &SpanConfig, seed: u64) -> Vec<SpanCandidate> {
    let words = word_spans(&doc.text);
    let total = words.len();
    if total == 0 || cfg.n == 0 {
        return Vec::new();
    }
    let make = |start: usize, len: usize| SpanCandidate {
        start,
        len,
        text: doc.text[words[start].start..words[start + len - 1].end].to_string(),
    };
    if total < cfg.min_len.max(1) {
        return vec![make(0, total)];
    }
    let min_len = cfg.min_len.max(1);
    let max_len = cfg.max_len.max(min_len);
    let mut rng = item_rng(seed, "spans", &doc.id);
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n * 8 {
        if out.len() == cfg.n {
            break;
        }
        let len = rng.random_range(min_len..=max_len).min(total);
        let start = rng.random_range(0..=total - len);
        if seen.insert((start, len)) {
            out.push(make(start, len));
        }
    }
    out
}
