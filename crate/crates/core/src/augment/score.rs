use super::{lm_span_nll, AugmentError, NgramLm, Polarity, ScoredSpan, SpanCandidate};
use crate::corpus::{tokenize, Document, Vocab, UNK};
use crate::encoder::{dot, encode, EncoderParams};
use crate::lexical::Bm25Index;

/// Assigns a salience score to each candidate span of a document.
pub trait SalienceScorer: Send + Sync {
    fn polarity(&self) -> Polarity;

    /// One score per span, in input order.
    fn score(&self, doc: &Document, spans: &[SpanCandidate]) -> Result<Vec<f64>, AugmentError>;
}

pub fn score_spans(
    scorer: &dyn SalienceScorer,
    doc: &Document,
    spans: &[SpanCandidate],
) -> Result<Vec<ScoredSpan>, AugmentError> {
    if spans.is_empty() {
        return Err(AugmentError::EmptyInput);
    }
    let scores = scorer.score(doc, spans)?;
    if scores.len() != spans.len() {
        return Err(AugmentError::Backend(format!(
            "expected {} scores, got {}",
            spans.len(),
            scores.len()
        )));
    }
    let polarity = scorer.polarity();
    Ok(spans
        .iter()
        .zip(scores)
        .map(|(span, score)| ScoredSpan { span: span.clone(), score, polarity })
        .collect())
}

/// The span is issued as a BM25 query against its own document, with
/// corpus-level document frequencies.
pub struct Bm25Scorer<'a> {
    index: &'a Bm25Index,
}

impl<'a> Bm25Scorer<'a> {
    pub fn new(index: &'a Bm25Index) -> Self {
        Self { index }
    }
}

impl SalienceScorer for Bm25Scorer<'_> {
    fn polarity(&self) -> Polarity {
        Polarity::HigherIsBetter
    }

    fn score(&self, doc: &Document, spans: &[SpanCandidate]) -> Result<Vec<f64>, AugmentError> {
        spans
            .iter()
            .map(|s| {
                self.index
                    .score(&tokenize(&s.text), &doc.id)
                    .map_err(|e| AugmentError::Backend(e.to_string()))
            })
            .collect()
    }
}

impl SalienceScorer for NgramLm {
    fn polarity(&self) -> Polarity {
        Polarity::LowerIsBetter
    }

    fn score(&self, doc: &Document, spans: &[SpanCandidate]) -> Result<Vec<f64>, AugmentError> {
        spans
            .iter()
            .map(|s| {
                let nll = lm_span_nll(self, &doc.text, &s.text)?;
                Ok(if self.length_normalized() {
                    nll / tokenize(&s.text).len() as f64
                } else {
                    nll
                })
            })
            .collect()
    }
}

/// Inner product between the encoded span and the encoded document under a
/// fixed parameter snapshot.
pub struct SelfScorer<'a> {
    vocab: &'a Vocab,
    params: &'a EncoderParams<f32>,
}

impl<'a> SelfScorer<'a> {
    pub fn new(vocab: &'a Vocab, params: &'a EncoderParams<f32>) -> Self {
        Self { vocab, params }
    }

    fn ids(&self, text: &str) -> Vec<u32> {
        let t = self.vocab.tokenize(text).tokens;
        if t.is_empty() {
            vec![UNK]
        } else {
            t
        }
    }
}

impl SalienceScorer for SelfScorer<'_> {
    fn polarity(&self) -> Polarity {
        Polarity::HigherIsBetter
    }

    fn score(&self, doc: &Document, spans: &[SpanCandidate]) -> Result<Vec<f64>, AugmentError> {
        let err = |e: crate::encoder::EncoderError| AugmentError::Backend(e.to_string());
        let d = encode(self.params, &self.ids(&doc.text)).map_err(err)?;
        spans
            .iter()
            .map(|s| {
                let v = encode(self.params, &self.ids(&s.text)).map_err(err)?;
                Ok(dot(v.as_slice(), d.as_slice()))
            })
            .collect()
    }
}
