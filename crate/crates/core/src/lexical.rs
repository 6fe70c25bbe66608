//! BM25 statistics, scoring and top-k search.
//!
//! Scores use the Robertson form
//!
//! ```text
//! score(q, d) = Σ_{t ∈ q} idf(t) · tf(t,d)·(k1+1) / (tf(t,d) + k1·(1 − b + b·|d|/avg_len))
//! idf(t)      = ln(1 + (N − df(t) + 0.5) / (df(t) + 0.5))
//! ```
//!
//! Repeated query terms contribute once per occurrence. The `ln(1 + ·)` idf is
//! strictly positive, so very common terms never subtract from a score.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Document};
use crate::io::{self, BinReader, BinWriter, IoError};

const MAGIC: &[u8; 4] = b"ABIX";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum LexicalError {
    #[error("cannot index an empty corpus")]
    EmptyCorpus,
    #[error("duplicate document id {0:?}")]
    DuplicateDocId(String),
    #[error("unknown document id {0:?}")]
    UnknownDoc(String),
    #[error("invalid BM25 parameters k1={k1}, b={b}")]
    BadParams { k1: f64, b: f64 },
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<(), LexicalError> {
        if self.k1.is_finite() && self.k1 >= 0.0 && (0.0..=1.0).contains(&self.b) {
            Ok(())
        } else {
            Err(LexicalError::BadParams { k1: self.k1, b: self.b })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

/// Immutable inverted index. Internal document numbers follow ascending
/// document id, which makes the index independent of input order.
#[derive(Debug, Clone, PartialEq)]
pub struct Bm25Index {
    params: Bm25Params,
    doc_ids: Vec<String>,
    doc_len: Vec<u32>,
    avg_len: f64,
    postings: BTreeMap<String, Vec<Posting>>,
    lookup: HashMap<String, u32>,
    metadata: String,
}

pub fn build_bm25_index(docs: &[Document], params: Bm25Params) -> Result<Bm25Index, LexicalError> {
    let lists: Vec<(String, Vec<String>)> = docs
        .par_iter()
        .map(|d| (d.id.clone(), tokenize(&d.text)))
        .collect();
    Bm25Index::from_token_lists(lists, params)
}

impl Bm25Index {
    pub fn from_token_lists(
        mut docs: Vec<(String, Vec<String>)>,
        params: Bm25Params,
    ) -> Result<Self, LexicalError> {
        params.validate()?;
        if docs.is_empty() {
            return Err(LexicalError::EmptyCorpus);
        }
        docs.sort_by(|a, b| a.0.cmp(&b.0));
        if let Some(w) = docs.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(LexicalError::DuplicateDocId(w[0].0.clone()));
        }
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_ids = Vec::with_capacity(docs.len());
        let mut doc_len = Vec::with_capacity(docs.len());
        let mut total: u64 = 0;
        for (n, (id, toks)) in docs.into_iter().enumerate() {
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in &toks {
                *tf.entry(t.clone()).or_insert(0) += 1;
            }
            for (t, c) in tf {
                postings.entry(t).or_default().push(Posting { doc: n as u32, tf: c });
            }
            total += toks.len() as u64;
            doc_len.push(toks.len() as u32);
            doc_ids.push(id);
        }
        let avg_len = total as f64 / doc_ids.len() as f64;
        let lookup = doc_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i as u32))
            .collect();
        Ok(Self {
            params,
            doc_ids,
            doc_len,
            avg_len,
            postings,
            lookup,
            metadata: "{}".into(),
        })
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn n_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_len(&self, doc_id: &str) -> Option<u32> {
        self.lookup.get(doc_id).map(|&i| self.doc_len[i as usize])
    }

    pub fn df(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    /// Corpus-level idf; `None` for terms the index has never seen.
    pub fn idf(&self, term: &str) -> Option<f64> {
        let df = self.df(term);
        (df > 0).then(|| idf(self.n_docs(), df))
    }

    pub fn metadata(&self) -> &str {
        &self.metadata
    }

    pub fn set_metadata(&mut self, json: String) {
        self.metadata = json;
    }

    fn term_weight(&self, idf: f64, tf: u32, dl: u32) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = tf as f64;
        let norm = if self.avg_len > 0.0 {
            1.0 - b + b * dl as f64 / self.avg_len
        } else {
            1.0
        };
        idf * tf * (k1 + 1.0) / (tf + k1 * norm)
    }

    fn tf(&self, term: &str, doc: u32) -> u32 {
        let list = self.postings(term);
        list.binary_search_by_key(&doc, |p| p.doc)
            .map_or(0, |i| list[i].tf)
    }

    pub fn score<S: AsRef<str>>(&self, query: &[S], doc_id: &str) -> Result<f64, LexicalError> {
        let doc = *self
            .lookup
            .get(doc_id)
            .ok_or_else(|| LexicalError::UnknownDoc(doc_id.to_string()))?;
        let dl = self.doc_len[doc as usize];
        let mut score = 0.0;
        for t in query {
            let t = t.as_ref();
            let tf = self.tf(t, doc);
            if tf > 0 {
                score += self.term_weight(idf(self.n_docs(), self.df(t)), tf, dl);
            }
        }
        Ok(score)
    }

    /// Top-`k` documents by descending score, ties by ascending doc id.
    /// When fewer than `k` documents score above zero the remaining slots are
    /// filled with zero-score documents in ascending id order.
    pub fn search<S: AsRef<str>>(&self, query: &[S], k: usize) -> Vec<(String, f64)> {
        let n = self.n_docs();
        let mut acc = vec![0.0f64; n];
        for t in query {
            let list = self.postings(t.as_ref());
            if list.is_empty() {
                continue;
            }
            let w = idf(n, list.len());
            for p in list {
                acc[p.doc as usize] += self.term_weight(w, p.tf, self.doc_len[p.doc as usize]);
            }
        }
        let mut hits: Vec<u32> = (0..n as u32).filter(|&d| acc[d as usize] > 0.0).collect();
        hits.sort_by(|&a, &b| {
            acc[b as usize]
                .total_cmp(&acc[a as usize])
                .then(a.cmp(&b))
        });
        hits.truncate(k);
        if hits.len() < k {
            let fill: Vec<u32> = (0..n as u32)
                .filter(|&d| acc[d as usize] <= 0.0)
                .take(k - hits.len())
                .collect();
            hits.extend(fill);
        }
        hits.into_iter()
            .map(|d| (self.doc_ids[d as usize].clone(), acc[d as usize]))
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = BinWriter::new();
        w.magic(MAGIC);
        w.u32(FORMAT_VERSION);
        w.f64(self.params.k1);
        w.f64(self.params.b);
        w.str(&self.metadata);
        w.u64(self.doc_ids.len() as u64);
        for (id, &len) in self.doc_ids.iter().zip(&self.doc_len) {
            w.str(id);
            w.u32(len);
        }
        w.u64(self.postings.len() as u64);
        for (term, list) in &self.postings {
            w.str(term);
            w.u32(list.len() as u32);
            for p in list {
                w.u32(p.doc);
                w.u32(p.tf);
            }
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, LexicalError> {
        let mut r = BinReader::new(bytes);
        r.expect_magic(MAGIC)?;
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(IoError::Version(version).into());
        }
        let params = Bm25Params { k1: r.f64()?, b: r.f64()? };
        params.validate()?;
        let metadata = r.str()?;
        let n = r.u64()? as usize;
        if n == 0 {
            return Err(LexicalError::EmptyCorpus);
        }
        let mut doc_ids = Vec::with_capacity(n);
        let mut doc_len = Vec::with_capacity(n);
        for _ in 0..n {
            doc_ids.push(r.str()?);
            doc_len.push(r.u32()?);
        }
        let n_terms = r.u64()? as usize;
        let mut postings = BTreeMap::new();
        for _ in 0..n_terms {
            let term = r.str()?;
            let m = r.u32()? as usize;
            let mut list = Vec::with_capacity(m);
            for _ in 0..m {
                let p = Posting { doc: r.u32()?, tf: r.u32()? };
                if p.doc as usize >= n {
                    return Err(IoError::Malformed(format!("posting for doc {} of {n}", p.doc)).into());
                }
                list.push(p);
            }
            postings.insert(term, list);
        }
        r.finish()?;
        let total: u64 = doc_len.iter().map(|&l| l as u64).sum();
        let lookup = doc_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i as u32))
            .collect();
        Ok(Self {
            params,
            avg_len: total as f64 / n as f64,
            doc_ids,
            doc_len,
            postings,
            lookup,
            metadata,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), LexicalError> {
        Ok(io::write_bytes(path, &self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self, LexicalError> {
        Self::from_bytes(&io::read_bytes(path)?)
    }
}

pub fn idf(n_docs: usize, df: usize) -> f64 {
    let (n, df) = (n_docs as f64, df as f64);
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}
