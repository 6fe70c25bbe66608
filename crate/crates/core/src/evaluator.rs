//! Exact dense search, BM25 search, and retrieval metrics.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Document};
use crate::encoder::{dot, Model};
use crate::io::{read_bytes, IoError};
use crate::lexical::Bm25Index;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("query {0:?} has no relevant documents")]
    NoRelevanceInfo(String),
    #[error("qrels line {line}: {msg}")]
    BadQrels { line: usize, msg: String },
    #[error("unknown metric {0:?}")]
    BadMetric(String),
    #[error("k must be at least 1")]
    BadK,
    #[error("empty corpus")]
    EmptyCorpus,
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Query id → (document id → grade).
pub type Qrels = BTreeMap<String, BTreeMap<String, u32>>;

/// Parses whitespace-separated `qid 0 docid grade` lines.
pub fn parse_qrels(text: &str) -> Result<Qrels, EvalError> {
    let mut out = Qrels::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let bad = |msg: &str| EvalError::BadQrels { line: i + 1, msg: msg.to_string() };
        if f.len() != 4 {
            return Err(bad("expected 4 columns"));
        }
        let grade: i64 = f[3].parse().map_err(|_| bad("grade is not an integer"))?;
        if grade < 0 {
            return Err(bad("negative grade"));
        }
        out.entry(f[0].to_string()).or_default().insert(f[2].to_string(), grade as u32);
    }
    Ok(out)
}

pub fn load_qrels(path: &Path) -> Result<Qrels, EvalError> {
    let bytes = read_bytes(path)?;
    parse_qrels(&String::from_utf8_lossy(&bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    #[serde(alias = "_id")]
    pub qid: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub answers: Vec<String>,
}

/// Ranked `(doc id, score)` list.
pub type Ranking = Vec<(String, f64)>;

fn rank_top_k(ids: &[String], scores: &[f64], k: usize) -> Ranking {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then_with(|| ids[a].cmp(&ids[b])));
    order.truncate(k);
    order.into_iter().map(|i| (ids[i].clone(), scores[i])).collect()
}

/// Exhaustive inner-product search over a row-major `N × H` matrix; ties go
/// to the smaller document id.
pub fn exact_search(doc_ids: &[String], doc_matrix: &[f64], query: &[f64], k: usize) -> Result<Ranking, EvalError> {
    if k == 0 {
        return Err(EvalError::BadK);
    }
    if doc_ids.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let h = query.len();
    if h == 0 || doc_matrix.len() != doc_ids.len() * h {
        return Err(EvalError::DimMismatch(doc_matrix.len(), doc_ids.len() * h));
    }
    let scores: Vec<f64> = doc_matrix.chunks_exact(h).map(|row| dot(row, query)).collect();
    Ok(rank_top_k(doc_ids, &scores, k))
}

fn has_positive(rels: &BTreeMap<String, u32>) -> bool {
    rels.values().any(|&g| g > 0)
}

/// DCG@k with gain `2^rel − 1` and discount `log2(i + 1)`, normalized by the
/// ideal ordering of the judged grades.
pub fn ndcg_at_k(ranking: &[(String, f64)], rels: &BTreeMap<String, u32>, k: usize) -> Result<f64, EvalError> {
    if !has_positive(rels) {
        return Err(EvalError::NoRelevanceInfo(String::new()));
    }
    let gain = |g: u32| 2f64.powi(g as i32) - 1.0;
    let disc = |i: usize| (i as f64 + 2.0).log2();
    let dcg: f64 = ranking
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, (d, _))| gain(rels.get(d).copied().unwrap_or(0)) / disc(i))
        .sum();
    let mut ideal: Vec<u32> = rels.values().copied().collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal.iter().take(k).enumerate().map(|(i, &g)| gain(g) / disc(i)).sum();
    Ok(dcg / idcg)
}

/// Fraction of relevant (grade > 0) documents found in the top `k`.
pub fn recall_at_k(ranking: &[(String, f64)], rels: &BTreeMap<String, u32>, k: usize) -> Result<f64, EvalError> {
    let relevant = rels.values().filter(|&&g| g > 0).count();
    if relevant == 0 {
        return Err(EvalError::NoRelevanceInfo(String::new()));
    }
    let found = ranking
        .iter()
        .take(k)
        .filter(|(d, _)| rels.get(d).is_some_and(|&g| g > 0))
        .count();
    Ok(found as f64 / relevant as f64)
}

/// Lowercase, punctuation replaced by spaces, whitespace collapsed.
pub fn normalize_answer(s: &str) -> String {
    let cleaned: String = s
        .chars()
        .map(|c| if c.is_alphanumeric() || c.is_whitespace() { c } else { ' ' })
        .collect::<String>()
        .to_lowercase();
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// 1.0 if any of the first `k` passages contains any answer as a whole-word
/// sequence after normalization, else 0.0.
pub fn answer_recall_at_k(passages: &[&str], answers: &[String], k: usize) -> f64 {
    let answers: Vec<String> = answers
        .iter()
        .map(|a| normalize_answer(a))
        .filter(|a| !a.is_empty())
        .map(|a| format!(" {a} "))
        .collect();
    let hit = passages.iter().take(k).any(|p| {
        let p = format!(" {} ", normalize_answer(p));
        answers.iter().any(|a| p.contains(a.as_str()))
    });
    if hit {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    Ndcg(usize),
    Recall(usize),
    AnswerRecall(usize),
}

impl Metric {
    pub fn k(self) -> usize {
        match self {
            Metric::Ndcg(k) | Metric::Recall(k) | Metric::AnswerRecall(k) => k,
        }
    }

    fn uses_qrels(self) -> bool {
        !matches!(self, Metric::AnswerRecall(_))
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Ndcg(k) => write!(f, "ndcg@{k}"),
            Metric::Recall(k) => write!(f, "recall@{k}"),
            Metric::AnswerRecall(k) => write!(f, "answer_recall@{k}"),
        }
    }
}

impl FromStr for Metric {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || EvalError::BadMetric(s.to_string());
        let (name, k) = s.trim().split_once('@').ok_or_else(bad)?;
        let k: usize = k.parse().map_err(|_| bad())?;
        if k == 0 {
            return Err(EvalError::BadK);
        }
        match name.to_ascii_lowercase().as_str() {
            "ndcg" => Ok(Metric::Ndcg(k)),
            "recall" => Ok(Metric::Recall(k)),
            "answer_recall" | "answer-recall" => Ok(Metric::AnswerRecall(k)),
            _ => Err(bad()),
        }
    }
}

pub enum System<'a> {
    Dense(&'a Model),
    Bm25(&'a Bm25Index),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub metrics: BTreeMap<String, f64>,
    pub per_query: BTreeMap<String, BTreeMap<String, f64>>,
    pub config: serde_json::Value,
}

/// Encodes every document with the model, row-major.
pub fn encode_corpus(model: &Model, docs: &[Document]) -> Vec<f64> {
    let rows: Vec<Vec<f64>> = docs.par_iter().map(|d| model.encode_text(&d.text).0).collect();
    rows.concat()
}

/// Runs every query against the corpus and macro-averages the requested
/// metrics. Queries without a positive judgment (or without answers, for
/// answer recall) are skipped and counted in the config block.
pub fn evaluate_run(
    system: &System<'_>,
    corpus: &[Document],
    queries: &[Query],
    qrels: Option<&Qrels>,
    metrics: &[Metric],
) -> Result<EvalReport, EvalError> {
    if corpus.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let depth = metrics.iter().map(|m| m.k()).max().unwrap_or(10).max(1);
    let needs_qrels = metrics.iter().any(|m| m.uses_qrels());
    let needs_answers = metrics.iter().any(|m| !m.uses_qrels());
    let empty = Qrels::new();
    let qrels = qrels.unwrap_or(&empty);
    let evaluable: Vec<&Query> = queries
        .iter()
        .filter(|q| {
            let judged = !needs_qrels || qrels.get(&q.qid).is_some_and(has_positive);
            let answered = !needs_answers || !q.answers.is_empty();
            judged && answered
        })
        .collect();
    let skipped = queries.len() - evaluable.len();

    let ids: Vec<String> = corpus.iter().map(|d| d.id.clone()).collect();
    let text_of: HashMap<&str, &str> = corpus.iter().map(|d| (d.id.as_str(), d.text.as_str())).collect();
    let (system_name, model_info) = match system {
        System::Dense(m) => ("dense", serde_json::from_str::<serde_json::Value>(&m.metadata).unwrap_or_default()),
        System::Bm25(ix) => ("bm25", serde_json::json!({"k1": ix.params().k1, "b": ix.params().b})),
    };
    let matrix = match system {
        System::Dense(m) => Some(encode_corpus(m, corpus)),
        System::Bm25(_) => None,
    };
    let rankings: Vec<Ranking> = evaluable
        .par_iter()
        .map(|q| match system {
            System::Dense(m) => {
                let v = m.encode_text(&q.text);
                exact_search(&ids, matrix.as_deref().unwrap_or_default(), &v.0, depth)
            }
            System::Bm25(ix) => Ok(ix.search(&tokenize(&q.text), depth)),
        })
        .collect::<Result<_, _>>()?;

    let mut per_query = BTreeMap::new();
    let mut sums: BTreeMap<String, f64> = metrics.iter().map(|m| (m.to_string(), 0.0)).collect();
    for (q, ranking) in evaluable.iter().zip(&rankings) {
        let mut row = BTreeMap::new();
        for &m in metrics {
            let v = match m {
                Metric::Ndcg(k) => ndcg_at_k(ranking, &qrels[&q.qid], k)?,
                Metric::Recall(k) => recall_at_k(ranking, &qrels[&q.qid], k)?,
                Metric::AnswerRecall(k) => {
                    let passages: Vec<&str> = ranking.iter().map(|(d, _)| text_of[d.as_str()]).collect();
                    answer_recall_at_k(&passages, &q.answers, k)
                }
            };
            *sums.get_mut(&m.to_string()).expect("metric registered") += v;
            row.insert(m.to_string(), v);
        }
        per_query.insert(q.qid.clone(), row);
    }
    let n = evaluable.len().max(1) as f64;
    let metrics_avg = sums.into_iter().map(|(k, v)| (k, v / n)).collect();
    let config = serde_json::json!({
        "system": system_name,
        "model": model_info,
        "metrics": metrics.iter().map(|m| m.to_string()).collect::<Vec<_>>(),
        "queries": queries.len(),
        "evaluated_queries": evaluable.len(),
        "skipped_queries": skipped,
        "corpus_size": corpus.len(),
        "ndcg_convention": "gain 2^rel-1, discount log2(rank+1)",
    });
    Ok(EvalReport { metrics: metrics_avg, per_query, config })
}
