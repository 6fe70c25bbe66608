//! Planted-topic corpora for checking that training learns something.
//!
//! Documents are written in doc-words, queries in query-words, and the two
//! vocabularies are linked by a fixed one-to-one map, so no query shares a
//! surface token with its document. Each document plants a few topic words
//! among frequent noise words; a query is the mapped image of a subset of its
//! document's topic words.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{Strategy, TrainingPair};
use crate::corpus::Document;
use crate::evaluator::{Qrels, Query};
use crate::rng::item_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    /// Prefix that keeps the vocabularies of different domains disjoint.
    pub domain: String,
    pub docs: usize,
    pub doc_len: usize,
    pub topics_per_doc: usize,
    /// Size of the topic-word pool shared by all documents.
    pub topic_pool: usize,
    pub noise_pool: usize,
    /// Probability that a document position holds a topic word.
    pub topic_rate: f64,
    /// Topic words per training and per evaluation query.
    pub query_len: usize,
    /// Training queries per document, drawn from subsets not used for evaluation.
    pub train_queries: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            domain: "a".into(),
            docs: 200,
            doc_len: 100,
            topics_per_doc: 5,
            topic_pool: 1000,
            noise_pool: 50,
            topic_rate: 0.3,
            query_len: 3,
            train_queries: 8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub docs: Vec<Document>,
    /// The planted topic words of each document, in doc-words.
    pub topics: Vec<Vec<String>>,
    pub train_pairs: Vec<TrainingPair>,
    pub eval_queries: Vec<Query>,
    pub qrels: Qrels,
}

impl SyntheticConfig {
    pub fn doc_word(&self, i: usize) -> String {
        format!("{}t{i}", self.domain)
    }

    /// Image of a topic doc-word under the fixed map.
    pub fn query_word(&self, i: usize) -> String {
        format!("{}q{i}", self.domain)
    }

    fn noise_word(&self, i: usize) -> String {
        format!("{}n{i}", self.domain)
    }

    fn subsets(&self) -> Vec<Vec<usize>> {
        fn rec(n: usize, k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if cur.len() == k {
                out.push(cur.clone());
                return;
            }
            for i in start..n {
                cur.push(i);
                rec(n, k, i + 1, cur, out);
                cur.pop();
            }
        }
        let mut out = Vec::new();
        rec(self.topics_per_doc, self.query_len.min(self.topics_per_doc), 0, &mut Vec::new(), &mut out);
        out
    }

    /// Builds the corpus, training pairs and one held-out query per document.
    /// The held-out query uses a topic subset that no training query of the
    /// same document uses.
    pub fn generate(&self, seed: u64) -> SyntheticTask {
        assert!(self.topics_per_doc <= self.topic_pool && self.noise_pool > 0 && self.query_len >= 1);
        let subsets = self.subsets();
        assert!(subsets.len() >= 2, "need at least one training and one held-out subset");
        let mut docs = Vec::with_capacity(self.docs);
        let mut topics = Vec::with_capacity(self.docs);
        let mut train_pairs = Vec::new();
        let mut eval_queries = Vec::with_capacity(self.docs);
        let mut qrels = Qrels::new();
        let pool: Vec<usize> = (0..self.topic_pool).collect();
        for d in 0..self.docs {
            let id = format!("{}-{d:04}", self.domain);
            let mut rng = item_rng(seed, "synthetic", &id);
            let planted: Vec<usize> = pool.choose_multiple(&mut rng, self.topics_per_doc).copied().collect();
            let words: Vec<String> = (0..self.doc_len)
                .map(|_| {
                    if rng.random::<f64>() < self.topic_rate {
                        self.doc_word(*planted.choose(&mut rng).expect("non-empty"))
                    } else {
                        self.noise_word(rng.random_range(0..self.noise_pool))
                    }
                })
                .collect();
            let doc = Document::new(&id, words.join(" "));

            let mut order = subsets.clone();
            order.shuffle(&mut rng);
            let (held, train) = order.split_first().expect("non-empty");
            let query_of = |s: &[usize]| s.iter().map(|&k| self.query_word(planted[k])).collect::<Vec<_>>().join(" ");
            for (j, s) in train.iter().cycle().take(self.train_queries).enumerate() {
                let mut p = TrainingPair::new(&doc, query_of(s), doc.text.clone(), Strategy::External);
                p.qid = format!("{id}:train{j}");
                train_pairs.push(p);
            }
            let qid = format!("{id}:eval");
            eval_queries.push(Query { qid: qid.clone(), text: query_of(held), answers: Vec::new() });
            qrels.insert(qid, BTreeMap::from([(id.clone(), 1)]));
            topics.push(planted.iter().map(|&k| self.doc_word(k)).collect());
            docs.push(doc);
        }
        SyntheticTask { docs, topics, train_pairs, eval_queries, qrels }
    }
}

impl SyntheticTask {
    /// Held-out queries rewritten in doc-words, for a target domain whose
    /// users share the documents' vocabulary.
    pub fn doc_word_queries(&self, cfg: &SyntheticConfig) -> Vec<Query> {
        let prefix = format!("{}q", cfg.domain);
        let swap = format!("{}t", cfg.domain);
        self.eval_queries
            .iter()
            .map(|q| Query {
                qid: q.qid.clone(),
                text: q.text.split(' ').map(|w| w.replacen(&prefix, &swap, 1)).collect::<Vec<_>>().join(" "),
                answers: Vec::new(),
            })
            .collect()
    }
}
