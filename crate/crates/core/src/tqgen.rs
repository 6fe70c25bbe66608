//! Query generation from task prompts: prompt construction, an HTTP client
//! for an external generation service, and a deterministic extractive stub.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::augment::{AugmentError, Polarity, SalienceScorer, SpanCandidate, Strategy, TrainingPair};
use crate::corpus::{tokenize, truncate_words, Document};
use crate::lexical::{idf, Bm25Index};
use crate::rng::derive_seed;

pub const MAX_PROMPT_WORDS: usize = 512;
pub const DEFAULT_ATTEMPTS: usize = 3;
pub const DEFAULT_IN_FLIGHT: usize = 8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GenError {
    #[error("generation service unavailable after {attempts} attempts: {last}")]
    Unavailable { attempts: usize, last: String },
    #[error("generation service rejected the request: {0}")]
    Rejected(String),
    #[error("malformed service response: {0}")]
    Protocol(String),
    #[error("empty generation")]
    EmptyGeneration,
    #[error("invalid sampling parameters: {0}")]
    BadParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum GenTask {
    Topic,
    Title,
    #[value(name = "absum")]
    AbSum,
    #[value(name = "exsum")]
    ExSum,
}

impl GenTask {
    pub const ALL: [GenTask; 4] = [GenTask::Topic, GenTask::Title, GenTask::AbSum, GenTask::ExSum];

    pub fn prompt_text(self) -> &'static str {
        match self {
            GenTask::Topic => "What is the main topic of the text above?",
            GenTask::Title => "Please write a title of the text above",
            GenTask::AbSum => "Please write a short summary of the text above",
            GenTask::ExSum => "Please use a sentence from the above text to summarize its content",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GenTask::Topic => "topic",
            GenTask::Title => "title",
            GenTask::AbSum => "absum",
            GenTask::ExSum => "exsum",
        }
    }
}

impl fmt::Display for GenTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GenTask {
    type Err = GenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        GenTask::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| GenError::BadParams(format!("unknown task {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub top_p: f64,
    pub top_k: u32,
    pub max_new_tokens: u32,
    pub temperature: f64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            top_p: 0.9,
            top_k: 0,
            max_new_tokens: 64,
            temperature: 1.0,
        }
    }
}

impl SamplingParams {
    pub fn validate(&self) -> Result<(), GenError> {
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(GenError::BadParams(format!("top_p {} not in (0, 1]", self.top_p)));
        }
        if self.max_new_tokens == 0 {
            return Err(GenError::BadParams("max_new_tokens must be at least 1".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(GenError::BadParams(format!("temperature {} must be positive", self.temperature)));
        }
        Ok(())
    }
}

/// Body of `POST /generate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenRequest {
    pub prompt: String,
    pub top_p: f64,
    pub top_k: u32,
    pub temperature: f64,
    pub max_new_tokens: u32,
    pub seed: u64,
}

impl GenRequest {
    pub fn new(prompt: String, sampling: &SamplingParams, seed: u64) -> Self {
        Self {
            prompt,
            top_p: sampling.top_p,
            top_k: sampling.top_k,
            temperature: sampling.temperature,
            max_new_tokens: sampling.max_new_tokens,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenResponse {
    pub text: String,
    pub model_id: String,
}

/// Body of `POST /score`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub context: String,
    pub continuation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub nll: f64,
}

/// The document (first 512 words) followed by a blank line and the task prompt.
pub fn build_prompt(doc: &Document, task: GenTask) -> String {
    format!("{}\n\n{}", truncate_words(&doc.text, MAX_PROMPT_WORDS), task.prompt_text())
}

pub trait QueryGenerator: Send + Sync {
    /// Raw generated text for one document and task.
    fn generate(&self, doc: &Document, task: GenTask, sampling: &SamplingParams, seed: u64) -> Result<String, GenError>;

    /// Identifier recorded in artifact metadata.
    fn model_id(&self) -> String;
}

/// One generated pseudo query for `doc`. The request seed is derived from
/// `(seed, doc id, task)`.
pub fn generate_query(
    generator: &dyn QueryGenerator,
    doc: &Document,
    task: GenTask,
    sampling: &SamplingParams,
    seed: u64,
) -> Result<TrainingPair, GenError> {
    let req_seed = derive_seed(seed, "tqgen", &format!("{}\u{0}{}", doc.id, task));
    let text = generator.generate(doc, task, sampling, req_seed)?;
    let query = text.trim();
    if query.is_empty() {
        return Err(GenError::EmptyGeneration);
    }
    Ok(TrainingPair::new(doc, query, doc.text.clone(), Strategy::from_task(task)))
}

const STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "also", "am", "an", "and", "any", "are", "as", "at",
    "be", "because", "been", "before", "being", "below", "between", "both", "but", "by", "can", "could", "did", "do",
    "does", "doing", "down", "during", "each", "few", "for", "from", "further", "had", "has", "have", "having", "he",
    "her", "here", "hers", "him", "his", "how", "i", "if", "in", "into", "is", "it", "its", "just", "may", "me",
    "might", "more", "most", "must", "my", "no", "nor", "not", "now", "of", "off", "on", "once", "only", "or",
    "other", "our", "ours", "out", "over", "own", "same", "she", "should", "so", "some", "such", "than", "that",
    "the", "their", "theirs", "them", "then", "there", "these", "they", "this", "those", "through", "to", "too",
    "under", "until", "up", "very", "was", "we", "were", "what", "when", "where", "which", "while", "who", "whom",
    "why", "will", "with", "would", "you", "your", "yours",
];

pub fn is_stopword(term: &str) -> bool {
    STOPWORDS.binary_search(&term).is_ok()
}

/// Extractive stand-in for a generation model.
///
/// * topic: the two content words of the first 100 words with the highest
///   corpus IDF, or without a corpus the two least frequent within the document
/// * title: the first 8 words
/// * absum: the first 25 words
/// * exsum: the text up to and including the first period, at most 40 words
#[derive(Debug, Clone, Copy, Default)]
pub struct StubGenerator<'a> {
    index: Option<&'a Bm25Index>,
}

impl<'a> StubGenerator<'a> {
    pub fn new(index: Option<&'a Bm25Index>) -> Self {
        Self { index }
    }

    pub fn stub_generate(&self, doc: &Document, task: GenTask) -> String {
        match task {
            GenTask::Topic => self.topic(doc),
            GenTask::Title => truncate_words(&doc.text, 8).to_string(),
            GenTask::AbSum => truncate_words(&doc.text, 25).to_string(),
            GenTask::ExSum => {
                let head = truncate_words(&doc.text, 40);
                match head.find('.') {
                    Some(i) => head[..=i].to_string(),
                    None => head.to_string(),
                }
            }
        }
    }

    fn topic(&self, doc: &Document) -> String {
        let head = tokenize(truncate_words(&doc.text, 100));
        let mut seen = HashSet::new();
        let mut candidates: Vec<(usize, &str)> = head
            .iter()
            .enumerate()
            .filter(|(_, t)| !is_stopword(t) && seen.insert(t.as_str()))
            .map(|(i, t)| (i, t.as_str()))
            .collect();
        if candidates.is_empty() {
            return head.iter().take(2).cloned().collect::<Vec<_>>().join(" ");
        }
        match self.index {
            Some(index) => {
                let n = index.n_docs();
                let weight = |t: &str| idf(n, index.df(t));
                candidates.sort_by(|a, b| weight(b.1).total_cmp(&weight(a.1)).then(a.0.cmp(&b.0)));
            }
            None => {
                let mut freq: HashMap<String, usize> = HashMap::new();
                for t in tokenize(&doc.text) {
                    *freq.entry(t).or_insert(0) += 1;
                }
                candidates.sort_by_key(|&(i, t)| (freq[t], i));
            }
        }
        candidates.truncate(2);
        candidates.sort_by_key(|&(i, _)| i);
        candidates.iter().map(|(_, t)| *t).collect::<Vec<_>>().join(" ")
    }
}

impl QueryGenerator for StubGenerator<'_> {
    fn generate(&self, doc: &Document, task: GenTask, _: &SamplingParams, _: u64) -> Result<String, GenError> {
        Ok(self.stub_generate(doc, task))
    }

    fn model_id(&self) -> String {
        match self.index {
            Some(_) => "stub-idf".into(),
            None => "stub".into(),
        }
    }
}

/// Counting semaphore bounding requests in flight.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(n: usize) -> Self {
        Self { free: Mutex::new(n.max(1)), cv: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub attempts: usize,
    pub in_flight: usize,
    pub timeout: Duration,
    pub backoff: Duration,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            attempts: DEFAULT_ATTEMPTS,
            in_flight: DEFAULT_IN_FLIGHT,
            timeout: Duration::from_secs(60),
            backoff: Duration::from_millis(200),
        }
    }
}

/// JSON-over-HTTP client for the generation service. Transport failures and
/// 5xx responses are retried; 4xx responses are fatal.
pub struct ServiceClient {
    agent: ureq::Agent,
    base: String,
    cfg: ClientConfig,
    gate: Gate,
}

impl ServiceClient {
    pub fn new(endpoint: &str, cfg: ClientConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(cfg.timeout))
            .build()
            .into();
        Self {
            agent,
            base: endpoint.trim_end_matches('/').to_string(),
            gate: Gate::new(cfg.in_flight),
            cfg,
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.base
    }

    pub fn post<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp, GenError> {
        let url = format!("{}{}", self.base, path);
        let attempts = self.cfg.attempts.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.cfg.backoff * attempt as u32);
            }
            let _permit = self.gate.acquire();
            match self.agent.post(&url).send_json(body) {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    if status == 200 {
                        return resp
                            .body_mut()
                            .read_json::<Resp>()
                            .map_err(|e| GenError::Protocol(e.to_string()));
                    }
                    let text = resp.body_mut().read_to_string().unwrap_or_default();
                    if (400..500).contains(&status) {
                        return Err(GenError::Rejected(format!("{status}: {}", text.trim())));
                    }
                    last = format!("status {status}");
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(GenError::Unavailable { attempts, last })
    }
}

pub struct HttpGenerator {
    client: ServiceClient,
}

impl HttpGenerator {
    pub fn new(endpoint: &str, cfg: ClientConfig) -> Self {
        Self { client: ServiceClient::new(endpoint, cfg) }
    }
}

impl QueryGenerator for HttpGenerator {
    fn generate(&self, doc: &Document, task: GenTask, sampling: &SamplingParams, seed: u64) -> Result<String, GenError> {
        sampling.validate()?;
        let req = GenRequest::new(build_prompt(doc, task), sampling, seed);
        let resp: GenResponse = self.client.post("/generate", &req)?;
        Ok(resp.text)
    }

    fn model_id(&self) -> String {
        format!("http:{}", self.client.endpoint())
    }
}

/// Span salience from a remote language model's `/score` endpoint: the
/// negative log-likelihood of the span given the document.
pub struct RemoteScorer {
    client: ServiceClient,
}

impl RemoteScorer {
    pub fn new(endpoint: &str, cfg: ClientConfig) -> Self {
        Self { client: ServiceClient::new(endpoint, cfg) }
    }
}

impl SalienceScorer for RemoteScorer {
    fn polarity(&self) -> Polarity {
        Polarity::LowerIsBetter
    }

    fn score(&self, doc: &Document, spans: &[SpanCandidate]) -> Result<Vec<f64>, AugmentError> {
        spans
            .iter()
            .map(|s| {
                let req = ScoreRequest { context: doc.text.clone(), continuation: s.text.clone() };
                let resp: ScoreResponse = self.client.post("/score", &req)?;
                if !resp.nll.is_finite() {
                    return Err(AugmentError::Backend(format!("non-finite nll {}", resp.nll)));
                }
                Ok(resp.nll)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexical::{build_bm25_index, Bm25Params};
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::Arc;

    const GEN_REQUEST: &str = include_str!("../tests/fixtures/protocol/generate_request.json");
    const GEN_RESPONSE: &str = include_str!("../tests/fixtures/protocol/generate_response.json");
    const SCORE_REQUEST: &str = include_str!("../tests/fixtures/protocol/score_request.json");
    const SCORE_RESPONSE: &str = include_str!("../tests/fixtures/protocol/score_response.json");

    fn fixture_doc() -> Document {
        Document::new("aws-1", "Amazon Web Services offers on-demand cloud computing platforms.")
    }

    struct Captured {
        path: String,
        body: String,
    }

    /// Serves one scripted `(status, body)` reply per connection and records
    /// each request.
    fn mock_server(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Captured>>>, std::thread::JoinHandle<()>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = format!("http://{}", listener.local_addr().unwrap());
        let log = Arc::new(Mutex::new(Vec::new()));
        let sink = Arc::clone(&log);
        let handle = std::thread::spawn(move || {
            for (status, body) in replies {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut request_line = String::new();
                reader.read_line(&mut request_line).unwrap();
                let path = request_line.split_whitespace().nth(1).unwrap_or("").to_string();
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some((k, v)) = line.split_once(':') {
                        if k.eq_ignore_ascii_case("content-length") {
                            len = v.trim().parse().unwrap();
                        }
                    }
                }
                let mut buf = vec![0u8; len];
                reader.read_exact(&mut buf).unwrap();
                sink.lock().unwrap().push(Captured { path, body: String::from_utf8(buf).unwrap() });
                let mut out = stream;
                write!(
                    out,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
                out.flush().unwrap();
            }
        });
        (addr, log, handle)
    }

    fn quick() -> ClientConfig {
        ClientConfig { backoff: Duration::from_millis(1), timeout: Duration::from_secs(5), ..Default::default() }
    }

    #[test]
    fn prompts_follow_document() {
        let doc = Document::new("x", "X");
        assert_eq!(build_prompt(&doc, GenTask::Topic), "X\n\nWhat is the main topic of the text above?");
        assert!(build_prompt(&doc, GenTask::Title).ends_with("Please write a title of the text above"));
        let prompts: HashSet<String> = GenTask::ALL.iter().map(|&t| build_prompt(&doc, t)).collect();
        assert_eq!(prompts.len(), 4);

        let long = Document::new("l", (0..600).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" "));
        let p = build_prompt(&long, GenTask::AbSum);
        let (body, _) = p.split_once("\n\n").unwrap();
        assert_eq!(body.split_whitespace().count(), 512);
    }

    #[test]
    fn stub_rules() {
        let stub = StubGenerator::new(None);
        let doc = Document::new("s", "Alpha beta gamma. More text.");
        assert_eq!(stub.stub_generate(&doc, GenTask::ExSum), "Alpha beta gamma.");
        assert_eq!(stub.stub_generate(&doc, GenTask::Title), "Alpha beta gamma. More text.");
        let long = Document::new("l", "one two three four five six seven eight nine ten");
        assert_eq!(stub.stub_generate(&long, GenTask::Title), "one two three four five six seven eight");
        assert_eq!(stub.stub_generate(&long, GenTask::ExSum), long.text);
        let words: Vec<String> = (0..50).map(|i| format!("w{i}")).collect();
        let doc50 = Document::new("f", words.join(" "));
        assert_eq!(stub.stub_generate(&doc50, GenTask::AbSum), words[..25].join(" "));
        assert_eq!(stub.stub_generate(&doc50, GenTask::ExSum), words[..40].join(" "));
        for t in GenTask::ALL {
            assert_eq!(stub.stub_generate(&doc, t), stub.stub_generate(&doc, t));
        }
    }

    #[test]
    fn stub_topic_prefers_rare_content_words() {
        let doc = Document::new("d", "the river river flows past the granite quarry and the river bank");
        assert_eq!(StubGenerator::new(None).stub_generate(&doc, GenTask::Topic), "flows past");
        let corpus = vec![
            doc.clone(),
            Document::new("e", "the river flows past the bank"),
            Document::new("f", "a river bank flows past"),
        ];
        let index = build_bm25_index(&corpus, Bm25Params::default()).unwrap();
        assert_eq!(StubGenerator::new(Some(&index)).stub_generate(&doc, GenTask::Topic), "granite quarry");
    }

    #[test]
    fn stopword_list_is_sorted() {
        assert!(STOPWORDS.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn generated_pair_strategy_matches_task() {
        let stub = StubGenerator::new(None);
        let doc = Document::new("d", "Sentence one. Sentence two.");
        for t in GenTask::ALL {
            let p = generate_query(&stub, &doc, t, &SamplingParams::default(), 1).unwrap();
            assert_eq!(p.strategy, Strategy::from_task(t));
            assert_eq!(p.query, stub.stub_generate(&doc, t));
            assert_eq!(p.doc_text, doc.text);
        }
    }

    #[test]
    fn request_matches_golden_fixture() {
        let req = GenRequest::new(build_prompt(&fixture_doc(), GenTask::Topic), &SamplingParams::default(), 42);
        let want: serde_json::Value = serde_json::from_str(GEN_REQUEST).unwrap();
        assert_eq!(serde_json::to_value(&req).unwrap(), want);
        let back: GenRequest = serde_json::from_str(GEN_REQUEST).unwrap();
        assert_eq!(back, req);
        let resp: GenResponse = serde_json::from_str(GEN_RESPONSE).unwrap();
        assert_eq!(resp.text, "Sumerian");

        let sreq = ScoreRequest { context: "the cat sat on the mat".into(), continuation: "the cat sat".into() };
        assert_eq!(serde_json::to_value(&sreq).unwrap(), serde_json::from_str::<serde_json::Value>(SCORE_REQUEST).unwrap());
        let sresp: ScoreResponse = serde_json::from_str(SCORE_RESPONSE).unwrap();
        assert!(sresp.nll > 0.0);
    }

    #[test]
    fn http_generator_sends_fixture_body() {
        let (addr, log, handle) = mock_server(vec![(200, GEN_RESPONSE.trim().to_string())]);
        let generator = HttpGenerator::new(&addr, quick());
        let text = generator
            .generate(&fixture_doc(), GenTask::Topic, &SamplingParams::default(), 42)
            .unwrap();
        handle.join().unwrap();
        assert_eq!(text, "Sumerian");
        let log = log.lock().unwrap();
        assert_eq!(log[0].path, "/generate");
        let sent: serde_json::Value = serde_json::from_str(&log[0].body).unwrap();
        assert_eq!(sent, serde_json::from_str::<serde_json::Value>(GEN_REQUEST).unwrap());
    }

    #[test]
    fn service_topic_becomes_query() {
        let (addr, _log, handle) = mock_server(vec![(200, r#"{"text":"  Sumerian\n","model_id":"m"}"#.into())]);
        let generator = HttpGenerator::new(&addr, quick());
        let pair = generate_query(&generator, &fixture_doc(), GenTask::Topic, &SamplingParams::default(), 3).unwrap();
        handle.join().unwrap();
        assert_eq!(pair.query, "Sumerian");
        assert_eq!(pair.strategy, Strategy::TqgenTopic);
    }

    #[test]
    fn retries_on_503_then_succeeds() {
        let (addr, log, handle) = mock_server(vec![
            (503, "{}".into()),
            (503, "{}".into()),
            (200, r#"{"text":"ok","model_id":"m"}"#.into()),
        ]);
        let generator = HttpGenerator::new(&addr, quick());
        let out = generator.generate(&fixture_doc(), GenTask::Title, &SamplingParams::default(), 0);
        handle.join().unwrap();
        assert_eq!(out.unwrap(), "ok");
        assert_eq!(log.lock().unwrap().len(), 3);
    }

    #[test]
    fn gives_up_after_three_attempts() {
        let (addr, log, handle) = mock_server(vec![(503, "{}".into()); 3]);
        let generator = HttpGenerator::new(&addr, quick());
        let out = generator.generate(&fixture_doc(), GenTask::Title, &SamplingParams::default(), 0);
        handle.join().unwrap();
        assert!(matches!(out, Err(GenError::Unavailable { attempts: 3, .. })));
        assert_eq!(log.lock().unwrap().len(), 3);
    }

    #[test]
    fn service_down_is_unavailable() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let generator = HttpGenerator::new(&format!("http://127.0.0.1:{port}"), quick());
        let out = generator.generate(&fixture_doc(), GenTask::Topic, &SamplingParams::default(), 0);
        assert!(matches!(out, Err(GenError::Unavailable { attempts: 3, .. })));
    }

    #[test]
    fn bad_request_is_not_retried() {
        let (addr, log, handle) = mock_server(vec![(400, r#"{"error":"bad"}"#.into())]);
        let generator = HttpGenerator::new(&addr, quick());
        let out = generator.generate(&fixture_doc(), GenTask::Topic, &SamplingParams::default(), 0);
        handle.join().unwrap();
        assert!(matches!(out, Err(GenError::Rejected(_))));
        assert_eq!(log.lock().unwrap().len(), 1);
    }

    #[test]
    fn empty_generation_is_reported() {
        let (addr, _log, handle) = mock_server(vec![(200, r#"{"text":"   ","model_id":"m"}"#.into())]);
        let generator = HttpGenerator::new(&addr, quick());
        let out = generate_query(&generator, &fixture_doc(), GenTask::Topic, &SamplingParams::default(), 0);
        handle.join().unwrap();
        assert_eq!(out.unwrap_err(), GenError::EmptyGeneration);
    }

    #[test]
    fn remote_scorer_posts_each_span() {
        let (addr, log, handle) = mock_server(vec![
            (200, r#"{"nll": 4.5}"#.into()),
            (200, r#"{"nll": 9.25}"#.into()),
        ]);
        let scorer = RemoteScorer::new(&addr, quick());
        let doc = Document::new("d", "the cat sat on the mat");
        let spans = vec![
            SpanCandidate { start: 0, len: 3, text: "the cat sat".into() },
            SpanCandidate { start: 3, len: 3, text: "on the mat".into() },
        ];
        let scores = scorer.score(&doc, &spans).unwrap();
        handle.join().unwrap();
        assert_eq!(scores, vec![4.5, 9.25]);
        assert_eq!(scorer.polarity(), Polarity::LowerIsBetter);
        let log = log.lock().unwrap();
        assert_eq!(log[0].path, "/score");
        let sent: serde_json::Value = serde_json::from_str(&log[0].body).unwrap();
        assert_eq!(sent, serde_json::from_str::<serde_json::Value>(SCORE_REQUEST).unwrap());
    }

    #[test]
    fn sampling_validation() {
        assert!(SamplingParams::default().validate().is_ok());
        assert!(SamplingParams { top_p: 0.0, ..Default::default() }.validate().is_err());
        assert!(SamplingParams { max_new_tokens: 0, ..Default::default() }.validate().is_err());
        assert!(SamplingParams { temperature: 0.0, ..Default::default() }.validate().is_err());
    }
}
