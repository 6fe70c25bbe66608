//! Corpus records, structural heuristics, tokenization and vocabularies.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Maximum number of words kept in a title extracted from the first line of a
/// web document.
pub const MAX_TITLE_WORDS: usize = 64;

pub const UNK: u32 = 0;
pub const UNK_TERM: &str = "<unk>";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CorpusError {
    #[error("document {0:?} is empty")]
    EmptyDocument(String),
    #[error("document id is empty")]
    EmptyId,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Wiki,
    Cc,
    #[default]
    Generic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub anchors: Vec<String>,
    #[serde(default)]
    pub source: Source,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            title: None,
            text: text.into(),
            anchors: Vec::new(),
            source: Source::Generic,
        }
    }

    pub fn with_title(mut self, title: impl Into<String>) -> Self {
        self.title = Some(title.into());
        self
    }

    pub fn with_anchors<I, S>(mut self, anchors: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.anchors = anchors.into_iter().map(Into::into).collect();
        self
    }

    pub fn word_count(&self) -> usize {
        self.text.split_whitespace().count()
    }
}

/// Raw ingestion record: `{"id", "title"?, "text", "anchors"?}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    #[serde(alias = "_id")]
    pub id: String,
    #[serde(default)]
    pub title: Option<String>,
    pub text: String,
    #[serde(default)]
    pub anchors: Vec<String>,
}

/// Byte ranges of the whitespace-separated words of `text`.
pub fn word_spans(text: &str) -> Vec<Range<usize>> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                spans.push(s..i);
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        spans.push(s..text.len());
    }
    spans
}

/// Returns the verbatim prefix of `text` holding its first `max_words` words,
/// or the whole (trimmed) text when it is shorter.
pub fn truncate_words(text: &str, max_words: usize) -> &str {
    let spans = word_spans(text);
    if max_words == 0 || spans.is_empty() {
        return "";
    }
    let last = &spans[max_words.min(spans.len()) - 1];
    &text[spans[0].start..last.end]
}

/// Parses one web-crawl record: its first non-empty line becomes the title.
///
/// Title words beyond [`MAX_TITLE_WORDS`] are moved to the front of the body so
/// that no word of the record is lost.
pub fn parse_cc_record(id: &str, raw: &str) -> Result<Document, CorpusError> {
    if id.trim().is_empty() {
        return Err(CorpusError::EmptyId);
    }
    let mut lines = raw.lines();
    let first = lines
        .by_ref()
        .find(|l| !l.trim().is_empty())
        .ok_or_else(|| CorpusError::EmptyDocument(id.to_string()))?;
    let words: Vec<&str> = first.split_whitespace().collect();
    let (head, overflow) = words.split_at(words.len().min(MAX_TITLE_WORDS));
    let rest: Vec<&str> = lines.collect();
    let mut body = overflow.join(" ");
    let remainder = rest.join("\n");
    let remainder = remainder.trim();
    if !remainder.is_empty() {
        if !body.is_empty() {
            body.push('\n');
        }
        body.push_str(remainder);
    }
    if body.is_empty() {
        return Err(CorpusError::EmptyDocument(id.to_string()));
    }
    Ok(Document {
        id: id.to_string(),
        title: Some(head.join(" ")),
        text: body,
        anchors: Vec::new(),
        source: Source::Cc,
    })
}

/// Splits an encyclopedia page into one document per non-empty paragraph.
///
/// Each paragraph keeps the page title and the marked spans (links, italics,
/// bold) that occur inside it. Ids are `pageId#k` with `k` counting non-empty
/// paragraphs from zero.
pub fn parse_wiki_record(page: &RawRecord) -> Result<Vec<Document>, CorpusError> {
    if page.id.trim().is_empty() {
        return Err(CorpusError::EmptyId);
    }
    let title = page
        .title
        .as_deref()
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(str::to_string);
    let docs: Vec<Document> = page
        .text
        .lines()
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .enumerate()
        .map(|(k, para)| {
            let mut anchors: Vec<String> = Vec::new();
            for a in &page.anchors {
                let a = a.trim();
                if !a.is_empty() && para.contains(a) && !anchors.iter().any(|x| x == a) {
                    anchors.push(a.to_string());
                }
            }
            Document {
                id: format!("{}#{}", page.id, k),
                title: title.clone(),
                text: para.to_string(),
                anchors,
                source: Source::Wiki,
            }
        })
        .collect();
    if docs.is_empty() {
        return Err(CorpusError::EmptyDocument(page.id.clone()));
    }
    Ok(docs)
}

/// Normalizes a record that is already one document.
pub fn parse_generic_record(rec: &RawRecord) -> Result<Document, CorpusError> {
    if rec.id.trim().is_empty() {
        return Err(CorpusError::EmptyId);
    }
    let text = rec.text.trim();
    if text.is_empty() {
        return Err(CorpusError::EmptyDocument(rec.id.clone()));
    }
    Ok(Document {
        id: rec.id.clone(),
        title: rec
            .title
            .as_deref()
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(str::to_string),
        text: text.to_string(),
        anchors: rec
            .anchors
            .iter()
            .map(|a| a.trim())
            .filter(|a| !a.is_empty())
            .map(str::to_string)
            .collect(),
        source: Source::Generic,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum RecordFormat {
    Cc,
    Wiki,
    Generic,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestStats {
    pub records: usize,
    pub documents: usize,
    pub skipped_empty: usize,
    pub skipped_duplicate: usize,
}

/// Parses raw records into documents, skipping (and counting) degenerate
/// records and repeated ids. Output order follows input order.
pub fn ingest(records: &[RawRecord], format: RecordFormat) -> (Vec<Document>, IngestStats) {
    let parsed: Vec<Result<Vec<Document>, CorpusError>> = records
        .par_iter()
        .map(|r| match format {
            RecordFormat::Cc => parse_cc_record(&r.id, &r.text).map(|d| vec![d]),
            RecordFormat::Wiki => parse_wiki_record(r),
            RecordFormat::Generic => parse_generic_record(r).map(|d| vec![d]),
        })
        .collect();
    let mut stats = IngestStats {
        records: records.len(),
        ..Default::default()
    };
    let mut seen = HashSet::new();
    let mut docs = Vec::new();
    for res in parsed {
        match res {
            Ok(ds) => {
                for d in ds {
                    if seen.insert(d.id.clone()) {
                        docs.push(d);
                    } else {
                        stats.skipped_duplicate += 1;
                    }
                }
            }
            Err(_) => stats.skipped_empty += 1,
        }
    }
    stats.documents = docs.len();
    (docs, stats)
}

/// Lowercases and splits on every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenSeq {
    pub tokens: Vec<u32>,
    pub surface: Vec<String>,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Word vocabulary. Id 0 is reserved for unknown terms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    terms: Vec<String>,
    ids: HashMap<String, u32>,
    min_freq: u64,
}

/// Mergeable term counts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TermCounts(pub HashMap<String, u64>);

impl TermCounts {
    pub fn add_text(&mut self, text: &str) {
        for t in tokenize(text) {
            *self.0.entry(t).or_insert(0) += 1;
        }
    }

    pub fn merge(mut self, other: TermCounts) -> TermCounts {
        let (mut big, small) = if self.0.len() >= other.0.len() {
            (std::mem::take(&mut self.0), other.0)
        } else {
            (other.0, std::mem::take(&mut self.0))
        };
        for (t, c) in small {
            *big.entry(t).or_insert(0) += c;
        }
        TermCounts(big)
    }

    pub fn from_texts<S: AsRef<str> + Sync>(texts: &[S]) -> TermCounts {
        texts
            .par_iter()
            .fold(TermCounts::default, |mut acc, t| {
                acc.add_text(t.as_ref());
                acc
            })
            .reduce(TermCounts::default, TermCounts::merge)
    }

    /// Terms with count ≥ `min_freq`, by descending count then lexicographically.
    fn ranked(&self, min_freq: u64) -> Vec<&str> {
        let mut kept: Vec<(&str, u64)> = self
            .0
            .iter()
            .filter(|(_, &c)| c >= min_freq)
            .map(|(t, &c)| (t.as_str(), c))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        kept.into_iter().map(|(t, _)| t).collect()
    }
}

/// Builds a vocabulary over `texts`. Ids follow descending frequency with
/// lexicographic tie-breaks, so the result is independent of text order.
pub fn build_vocab<S: AsRef<str> + Sync>(texts: &[S], min_freq: u64) -> Vocab {
    let min_freq = min_freq.max(1);
    let counts = TermCounts::from_texts(texts);
    let mut vocab = Vocab::empty(min_freq);
    for t in counts.ranked(min_freq) {
        vocab.push(t.to_string());
    }
    vocab
}

impl Vocab {
    pub fn empty(min_freq: u64) -> Self {
        Self {
            terms: vec![UNK_TERM.to_string()],
            ids: HashMap::new(),
            min_freq,
        }
    }

    /// Rebuilds a vocabulary from its id-ordered term table (index 0 = UNK).
    pub fn from_terms(terms: Vec<String>, min_freq: u64) -> Result<Self, String> {
        if terms.first().map(String::as_str) != Some(UNK_TERM) {
            return Err("term table must start with the UNK entry".into());
        }
        let mut v = Vocab::empty(min_freq);
        for t in terms.into_iter().skip(1) {
            if v.ids.contains_key(&t) || t == UNK_TERM {
                return Err(format!("duplicate term {t:?}"));
            }
            v.push(t);
        }
        Ok(v)
    }

    fn push(&mut self, term: String) {
        self.ids.insert(term.clone(), self.terms.len() as u32);
        self.terms.push(term);
    }

    /// Appends terms of `texts` that are not yet known, using the same
    /// ordering rule as [`build_vocab`]. Existing ids are unchanged.
    pub fn extend<S: AsRef<str> + Sync>(&mut self, texts: &[S], min_freq: u64) -> usize {
        let counts = TermCounts::from_texts(texts);
        let before = self.terms.len();
        for t in counts.ranked(min_freq.max(1)) {
            if !self.ids.contains_key(t) {
                self.push(t.to_string());
            }
        }
        self.terms.len() - before
    }

    /// Number of ids, including UNK.
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.len() <= 1
    }

    pub fn min_freq(&self) -> u64 {
        self.min_freq
    }

    pub fn id(&self, term: &str) -> u32 {
        self.ids.get(term).copied().unwrap_or(UNK)
    }

    pub fn get(&self, term: &str) -> Option<u32> {
        self.ids.get(term).copied()
    }

    pub fn term(&self, id: u32) -> Option<&str> {
        self.terms.get(id as usize).map(String::as_str)
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn tokenize(&self, text: &str) -> TokenSeq {
        let surface = tokenize(text);
        let tokens = surface.iter().map(|t| self.id(t)).collect();
        TokenSeq { tokens, surface }
    }

    pub fn sorted_terms(&self) -> BTreeMap<&str, u32> {
        self.ids.iter().map(|(t, &i)| (t.as_str(), i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cc_title_is_first_line() {
        let d = parse_cc_record("c1", "Hello World\nBody text here.").unwrap();
        assert_eq!(d.title.as_deref(), Some("Hello World"));
        assert_eq!(d.text, "Body text here.");
        assert!(d.anchors.is_empty());
        assert_eq!(d.source, Source::Cc);
    }

    #[test]
    fn cc_title_truncated_to_64_words() {
        let first: Vec<String> = (0..70).map(|i| format!("w{i}")).collect();
        let raw = format!("{}\nrest of it", first.join(" "));
        let d = parse_cc_record("c", &raw).unwrap();
        assert_eq!(d.title.unwrap().split_whitespace().count(), 64);
        assert!(d.text.starts_with("w64 w65 w66 w67 w68 w69\nrest of it"));
    }

    #[test]
    fn cc_leading_blank_lines_skipped() {
        let d = parse_cc_record("c", "\n   \n  Title here  \nbody").unwrap();
        assert_eq!(d.title.as_deref(), Some("Title here"));
        assert_eq!(d.text, "body");
    }

    #[test]
    fn cc_degenerate_records() {
        assert_eq!(
            parse_cc_record("c", "  \n\t \n"),
            Err(CorpusError::EmptyDocument("c".into()))
        );
        // a title with nothing after it leaves an empty body
        assert!(parse_cc_record("c", "only a title").is_err());
        assert_eq!(parse_cc_record(" ", "x\ny"), Err(CorpusError::EmptyId));
    }

    #[test]
    fn wiki_paragraphs_share_title_and_keep_their_anchors() {
        let page = RawRecord {
            id: "p9".into(),
            title: Some("Autism".into()),
            text: "First para with Asperger syndrome and DSM-5.\n\nSecond para.\nThird about ASD."
                .into(),
            anchors: vec!["Asperger syndrome".into(), "DSM-5".into(), "ASD".into()],
        };
        let docs = parse_wiki_record(&page).unwrap();
        assert_eq!(docs.len(), 3);
        assert!(docs.iter().all(|d| d.title.as_deref() == Some("Autism")));
        assert_eq!(docs[0].id, "p9#0");
        assert_eq!(docs[2].id, "p9#2");
        assert_eq!(docs[0].anchors, vec!["Asperger syndrome", "DSM-5"]);
        assert!(docs[1].anchors.is_empty());
        assert_eq!(docs[2].anchors, vec!["ASD"]);
    }

    #[test]
    fn wiki_empty_body() {
        let page = RawRecord {
            id: "p".into(),
            title: Some("T".into()),
            text: "".into(),
            anchors: vec![],
        };
        assert_eq!(
            parse_wiki_record(&page),
            Err(CorpusError::EmptyDocument("p".into()))
        );
    }

    #[test]
    fn ingest_counts_skips() {
        let recs = vec![
            RawRecord { id: "a".into(), title: None, text: "T\nx".into(), anchors: vec![] },
            RawRecord { id: "b".into(), title: None, text: "   ".into(), anchors: vec![] },
            RawRecord { id: "a".into(), title: None, text: "T\ny".into(), anchors: vec![] },
        ];
        let (docs, stats) = ingest(&recs, RecordFormat::Cc);
        assert_eq!(docs.len(), 1);
        assert_eq!(stats.skipped_empty, 1);
        assert_eq!(stats.skipped_duplicate, 1);
    }

    #[test]
    fn tokenize_rules() {
        assert_eq!(tokenize("Hello, World!"), vec!["hello", "world"]);
        assert!(tokenize("").is_empty());
        assert!(tokenize("... --- !!!").is_empty());
    }

    #[test]
    fn oov_maps_to_unk() {
        let v = build_vocab(&["known words"], 1);
        let seq = v.tokenize("known zebra");
        assert_eq!(seq.surface, vec!["known", "zebra"]);
        assert_ne!(seq.tokens[0], UNK);
        assert_eq!(seq.tokens[1], UNK);
    }

    #[test]
    fn vocab_ordering_and_threshold() {
        let v = build_vocab(&["a a b"], 1);
        assert_eq!(v.get("a"), Some(1));
        assert_eq!(v.get("b"), Some(2));
        assert_eq!(v.term(0), Some(UNK_TERM));
        let v2 = build_vocab(&["a a b"], 2);
        assert_eq!(v2.len(), 2);
        assert_eq!(v2.get("b"), None);
        // ties broken lexicographically
        let v3 = build_vocab(&["z y x"], 1);
        assert_eq!(v3.terms()[1..], ["x", "y", "z"]);
    }

    #[test]
    fn vocab_extend_keeps_existing_ids() {
        let mut v = build_vocab(&["a a b"], 1);
        let added = v.extend(&["b c c d"], 1);
        assert_eq!(added, 2);
        assert_eq!(v.get("a"), Some(1));
        assert_eq!(v.get("b"), Some(2));
        assert_eq!(v.get("c"), Some(3));
        assert_eq!(v.get("d"), Some(4));
        let rebuilt = Vocab::from_terms(v.terms().to_vec(), 1).unwrap();
        assert_eq!(rebuilt, v);
    }

    proptest! {
        #[test]
        fn cc_title_never_exceeds_limit_and_no_words_lost(
            lines in prop::collection::vec("[a-z ]{0,400}", 1..5)
        ) {
            let raw = lines.join("\n");
            if let Ok(d) = parse_cc_record("x", &raw) {
                let title = d.title.clone().unwrap();
                prop_assert!(title.split_whitespace().count() <= MAX_TITLE_WORDS);
                let mut got: Vec<&str> = title.split_whitespace().chain(d.text.split_whitespace()).collect();
                let mut want: Vec<&str> = raw.split_whitespace().collect();
                got.sort_unstable();
                want.sort_unstable();
                prop_assert_eq!(got, want);
            }
        }

        #[test]
        fn tokenize_idempotent(text in "\\PC{0,80}") {
            let once = tokenize(&text);
            let twice = tokenize(&once.join(" "));
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn vocab_order_insensitive(mut docs in prop::collection::vec("[a-e ]{0,20}", 0..8), min_freq in 1u64..3) {
            let v1 = build_vocab(&docs, min_freq);
            docs.reverse();
            let v2 = build_vocab(&docs, min_freq);
            prop_assert_eq!(v1, v2);
        }
    }
}
