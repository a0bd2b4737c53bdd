//! Corpus ingestion and passage segmentation.
//!
//! Records are JSON objects, one per line:
//!
//! ```text
//! {"id": "d1", "title": "...", "abstract": "...", "body": ["section", ...], "date": "2020-03-01"}
//! ```
//!
//! Each document is cut into passages: the title (ordinal 0 when present),
//! then every blank-line-separated paragraph of the abstract and of each body
//! section. Paragraphs longer than the term budget are split greedily at
//! sentence boundaries.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textproc::{normalize_whitespace, sentence_spans, Analyzer};

pub const DEFAULT_MAX_TERMS: usize = 128;
pub const MIN_MAX_TERMS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    AbstractOnly,
    FullText,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub abstract_text: Option<String>,
    pub body: Vec<String>,
    pub source: Source,
    pub date: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Title,
    Abstract,
    Body,
}

impl Field {
    pub fn as_u8(self) -> u8 {
        match self {
            Field::Title => 0,
            Field::Abstract => 1,
            Field::Body => 2,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Field::Title),
            1 => Some(Field::Abstract),
            2 => Some(Field::Body),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub passage_id: String,
    pub doc_id: String,
    pub text: String,
    pub ordinal: u32,
    pub field: Field,
}

impl Passage {
    pub fn new(doc_id: &str, ordinal: u32, field: Field, text: String) -> Self {
        Self {
            passage_id: passage_id(doc_id, ordinal),
            doc_id: doc_id.to_string(),
            text,
            ordinal,
            field,
        }
    }
}

pub fn passage_id(doc_id: &str, ordinal: u32) -> String {
    format!("{doc_id}#{ordinal}")
}

/// Splits a passage id at its last `#`; doc ids may themselves contain `#`.
pub fn decode_passage_id(id: &str) -> Option<(&str, u32)> {
    let (doc, ord) = id.rsplit_once('#')?;
    if doc.is_empty() || ord.is_empty() || !ord.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    // Reject non-canonical ordinals like "007" so the mapping stays bijective.
    if ord.len() > 1 && ord.starts_with('0') {
        return None;
    }
    Some((doc, ord.parse().ok()?))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct CorpusStats {
    pub num_documents: usize,
    pub num_passages: usize,
    pub avg_passage_length: f64,
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "documents={} passages={} avg_passage_length={:.2}",
            self.num_documents, self.num_passages, self.avg_passage_length
        )
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    #[serde(default)]
    title: Option<String>,
    #[serde(default, rename = "abstract")]
    abstract_text: Option<String>,
    #[serde(default)]
    body: Option<Vec<String>>,
    #[serde(default)]
    date: Option<String>,
}

fn valid_date(s: &str) -> bool {
    use chrono::NaiveDate;
    let padded = match s.len() {
        4 => format!("{s}-01-01"),
        7 => format!("{s}-01"),
        _ => s.to_string(),
    };
    NaiveDate::parse_from_str(&padded, "%Y-%m-%d").is_ok()
}

fn parse_record(line: &str) -> std::result::Result<Document, String> {
    let rec: Record = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if rec.id.trim().is_empty() {
        return Err("empty `id`".into());
    }
    if let Some(d) = &rec.date {
        if !valid_date(d) {
            return Err(format!("invalid date `{d}`"));
        }
    }
    let title = rec.title.unwrap_or_default();
    let abstract_text = rec.abstract_text.filter(|a| !a.trim().is_empty());
    let body = rec.body.unwrap_or_default();
    let has_body = body.iter().any(|s| !s.trim().is_empty());
    if title.trim().is_empty() && abstract_text.is_none() && !has_body {
        return Err("record has no title, abstract or body text".into());
    }
    Ok(Document {
        doc_id: rec.id,
        title,
        abstract_text,
        body,
        source: if has_body {
            Source::FullText
        } else {
            Source::AbstractOnly
        },
        date: rec.date,
    })
}

/// Streaming reader over a line-delimited corpus file.
///
/// In lenient mode malformed lines (and repeated ids) are skipped and counted;
/// in strict mode the first one ends the stream with a parse error.
pub struct CorpusReader<R> {
    lines: std::io::Lines<R>,
    path: PathBuf,
    strict: bool,
    line_no: usize,
    seen: HashSet<String>,
    skipped: usize,
    done: bool,
}

impl<R: BufRead> CorpusReader<R> {
    pub fn new(reader: R, path: impl Into<PathBuf>, strict: bool) -> Self {
        Self {
            lines: reader.lines(),
            path: path.into(),
            strict,
            line_no: 0,
            seen: HashSet::new(),
            skipped: 0,
            done: false,
        }
    }

    pub fn skipped(&self) -> usize {
        self.skipped
    }
}

impl<R: BufRead> Iterator for CorpusReader<R> {
    type Item = Result<Document>;

    fn next(&mut self) -> Option<Self::Item> {
        while !self.done {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => {
                    self.done = true;
                    return Some(Err(Error::io(&self.path, e)));
                }
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            let outcome = parse_record(&line).and_then(|doc| {
                if self.seen.insert(doc.doc_id.clone()) {
                    Ok(doc)
                } else {
                    Err(format!("duplicate document id `{}`", doc.doc_id))
                }
            });
            match outcome {
                Ok(doc) => return Some(Ok(doc)),
                Err(msg) if self.strict => {
                    self.done = true;
                    return Some(Err(Error::parse(self.path.display().to_string(), self.line_no, msg)));
                }
                Err(msg) => {
                    tracing::debug!(line = self.line_no, %msg, "skipping malformed corpus record");
                    self.skipped += 1;
                }
            }
        }
        None
    }
}

pub fn load_corpus(path: &Path, strict: bool) -> Result<CorpusReader<BufReader<File>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(CorpusReader::new(BufReader::new(file), path, strict))
}

/// Cuts documents into passages of at most `max_terms` analyzed terms.
#[derive(Debug, Clone)]
pub struct Segmenter {
    analyzer: Analyzer,
    max_terms: usize,
}

impl Segmenter {
    pub fn new(analyzer: Analyzer, max_terms: usize) -> Result<Self> {
        if max_terms < MIN_MAX_TERMS {
            return Err(Error::InvalidArgument(format!(
                "max_terms must be at least {MIN_MAX_TERMS}, got {max_terms}"
            )));
        }
        Ok(Self { analyzer, max_terms })
    }

    pub fn max_terms(&self) -> usize {
        self.max_terms
    }

    pub fn segment(&self, doc: &Document) -> Vec<Passage> {
        let mut passages = Vec::new();
        let mut push = |field: Field, text: String| {
            let ordinal = passages.len() as u32;
            passages.push(Passage::new(&doc.doc_id, ordinal, field, text));
        };

        let title = normalize_whitespace(&doc.title);
        if !title.is_empty() {
            push(Field::Title, title);
        }
        let sections = doc
            .abstract_text
            .iter()
            .map(|a| (Field::Abstract, a.as_str()))
            .chain(doc.body.iter().map(|s| (Field::Body, s.as_str())));
        for (field, section) in sections {
            for paragraph in paragraphs(section) {
                for chunk in self.split_paragraph(&paragraph) {
                    push(field, chunk);
                }
            }
        }
        passages
    }

    fn split_paragraph(&self, paragraph: &str) -> Vec<String> {
        if self.analyzer.count_terms(paragraph) <= self.max_terms {
            return vec![paragraph.to_string()];
        }
        let mut chunks = Vec::new();
        let mut current = String::new();
        let mut current_terms = 0;
        for (s, e) in sentence_spans(paragraph) {
            let sentence = &paragraph[s..e];
            let terms = self.analyzer.count_terms(sentence);
            if !current.is_empty() && current_terms + terms > self.max_terms {
                chunks.push(std::mem::take(&mut current));
                current_terms = 0;
            }
            if !current.is_empty() {
                current.push(' ');
            }
            current.push_str(sentence);
            current_terms += terms;
        }
        if !current.is_empty() {
            chunks.push(current);
        }
        chunks
    }
}

/// Blank-line separated paragraphs, whitespace-normalized, empties dropped.
fn paragraphs(section: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    for line in section.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                out.push(normalize_whitespace(&current));
                current.clear();
            }
        } else {
            current.push_str(line);
            current.push('\n');
        }
    }
    if !current.is_empty() {
        out.push(normalize_whitespace(&current));
    }
    out
}

pub fn corpus_stats(num_documents: usize, passages: &[Passage], analyzer: &Analyzer) -> CorpusStats {
    let total: usize = passages.iter().map(|p| analyzer.count_terms(&p.text)).sum();
    CorpusStats {
        num_documents,
        num_passages: passages.len(),
        avg_passage_length: if passages.is_empty() {
            0.0
        } else {
            total as f64 / passages.len() as f64
        },
    }
}

/// Loads and segments a whole corpus file.
pub fn ingest(path: &Path, segmenter: &Segmenter, strict: bool) -> Result<(Vec<Passage>, CorpusStats, usize)> {
    let mut reader = load_corpus(path, strict)?;
    let mut passages = Vec::new();
    let mut docs = 0;
    for doc in reader.by_ref() {
        let doc = doc?;
        docs += 1;
        passages.extend(segmenter.segment(&doc));
    }
    let stats = corpus_stats(docs, &passages, &segmenter.analyzer);
    Ok((passages, stats, reader.skipped()))
}

/// Writes passages as JSON lines.
pub fn write_passages(path: &Path, passages: &[Passage]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for p in passages {
        serde_json::to_writer(&mut out, p).map_err(|e| Error::io(path, e.into()))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
