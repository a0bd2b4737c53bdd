use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::index::{unique_terms, IndexMeta};
use crate::textproc::{sentence_spans, Analyzer};

/// Default confidence a candidate answer must exceed.
pub const DEFAULT_ABSTAIN_THRESHOLD: f64 = 0.5;

/// Character range `[start, end)` within a passage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnswerSpan {
    pub start: usize,
    pub end: usize,
    pub confidence: f64,
}

/// Picks an answer span from a passage or abstains.
pub trait AnswerExtractor: Send + Sync {
    fn extract(&self, query_terms: &[String], passage: &str, meta: &IndexMeta, analyzer: &Analyzer) -> Option<AnswerSpan>;
}

/// Sentence-level extractor scored by idf-weighted query-term overlap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineExtractor {
    pub threshold: f64,
}

impl Default for BaselineExtractor {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_ABSTAIN_THRESHOLD,
        }
    }
}

impl AnswerExtractor for BaselineExtractor {
    fn extract(&self, query_terms: &[String], passage: &str, meta: &IndexMeta, analyzer: &Analyzer) -> Option<AnswerSpan> {
        extract_answer(query_terms, passage, meta, analyzer, self.threshold)
    }
}

/// Scores each sentence by the idf mass of distinct query terms it contains,
/// over the idf mass of all distinct query terms. Returns the best sentence
/// (earliest on ties) iff its confidence exceeds `threshold`.
pub fn extract_answer(
    query_terms: &[String],
    passage: &str,
    meta: &IndexMeta,
    analyzer: &Analyzer,
    threshold: f64,
) -> Option<AnswerSpan> {
    let uniq = unique_terms(query_terms);
    let total: f64 = uniq.iter().map(|t| meta.idf(t)).sum();
    if total <= 0.0 {
        return None;
    }
    let mut best: Option<((usize, usize), f64)> = None;
    for (start, end) in sentence_spans(passage) {
        let terms: HashSet<String> = analyzer.analyze(&passage[start..end]).into_iter().collect();
        let hit: f64 = uniq.iter().filter(|t| terms.contains(**t)).map(|t| meta.idf(t)).sum();
        let confidence = (hit / total).min(1.0);
        if best.is_none_or(|(_, c)| confidence > c) {
            best = Some(((start, end), confidence));
        }
    }
    let ((start, end), confidence) = best?;
    if confidence <= threshold {
        return None;
    }
    let char_start = passage[..start].chars().count();
    Some(AnswerSpan {
        start: char_start,
        end: char_start + passage[start..end].chars().count(),
        confidence,
    })
}
