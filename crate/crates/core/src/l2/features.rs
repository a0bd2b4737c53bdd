use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::index::{term_score, unique_terms, IndexMeta};
use crate::textproc::{Analyzer, BpeVocabulary};

pub const FEATURE_DIM: usize = 7;
pub const FEATURE_NAMES: [&str; FEATURE_DIM] = [
    "bm25",
    "term_overlap",
    "idf_overlap",
    "span_coverage",
    "length_ratio",
    "subword_fertility",
    "bias",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; FEATURE_DIM]);

impl FeatureVector {
    pub fn dot(&self, w: &[f64; FEATURE_DIM]) -> f64 {
        self.0.iter().zip(w).map(|(x, w)| x * w).sum()
    }
}

/// Longest run of consecutive query terms that also appears contiguously in
/// the passage (longest common substring over term sequences).
fn longest_shared_run(query: &[String], passage: &[String]) -> usize {
    let mut best = 0;
    let mut prev = vec![0usize; passage.len() + 1];
    let mut cur = vec![0usize; passage.len() + 1];
    for q in query {
        for (j, p) in passage.iter().enumerate() {
            cur[j + 1] = if q == p { prev[j] + 1 } else { 0 };
            best = best.max(cur[j + 1]);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    best
}

/// Features of `(query, passage)`:
///
/// 0. BM25 score of the passage under `meta`
/// 1. fraction of distinct query terms present in the passage
/// 2. the same fraction weighted by idf
/// 3. longest contiguous query run found in the passage, over query length
/// 4. passage length over the collection average
/// 5. mean BPE subwords per query term (1 without a vocabulary)
/// 6. constant 1
pub fn featurize(
    query_terms: &[String],
    passage_text: &str,
    meta: &IndexMeta,
    analyzer: &Analyzer,
    vocab: Option<&BpeVocabulary>,
) -> FeatureVector {
    let passage_terms = analyzer.analyze(passage_text);
    let dl = passage_terms.len() as u32;
    let mut tf: HashMap<&str, u32> = HashMap::new();
    for t in &passage_terms {
        *tf.entry(t.as_str()).or_default() += 1;
    }
    let present: HashSet<&str> = tf.keys().copied().collect();
    let uniq = unique_terms(query_terms);

    let bm25 = uniq.iter().fold(0.0, |acc, t| {
        acc + term_score(meta.params(), meta.idf(t), tf.get(t).copied().unwrap_or(0), dl, meta.avgdl)
    });

    let (overlap, idf_overlap) = if uniq.is_empty() {
        (0.0, 0.0)
    } else {
        let hits = uniq.iter().filter(|t| present.contains(*t)).count();
        let total_idf: f64 = uniq.iter().map(|t| meta.idf(t)).sum();
        let hit_idf: f64 = uniq.iter().filter(|t| present.contains(*t)).map(|t| meta.idf(t)).sum();
        (
            hits as f64 / uniq.len() as f64,
            if total_idf > 0.0 { hit_idf / total_idf } else { 0.0 },
        )
    };

    let span = if query_terms.is_empty() {
        0.0
    } else {
        longest_shared_run(query_terms, &passage_terms) as f64 / query_terms.len() as f64
    };

    let length_ratio = if meta.avgdl > 0.0 { dl as f64 / meta.avgdl } else { 0.0 };

    let fertility = match vocab {
        Some(v) => v.fertility(query_terms),
        None if query_terms.is_empty() => 0.0,
        None => 1.0,
    };

    FeatureVector([bm25, overlap, idf_overlap, span, length_ratio, fertility, 1.0])
}
