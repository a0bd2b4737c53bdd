//! First-stage candidate generation.
//!
//! Plain retrieval is BM25 top-K over the sharded index. Fused retrieval adds
//! the best-matching passage of each of the most salient documents that match
//! the query at all, using a static per-document saliency table.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::Index;

/// Candidate count for plain retrieval.
pub const DEFAULT_K: usize = 60;
/// Candidates taken from each source in fused retrieval.
pub const DEFAULT_FUSED_K: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Bm25,
    Saliency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub passage_id: String,
    pub l1_score: f64,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub query: String,
    pub candidates: Vec<Candidate>,
    pub k_requested: usize,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.candidates.iter().map(|c| c.passage_id.as_str())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SaliencyTable {
    scores: HashMap<String, f64>,
}

impl SaliencyTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, doc_id: impl Into<String>, score: f64) -> Result<()> {
        if !score.is_finite() {
            return Err(Error::InvalidArgument(format!("non-finite saliency {score}")));
        }
        self.scores.insert(doc_id.into(), score);
        Ok(())
    }

    pub fn get(&self, doc_id: &str) -> Option<f64> {
        self.scores.get(doc_id).copied()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Reads `doc_id<TAB>score` lines.
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let ctx = path.display().to_string();
        let mut table = Self::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let (doc, score) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(&ctx, i + 1, "expected `doc_id<TAB>score`"))?;
            let score: f64 = score
                .trim()
                .parse()
                .ok()
                .filter(|s: &f64| s.is_finite())
                .ok_or_else(|| Error::parse(&ctx, i + 1, format!("bad score `{score}`")))?;
            table.scores.insert(doc.to_string(), score);
        }
        Ok(table)
    }
}

impl<S: Into<String>> FromIterator<(S, f64)> for SaliencyTable {
    fn from_iter<I: IntoIterator<Item = (S, f64)>>(iter: I) -> Self {
        Self {
            scores: iter
                .into_iter()
                .filter(|(_, s)| s.is_finite())
                .map(|(d, s)| (d.into(), s))
                .collect(),
        }
    }
}

/// How many candidates each retrieval asked the index for.
#[derive(Debug, Default)]
pub struct RetrievalCounters {
    calls: AtomicU64,
    fused_calls: AtomicU64,
    bm25_requested: AtomicU64,
    saliency_requested: AtomicU64,
    last_bm25_k: AtomicU64,
    last_saliency_k: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CounterSnapshot {
    pub calls: u64,
    pub fused_calls: u64,
    pub bm25_requested: u64,
    pub saliency_requested: u64,
    pub last_bm25_k: u64,
    pub last_saliency_k: u64,
}

impl RetrievalCounters {
    fn record(&self, bm25_k: usize, saliency_k: Option<usize>) {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.bm25_requested.fetch_add(bm25_k as u64, Ordering::Relaxed);
        self.last_bm25_k.store(bm25_k as u64, Ordering::Relaxed);
        let sk = saliency_k.unwrap_or(0) as u64;
        if saliency_k.is_some() {
            self.fused_calls.fetch_add(1, Ordering::Relaxed);
        }
        self.saliency_requested.fetch_add(sk, Ordering::Relaxed);
        self.last_saliency_k.store(sk, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> CounterSnapshot {
        CounterSnapshot {
            calls: self.calls.load(Ordering::Relaxed),
            fused_calls: self.fused_calls.load(Ordering::Relaxed),
            bm25_requested: self.bm25_requested.load(Ordering::Relaxed),
            saliency_requested: self.saliency_requested.load(Ordering::Relaxed),
            last_bm25_k: self.last_bm25_k.load(Ordering::Relaxed),
            last_saliency_k: self.last_saliency_k.load(Ordering::Relaxed),
        }
    }
}

fn check_k(k: usize, name: &str) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument(format!("{name} must be at least 1")));
    }
    Ok(())
}

/// BM25 top-`k` candidates for `query`.
pub fn retrieve(index: &Index, query: &str, k: usize, counters: Option<&RetrievalCounters>) -> Result<CandidateSet> {
    check_k(k, "k")?;
    if let Some(c) = counters {
        c.record(k, None);
    }
    let terms = index.analyzer().analyze(query);
    let hits = index.search(&terms, k)?;
    Ok(CandidateSet {
        query: query.to_string(),
        candidates: hits
            .into_iter()
            .map(|h| Candidate {
                passage_id: h.passage_id,
                l1_score: h.score,
                provenance: Provenance::Bm25,
            })
            .collect(),
        k_requested: k,
    })
}

/// BM25 top-`k_bm25` plus the best passage of each of the `k_saliency` most
/// salient matching documents. BM25 candidates keep their order and win on
/// overlap; saliency additions follow by descending saliency.
pub fn retrieve_fused(
    index: &Index,
    saliency: &SaliencyTable,
    query: &str,
    k_bm25: usize,
    k_saliency: usize,
    counters: Option<&RetrievalCounters>,
) -> Result<CandidateSet> {
    check_k(k_bm25, "k_bm25")?;
    check_k(k_saliency, "k_saliency")?;
    if let Some(c) = counters {
        c.record(k_bm25, Some(k_saliency));
    }
    let terms = index.analyzer().analyze(query);
    let mut candidates: Vec<Candidate> = index
        .search(&terms, k_bm25)?
        .into_iter()
        .map(|h| Candidate {
            passage_id: h.passage_id,
            l1_score: h.score,
            provenance: Provenance::Bm25,
        })
        .collect();

    if !saliency.is_empty() && !terms.is_empty() {
        // Ranked list of all matches: the first passage seen per document is its best.
        let mut best: HashMap<&str, (String, f64)> = HashMap::new();
        let matches = index.search_all(&terms)?;
        for hit in &matches {
            let Some(p) = index.passage(&hit.passage_id) else { continue };
            best.entry(p.doc_id.as_str())
                .or_insert_with(|| (hit.passage_id.clone(), hit.score));
        }
        let mut salient: Vec<(&str, f64)> = best
            .keys()
            .filter_map(|d| saliency.get(d).map(|s| (*d, s)))
            .collect();
        salient.sort_unstable_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        salient.truncate(k_saliency);

        let mut present: HashSet<String> = candidates.iter().map(|c| c.passage_id.clone()).collect();
        for (doc, _) in salient {
            let (pid, score) = &best[doc];
            if present.insert(pid.clone()) {
                candidates.push(Candidate {
                    passage_id: pid.clone(),
                    l1_score: *score,
                    provenance: Provenance::Saliency,
                });
            }
        }
    }

    Ok(CandidateSet {
        query: query.to_string(),
        candidates,
        k_requested: k_bm25 + k_saliency,
    })
}
