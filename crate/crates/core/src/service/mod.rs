//! The search backend: cache, first-stage retrieval, reranking, grouping by
//! document and optional answer extraction.

mod answer;
mod cache;
mod config;
mod http;

pub use answer::{extract_answer, AnswerExtractor, AnswerSpan, BaselineExtractor, DEFAULT_ABSTAIN_THRESHOLD};
pub use cache::QueryCache;
pub use config::{ServiceConfig, DEFAULT_CACHE_CAPACITY, DEFAULT_PORT};
pub use http::{router, serve};

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::error::{Error, Result};
use crate::index::{load_index, Index};
use crate::l1::{retrieve, retrieve_fused, RetrievalCounters, SaliencyTable, DEFAULT_K};
use crate::l2::{rerank, sort_by_l2, CrossScorer, ExternalScorerEndpoint, RemoteScorer, RerankedPassage, ScorePair};
use crate::textproc::BpeVocabulary;

pub const MAX_K: usize = 200;
/// Passages shown per document group.
pub const MAX_PASSAGES_PER_DOC: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchRequest {
    pub query: String,
    pub k: usize,
    pub fusion: bool,
    pub answers: bool,
    pub no_cache: bool,
}

impl SearchRequest {
    pub fn new(query: impl Into<String>) -> Self {
        Self {
            query: query.into(),
            k: DEFAULT_K,
            fusion: false,
            answers: false,
            no_cache: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_K).contains(&self.k) {
            return Err(Error::InvalidArgument(format!("k must be between 1 and {MAX_K}, got {}", self.k)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassageResult {
    pub passage_id: String,
    pub text: String,
    pub l1_score: f64,
    pub l2_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentGroup {
    pub doc_id: String,
    pub title: String,
    /// Best passage first.
    pub passages: Vec<PassageResult>,
}

/// Answer span in characters of the named passage's text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub passage_id: String,
    pub start: usize,
    pub end: usize,
    pub confidence: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub cache_hit: bool,
    pub l1_ms: f64,
    pub l2_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub query: String,
    pub results: Vec<DocumentGroup>,
    pub answer: Option<Answer>,
    pub timing: Timing,
}

impl SearchResult {
    /// The response with timing cleared, for payload comparisons.
    pub fn payload(&self) -> SearchResult {
        SearchResult {
            timing: Timing::default(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub generation: u64,
    pub shards: usize,
    pub passages: u64,
    pub model_version: String,
    pub cache_size: usize,
    pub cache_capacity: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct CacheKey {
    generation: u64,
    terms: Vec<String>,
    k: usize,
    fusion: bool,
    answers: bool,
}

/// Everything a request reads; swapped wholesale on reload.
struct Engine {
    generation: u64,
    index: Index,
    scorer: CrossScorer,
    vocab: Option<BpeVocabulary>,
    saliency: SaliencyTable,
}

/// Groups reranked passages by document in order of first appearance.
pub fn group_by_document(index: &Index, ranked: &[RerankedPassage]) -> Vec<DocumentGroup> {
    let mut groups: Vec<DocumentGroup> = Vec::new();
    let mut slot: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
    for r in ranked {
        let Some(p) = index.passage(&r.passage_id) else { continue };
        let i = *slot.entry(p.doc_id.as_str()).or_insert_with(|| {
            groups.push(DocumentGroup {
                doc_id: p.doc_id.clone(),
                title: index.doc_title(&p.doc_id).unwrap_or_default().to_string(),
                passages: Vec::new(),
            });
            groups.len() - 1
        });
        if groups[i].passages.len() < MAX_PASSAGES_PER_DOC {
            groups[i].passages.push(PassageResult {
                passage_id: r.passage_id.clone(),
                text: p.text.clone(),
                l1_score: r.l1_score,
                l2_score: r.l2_score,
            });
        }
    }
    groups
}

/// Candidate split for fused retrieval: `ceil(k/2)` from BM25 and `floor(k/2)`
/// (at least one) from saliency, so the default `k` of 60 gives 30 + 30.
pub fn fusion_split(k: usize) -> (usize, usize) {
    (k.div_ceil(2), (k / 2).max(1))
}

pub struct SearchService {
    engine: RwLock<Arc<Engine>>,
    cache: QueryCache<CacheKey, Arc<SearchResult>>,
    counters: RetrievalCounters,
    extractor: Box<dyn AnswerExtractor>,
    remote: Option<RemoteScorer>,
    remote_fallback: bool,
    next_generation: AtomicU64,
}

impl SearchService {
    pub fn new(index: Index, scorer: CrossScorer, cache_capacity: usize) -> Self {
        Self {
            engine: RwLock::new(Arc::new(Engine {
                generation: 1,
                index,
                scorer,
                vocab: None,
                saliency: SaliencyTable::new(),
            })),
            cache: QueryCache::new(cache_capacity),
            counters: RetrievalCounters::default(),
            extractor: Box::new(BaselineExtractor::default()),
            remote: None,
            remote_fallback: true,
            next_generation: AtomicU64::new(2),
        }
    }

    fn modify_engine(&self, f: impl FnOnce(&mut Engine)) {
        let mut guard = self.engine.write();
        if let Some(e) = Arc::get_mut(&mut guard) {
            f(e);
            return;
        }
        let mut e = Engine {
            generation: guard.generation,
            index: guard.index.clone(),
            scorer: guard.scorer,
            vocab: guard.vocab.clone(),
            saliency: guard.saliency.clone(),
        };
        f(&mut e);
        *guard = Arc::new(e);
    }

    pub fn with_vocab(self, vocab: BpeVocabulary) -> Self {
        self.modify_engine(|e| e.vocab = Some(vocab));
        self
    }

    pub fn with_saliency(self, saliency: SaliencyTable) -> Self {
        self.modify_engine(|e| e.saliency = saliency);
        self
    }

    pub fn with_extractor(mut self, extractor: Box<dyn AnswerExtractor>) -> Self {
        self.extractor = extractor;
        self
    }

    /// Sends reranking to an external scorer; `fallback` keeps the local model
    /// as a backup when it fails.
    pub fn with_remote(mut self, remote: RemoteScorer, fallback: bool) -> Self {
        self.remote = Some(remote);
        self.remote_fallback = fallback;
        self
    }

    /// Builds a service from a config file's settings. Without a model file the
    /// reranker preserves BM25 order.
    pub fn from_config(cfg: &ServiceConfig) -> Result<Self> {
        let dir = cfg
            .index_dir
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("config is missing index_dir".into()))?;
        let index = load_index(dir)?;
        let scorer = match &cfg.model_path {
            Some(p) => CrossScorer::load(p)?,
            None => CrossScorer::bm25_only(),
        };
        let mut svc = Self::new(index, scorer, cfg.cache_capacity).with_extractor(Box::new(BaselineExtractor {
            threshold: cfg.abstain_threshold,
        }));
        if let Some(p) = &cfg.vocab_path {
            svc = svc.with_vocab(BpeVocabulary::load(p)?);
        }
        if let Some(p) = &cfg.saliency_path {
            svc = svc.with_saliency(SaliencyTable::load(p)?);
        }
        if let Some(url) = &cfg.scorer_url {
            let remote = RemoteScorer::new(ExternalScorerEndpoint {
                timeout: cfg.scorer_timeout,
                ..ExternalScorerEndpoint::new(url.clone())
            })?;
            svc = svc.with_remote(remote, cfg.scorer_fallback);
        }
        Ok(svc)
    }

    /// Swaps in a new index and model, starts a new generation and empties the cache.
    pub fn reload(&self, index: Index, scorer: CrossScorer) {
        let generation = self.next_generation.fetch_add(1, Ordering::Relaxed);
        {
            let mut guard = self.engine.write();
            *guard = Arc::new(Engine {
                generation,
                index,
                scorer,
                vocab: guard.vocab.clone(),
                saliency: guard.saliency.clone(),
            });
        }
        self.cache.clear();
    }

    pub fn counters(&self) -> &RetrievalCounters {
        &self.counters
    }

    pub fn health(&self) -> Health {
        let e = self.engine.read().clone();
        Health {
            status: "ok".into(),
            generation: e.generation,
            shards: e.index.shards().len(),
            passages: e.index.meta().num_passages,
            model_version: match &self.remote {
                Some(r) => format!("remote:{}", r.endpoint().base_url),
                None => e.scorer.version(),
            },
            cache_size: self.cache.len(),
            cache_capacity: self.cache.capacity(),
        }
    }

    fn score(&self, e: &Engine, cands: &crate::l1::CandidateSet) -> Result<Vec<RerankedPassage>> {
        let Some(remote) = &self.remote else {
            return Ok(rerank(&e.scorer, &e.index, e.vocab.as_ref(), cands));
        };
        let kept: Vec<_> = cands
            .candidates
            .iter()
            .filter_map(|c| e.index.passage(&c.passage_id).map(|p| (c, p)))
            .collect();
        let pairs: Vec<ScorePair> = kept
            .iter()
            .map(|(_, p)| ScorePair {
                query: cands.query.clone(),
                passage: p.text.clone(),
            })
            .collect();
        match remote.score_all(&pairs) {
            Ok(scores) => {
                let mut out: Vec<RerankedPassage> = kept
                    .iter()
                    .zip(scores)
                    .map(|((c, _), s)| RerankedPassage {
                        passage_id: c.passage_id.clone(),
                        l1_score: c.l1_score,
                        l2_score: s,
                    })
                    .collect();
                sort_by_l2(&mut out);
                Ok(out)
            }
            Err(err) if self.remote_fallback => {
                warn!(error = %err, "external scorer failed, using local model");
                Ok(rerank(&e.scorer, &e.index, e.vocab.as_ref(), cands))
            }
            Err(err) => Err(err),
        }
    }

    pub fn handle_search(&self, req: &SearchRequest) -> Result<SearchResult> {
        let started = Instant::now();
        req.validate()?;
        let e = self.engine.read().clone();
        let key = CacheKey {
            generation: e.generation,
            terms: e.index.analyzer().analyze(&req.query),
            k: req.k,
            fusion: req.fusion,
            answers: req.answers,
        };
        if !req.no_cache {
            if let Some(hit) = self.cache.get(&key) {
                let mut out = SearchResult::clone(&hit);
                out.query = req.query.clone();
                out.timing = Timing {
                    cache_hit: true,
                    l1_ms: 0.0,
                    l2_ms: 0.0,
                    total_ms: started.elapsed().as_secs_f64() * 1e3,
                };
                return Ok(out);
            }
        }

        let l1_start = Instant::now();
        let cands = if req.fusion {
            let (kb, ks) = fusion_split(req.k);
            retrieve_fused(&e.index, &e.saliency, &req.query, kb, ks, Some(&self.counters))?
        } else {
            retrieve(&e.index, &req.query, req.k, Some(&self.counters))?
        };
        let l1_ms = l1_start.elapsed().as_secs_f64() * 1e3;

        let l2_start = Instant::now();
        let ranked = self.score(&e, &cands)?;
        let l2_ms = l2_start.elapsed().as_secs_f64() * 1e3;

        let results = group_by_document(&e.index, &ranked);
        let answer = if req.answers {
            results.first().and_then(|g| {
                let top = &g.passages[0];
                self.extractor
                    .extract(&key.terms, &top.text, e.index.meta(), e.index.analyzer())
                    .map(|s| Answer {
                        passage_id: top.passage_id.clone(),
                        start: s.start,
                        end: s.end,
                        confidence: s.confidence,
                    })
            })
        } else {
            None
        };

        let mut out = SearchResult {
            query: req.query.clone(),
            results,
            answer,
            timing: Timing {
                cache_hit: false,
                l1_ms,
                l2_ms,
                total_ms: 0.0,
            },
        };
        if !req.no_cache {
            self.cache.put(key, Arc::new(out.clone()));
        }
        out.timing.total_ms = started.elapsed().as_secs_f64() * 1e3;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Field, Passage};
    use crate::index::Bm25Params;
    use crate::textproc::Analyzer;

    fn service(cache: usize) -> SearchService {
        let mut ps = Vec::new();
        for d in 0..6 {
            let doc = format!("doc{d}");
            ps.push(Passage::new(&doc, 0, Field::Title, format!("Title {d}")));
            ps.push(Passage::new(&doc, 1, Field::Abstract, format!("Spike protein study {d}. Results follow.")));
            ps.push(Passage::new(&doc, 2, Field::Body, "spike spike binding ".repeat(d + 1)));
            ps.push(Passage::new(&doc, 3, Field::Body, "spike ".to_string() + &"pad ".repeat(d)));
            ps.push(Passage::new(&doc, 4, Field::Body, "unrelated text".to_string()));
        }
        let idx = Index::build(ps, 3, Analyzer::default(), Bm25Params::default()).unwrap();
        SearchService::new(idx, CrossScorer::bm25_only(), cache)
    }

    #[test]
    fn repeated_query_hits_cache_with_equal_payload() {
        let s = service(8);
        let a = s.handle_search(&SearchRequest::new("spike protein")).unwrap();
        let b = s.handle_search(&SearchRequest::new("spike protein")).unwrap();
        assert!(!a.timing.cache_hit && b.timing.cache_hit);
        assert_eq!(a.payload(), b.payload());
        assert_eq!(s.health().cache_size, 1);
        // Same analyzed terms, different surface form.
        let c = s.handle_search(&SearchRequest::new("SPIKE  protein!")).unwrap();
        assert!(c.timing.cache_hit);
        assert_eq!(c.query, "SPIKE  protein!");
        let uncached = service(0).handle_search(&SearchRequest::new("SPIKE  protein!")).unwrap();
        assert_eq!(c.payload(), uncached.payload());
    }

    #[test]
    fn groups_are_capped_and_ordered() {
        let s = service(0);
        let r = s.handle_search(&SearchRequest::new("spike")).unwrap();
        assert!(!r.results.is_empty());
        let best: Vec<f64> = r.results.iter().map(|g| g.passages[0].l2_score).collect();
        assert!(best.windows(2).all(|w| w[0] >= w[1]));
        for g in &r.results {
            assert!(g.passages.len() <= MAX_PASSAGES_PER_DOC);
            assert!(g.title.starts_with("Title"));
        }
        assert!(r.timing.total_ms >= r.timing.l1_ms + r.timing.l2_ms);
    }

    #[test]
    fn empty_and_unmatched_queries_succeed() {
        let s = service(4);
        assert!(s.handle_search(&SearchRequest::new("")).unwrap().results.is_empty());
        assert!(s.handle_search(&SearchRequest::new("zebra")).unwrap().results.is_empty());
    }

    #[test]
    fn rejects_bad_k() {
        let s = service(4);
        for k in [0, 201] {
            let req = SearchRequest { k, ..SearchRequest::new("spike") };
            assert!(matches!(s.handle_search(&req), Err(Error::InvalidArgument(_))));
        }
    }

    #[test]
    fn default_and_fused_k() {
        let s = service(0);
        s.handle_search(&SearchRequest::new("spike")).unwrap();
        assert_eq!(s.counters().snapshot().last_bm25_k, 60);
        s.handle_search(&SearchRequest { fusion: true, ..SearchRequest::new("spike") }).unwrap();
        let snap = s.counters().snapshot();
        assert_eq!((snap.last_bm25_k, snap.last_saliency_k), (30, 30));
        assert_eq!(fusion_split(1), (1, 1));
        assert_eq!(fusion_split(7), (4, 3));
    }

    #[test]
    fn answers_are_valid_spans() {
        let s = service(0);
        let r = s
            .handle_search(&SearchRequest { answers: true, ..SearchRequest::new("spike protein study") })
            .unwrap();
        let a = r.answer.expect("an answer");
        let top = &r.results[0].passages[0];
        assert_eq!(a.passage_id, top.passage_id);
        assert!(a.start < a.end && a.end <= top.text.chars().count());
    }

    #[test]
    fn reload_bumps_generation_and_clears_cache() {
        let s = service(4);
        let before = s.health();
        assert_eq!(before.cache_size, 0);
        s.handle_search(&SearchRequest::new("spike")).unwrap();
        assert_eq!(s.health().cache_size, 1);
        let idx = s.engine.read().index.clone();
        s.reload(idx, CrossScorer::default());
        let after = s.health();
        assert_ne!(after.generation, before.generation);
        assert_eq!(after.cache_size, 0);
        assert_ne!(after.model_version, before.model_version);
    }
}
