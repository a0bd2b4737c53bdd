//! Sharded inverted index with BM25 scoring.
//!
//! Passages are assigned to shards by a hash of their document id, so every
//! passage of a document lives in the same shard. Collection statistics
//! (`N`, `avgdl`, `df`) are global and shared by all shards, which makes a
//! scatter-gather search over any shard layout return exactly the ranking a
//! single shard would.

mod bm25;
mod search;
mod shard;
mod store;

use std::collections::HashMap;

pub use bm25::{idf, term_score, unique_terms, Bm25Params, DEFAULT_B, DEFAULT_K1};
pub use search::{scatter_gather, ShardSearcher};
pub use shard::{hit_order, top_k, Hit, IndexShard, Posting, PostingList, StoredPassage};
pub use store::{load_index, save_index, FORMAT_VERSION};

use crate::corpus::{Field, Passage};
use crate::error::{Error, Result};
use crate::textproc::Analyzer;

/// Shard count of the reference deployment.
pub const DEFAULT_NUM_SHARDS: u32 = 30;

#[derive(Debug, Clone, PartialEq)]
pub struct IndexMeta {
    pub num_passages: u64,
    pub total_len: u64,
    pub avgdl: f64,
    pub k1: f64,
    pub b: f64,
    pub num_shards: u32,
    df: HashMap<String, u32>,
}

impl IndexMeta {
    pub fn params(&self) -> Bm25Params {
        Bm25Params {
            k1: self.k1,
            b: self.b,
        }
    }

    pub fn df(&self, term: &str) -> u32 {
        self.df.get(term).copied().unwrap_or(0)
    }

    pub fn idf(&self, term: &str) -> f64 {
        idf(self.num_passages, self.df(term))
    }

    pub fn vocabulary_size(&self) -> usize {
        self.df.len()
    }

    pub fn document_frequencies(&self) -> &HashMap<String, u32> {
        &self.df
    }
}

/// FNV-1a; stable across platforms and runs, unlike `DefaultHasher`.
pub fn shard_for(doc_id: &str, num_shards: u32) -> u32 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in doc_id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    (h % u64::from(num_shards)) as u32
}

#[derive(Debug, Clone)]
pub struct Index {
    meta: IndexMeta,
    shards: Vec<IndexShard>,
    analyzer: Analyzer,
    /// passage id -> (shard, local ordinal)
    locator: HashMap<String, (u32, u32)>,
    titles: HashMap<String, (u32, u32)>,
}

impl Index {
    pub fn build<I>(passages: I, num_shards: u32, analyzer: Analyzer, params: Bm25Params) -> Result<Self>
    where
        I: IntoIterator<Item = Passage>,
    {
        if num_shards == 0 {
            return Err(Error::InvalidArgument("num_shards must be at least 1".into()));
        }
        params.validate().map_err(Error::InvalidArgument)?;
        let mut shards: Vec<IndexShard> = (0..num_shards).map(IndexShard::new).collect();
        let mut locator = HashMap::new();
        for p in passages {
            if locator.contains_key(&p.passage_id) {
                return Err(Error::DuplicatePassage(p.passage_id));
            }
            let terms = analyzer.analyze(&p.text);
            let sid = shard_for(&p.doc_id, num_shards);
            let stored = StoredPassage {
                passage_id: p.passage_id.clone(),
                doc_id: p.doc_id,
                text: p.text,
                field: p.field,
                ordinal: p.ordinal,
                len: terms.len() as u32,
            };
            let local = shards[sid as usize].add(stored, &terms);
            locator.insert(p.passage_id, (sid, local));
        }
        Self::finalize(shards, analyzer, params)
    }

    /// Computes global statistics and wires up lookup tables.
    pub(crate) fn finalize(mut shards: Vec<IndexShard>, analyzer: Analyzer, params: Bm25Params) -> Result<Self> {
        let mut df: HashMap<String, u32> = HashMap::new();
        let mut num_passages = 0u64;
        let mut total_len = 0u64;
        for shard in &shards {
            num_passages += shard.passages.len() as u64;
            total_len += shard.passages.iter().map(|p| u64::from(p.len)).sum::<u64>();
            for (term, list) in &shard.postings {
                *df.entry(term.clone()).or_default() += list.entries.len() as u32;
            }
        }
        if num_passages == 0 {
            return Err(Error::Empty("index input"));
        }
        for shard in &mut shards {
            for (term, list) in &mut shard.postings {
                list.df = df[term];
            }
        }
        let mut locator = HashMap::with_capacity(num_passages as usize);
        let mut titles = HashMap::new();
        for shard in &shards {
            for (local, p) in shard.passages.iter().enumerate() {
                let at = (shard.shard_id, local as u32);
                if locator.insert(p.passage_id.clone(), at).is_some() {
                    return Err(Error::DuplicatePassage(p.passage_id.clone()));
                }
                if p.field == Field::Title {
                    titles.entry(p.doc_id.clone()).or_insert(at);
                }
            }
        }
        let meta = IndexMeta {
            num_passages,
            total_len,
            avgdl: total_len as f64 / num_passages as f64,
            k1: params.k1,
            b: params.b,
            num_shards: shards.len() as u32,
            df,
        };
        Ok(Self {
            meta,
            shards,
            analyzer,
            locator,
            titles,
        })
    }

    pub fn meta(&self) -> &IndexMeta {
        &self.meta
    }

    pub fn shards(&self) -> &[IndexShard] {
        &self.shards
    }

    pub fn analyzer(&self) -> &Analyzer {
        &self.analyzer
    }

    pub fn passage(&self, passage_id: &str) -> Option<&StoredPassage> {
        let &(s, l) = self.locator.get(passage_id)?;
        Some(&self.shards[s as usize].passages[l as usize])
    }

    pub fn passages(&self) -> impl Iterator<Item = &StoredPassage> {
        self.shards.iter().flat_map(|s| s.passages.iter())
    }

    pub fn doc_title(&self, doc_id: &str) -> Option<&str> {
        let &(s, l) = self.titles.get(doc_id)?;
        Some(&self.shards[s as usize].passages[l as usize].text)
    }

    /// BM25 score of an indexed passage; `None` if the id is unknown.
    pub fn bm25_score<S: AsRef<str>>(&self, query_terms: &[S], passage_id: &str) -> Option<f64> {
        let &(s, l) = self.locator.get(passage_id)?;
        Some(self.shards[s as usize].score_local(&self.meta, query_terms, l))
    }

    /// Scatter-gather top-`k` over all shards.
    pub fn search<S: AsRef<str> + Sync>(&self, query_terms: &[S], k: usize) -> Result<Vec<Hit>> {
        scatter_gather(&self.shards, &self.meta, query_terms, k)
    }

    /// Every passage matching at least one query term, fully ranked.
    pub fn search_all<S: AsRef<str> + Sync>(&self, query_terms: &[S]) -> Result<Vec<Hit>> {
        self.search(query_terms, usize::MAX)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn passages(texts: &[(&str, &str)]) -> Vec<Passage> {
        let mut ord: HashMap<&str, u32> = HashMap::new();
        texts
            .iter()
            .map(|&(doc, text)| {
                let o = ord.entry(doc).or_default();
                let p = Passage::new(doc, *o, Field::Abstract, text.to_string());
                *o += 1;
                p
            })
            .collect()
    }

    fn build(texts: &[(&str, &str)], shards: u32) -> Index {
        Index::build(passages(texts), shards, Analyzer::default(), Bm25Params::default()).unwrap()
    }

    const SMALL: &[(&str, &str)] = &[
        ("d1", "the cat sat"),
        ("d2", "the dog"),
        ("d3", "a bird flew over"),
    ];

    #[test]
    fn counts_df_directly() {
        let idx = build(SMALL, 1);
        assert_eq!(idx.meta().num_passages, 3);
        assert_eq!(idx.meta().df("the"), 2);
        assert_eq!(idx.meta().df("bird"), 1);
        assert_eq!(idx.meta().df("fish"), 0);
        assert_eq!(idx.meta().avgdl, 3.0);
    }

    #[test]
    fn sharding_preserves_global_stats() {
        let one = build(SMALL, 1);
        let three = build(SMALL, 3);
        assert_eq!(one.meta().num_passages, three.meta().num_passages);
        assert_eq!(one.meta().avgdl, three.meta().avgdl);
        assert_eq!(one.meta().document_frequencies(), three.meta().document_frequencies());
        assert_eq!(three.shards().iter().map(IndexShard::len).sum::<usize>(), 3);
    }

    #[test]
    fn worked_bm25_example() {
        let idx = build(&[("d", "a a b")], 1);
        let s = idx.bm25_score(&["a"], "d#0").unwrap();
        let expected = (1.0f64 + 0.5 / 1.5).ln() * (2.0 * 2.2) / (2.0 + 1.2);
        assert!((s - expected).abs() < 1e-12, "{s} vs {expected}");
        assert!((s - (4.0f64 / 3.0).ln() * 1.375).abs() < 1e-12);
        assert_eq!(idx.bm25_score::<&str>(&[], "d#0"), Some(0.0));
        assert_eq!(idx.bm25_score(&["zzz"], "d#0"), Some(0.0));
    }

    #[test]
    fn duplicate_passage_is_rejected() {
        let mut ps = passages(SMALL);
        ps.push(ps[0].clone());
        match Index::build(ps, 2, Analyzer::default(), Bm25Params::default()) {
            Err(Error::DuplicatePassage(id)) => assert_eq!(id, "d1#0"),
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_zero_shards_and_empty_input() {
        assert!(Index::build(passages(SMALL), 0, Analyzer::default(), Bm25Params::default()).is_err());
        assert!(matches!(
            Index::build(Vec::new(), 1, Analyzer::default(), Bm25Params::default()),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn documents_are_colocated() {
        let ps = passages(&[("x", "a"), ("x", "b"), ("x", "c"), ("y", "d"), ("z", "e")]);
        let idx = Index::build(ps, 4, Analyzer::default(), Bm25Params::default()).unwrap();
        let sid = shard_for("x", 4);
        for id in ["x#0", "x#1", "x#2"] {
            assert!(idx.shards()[sid as usize].passage(id).is_some());
        }
    }

    #[test]
    fn saturated_k_and_tie_order() {
        let idx = build(&[("b", "same words"), ("a", "same words"), ("c", "other")], 1);
        let hits = idx.search(&["same"], 100).unwrap();
        assert_eq!(hits.iter().map(|h| h.passage_id.as_str()).collect::<Vec<_>>(), ["a#0", "b#0"]);
        assert_eq!(hits[0].score, hits[1].score);
        let all = idx.search(&["same", "other"], 100).unwrap();
        assert_eq!(all.len(), 3);
        assert!(idx.search(&["missing"], 10).unwrap().is_empty());
    }

    #[test]
    fn doc_title_lookup() {
        let ps = vec![
            Passage::new("d", 0, Field::Title, "A Title".into()),
            Passage::new("d", 1, Field::Abstract, "body".into()),
        ];
        let idx = Index::build(ps, 2, Analyzer::default(), Bm25Params::default()).unwrap();
        assert_eq!(idx.doc_title("d"), Some("A Title"));
        assert_eq!(idx.doc_title("nope"), None);
    }
}
