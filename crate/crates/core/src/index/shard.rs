use std::cmp::Ordering;
use std::collections::HashMap;

use crate::corpus::Field;
use crate::index::bm25::{term_score, unique_terms};
use crate::index::IndexMeta;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    /// Passage ordinal within the shard.
    pub local: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PostingList {
    /// Sorted strictly by `local`.
    pub entries: Vec<Posting>,
    /// Global document frequency, set when the index is finalized.
    pub df: u32,
}

impl PostingList {
    pub fn tf(&self, local: u32) -> u32 {
        self.entries
            .binary_search_by_key(&local, |p| p.local)
            .map_or(0, |i| self.entries[i].tf)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredPassage {
    pub passage_id: String,
    pub doc_id: String,
    pub text: String,
    pub field: Field,
    pub ordinal: u32,
    /// Analyzed length.
    pub len: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub passage_id: String,
    pub score: f64,
}

/// Descending score, then ascending passage id.
pub fn hit_order(a: &Hit, b: &Hit) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.passage_id.cmp(&b.passage_id))
}

/// Keeps the best `k` hits in [`hit_order`].
pub fn top_k(mut hits: Vec<Hit>, k: usize) -> Vec<Hit> {
    if k == 0 {
        return Vec::new();
    }
    if hits.len() > k {
        hits.select_nth_unstable_by(k - 1, hit_order);
        hits.truncate(k);
    }
    hits.sort_unstable_by(hit_order);
    hits
}

#[derive(Debug, Clone, Default)]
pub struct IndexShard {
    pub(crate) shard_id: u32,
    pub(crate) postings: HashMap<String, PostingList>,
    pub(crate) passages: Vec<StoredPassage>,
    pub(crate) by_id: HashMap<String, u32>,
}

impl IndexShard {
    pub(crate) fn new(shard_id: u32) -> Self {
        Self {
            shard_id,
            ..Self::default()
        }
    }

    pub(crate) fn add(&mut self, passage: StoredPassage, terms: &[String]) -> u32 {
        let local = self.passages.len() as u32;
        let mut tf: HashMap<&str, u32> = HashMap::new();
        for t in terms {
            *tf.entry(t.as_str()).or_default() += 1;
        }
        for (term, count) in tf {
            self.postings
                .entry(term.to_string())
                .or_default()
                .entries
                .push(Posting { local, tf: count });
        }
        self.by_id.insert(passage.passage_id.clone(), local);
        self.passages.push(passage);
        local
    }

    pub fn shard_id(&self) -> u32 {
        self.shard_id
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    pub fn postings(&self, term: &str) -> Option<&PostingList> {
        self.postings.get(term)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&str, &PostingList)> {
        self.postings.iter().map(|(t, p)| (t.as_str(), p))
    }

    pub fn passages(&self) -> &[StoredPassage] {
        &self.passages
    }

    pub fn passage(&self, passage_id: &str) -> Option<&StoredPassage> {
        self.by_id.get(passage_id).map(|&i| &self.passages[i as usize])
    }

    pub fn tf(&self, term: &str, local: u32) -> u32 {
        self.postings.get(term).map_or(0, |p| p.tf(local))
    }

    /// BM25 score of one stored passage.
    pub fn score_local<S: AsRef<str>>(&self, meta: &IndexMeta, query_terms: &[S], local: u32) -> f64 {
        let dl = self.passages[local as usize].len;
        unique_terms(query_terms).into_iter().fold(0.0, |acc, t| {
            acc + term_score(meta.params(), meta.idf(t), self.tf(t, local), dl, meta.avgdl)
        })
    }

    /// Exact top-`k` over passages matching at least one query term.
    pub fn search<S: AsRef<str>>(&self, meta: &IndexMeta, query_terms: &[S], k: usize) -> Vec<Hit> {
        let mut acc = vec![0.0f64; self.passages.len()];
        let mut touched: Vec<u32> = Vec::new();
        for term in unique_terms(query_terms) {
            let Some(list) = self.postings.get(term) else { continue };
            let idf = meta.idf(term);
            for p in &list.entries {
                let slot = &mut acc[p.local as usize];
                if *slot == 0.0 {
                    touched.push(p.local);
                }
                *slot += term_score(meta.params(), idf, p.tf, self.passages[p.local as usize].len, meta.avgdl);
            }
        }
        let hits = touched
            .into_iter()
            .map(|local| Hit {
                passage_id: self.passages[local as usize].passage_id.clone(),
                score: acc[local as usize],
            })
            .collect();
        top_k(hits, k)
    }
}
