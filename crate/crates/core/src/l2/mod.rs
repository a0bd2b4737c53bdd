//! Second-stage reranking.
//!
//! The local reranker is a logistic model over seven query/passage features.
//! It keeps the trainable-reranker contract (one seeded epoch over labeled
//! triples, gradient-checkable loss) at a size that trains in seconds. A real
//! neural ranker can be plugged in over HTTP through [`RemoteScorer`].

mod features;
mod remote;
mod scorer;
mod train;

pub use features::{featurize, FeatureVector, FEATURE_DIM, FEATURE_NAMES};
pub use remote::{ExternalScorerEndpoint, RemoteScorer, ScorePair, ScoreRequest, ScoreResponse};
pub use scorer::{sigmoid, CrossScorer};
pub use train::{
    gradient, loss, train, train_examples, Example, IndexResolver, TextResolver, TextTables, TrainConfig,
    TrainReport, TRANSFORMER_LEARNING_RATE,
};

use serde::{Deserialize, Serialize};

use crate::index::Index;
use crate::l1::CandidateSet;
use crate::textproc::BpeVocabulary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankedPassage {
    pub passage_id: String,
    pub l1_score: f64,
    pub l2_score: f64,
}

/// Descending `l2_score`, ties by ascending passage id.
pub fn sort_by_l2(passages: &mut [RerankedPassage]) {
    passages.sort_unstable_by(|a, b| {
        b.l2_score
            .total_cmp(&a.l2_score)
            .then_with(|| a.passage_id.cmp(&b.passage_id))
    });
}

/// Scores every candidate with the local model and sorts by that score alone.
/// Candidates missing from the index are dropped.
pub fn rerank(scorer: &CrossScorer, index: &Index, vocab: Option<&BpeVocabulary>, candidates: &CandidateSet) -> Vec<RerankedPassage> {
    let query_terms = index.analyzer().analyze(&candidates.query);
    let mut out: Vec<RerankedPassage> = candidates
        .candidates
        .iter()
        .filter_map(|c| {
            let p = index.passage(&c.passage_id)?;
            let f = featurize(&query_terms, &p.text, index.meta(), index.analyzer(), vocab);
            Some(RerankedPassage {
                passage_id: c.passage_id.clone(),
                l1_score: c.l1_score,
                l2_score: scorer.score(&f),
            })
        })
        .collect();
    sort_by_l2(&mut out);
    out
}
