use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::index::shard::{hit_order, Hit, IndexShard};
use crate::index::IndexMeta;

/// A searchable partition. In-process shards never fail; the trait exists so
/// remote or faulty shards can participate in the same fan-out.
pub trait ShardSearcher: Sync {
    fn shard_id(&self) -> u32;

    fn search_shard(&self, meta: &IndexMeta, query_terms: &[&str], k: usize) -> std::result::Result<Vec<Hit>, String>;
}

impl ShardSearcher for IndexShard {
    fn shard_id(&self) -> u32 {
        self.shard_id
    }

    fn search_shard(&self, meta: &IndexMeta, query_terms: &[&str], k: usize) -> std::result::Result<Vec<Hit>, String> {
        Ok(self.search(meta, query_terms, k))
    }
}

/// Fans the query out to every shard concurrently and merges the per-shard
/// top-`k` lists. Any failed shard fails the whole request.
pub fn scatter_gather<T, S>(shards: &[T], meta: &IndexMeta, query_terms: &[S], k: usize) -> Result<Vec<Hit>>
where
    T: ShardSearcher,
    S: AsRef<str> + Sync,
{
    let terms: Vec<&str> = query_terms.iter().map(AsRef::as_ref).collect();
    if k == 0 || terms.is_empty() {
        return Ok(Vec::new());
    }
    let results: Vec<(u32, std::result::Result<Vec<Hit>, String>)> = if shards.len() == 1 {
        vec![(shards[0].shard_id(), shards[0].search_shard(meta, &terms, k))]
    } else {
        shards
            .par_iter()
            .map(|s| (s.shard_id(), s.search_shard(meta, &terms, k)))
            .collect()
    };

    let mut failed = Vec::new();
    let mut merged = Vec::new();
    for (id, r) in results {
        match r {
            Ok(hits) => merged.extend(hits),
            Err(msg) => {
                tracing::warn!(shard = id, %msg, "shard search failed");
                failed.push(id);
            }
        }
    }
    if !failed.is_empty() {
        failed.sort_unstable();
        return Err(Error::ShardFailure(failed));
    }
    merged.sort_unstable_by(hit_order);
    merged.truncate(k);
    Ok(merged)
}
