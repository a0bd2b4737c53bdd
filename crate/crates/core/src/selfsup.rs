//! Self-supervised training data for the reranker.
//!
//! Queries from a general-domain collection are kept when they mention a
//! domain lexicon entry. Their annotated passages become positives, BM25's
//! best-scoring non-positive passages become hard negatives, and negatives are
//! down-sampled per query to match the positive count.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{Field, Passage};
use crate::error::{Error, Result};
use crate::index::{Bm25Params, Index};
use crate::textproc::Analyzer;

/// Hard negatives kept per query before balancing.
pub const DEFAULT_NEGATIVES: usize = 100;
pub const DEFAULT_SEED: u64 = 13;

/// Domain terms, each stored as its analyzed term sequence.
#[derive(Debug, Clone)]
pub struct DomainLexicon {
    entries: HashSet<String>,
    max_len: usize,
    analyzer: Analyzer,
}

impl DomainLexicon {
    pub fn new<I, S>(phrases: I, analyzer: Analyzer) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut entries = HashSet::new();
        let mut max_len = 0;
        for phrase in phrases {
            let terms = analyzer.analyze(phrase.as_ref());
            if terms.is_empty() {
                continue;
            }
            max_len = max_len.max(terms.len());
            entries.insert(terms.join(" "));
        }
        if entries.is_empty() {
            return Err(Error::Empty("domain lexicon"));
        }
        Ok(Self {
            entries,
            max_len,
            analyzer,
        })
    }

    /// One phrase per line.
    pub fn load(path: &Path, analyzer: Analyzer) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::new(text.lines(), analyzer)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// True if some entry occurs as a contiguous run of the analyzed text.
    pub fn matches(&self, text: &str) -> bool {
        let terms = self.analyzer.analyze(text);
        (0..terms.len()).any(|start| {
            let mut key = String::new();
            for t in terms.iter().skip(start).take(self.max_len) {
                if !key.is_empty() {
                    key.push(' ');
                }
                key.push_str(t);
                if self.entries.contains(&key) {
                    return true;
                }
            }
            false
        })
    }
}

pub fn filter_queries<I>(queries: I, lexicon: &DomainLexicon) -> Vec<(String, String)>
where
    I: IntoIterator<Item = (String, String)>,
{
    queries
        .into_iter()
        .filter(|(_, text)| lexicon.matches(text))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelevancePair {
    pub query_id: String,
    pub query_text: String,
    pub positives: BTreeSet<String>,
}

/// Pairs each query with its judged-relevant passages; queries without any
/// positive (and repeated query ids) are dropped.
pub fn relevance_pairs(queries: &[(String, String)], positives: &HashMap<String, BTreeSet<String>>) -> Vec<RelevancePair> {
    let mut seen = HashSet::new();
    queries
        .iter()
        .filter(|(qid, _)| seen.insert(qid.as_str()))
        .filter_map(|(qid, text)| {
            let pos = positives.get(qid).filter(|p| !p.is_empty())?;
            Some(RelevancePair {
                query_id: qid.clone(),
                query_text: text.clone(),
                positives: pos.clone(),
            })
        })
        .collect()
}

/// Best BM25 passages that are not positives, highest score first.
pub fn mine_negatives(pair: &RelevancePair, index: &Index, top_n: usize) -> Result<Vec<String>> {
    if top_n == 0 {
        return Ok(Vec::new());
    }
    let terms = index.analyzer().analyze(&pair.query_text);
    let hits = index.search(&terms, top_n.saturating_add(pair.positives.len()))?;
    Ok(hits
        .into_iter()
        .map(|h| h.passage_id)
        .filter(|pid| !pair.positives.contains(pid))
        .take(top_n)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct TrainingTriple {
    pub query_id: String,
    pub passage_id: String,
    pub label: u8,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct BalanceReport {
    pub queries: usize,
    pub positives: usize,
    pub negatives: usize,
    /// Queries whose mined list ran out before matching the positive count.
    pub imbalanced: Vec<String>,
}

/// Emits every positive plus an equal number of negatives per query, sampled
/// without replacement from that query's mined list, then shuffles the whole
/// dataset. One seeded generator drives both steps.
pub fn balance_and_emit(pairs: &[RelevancePair], negatives: &[Vec<String>], seed: u64) -> (Vec<TrainingTriple>, BalanceReport) {
    assert_eq!(pairs.len(), negatives.len(), "one negative list per query");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut triples = Vec::new();
    let mut report = BalanceReport {
        queries: pairs.len(),
        ..BalanceReport::default()
    };
    for (pair, mined) in pairs.iter().zip(negatives) {
        for pid in &pair.positives {
            triples.push(TrainingTriple {
                query_id: pair.query_id.clone(),
                passage_id: pid.clone(),
                label: 1,
            });
        }
        let mut pool: Vec<&String> = Vec::with_capacity(mined.len());
        let mut seen = HashSet::new();
        for pid in mined {
            if !pair.positives.contains(pid) && seen.insert(pid) {
                pool.push(pid);
            }
        }
        let want = pair.positives.len();
        if pool.len() < want {
            tracing::warn!(query = %pair.query_id, positives = want, negatives = pool.len(), "imbalanced query");
            report.imbalanced.push(pair.query_id.clone());
        }
        let take = want.min(pool.len());
        for pid in pool.choose_multiple(&mut rng, take) {
            triples.push(TrainingTriple {
                query_id: pair.query_id.clone(),
                passage_id: (*pid).clone(),
                label: 0,
            });
        }
        report.positives += want;
        report.negatives += take;
    }
    triples.shuffle(&mut rng);
    (triples, report)
}

fn read_id_text(path: &Path) -> Result<Vec<(String, String)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let ctx = path.display().to_string();
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let (id, text) = line
            .split_once('\t')
            .filter(|(id, _)| !id.is_empty())
            .ok_or_else(|| Error::parse(&ctx, i + 1, "expected `id<TAB>text`"))?;
        out.push((id.to_string(), text.to_string()));
    }
    Ok(out)
}

/// `qid<TAB>text` lines.
pub fn read_queries(path: &Path) -> Result<Vec<(String, String)>> {
    read_id_text(path)
}

/// `pid<TAB>text` lines.
pub fn read_collection(path: &Path) -> Result<Vec<(String, String)>> {
    read_id_text(path)
}

/// `qid<TAB>0<TAB>pid<TAB>rel` lines; passages with `rel > 0` are positives.
pub fn read_positive_qrels(path: &Path) -> Result<HashMap<String, BTreeSet<String>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let ctx = path.display().to_string();
    let mut out: HashMap<String, BTreeSet<String>> = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let [qid, _, pid, rel] = cols[..] else {
            return Err(Error::parse(&ctx, i + 1, format!("expected 4 tab-separated columns, found {}", cols.len())));
        };
        let rel: i64 = rel
            .trim()
            .parse()
            .map_err(|_| Error::parse(&ctx, i + 1, format!("bad relevance `{rel}`")))?;
        if rel > 0 {
            out.entry(qid.to_string()).or_default().insert(pid.to_string());
        }
    }
    Ok(out)
}

pub fn write_triples(path: &Path, triples: &[TrainingTriple]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for t in triples {
        writeln!(w, "{}\t{}\t{}", t.query_id, t.passage_id, t.label).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_triples(path: &Path) -> Result<Vec<TrainingTriple>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let ctx = path.display().to_string();
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let [qid, pid, label] = cols[..] else {
            return Err(Error::parse(&ctx, i + 1, "expected `qid<TAB>pid<TAB>label`"));
        };
        let label = match label {
            "0" => 0,
            "1" => 1,
            other => return Err(Error::parse(&ctx, i + 1, format!("label must be 0 or 1, got `{other}`"))),
        };
        out.push(TrainingTriple {
            query_id: qid.to_string(),
            passage_id: pid.to_string(),
            label,
        });
    }
    Ok(out)
}

/// Indexes a `pid -> text` collection with one passage per pid.
pub fn index_collection(collection: &[(String, String)], num_shards: u32, analyzer: Analyzer) -> Result<Index> {
    let passages = collection.iter().map(|(pid, text)| Passage {
        passage_id: pid.clone(),
        doc_id: pid.clone(),
        text: text.clone(),
        ordinal: 0,
        field: Field::Body,
    });
    Index::build(passages, num_shards, analyzer, Bm25Params::default())
}

#[derive(Debug, Clone)]
pub struct GenerateConfig {
    pub negatives: usize,
    pub seed: u64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            negatives: DEFAULT_NEGATIVES,
            seed: DEFAULT_SEED,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct GenerateReport {
    pub input_queries: usize,
    pub domain_queries: usize,
    pub annotated_queries: usize,
    pub balance: BalanceReport,
}

/// Full pipeline: filter, pair with positives, mine (in parallel), balance.
pub fn generate(
    queries: Vec<(String, String)>,
    qrels: &HashMap<String, BTreeSet<String>>,
    lexicon: &DomainLexicon,
    index: &Index,
    config: &GenerateConfig,
) -> Result<(Vec<TrainingTriple>, GenerateReport)> {
    let input_queries = queries.len();
    let kept = filter_queries(queries, lexicon);
    let domain_queries = kept.len();
    let pairs = relevance_pairs(&kept, qrels);
    let negatives: Vec<Vec<String>> = pairs
        .par_iter()
        .map(|p| mine_negatives(p, index, config.negatives))
        .collect::<Result<_>>()?;
    let (triples, balance) = balance_and_emit(&pairs, &negatives, config.seed);
    Ok((
        triples,
        GenerateReport {
            input_queries,
            domain_queries,
            annotated_queries: pairs.len(),
            balance,
        },
    ))
}
