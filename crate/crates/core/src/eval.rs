//! TREC-style run and qrels files, NDCG@k and P@k.
//!
//! Gain is linear (`rel / log2(i + 1)`), unjudged items count as
//! non-relevant, and means are taken over topics with at least one relevant
//! judgment. Topics judged but absent from the run score 0.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// Stated at the top of every report so numbers are comparable.
pub const GAIN_CONVENTION: &str =
    "gain=linear dcg=sum(rel_i/log2(i+1)) unjudged=0 mean_over=topics_with_relevant";

/// topic → id → graded relevance.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    topics: BTreeMap<String, HashMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, topic: impl Into<String>, id: impl Into<String>, rel: u32) {
        self.topics.entry(topic.into()).or_default().insert(id.into(), rel);
    }

    pub fn topics(&self) -> impl Iterator<Item = &str> {
        self.topics.keys().map(String::as_str)
    }

    pub fn judgments(&self, topic: &str) -> Option<&HashMap<String, u32>> {
        self.topics.get(topic)
    }

    pub fn relevance(&self, topic: &str, id: &str) -> u32 {
        self.topics.get(topic).and_then(|j| j.get(id)).copied().unwrap_or(0)
    }

    pub fn has_relevant(&self, topic: &str) -> bool {
        self.topics.get(topic).is_some_and(|j| j.values().any(|&r| r > 0))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut q = Self::new();
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 4 {
                return Err(Error::parse("qrels", n, format!("expected 4 columns, found {}", cols.len())));
            }
            let rel: u32 = cols[3]
                .parse()
                .map_err(|_| Error::parse("qrels", n, format!("relevance `{}` is not a non-negative integer", cols[3])))?;
            q.insert(cols[0], cols[2], rel);
        }
        Ok(q)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (topic, judged) in &self.topics {
            let mut ids: Vec<_> = judged.iter().collect();
            ids.sort();
            for (id, rel) in ids {
                let _ = writeln!(out, "{topic} 0 {id} {rel}");
            }
        }
        out
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunEntry {
    pub id: String,
    pub score: f64,
    pub tag: String,
}

/// topic → entries in rank order (entry `i` has rank `i + 1`).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Run {
    topics: BTreeMap<String, Vec<RunEntry>>,
}

impl Run {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets a topic's ranking. Scores must be non-increasing. An empty ranking
    /// removes the topic, since the file format cannot express one.
    pub fn set_topic(&mut self, topic: impl Into<String>, entries: Vec<RunEntry>) -> Result<()> {
        let topic = topic.into();
        if let Some(w) = entries.windows(2).find(|w| w[1].score > w[0].score) {
            return Err(Error::InvalidArgument(format!(
                "topic {topic}: score {} follows lower score {}",
                w[1].score, w[0].score
            )));
        }
        if entries.is_empty() {
            self.topics.remove(&topic);
        } else {
            self.topics.insert(topic, entries);
        }
        Ok(())
    }

    pub fn topics(&self) -> impl Iterator<Item = &str> {
        self.topics.keys().map(String::as_str)
    }

    pub fn ranking(&self, topic: &str) -> &[RunEntry] {
        self.topics.get(topic).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut topics: BTreeMap<String, Vec<RunEntry>> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 6 {
                return Err(Error::parse("run", n, format!("expected 6 columns, found {}", cols.len())));
            }
            let rank: usize = cols[3]
                .parse()
                .map_err(|_| Error::parse("run", n, format!("bad rank `{}`", cols[3])))?;
            let score: f64 = cols[4]
                .parse()
                .ok()
                .filter(|s: &f64| s.is_finite())
                .ok_or_else(|| Error::parse("run", n, format!("bad score `{}`", cols[4])))?;
            let entries = topics.entry(cols[0].to_string()).or_default();
            if rank != entries.len() + 1 {
                return Err(Error::parse(
                    "run",
                    n,
                    format!("topic {}: expected rank {}, found {rank}", cols[0], entries.len() + 1),
                ));
            }
            if let Some(prev) = entries.last() {
                if score > prev.score {
                    return Err(Error::parse(
                        "run",
                        n,
                        format!("topic {}: score {score} exceeds previous {}", cols[0], prev.score),
                    ));
                }
            }
            entries.push(RunEntry {
                id: cols[2].to_string(),
                score,
                tag: cols[5].to_string(),
            });
        }
        Ok(Self { topics })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (topic, entries) in &self.topics {
            for (i, e) in entries.iter().enumerate() {
                let _ = writeln!(out, "{topic} Q0 {} {} {:?} {}", e.id, i + 1, e.score, e.tag);
            }
        }
        out
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

fn dcg<I: IntoIterator<Item = u32>>(rels: I) -> f64 {
    rels.into_iter()
        .enumerate()
        .map(|(i, r)| f64::from(r) / ((i + 2) as f64).log2())
        .sum()
}

/// NDCG@k of one ranked id list. `None` when no judged item is relevant.
pub fn ndcg<S: AsRef<str>>(ranking: &[S], judged: &HashMap<String, u32>, k: usize) -> Option<f64> {
    let mut ideal: Vec<u32> = judged.values().copied().filter(|&r| r > 0).collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg(ideal.into_iter().take(k));
    if idcg == 0.0 {
        return None;
    }
    let gained = dcg(ranking.iter().take(k).map(|id| judged.get(id.as_ref()).copied().unwrap_or(0)));
    Some(gained / idcg)
}

/// P@k of one ranked id list; missing slots count as non-relevant.
pub fn precision<S: AsRef<str>>(ranking: &[S], judged: &HashMap<String, u32>, k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let hits = ranking
        .iter()
        .take(k)
        .filter(|id| judged.get(id.as_ref()).is_some_and(|&r| r > 0))
        .count();
    hits as f64 / k as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopicScores {
    pub topic: String,
    pub ndcg: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub k_ndcg: usize,
    pub k_precision: usize,
    pub per_topic: Vec<TopicScores>,
    pub mean_ndcg: f64,
    pub mean_precision: f64,
}

impl MetricReport {
    /// trec_eval-style text, convention line first.
    pub fn to_text(&self) -> String {
        let mut out = format!("# {GAIN_CONVENTION}\n");
        let (nk, pk) = (self.k_ndcg, self.k_precision);
        for t in &self.per_topic {
            let _ = writeln!(out, "ndcg_cut_{nk}\t{}\t{:.4}", t.topic, t.ndcg);
            let _ = writeln!(out, "P_{pk}\t{}\t{:.4}", t.topic, t.precision);
        }
        let _ = writeln!(out, "ndcg_cut_{nk}\tall\t{:.4}", self.mean_ndcg);
        let _ = writeln!(out, "P_{pk}\tall\t{:.4}", self.mean_precision);
        let _ = writeln!(out, "num_q\tall\t{}", self.per_topic.len());
        out
    }
}

/// Scores every qrels topic that has a relevant judgment.
pub fn evaluate(run: &Run, qrels: &Qrels, k_ndcg: usize, k_precision: usize) -> Result<MetricReport> {
    if k_ndcg == 0 || k_precision == 0 {
        return Err(Error::InvalidArgument("cutoffs must be positive".into()));
    }
    let mut per_topic = Vec::new();
    for topic in qrels.topics() {
        let judged = qrels.judgments(topic).expect("topic listed by qrels");
        let ids: Vec<&str> = run.ranking(topic).iter().map(|e| e.id.as_str()).collect();
        if let Some(n) = ndcg(&ids, judged, k_ndcg) {
            per_topic.push(TopicScores {
                topic: topic.to_string(),
                ndcg: n,
                precision: precision(&ids, judged, k_precision),
            });
        }
    }
    let mean = |f: fn(&TopicScores) -> f64| {
        if per_topic.is_empty() {
            0.0
        } else {
            per_topic.iter().map(f).sum::<f64>() / per_topic.len() as f64
        }
    };
    Ok(MetricReport {
        k_ndcg,
        k_precision,
        mean_ndcg: mean(|t| t.ndcg),
        mean_precision: mean(|t| t.precision),
        per_topic,
    })
}

/// Area under the ROC curve of `(score, is_positive)` pairs, ties counted as
/// half. `None` if either class is missing.
pub fn roc_auc(scored: &[(f64, bool)]) -> Option<f64> {
    let mut sorted: Vec<(f64, bool)> = scored.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let pos = sorted.iter().filter(|s| s.1).count();
    let neg = sorted.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    // Mann-Whitney U with average ranks for ties.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            j += 1;
        }
        let avg_rank = (i + j + 1) as f64 / 2.0;
        rank_sum += avg_rank * sorted[i..j].iter().filter(|s| s.1).count() as f64;
        i = j;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Some(u / (pos * neg) as f64)
}
