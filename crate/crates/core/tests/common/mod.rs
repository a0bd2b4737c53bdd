//! Fixtures and independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};
use std::net::SocketAddr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vertsearch::corpus::{Field, Passage};
use vertsearch::index::{Bm25Params, Index};
use vertsearch::l1::SaliencyTable;
use vertsearch::l2::CrossScorer;
use vertsearch::service::{SearchRequest, SearchResult, SearchService};
use vertsearch::textproc::{Analyzer, BpeVocabulary};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Word sampler with Zipf-like frequencies over `w0..w{n}`.
pub struct Zipf {
    pub words: Vec<String>,
    dist: WeightedIndex<f64>,
}

impl Zipf {
    pub fn new(prefix: &str, n: usize, exponent: f64) -> Self {
        let words = (0..n).map(|i| format!("{prefix}{i}")).collect();
        let weights: Vec<f64> = (0..n).map(|r| 1.0 / ((r + 1) as f64).powf(exponent)).collect();
        Self {
            words,
            dist: WeightedIndex::new(weights).unwrap(),
        }
    }

    pub fn word(&self, rng: &mut impl Rng) -> &str {
        &self.words[self.dist.sample(rng)]
    }

    pub fn sentence(&self, rng: &mut impl Rng, len: usize) -> String {
        let mut s: Vec<&str> = (0..len).map(|_| self.word(rng)).collect();
        if let Some(first) = s.first_mut() {
            // Capitalization and punctuation exercise the analyzer.
            if rng.random_bool(0.3) {
                *first = "The";
            }
        }
        format!("{}.", s.join(" "))
    }
}

/// Documents with a title passage and 1..=max_body body passages of 1-3 sentences.
pub fn random_passages(seed: u64, num_passages: usize, zipf: &Zipf, max_body: usize) -> Vec<Passage> {
    let mut rng = rng(seed);
    let mut out = Vec::with_capacity(num_passages);
    let mut doc = 0;
    while out.len() < num_passages {
        let doc_id = format!("doc{doc}");
        doc += 1;
        let len = rng.random_range(2..6);
        out.push(Passage::new(&doc_id, 0, Field::Title, zipf.sentence(&mut rng, len)));
        let body = rng.random_range(1..=max_body);
        for ord in 1..=body as u32 {
            if out.len() >= num_passages {
                break;
            }
            let sentences: Vec<String> = (0..rng.random_range(1..4))
                .map(|_| {
                    let len = rng.random_range(4..20);
                    zipf.sentence(&mut rng, len)
                })
                .collect();
            let field = if ord == 1 { Field::Abstract } else { Field::Body };
            out.push(Passage::new(&doc_id, ord, field, sentences.join(" ")));
        }
    }
    out
}

pub fn random_queries(seed: u64, zipf: &Zipf, count: usize, max_len: usize) -> Vec<String> {
    let mut rng = rng(seed);
    (0..count)
        .map(|_| {
            let n = rng.random_range(1..=max_len);
            (0..n).map(|_| zipf.word(&mut rng).to_string()).collect::<Vec<_>>().join(" ")
        })
        .collect()
}

/// Exhaustive BM25: scores every passage directly from the formula.
pub struct BruteBm25 {
    pub ids: Vec<String>,
    pub terms: Vec<Vec<String>>,
    pub n: u64,
    pub avgdl: f64,
    pub df: HashMap<String, u32>,
}

impl BruteBm25 {
    pub const K1: f64 = 1.2;
    pub const B: f64 = 0.75;

    pub fn new(passages: &[Passage], analyzer: &Analyzer) -> Self {
        let terms: Vec<Vec<String>> = passages.iter().map(|p| analyzer.analyze(&p.text)).collect();
        let mut df: HashMap<String, u32> = HashMap::new();
        for t in &terms {
            let uniq: BTreeSet<&String> = t.iter().collect();
            for w in uniq {
                *df.entry(w.clone()).or_default() += 1;
            }
        }
        let total: u64 = terms.iter().map(|t| t.len() as u64).sum();
        let n = passages.len() as u64;
        Self {
            ids: passages.iter().map(|p| p.passage_id.clone()).collect(),
            terms,
            n,
            avgdl: total as f64 / n as f64,
            df,
        }
    }

    pub fn idf(&self, term: &str) -> f64 {
        let df = *self.df.get(term).unwrap_or(&0) as f64;
        let n = self.n as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Score of passage `i`; `None` when no query term occurs in it.
    pub fn score(&self, query: &[String], i: usize) -> Option<f64> {
        let mut seen = Vec::new();
        let mut total = 0.0;
        let mut matched = false;
        let dl = self.terms[i].len() as f64;
        for q in query {
            if seen.contains(&q) {
                continue;
            }
            seen.push(q);
            let tf = self.terms[i].iter().filter(|t| *t == q).count();
            if tf == 0 {
                continue;
            }
            matched = true;
            let tf = tf as f64;
            let norm = 1.0 - Self::B + Self::B * dl / self.avgdl;
            total += self.idf(q) * tf * (Self::K1 + 1.0) / (tf + Self::K1 * norm);
        }
        matched.then_some(total)
    }

    /// Every matching passage accepted by `keep`, best first, ties by id.
    pub fn rank(&self, query: &[String], keep: impl Fn(&str) -> bool) -> Vec<(String, f64)> {
        let mut all: Vec<(String, f64)> = (0..self.ids.len())
            .filter(|&i| keep(&self.ids[i]))
            .filter_map(|i| self.score(query, i).map(|s| (self.ids[i].clone(), s)))
            .collect();
        all.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        all
    }

    pub fn top(&self, query: &[String], k: usize) -> Vec<(String, f64)> {
        let mut r = self.rank(query, |_| true);
        r.truncate(k);
        r
    }
}

/// A collection where relevance is planted through term overlap.
///
/// Each query is three topic words `a b c`. Its two relevant passages contain
/// the phrase `a b c` once inside filler. Four distractors of the same length
/// scatter the words twice in reverse order (`c .. b .. a .. c .. b .. a`), so
/// BM25 ranks them above the relevant ones while phrase-level features do not.
pub struct Planted {
    pub collection: Vec<(String, String)>,
    pub train_queries: Vec<(String, String)>,
    pub test_queries: Vec<(String, String)>,
    /// Queries made only of filler words; outside the domain lexicon.
    pub off_domain_queries: Vec<(String, String)>,
    pub qrels: HashMap<String, BTreeSet<String>>,
    pub lexicon: Vec<String>,
}

pub fn planted(seed: u64, train: usize, test: usize) -> Planted {
    let mut rng = rng(seed);
    let filler: Vec<String> = (0..150).map(|i| format!("f{i}")).collect();
    let topics: Vec<String> = (0..(train + test) * 3 + 200).map(|i| format!("t{i}")).collect();
    let fill = |rng: &mut ChaCha8Rng, n: usize| -> Vec<String> {
        (0..n).map(|_| filler.choose(rng).unwrap().clone()).collect()
    };

    let mut texts: Vec<(String, Option<(usize, bool)>)> = Vec::new();
    let mut queries = Vec::new();
    for qi in 0..train + test {
        let (a, b, c) = (&topics[3 * qi], &topics[3 * qi + 1], &topics[3 * qi + 2]);
        queries.push(format!("{a} {b} {c}"));
        for _ in 0..2 {
            let mut words = fill(&mut rng, 25);
            let at = rng.random_range(0..=words.len());
            words.splice(at..at, [a.clone(), b.clone(), c.clone()]);
            texts.push((words.join(" "), Some((qi, true))));
        }
        for _ in 0..4 {
            let mut words = fill(&mut rng, 22);
            for w in [c, b, a, c, b, a] {
                let at = rng.random_range(0..=words.len());
                words.insert(at, w.clone());
            }
            // Keep the reversed order intact by re-sorting the planted positions.
            let planted_words = [c, b, a, c, b, a];
            let mut k = 0;
            for w in words.iter_mut() {
                if [a, b, c].contains(&&*w) {
                    *w = planted_words[k].clone();
                    k += 1;
                }
            }
            texts.push((words.join(" "), Some((qi, false))));
        }
    }
    let spare = &topics[(train + test) * 3..];
    for _ in 0..1500 {
        let mut words = fill(&mut rng, 30);
        for _ in 0..2 {
            let at = rng.random_range(0..=words.len());
            words.insert(at, spare.choose(&mut rng).unwrap().clone());
        }
        texts.push((words.join(" "), None));
    }
    texts.shuffle(&mut rng);

    let mut collection = Vec::with_capacity(texts.len());
    let mut qrels: HashMap<String, BTreeSet<String>> = HashMap::new();
    for (i, (text, tag)) in texts.into_iter().enumerate() {
        let pid = format!("p{i}");
        if let Some((qi, true)) = tag {
            qrels.entry(format!("q{qi}")).or_default().insert(pid.clone());
        }
        collection.push((pid, text));
    }
    let mut all: Vec<(String, String)> = queries.into_iter().enumerate().map(|(i, q)| (format!("q{i}"), q)).collect();
    let test_queries = all.split_off(train);

    let mut off_domain = Vec::new();
    for (i, (pid, _)) in collection.iter().take(20).enumerate() {
        let qid = format!("x{i}");
        off_domain.push((qid.clone(), fill(&mut rng, 3).join(" ")));
        qrels.entry(qid).or_default().insert(pid.clone());
    }
    Planted {
        collection,
        lexicon: topics,
        train_queries: all,
        test_queries,
        off_domain_queries: off_domain,
        qrels,
    }
}

pub const GOLDEN_PATH: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/golden_search.json");

/// Fixed index, model, vocabulary and saliency table behind the golden file.
pub fn golden_service() -> SearchService {
    golden_service_with_cache(0)
}

pub fn golden_service_with_cache(cache_capacity: usize) -> SearchService {
    let zipf = Zipf::new("w", 400, 1.0);
    let passages = random_passages(11, 600, &zipf, 4);
    let vocab = BpeVocabulary::train(passages.iter().map(|p| p.text.as_str()), 150).unwrap();
    let index = Index::build(passages, 3, Analyzer::default(), Bm25Params::default()).unwrap();
    let scorer = CrossScorer::new([0.9, 1.2, 0.8, 1.5, -0.2, -0.1, -1.0]).unwrap();
    let mut saliency = SaliencyTable::new();
    for d in (0..200).step_by(3) {
        saliency.insert(format!("doc{d}"), ((d * 37) % 100) as f64 / 100.0).unwrap();
    }
    SearchService::new(index, scorer, cache_capacity)
        .with_vocab(vocab)
        .with_saliency(saliency)
}

pub fn golden_requests() -> Vec<SearchRequest> {
    let zipf = Zipf::new("w", 400, 1.0);
    let mut reqs: Vec<SearchRequest> = random_queries(12, &zipf, 6, 4).into_iter().map(SearchRequest::new).collect();
    reqs[0].answers = true;
    reqs[1].fusion = true;
    reqs[2].k = 10;
    reqs[3].fusion = true;
    reqs[3].answers = true;
    reqs.push(SearchRequest {
        answers: true,
        ..SearchRequest::new("w3 w17 w42")
    });
    reqs.push(SearchRequest::new("zzz unmatched"));
    reqs.push(SearchRequest::new(""));
    reqs
}

/// Responses of the golden pipeline with timing cleared.
pub fn golden_payloads() -> Vec<SearchResult> {
    let svc = golden_service();
    golden_requests()
        .iter()
        .map(|r| svc.handle_search(r).unwrap().payload())
        .collect()
}

/// Serves `router` on an ephemeral local port from a background runtime.
pub fn spawn_server(router: axum::Router) -> SocketAddr {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(4)
            .enable_all()
            .build()
            .unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, router).await.unwrap();
        });
    });
    rx.recv().unwrap()
}

/// Plain HTTP GET returning status and body.
pub fn http_get(url: &str) -> (u16, String) {
    let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
    let mut resp = agent.get(url).call().expect("request");
    let status = resp.status().as_u16();
    (status, resp.body_mut().read_to_string().unwrap())
}
