use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use tracing::info;

use crate::error::{Error, Result};
use crate::index::{Index, IndexMeta};
use crate::l2::features::{featurize, FeatureVector, FEATURE_DIM};
use crate::l2::scorer::{sigmoid, CrossScorer};
use crate::selfsup::TrainingTriple;
use crate::textproc::{Analyzer, BpeVocabulary};

/// Learning rate used to fine-tune a transformer cross-encoder on the same
/// triples. The logistic model here needs a much larger step.
pub const TRANSFORMER_LEARNING_RATE: f64 = 2e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 1,
            batch_size: 32,
            seed: 13,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Example {
    pub features: FeatureVector,
    pub label: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub examples: usize,
    pub positives: usize,
    pub epochs: usize,
    /// Mean pre-update batch loss for each epoch.
    pub epoch_loss: Vec<f64>,
}

impl TrainReport {
    pub fn single_class(&self) -> bool {
        self.positives == 0 || self.positives == self.examples
    }
}

/// `log(1 + e^z) - y z`, the per-example cross-entropy written in logits.
fn bce_from_logit(z: f64, y: f64) -> f64 {
    let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
    softplus - y * z
}

/// Mean binary cross-entropy of `sigmoid(w . x)` over `batch`.
pub fn loss(w: &[f64; FEATURE_DIM], batch: &[Example]) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    batch.iter().map(|e| bce_from_logit(e.features.dot(w), e.label)).sum::<f64>() / batch.len() as f64
}

/// Analytic gradient of [`loss`] with respect to `w`.
pub fn gradient(w: &[f64; FEATURE_DIM], batch: &[Example]) -> [f64; FEATURE_DIM] {
    let mut g = [0.0; FEATURE_DIM];
    if batch.is_empty() {
        return g;
    }
    for e in batch {
        let r = sigmoid(e.features.dot(w)) - e.label;
        for (gi, xi) in g.iter_mut().zip(&e.features.0) {
            *gi += r * xi;
        }
    }
    let n = batch.len() as f64;
    g.iter_mut().for_each(|gi| *gi /= n);
    g
}

fn validate(config: &TrainConfig) -> Result<()> {
    if !(config.learning_rate.is_finite() && config.learning_rate > 0.0) {
        return Err(Error::InvalidArgument("learning rate must be positive".into()));
    }
    if config.epochs == 0 || config.batch_size == 0 {
        return Err(Error::InvalidArgument("epochs and batch size must be positive".into()));
    }
    Ok(())
}

/// Mini-batch SGD from zero weights. Example order is a seeded shuffle, so a
/// fixed seed reproduces the model bit for bit.
pub fn train_examples(examples: &[Example], config: &TrainConfig) -> Result<(CrossScorer, TrainReport)> {
    validate(config)?;
    if examples.is_empty() {
        return Err(Error::Empty("training examples"));
    }
    let positives = examples.iter().filter(|e| e.label > 0.5).count();
    if positives == 0 || positives == examples.len() {
        tracing::warn!(examples = examples.len(), positives, "training data has a single class");
    }
    // Optimize on standardized features so one learning rate suits raw
    // features of very different magnitude (bm25 vs ratios).
    let scaling = Standardizer::fit(examples);
    let examples: Vec<Example> = examples.iter().map(|e| scaling.apply(e)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut w = [0.0; FEATURE_DIM];
    let mut epoch_loss = Vec::with_capacity(config.epochs);
    let mut batch = Vec::with_capacity(config.batch_size);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| examples[i]));
            total += loss(&w, &batch) * batch.len() as f64;
            let g = gradient(&w, &batch);
            for (wi, gi) in w.iter_mut().zip(g) {
                *wi -= config.learning_rate * gi;
            }
        }
        let mean = total / examples.len() as f64;
        info!(epoch = epoch + 1, loss = mean, "epoch finished");
        epoch_loss.push(mean);
    }
    let report = TrainReport {
        examples: examples.len(),
        positives,
        epochs: config.epochs,
        epoch_loss,
    };
    Ok((CrossScorer::new(scaling.fold(w))?, report))
}

const BIAS: usize = FEATURE_DIM - 1;

/// Per-feature mean and standard deviation; constant features pass through.
struct Standardizer {
    mean: [f64; FEATURE_DIM],
    scale: [f64; FEATURE_DIM],
}

impl Standardizer {
    fn fit(examples: &[Example]) -> Self {
        let n = examples.len() as f64;
        let mut mean = [0.0; FEATURE_DIM];
        let mut scale = [1.0; FEATURE_DIM];
        for i in 0..BIAS {
            let m = examples.iter().map(|e| e.features.0[i]).sum::<f64>() / n;
            let var = examples.iter().map(|e| (e.features.0[i] - m).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            if sd > 1e-12 {
                mean[i] = m;
                scale[i] = sd;
            }
        }
        Self { mean, scale }
    }

    fn apply(&self, e: &Example) -> Example {
        let mut x = e.features;
        for i in 0..BIAS {
            x.0[i] = (x.0[i] - self.mean[i]) / self.scale[i];
        }
        Example { features: x, label: e.label }
    }

    /// Weights on standardized features -> equivalent weights on raw ones.
    fn fold(&self, v: [f64; FEATURE_DIM]) -> [f64; FEATURE_DIM] {
        let mut w = v;
        for i in 0..BIAS {
            w[i] = v[i] / self.scale[i];
            w[BIAS] -= v[i] * self.mean[i] / self.scale[i];
        }
        w
    }
}

/// Looks up raw text for the ids in training triples.
pub trait TextResolver {
    fn query_text(&self, query_id: &str) -> Option<&str>;
    fn passage_text(&self, passage_id: &str) -> Option<&str>;
}

#[derive(Debug, Clone, Default)]
pub struct TextTables {
    pub queries: HashMap<String, String>,
    pub passages: HashMap<String, String>,
}

impl TextResolver for TextTables {
    fn query_text(&self, query_id: &str) -> Option<&str> {
        self.queries.get(query_id).map(String::as_str)
    }

    fn passage_text(&self, passage_id: &str) -> Option<&str> {
        self.passages.get(passage_id).map(String::as_str)
    }
}

/// Queries from a table, passages from an index.
pub struct IndexResolver<'a> {
    pub queries: &'a HashMap<String, String>,
    pub index: &'a Index,
}

impl TextResolver for IndexResolver<'_> {
    fn query_text(&self, query_id: &str) -> Option<&str> {
        self.queries.get(query_id).map(String::as_str)
    }

    fn passage_text(&self, passage_id: &str) -> Option<&str> {
        self.index.passage(passage_id).map(|p| p.text.as_str())
    }
}

/// Featurizes triples against `meta` and trains on them. Every id must resolve.
pub fn train(
    triples: &[TrainingTriple],
    texts: &impl TextResolver,
    meta: &IndexMeta,
    analyzer: &Analyzer,
    vocab: Option<&BpeVocabulary>,
    config: &TrainConfig,
) -> Result<(CrossScorer, TrainReport)> {
    let mut query_terms: HashMap<&str, Vec<String>> = HashMap::new();
    let mut examples = Vec::with_capacity(triples.len());
    for t in triples {
        let q = match query_terms.get(t.query_id.as_str()) {
            Some(q) => q,
            None => {
                let text = texts
                    .query_text(&t.query_id)
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown query id `{}`", t.query_id)))?;
                query_terms.entry(t.query_id.as_str()).or_insert(analyzer.analyze(text))
            }
        };
        let passage = texts
            .passage_text(&t.passage_id)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown passage id `{}`", t.passage_id)))?;
        examples.push(Example {
            features: featurize(q, passage, meta, analyzer, vocab),
            label: f64::from(t.label),
        });
    }
    train_examples(&examples, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn synthetic(n: usize, seed: u64) -> Vec<Example> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let label = rng.random_bool(0.5);
                let mut x = [0.0; FEATURE_DIM];
                for v in x.iter_mut() {
                    *v = rng.random_range(-1.0..1.0);
                }
                x[0] += if label { 1.5 } else { -1.5 };
                x[6] = 1.0;
                Example {
                    features: FeatureVector(x),
                    label: f64::from(u8::from(label)),
                }
            })
            .collect()
    }

    #[test]
    fn folded_weights_match_standardized_logits() {
        let mut data = synthetic(50, 8);
        for e in data.iter_mut() {
            e.features.0[0] = e.features.0[0] * 20.0 + 7.0;
            e.features.0[5] = 1.0;
        }
        let s = Standardizer::fit(&data);
        assert_eq!(s.scale[5], 1.0);
        let v = [0.4, -1.1, 0.3, 0.9, 0.2, -0.6, 0.15];
        let w = s.fold(v);
        for e in &data {
            let raw: f64 = w.iter().zip(e.features.0).map(|(a, b)| a * b).sum();
            let std: f64 = v.iter().zip(s.apply(e).features.0).map(|(a, b)| a * b).sum();
            assert!((raw - std).abs() < 1e-9, "{raw} vs {std}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data = synthetic(64, 3);
        let w = [0.3, -0.2, 0.1, 0.5, -0.7, 0.05, 0.2];
        let g = gradient(&w, &data);
        let h = 1e-6;
        for i in 0..FEATURE_DIM {
            let (mut up, mut down) = (w, w);
            up[i] += h;
            down[i] -= h;
            let fd = (loss(&up, &data) - loss(&down, &data)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-7, "coord {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn training_is_reproducible_and_learns() {
        let data = synthetic(2000, 5);
        let cfg = TrainConfig::default();
        let (a, ra) = train_examples(&data, &cfg).unwrap();
        let (b, _) = train_examples(&data, &cfg).unwrap();
        assert_eq!(a.weights(), b.weights());
        assert!(a.weights()[0] > 0.5);
        assert!(ra.epoch_loss[0] < std::f64::consts::LN_2);
        let (c, _) = train_examples(&data, &TrainConfig { seed: 99, ..cfg }).unwrap();
        assert_ne!(a.weights(), c.weights());
    }

    #[test]
    fn zero_weights_give_ln2_loss() {
        let data = synthetic(10, 1);
        assert!((loss(&[0.0; FEATURE_DIM], &data) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_config_and_empty_data() {
        let data = synthetic(4, 1);
        assert!(train_examples(&[], &TrainConfig::default()).is_err());
        assert!(train_examples(&data, &TrainConfig { epochs: 0, ..Default::default() }).is_err());
        assert!(train_examples(&data, &TrainConfig { learning_rate: -1.0, ..Default::default() }).is_err());
    }

    #[test]
    fn single_class_is_reported() {
        let mut data = synthetic(8, 1);
        data.iter_mut().for_each(|e| e.label = 1.0);
        let (_, r) = train_examples(&data, &TrainConfig::default()).unwrap();
        assert!(r.single_class());
    }

    proptest! {
        #[test]
        fn loss_is_finite_and_nonnegative(z in -1000.0f64..1000.0, y in 0u8..2) {
            let l = bce_from_logit(z, f64::from(y));
            prop_assert!(l.is_finite() && l >= 0.0);
        }
    }
}
