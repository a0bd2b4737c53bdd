//! Okapi BM25 with the non-negative idf `ln(1 + (N - df + 0.5) / (df + 0.5))`.

use std::collections::HashSet;

pub const DEFAULT_K1: f64 = 1.2;
pub const DEFAULT_B: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self {
            k1: DEFAULT_K1,
            b: DEFAULT_B,
        }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.k1.is_finite() && self.k1 >= 0.0) {
            return Err(format!("k1 must be finite and >= 0, got {}", self.k1));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(format!("b must be in [0, 1], got {}", self.b));
        }
        Ok(())
    }
}

pub fn idf(num_passages: u64, df: u32) -> f64 {
    let n = num_passages as f64;
    let df = df as f64;
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

/// Contribution of one query term with frequency `tf` in a passage of length `dl`.
#[inline]
pub fn term_score(params: Bm25Params, idf: f64, tf: u32, dl: u32, avgdl: f64) -> f64 {
    if tf == 0 {
        return 0.0;
    }
    let tf = tf as f64;
    let norm = if avgdl > 0.0 {
        1.0 - params.b + params.b * dl as f64 / avgdl
    } else {
        1.0
    };
    idf * tf * (params.k1 + 1.0) / (tf + params.k1 * norm)
}

/// Distinct query terms in first-occurrence order. Scores are always summed in
/// this order so every code path produces bit-identical values.
pub fn unique_terms<S: AsRef<str>>(terms: &[S]) -> Vec<&str> {
    let mut seen = HashSet::with_capacity(terms.len());
    terms
        .iter()
        .map(AsRef::as_ref)
        .filter(|t| seen.insert(*t))
        .collect()
}
