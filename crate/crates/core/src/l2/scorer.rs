use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::l2::features::{FeatureVector, FEATURE_DIM};

const MODEL_MAGIC: &str = "xscorer";
const MODEL_VERSION: u32 = 1;

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Logistic relevance model: `score = sigmoid(w . features)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossScorer {
    weights: [f64; FEATURE_DIM],
}

impl Default for CrossScorer {
    fn default() -> Self {
        Self {
            weights: [0.0; FEATURE_DIM],
        }
    }
}

impl CrossScorer {
    pub fn new(weights: [f64; FEATURE_DIM]) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidArgument("model weights must be finite".into()));
        }
        Ok(Self { weights })
    }

    /// Weight on BM25 only, so reranking keeps first-stage order. Used when
    /// no trained model is configured.
    pub fn bm25_only() -> Self {
        let mut weights = [0.0; FEATURE_DIM];
        weights[0] = 1.0;
        Self { weights }
    }

    pub fn weights(&self) -> &[f64; FEATURE_DIM] {
        &self.weights
    }

    pub fn logit(&self, f: &FeatureVector) -> f64 {
        f.dot(&self.weights)
    }

    pub fn score(&self, f: &FeatureVector) -> f64 {
        sigmoid(self.logit(f))
    }

    /// Short identifier derived from the exact weight bits.
    pub fn version(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for w in &self.weights {
            for b in w.to_bits().to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        format!("{MODEL_MAGIC}-v{MODEL_VERSION}-{h:016x}")
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{MODEL_MAGIC} v{MODEL_VERSION} {FEATURE_DIM}\n");
        for w in &self.weights {
            let _ = writeln!(out, "{w:?}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        const CTX: &str = "model file";
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        let expected = format!("{MODEL_MAGIC} v{MODEL_VERSION} {FEATURE_DIM}");
        if header != expected {
            return Err(Error::parse(CTX, 1, format!("expected header `{expected}`, found `{header}`")));
        }
        let mut weights = [0.0; FEATURE_DIM];
        let mut count = 0;
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            if count == FEATURE_DIM {
                return Err(Error::parse(CTX, i + 2, "too many weights"));
            }
            weights[count] = line
                .trim()
                .parse()
                .map_err(|_| Error::parse(CTX, i + 2, format!("bad weight `{line}`")))?;
            count += 1;
        }
        if count != FEATURE_DIM {
            return Err(Error::parse(CTX, count + 1, format!("expected {FEATURE_DIM} weights, found {count}")));
        }
        Self::new(weights)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(-800.0) < 1e-300);
        assert_eq!(sigmoid(800.0), 1.0);
    }

    #[test]
    fn model_file_round_trip() {
        let m = CrossScorer::new([0.1, -2.5, 3.0, 1e-9, 0.0, -0.333, 7.25]).unwrap();
        let text = m.to_text();
        assert!(text.starts_with("xscorer v1 7\n"));
        assert_eq!(text.lines().count(), 8);
        assert_eq!(CrossScorer::from_text(&text).unwrap(), m);
        assert_eq!(CrossScorer::from_text(&text).unwrap().version(), m.version());
    }

    #[test]
    fn model_file_errors() {
        assert!(CrossScorer::from_text("xscorer v2 7\n1\n").is_err());
        assert!(CrossScorer::from_text("xscorer v1 7\n1\n2\n").is_err());
        assert!(CrossScorer::from_text("xscorer v1 7\n1\n2\n3\n4\n5\n6\nx\n").is_err());
        assert!(CrossScorer::new([f64::NAN; 7]).is_err());
    }

    proptest! {
        #[test]
        fn score_increases_with_bm25_under_positive_weight(
            w in prop::array::uniform7(-3.0f64..3.0),
            x in prop::array::uniform7(-3.0f64..3.0),
            bump in 0.01f64..5.0,
        ) {
            let mut w = w;
            w[0] = w[0].abs() + 0.1;
            let m = CrossScorer::new(w).unwrap();
            let a = FeatureVector(x);
            let mut b = a;
            b.0[0] += bump;
            prop_assert!(m.score(&b) > m.score(&a));
            prop_assert!(m.score(&a) > 0.0 && m.score(&a) < 1.0);
        }
    }
}
