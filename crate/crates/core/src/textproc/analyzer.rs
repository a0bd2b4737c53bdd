use std::collections::HashSet;

use serde::{Deserialize, Serialize};

/// Splits text into lowercase letter/digit runs.
///
/// Lowercasing happens before splitting, so `analyze` is idempotent on its own
/// output joined by spaces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Analyzer {
    pub lowercase: bool,
    pub stopwords: HashSet<String>,
}

impl Default for Analyzer {
    fn default() -> Self {
        Self {
            lowercase: true,
            stopwords: HashSet::new(),
        }
    }
}

impl Analyzer {
    pub fn with_stopwords<I, S>(mut self, words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.stopwords = words
            .into_iter()
            .map(|w| {
                let w = w.into();
                if self.lowercase {
                    w.to_lowercase()
                } else {
                    w
                }
            })
            .collect();
        self
    }

    pub fn analyze(&self, text: &str) -> Vec<String> {
        let folded;
        let text = if self.lowercase {
            folded = text.to_lowercase();
            folded.as_str()
        } else {
            text
        };
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty() && !self.stopwords.contains(*t))
            .map(str::to_owned)
            .collect()
    }

    /// Number of analyzed terms, without allocating them.
    pub fn count_terms(&self, text: &str) -> usize {
        if self.stopwords.is_empty() {
            text.split(|c: char| !c.is_alphanumeric())
                .filter(|t| !t.is_empty())
                .count()
        } else {
            self.analyze(text).len()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn splits_on_non_alphanumeric() {
        let a = Analyzer::default();
        assert_eq!(a.analyze("COVID-19 spike protein"), ["covid", "19", "spike", "protein"]);
        assert!(a.analyze("").is_empty());
        assert_eq!(a.analyze("αβ T-cells"), ["αβ", "t", "cells"]);
    }

    #[test]
    fn removes_stopwords_case_insensitively() {
        let a = Analyzer::default().with_stopwords(["The", "of"]);
        assert_eq!(a.analyze("The cause of THE disease"), ["cause", "disease"]);
        assert_eq!(a.count_terms("The cause of THE disease"), 2);
    }

    #[test]
    fn keeps_case_when_disabled() {
        let a = Analyzer {
            lowercase: false,
            ..Analyzer::default()
        };
        assert_eq!(a.analyze("ACE2 receptor"), ["ACE2", "receptor"]);
    }

    proptest! {
        #[test]
        fn idempotent_on_joined_output(text in "\\PC{0,64}") {
            let a = Analyzer::default();
            let once = a.analyze(&text);
            let twice = a.analyze(&once.join(" "));
            prop_assert_eq!(&once, &twice);
            prop_assert!(once.iter().all(|t| !t.is_empty() && !t.chars().any(char::is_whitespace)));
            prop_assert_eq!(a.count_terms(&text), once.len());
        }
    }
}
