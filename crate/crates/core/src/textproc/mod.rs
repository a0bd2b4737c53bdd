//! Text analysis: the word analyzer feeding BM25, sentence segmentation, and
//! a byte-pair-encoding subword vocabulary.

mod analyzer;
mod bpe;
mod sentence;

pub use analyzer::Analyzer;
pub use bpe::{base_vocab_size, BpeVocabulary, END_OF_WORD, SPECIAL_TOKENS, UNK_EOW_TOKEN, UNK_TOKEN};
pub use sentence::{normalize_whitespace, sentence_spans};
