//! Byte-pair-encoding subword vocabulary.
//!
//! Words come from the default [`Analyzer`] and are split into characters; the
//! last character of each word carries the [`END_OF_WORD`] suffix (`"w"` and
//! `"w</w>"` are distinct base symbols). Training greedily merges the most
//! frequent adjacent pair, breaking count ties by the lexicographically
//! smallest `(left, right)` pair, until the target size is reached or no pair
//! occurs at least twice.

use std::cmp::Reverse;
use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::textproc::Analyzer;

pub const END_OF_WORD: &str = "</w>";
pub const UNK_TOKEN: &str = "<unk>";
pub const UNK_EOW_TOKEN: &str = "<unk></w>";
pub const SEP_TOKEN: &str = "<sep>";
/// Reserved tokens; they occupy ids `0..SPECIAL_TOKENS.len()`.
pub const SPECIAL_TOKENS: [&str; 3] = [UNK_TOKEN, UNK_EOW_TOKEN, SEP_TOKEN];

const FILE_MAGIC: &str = "bpe";
const FILE_VERSION: u32 = 1;
const REPLACEMENT: char = '\u{FFFD}';

#[derive(Debug, Clone)]
pub struct BpeVocabulary {
    alphabet: Vec<char>,
    merges: Vec<(String, String)>,
    merge_rank: HashMap<(String, String), usize>,
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
    analyzer: Analyzer,
}

impl PartialEq for BpeVocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.alphabet == other.alphabet && self.merges == other.merges
    }
}

/// Size of a vocabulary with no merges over `alphabet_len` distinct characters.
pub fn base_vocab_size(alphabet_len: usize) -> usize {
    SPECIAL_TOKENS.len() + 2 * alphabet_len
}

impl BpeVocabulary {
    /// Trains a vocabulary of at most `vocab_size` tokens (specials and base
    /// symbols included).
    pub fn train<I, S>(corpus: I, vocab_size: usize) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let analyzer = Analyzer::default();
        let mut word_counts: HashMap<String, u64> = HashMap::new();
        for text in corpus {
            for word in analyzer.analyze(text.as_ref()) {
                *word_counts.entry(word).or_default() += 1;
            }
        }
        if word_counts.is_empty() {
            return Err(Error::Empty("bpe training corpus"));
        }
        let alphabet: Vec<char> = word_counts
            .keys()
            .flat_map(|w| w.chars())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let base = base_vocab_size(alphabet.len());
        if vocab_size <= base {
            return Err(Error::InvalidArgument(format!(
                "vocab_size {vocab_size} must exceed the {base} base symbols"
            )));
        }
        let merges = learn_merges(&word_counts, vocab_size - base);
        Ok(Self::from_parts(alphabet, merges))
    }

    fn from_parts(alphabet: Vec<char>, merges: Vec<(String, String)>) -> Self {
        let mut id_to_token: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        for c in &alphabet {
            id_to_token.push(c.to_string());
            id_to_token.push(format!("{c}{END_OF_WORD}"));
        }
        for (l, r) in &merges {
            id_to_token.push(format!("{l}{r}"));
        }
        let mut token_to_id = HashMap::with_capacity(id_to_token.len());
        for (id, tok) in id_to_token.iter().enumerate() {
            token_to_id.entry(tok.clone()).or_insert(id as u32);
        }
        let merge_rank = merges
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), i))
            .rev()
            .collect();
        Self {
            alphabet,
            merges,
            merge_rank,
            token_to_id,
            id_to_token,
            analyzer: Analyzer::default(),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn alphabet(&self) -> &[char] {
        &self.alphabet
    }

    pub fn token_id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    /// Subword symbols of a single analyzed word, merges applied in training order.
    pub fn segment_word(&self, word: &str) -> Vec<String> {
        let n = word.chars().count();
        let mut symbols: Vec<String> = word
            .chars()
            .enumerate()
            .map(|(i, c)| {
                let last = i + 1 == n;
                let known = self.alphabet.binary_search(&c).is_ok();
                match (known, last) {
                    (true, false) => c.to_string(),
                    (true, true) => format!("{c}{END_OF_WORD}"),
                    (false, false) => UNK_TOKEN.to_string(),
                    (false, true) => UNK_EOW_TOKEN.to_string(),
                }
            })
            .collect();

        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.merge_rank.get(&(w[0].clone(), w[1].clone())))
                .min()
                .copied();
            let Some(rank) = best else { break };
            let (l, r) = &self.merges[rank];
            symbols = merge_pair(&symbols, l, r);
        }
        symbols
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        self.analyzer
            .analyze(text)
            .iter()
            .flat_map(|w| self.segment_word(w))
            .map(|sym| self.token_to_id[&sym])
            .collect()
    }

    /// Mean number of subwords per analyzed word; 0 for text with no words.
    pub fn fertility<S: AsRef<str>>(&self, words: &[S]) -> f64 {
        if words.is_empty() {
            return 0.0;
        }
        let total: usize = words.iter().map(|w| self.segment_word(w.as_ref()).len()).sum();
        total as f64 / words.len() as f64
    }

    /// Inverse of [`encode`](Self::encode) up to analyzer normalization;
    /// unknown characters come back as U+FFFD.
    pub fn decode(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        for &id in ids {
            let Some(tok) = self.token(id) else {
                out.push(REPLACEMENT);
                continue;
            };
            let (body, eow) = match tok.strip_suffix(END_OF_WORD) {
                Some(b) => (b, true),
                None => (tok, false),
            };
            if tok == SEP_TOKEN {
                continue;
            }
            if body == UNK_TOKEN {
                out.push(REPLACEMENT);
            } else {
                out.push_str(body);
            }
            if eow {
                out.push(' ');
            }
        }
        if out.ends_with(' ') {
            out.pop();
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{FILE_MAGIC} v{FILE_VERSION} {}\n#alphabet", self.vocab_size());
        for c in &self.alphabet {
            let _ = write!(out, " {c}");
        }
        out.push('\n');
        for (l, r) in &self.merges {
            let _ = writeln!(out, "{l} {r}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        const CTX: &str = "bpe vocabulary";
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Empty("bpe vocabulary file"))?;
        let fields: Vec<&str> = header.split(' ').collect();
        let [magic, version, size] = fields[..] else {
            return Err(Error::parse(CTX, 1, "expected `bpe v1 <vocab_size>`"));
        };
        if magic != FILE_MAGIC {
            return Err(Error::parse(CTX, 1, "bad magic"));
        }
        let version: u32 = version
            .strip_prefix('v')
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::parse(CTX, 1, "bad version tag"))?;
        if version != FILE_VERSION {
            return Err(Error::Version {
                path: CTX.into(),
                found: version,
                supported: FILE_VERSION,
            });
        }
        let size: usize = size
            .parse()
            .map_err(|_| Error::parse(CTX, 1, "bad vocab size"))?;

        let mut alphabet = Vec::new();
        let mut merges = Vec::new();
        for (i, line) in lines {
            if let Some(rest) = line.strip_prefix("#alphabet") {
                for sym in rest.split_whitespace() {
                    let mut cs = sym.chars();
                    match (cs.next(), cs.next()) {
                        (Some(c), None) => alphabet.push(c),
                        _ => return Err(Error::parse(CTX, i + 1, "alphabet entries must be single characters")),
                    }
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let (l, r) = line
                .split_once(' ')
                .filter(|(l, r)| !l.is_empty() && !r.is_empty() && !r.contains(' '))
                .ok_or_else(|| Error::parse(CTX, i + 1, "expected `left right`"))?;
            merges.push((l.to_string(), r.to_string()));
        }
        alphabet.sort_unstable();
        alphabet.dedup();
        let vocab = Self::from_parts(alphabet, merges);
        if vocab.vocab_size() != size {
            return Err(Error::parse(
                CTX,
                1,
                format!("header declares {size} tokens, file defines {}", vocab.vocab_size()),
            ));
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

fn merge_pair(symbols: &[String], left: &str, right: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == left && symbols[i + 1] == right {
            out.push(format!("{left}{right}"));
            i += 2;
        } else {
            out.push(symbols[i].clone());
            i += 1;
        }
    }
    out
}

type Pair = (u32, u32);

/// Pair counts with a priority queue ordered by (count desc, left, right).
/// Only words containing the merged pair are re-counted after each merge.
#[derive(Default)]
struct PairTable {
    counts: HashMap<Pair, i64>,
    occurrences: HashMap<Pair, HashSet<usize>>,
    queue: BTreeSet<(Reverse<i64>, String, String, Pair)>,
}

impl PairTable {
    fn adjust(&mut self, pair: Pair, delta: i64, word: usize, symbols: &[String]) {
        let count = self.counts.entry(pair).or_insert(0);
        let (l, r) = (&symbols[pair.0 as usize], &symbols[pair.1 as usize]);
        if *count > 0 {
            self.queue.remove(&(Reverse(*count), l.clone(), r.clone(), pair));
        }
        *count += delta;
        if *count > 0 {
            self.queue.insert((Reverse(*count), l.clone(), r.clone(), pair));
        }
        if delta > 0 {
            self.occurrences.entry(pair).or_default().insert(word);
        }
    }
}

fn learn_merges(word_counts: &HashMap<String, u64>, max_merges: usize) -> Vec<(String, String)> {
    let mut symbols: Vec<String> = Vec::new();
    let mut symbol_ids: HashMap<String, u32> = HashMap::new();
    let mut intern = |s: String, symbols: &mut Vec<String>| -> u32 {
        *symbol_ids.entry(s.clone()).or_insert_with(|| {
            symbols.push(s);
            (symbols.len() - 1) as u32
        })
    };

    let mut words: Vec<(Vec<u32>, i64)> = Vec::with_capacity(word_counts.len());
    for (word, &freq) in word_counts {
        let n = word.chars().count();
        let syms = word
            .chars()
            .enumerate()
            .map(|(i, c)| {
                let s = if i + 1 == n {
                    format!("{c}{END_OF_WORD}")
                } else {
                    c.to_string()
                };
                intern(s, &mut symbols)
            })
            .collect();
        words.push((syms, freq as i64));
    }

    let mut table = PairTable::default();
    for (wi, (syms, freq)) in words.iter().enumerate() {
        for w in syms.windows(2) {
            table.adjust((w[0], w[1]), *freq, wi, &symbols);
        }
    }

    let mut merges = Vec::new();
    while merges.len() < max_merges {
        let Some((Reverse(count), l, r, pair)) = table.queue.first().cloned() else {
            break;
        };
        if count < 2 {
            break;
        }
        let new_id = intern(format!("{l}{r}"), &mut symbols);
        merges.push((l, r));

        let mut affected: Vec<usize> = table
            .occurrences
            .remove(&pair)
            .map(|s| s.into_iter().collect())
            .unwrap_or_default();
        affected.sort_unstable();
        for wi in affected {
            let freq = words[wi].1;
            let old = std::mem::take(&mut words[wi].0);
            if !old.windows(2).any(|w| (w[0], w[1]) == pair) {
                words[wi].0 = old;
                continue;
            }
            for w in old.windows(2) {
                table.adjust((w[0], w[1]), -freq, wi, &symbols);
            }
            let mut merged = Vec::with_capacity(old.len());
            let mut i = 0;
            while i < old.len() {
                if i + 1 < old.len() && (old[i], old[i + 1]) == pair {
                    merged.push(new_id);
                    i += 2;
                } else {
                    merged.push(old[i]);
                    i += 1;
                }
            }
            for w in merged.windows(2) {
                table.adjust((w[0], w[1]), freq, wi, &symbols);
            }
            words[wi].0 = merged;
        }
    }
    merges
}
