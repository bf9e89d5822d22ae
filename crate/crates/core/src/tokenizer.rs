//! WordPiece vocabulary training and greedy longest-match-first encoding.
//!
//! Words are whitespace-delimited. A word is segmented into an initial piece
//! followed by continuation pieces carrying the `##` prefix.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;
pub const MASK: u32 = 4;

pub const SPECIAL_TOKENS: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];
pub const CONTINUATION: &str = "##";
pub const MAX_WORD_CHARS: usize = 100;

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("cannot train a vocabulary on an empty corpus")]
    EmptyCorpus,
    #[error("target vocabulary size {0} leaves no room beyond the special tokens")]
    VocabTooSmall(usize),
    #[error("token id {0} is outside the vocabulary")]
    InvalidTokenId(u32),
    #[error("invalid vocabulary file: {0}")]
    InvalidVocabFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Token strings indexed by id. Specials occupy ids 0..5.
#[derive(Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    id_of: HashMap<String, u32>,
}

impl fmt::Debug for Vocab {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Vocab").field("len", &self.tokens.len()).finish()
    }
}

impl Vocab {
    /// Builds a vocabulary from the non-special tokens; specials are prepended.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self, TokenizerError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        all.extend(tokens.into_iter().map(Into::into));
        Self::from_full_list(all)
    }

    fn from_full_list(tokens: Vec<String>) -> Result<Self, TokenizerError> {
        if tokens.len() < SPECIAL_TOKENS.len() || tokens[..SPECIAL_TOKENS.len()] != SPECIAL_TOKENS {
            return Err(TokenizerError::InvalidVocabFile(
                "special tokens must occupy ids 0-4".into(),
            ));
        }
        let mut id_of = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(TokenizerError::InvalidVocabFile(format!("bad token {t:?} at id {i}")));
            }
            if id_of.insert(t.clone(), i as u32).is_some() {
                return Err(TokenizerError::InvalidVocabFile(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, id_of })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.id_of.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_special(id: u32) -> bool {
        (id as usize) < SPECIAL_TOKENS.len()
    }

    pub fn is_continuation(&self, id: u32) -> bool {
        self.token(id).is_some_and(|t| t.starts_with(CONTINUATION))
    }

    /// Serialized form: one token per line, line number = id.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, TokenizerError> {
        Self::from_full_list(text.lines().map(str::to_string).collect())
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizerError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TokenizerError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// SHA-256 of the serialized vocabulary.
    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(self.to_text().as_bytes()).into()
    }
}

/// An encoded sequence: `[CLS] pieces... [SEP]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    /// Number of content positions (excludes CLS/SEP/PAD).
    pub s_len: usize,
    /// Leading bytes of the hash of the vocabulary that produced the ids.
    pub vocab_fingerprint: u64,
}

impl TokenSequence {
    /// Builds a sequence from content ids, adding CLS/SEP.
    pub fn from_content(content: &[u32], vocab: &Vocab) -> Self {
        let mut ids = Vec::with_capacity(content.len() + 2);
        ids.push(CLS);
        ids.extend_from_slice(content);
        ids.push(SEP);
        Self {
            ids,
            s_len: content.len(),
            vocab_fingerprint: fingerprint(vocab),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Indices of content positions.
    pub fn content_positions(&self) -> std::ops::Range<usize> {
        1..1 + self.s_len
    }
}

pub fn fingerprint(vocab: &Vocab) -> u64 {
    let h = vocab.hash();
    u64::from_le_bytes(h[..8].try_into().expect("8 bytes"))
}

/// Result of [`encode`], with truncation information.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoding {
    pub sequence: TokenSequence,
    pub truncated: bool,
}

fn segment_word(word: &str, vocab: &Vocab, out: &mut Vec<u32>) {
    if word.chars().count() > MAX_WORD_CHARS {
        out.push(UNK);
        return;
    }
    let mark = out.len();
    let mut start = 0;
    let mut candidate = String::with_capacity(word.len() + 2);
    while start < word.len() {
        let mut end = word.len();
        let mut found = None;
        while end > start {
            candidate.clear();
            if start > 0 {
                candidate.push_str(CONTINUATION);
            }
            candidate.push_str(&word[start..end]);
            if let Some(id) = vocab.id(&candidate) {
                found = Some(id);
                break;
            }
            // step back one char
            end = word[..end].char_indices().next_back().map_or(start, |(i, _)| i);
        }
        match found {
            Some(id) => {
                out.push(id);
                start = end;
            }
            None => {
                out.truncate(mark);
                out.push(UNK);
                return;
            }
        }
    }
}

/// Greedy longest-match-first segmentation of every whitespace word.
/// Truncation keeps the first `max_seq_len - 2` content tokens.
pub fn encode(text: &str, vocab: &Vocab, max_seq_len: usize) -> Encoding {
    assert!(max_seq_len >= 3, "max_seq_len must leave room for content");
    let mut content = Vec::new();
    for word in text.split_whitespace() {
        segment_word(word, vocab, &mut content);
    }
    let limit = max_seq_len - 2;
    let truncated = content.len() > limit;
    content.truncate(limit);
    Encoding {
        sequence: TokenSequence::from_content(&content, vocab),
        truncated,
    }
}

/// Groups content positions into whitespace words: each entry is the range of
/// sequence positions holding one word's pieces.
pub fn word_spans(seq: &TokenSequence, vocab: &Vocab) -> Vec<std::ops::Range<usize>> {
    let mut spans: Vec<std::ops::Range<usize>> = Vec::new();
    for pos in seq.content_positions() {
        let id = seq.ids[pos];
        match spans.last_mut() {
            Some(last) if vocab.is_continuation(id) => last.end = pos + 1,
            _ => spans.push(pos..pos + 1),
        }
    }
    spans
}

/// Joins pieces back into text; `##` pieces attach to the previous piece.
pub fn decode(seq: &TokenSequence, vocab: &Vocab) -> Result<String, TokenizerError> {
    let mut out = String::new();
    for &id in &seq.ids {
        let tok = vocab.token(id).ok_or(TokenizerError::InvalidTokenId(id))?;
        if matches!(id, PAD | CLS | SEP) {
            continue;
        }
        match tok.strip_prefix(CONTINUATION) {
            Some(rest) if !Vocab::is_special(id) && !out.is_empty() => out.push_str(rest),
            _ => {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(tok);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WordPieceConfig {
    pub vocab_size: usize,
    pub min_frequency: u64,
}

impl Default for WordPieceConfig {
    fn default() -> Self {
        Self {
            vocab_size: 1024,
            min_frequency: 2,
        }
    }
}

/// Pair score `freq(ab) / (freq(a) * freq(b))`, compared exactly.
#[derive(Clone, Copy, PartialEq, Eq)]
struct PairScore {
    pair: u64,
    left: u64,
    right: u64,
}

impl PairScore {
    fn cmp_score(&self, other: &Self) -> Ordering {
        let lhs = self.pair as u128 * other.left as u128 * other.right as u128;
        let rhs = other.pair as u128 * self.left as u128 * self.right as u128;
        lhs.cmp(&rhs)
    }
}

fn initial_symbols(word: &str) -> Vec<String> {
    word.chars()
        .enumerate()
        .map(|(i, c)| if i == 0 { c.to_string() } else { format!("{CONTINUATION}{c}") })
        .collect()
}

fn merged(a: &str, b: &str) -> String {
    let mut s = a.to_string();
    s.push_str(b.strip_prefix(CONTINUATION).unwrap_or(b));
    s
}

/// Trains a WordPiece vocabulary.
///
/// The alphabet (word-initial characters and `##`-continuation characters)
/// is admitted first in descending frequency order. Then the pair with the
/// highest likelihood score `freq(ab) / (freq(a) freq(b))` among pairs seen
/// at least `min_frequency` times is merged repeatedly, ties broken by the
/// lexicographically smallest pair, until the vocabulary is full or no
/// eligible pair remains.
pub fn train_wordpiece<I, S>(corpus: I, config: WordPieceConfig) -> Result<Vocab, TokenizerError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    if config.vocab_size <= SPECIAL_TOKENS.len() {
        return Err(TokenizerError::VocabTooSmall(config.vocab_size));
    }
    let mut word_counts: BTreeMap<String, u64> = BTreeMap::new();
    for line in corpus {
        for w in line.as_ref().split_whitespace() {
            if w.chars().count() <= MAX_WORD_CHARS {
                *word_counts.entry(w.to_string()).or_insert(0) += 1;
            }
        }
    }
    if word_counts.is_empty() {
        return Err(TokenizerError::EmptyCorpus);
    }

    let mut words: Vec<(Vec<String>, u64)> = word_counts
        .iter()
        .map(|(w, &c)| (initial_symbols(w), c))
        .collect();

    let budget = config.vocab_size - SPECIAL_TOKENS.len();
    let mut alphabet: BTreeMap<String, u64> = BTreeMap::new();
    for (symbols, c) in &words {
        for s in symbols {
            *alphabet.entry(s.clone()).or_insert(0) += c;
        }
    }
    let mut alphabet: Vec<(String, u64)> = alphabet.into_iter().collect();
    alphabet.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    alphabet.truncate(budget);

    let mut vocab_tokens: Vec<String> = alphabet.iter().map(|(s, _)| s.clone()).collect();
    let mut known: std::collections::HashSet<String> = vocab_tokens.iter().cloned().collect();

    // symbols outside the admitted alphabet can never be merged into vocabulary
    // tokens that the encoder could reach, so words containing them are frozen
    words.retain(|(symbols, _)| symbols.iter().all(|s| known.contains(s)));

    while vocab_tokens.len() < budget {
        let mut symbol_freq: HashMap<&str, u64> = HashMap::new();
        let mut pair_freq: BTreeMap<(&str, &str), u64> = BTreeMap::new();
        for (symbols, c) in &words {
            for s in symbols {
                *symbol_freq.entry(s.as_str()).or_insert(0) += c;
            }
            for w in symbols.windows(2) {
                *pair_freq.entry((w[0].as_str(), w[1].as_str())).or_insert(0) += c;
            }
        }
        let mut best: Option<((&str, &str), PairScore)> = None;
        // BTreeMap iteration is lexicographic, so keeping the first maximum
        // breaks ties toward the smallest pair
        for (&pair, &freq) in &pair_freq {
            if freq < config.min_frequency {
                continue;
            }
            let score = PairScore {
                pair: freq,
                left: symbol_freq[pair.0],
                right: symbol_freq[pair.1],
            };
            let better = match &best {
                None => true,
                Some((_, s)) => score.cmp_score(s) == Ordering::Greater,
            };
            if better {
                best = Some((pair, score));
            }
        }
        let Some(((a, b), _)) = best else { break };
        let (a, b) = (a.to_string(), b.to_string());
        let new_symbol = merged(&a, &b);
        for (symbols, _) in words.iter_mut() {
            let mut i = 0;
            while i + 1 < symbols.len() {
                if symbols[i] == a && symbols[i + 1] == b {
                    symbols[i] = new_symbol.clone();
                    symbols.remove(i + 1);
                }
                i += 1;
            }
        }
        if known.insert(new_symbol.clone()) {
            vocab_tokens.push(new_symbol);
        }
    }

    Vocab::from_tokens(vocab_tokens)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(tokens: &[&str]) -> Vocab {
        Vocab::from_tokens(tokens.iter().copied()).unwrap()
    }

    #[test]
    fn repeated_template_learns_whole_words() {
        let corpus = vec!["receiving block BLK"; 100];
        let v = train_wordpiece(corpus, WordPieceConfig { vocab_size: 50, min_frequency: 2 }).unwrap();
        for w in ["receiving", "block", "BLK"] {
            assert!(v.id(w).is_some(), "{w} missing");
        }
        assert!(v.len() <= 50);
        let enc = encode("receiving block BLK", &v, 16).sequence;
        assert_eq!(enc.s_len, 3);
    }

    #[test]
    fn single_character_corpus() {
        let v = train_wordpiece(vec!["a"; 10], WordPieceConfig::default()).unwrap();
        let expected: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).chain(["a".to_string()]).collect();
        assert_eq!(v.tokens(), expected.as_slice());
    }

    #[test]
    fn tiny_budget_keeps_most_frequent_character() {
        // frequencies: c=5, a=3, b=1
        let corpus = ["a a a", "b", "c c c c c"];
        let v = train_wordpiece(corpus, WordPieceConfig { vocab_size: 6, min_frequency: 1 }).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v.token(5), Some("c"));
    }

    #[test]
    fn empty_corpus_and_tiny_size() {
        assert!(matches!(
            train_wordpiece(Vec::<&str>::new(), WordPieceConfig::default()),
            Err(TokenizerError::EmptyCorpus)
        ));
        assert!(matches!(
            train_wordpiece(["   "], WordPieceConfig::default()),
            Err(TokenizerError::EmptyCorpus)
        ));
        assert!(matches!(
            train_wordpiece(["a"], WordPieceConfig { vocab_size: 5, min_frequency: 1 }),
            Err(TokenizerError::VocabTooSmall(5))
        ));
    }

    #[test]
    fn encode_examples() {
        let v = vocab(&["block", "##x"]);
        let block = v.id("block").unwrap();
        let x = v.id("##x").unwrap();
        let e = encode("block", &v, 8).sequence;
        assert_eq!(e.ids, vec![CLS, block, SEP]);
        assert_eq!(e.s_len, 1);
        let e = encode("blockx", &v, 8).sequence;
        assert_eq!(e.ids, vec![CLS, block, x, SEP]);
        let e = encode("zebra", &v, 8).sequence;
        assert_eq!(e.ids, vec![CLS, UNK, SEP]);
        // partial match that fails later falls back to a single UNK
        let e = encode("blocky", &v, 8).sequence;
        assert_eq!(e.ids, vec![CLS, UNK, SEP]);
    }

    #[test]
    fn truncation_keeps_prefix() {
        let v = vocab(&["a", "b"]);
        let enc = encode("a b a b a", &v, 4);
        assert!(enc.truncated);
        assert_eq!(enc.sequence.ids, vec![CLS, v.id("a").unwrap(), v.id("b").unwrap(), SEP]);
        assert_eq!(enc.sequence.s_len, 2);
    }

    #[test]
    fn overlong_word_is_unk() {
        let v = vocab(&["a", "##a"]);
        let long = "a".repeat(MAX_WORD_CHARS + 1);
        assert_eq!(encode(&long, &v, 8).sequence.ids, vec![CLS, UNK, SEP]);
        let ok = "a".repeat(MAX_WORD_CHARS);
        assert_eq!(encode(&ok, &v, 200).sequence.s_len, MAX_WORD_CHARS);
    }

    #[test]
    fn decode_examples() {
        let v = vocab(&["block", "##x"]);
        let seq = |content: &[u32]| TokenSequence::from_content(content, &v);
        assert_eq!(decode(&seq(&[v.id("block").unwrap()]), &v).unwrap(), "block");
        assert_eq!(
            decode(&seq(&[v.id("block").unwrap(), v.id("##x").unwrap()]), &v).unwrap(),
            "blockx"
        );
        assert_eq!(decode(&seq(&[UNK]), &v).unwrap(), "[UNK]");
        assert!(matches!(decode(&seq(&[99]), &v), Err(TokenizerError::InvalidTokenId(99))));
    }

    #[test]
    fn vocab_file_round_trip_and_validation() {
        let v = train_wordpiece(["alpha beta", "alpha gamma"], WordPieceConfig { vocab_size: 40, min_frequency: 1 }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        v.save(&path).unwrap();
        let back = Vocab::load(&path).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.hash(), v.hash());
        assert!(Vocab::from_text("[PAD]\n[UNK]\n").is_err());
        assert!(Vocab::from_text("[PAD]\n[UNK]\n[CLS]\n[SEP]\n[MASK]\na\na\n").is_err());
    }

    #[test]
    fn continuation_invariant_and_word_spans() {
        let v = train_wordpiece(["receiving blocks", "received block"], WordPieceConfig { vocab_size: 20, min_frequency: 1 }).unwrap();
        // every non-special token is either word-initial or a ## piece; no duplicates
        let mut seen = std::collections::HashSet::new();
        for t in &v.tokens()[5..] {
            assert!(seen.insert(t.clone()));
        }
        let seq = encode("receiving block", &v, 64).sequence;
        let spans = word_spans(&seq, &v);
        assert_eq!(spans.len(), 2);
        assert_eq!(spans[0].start, 1);
        assert_eq!(spans.last().unwrap().end, seq.s_len + 1);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn encoding_is_total(text in "[a-z#\\[\\] ]{0,40}") {
                let v = vocab(&["ab", "##c", "a"]);
                let seq = encode(&text, &v, 64).sequence;
                prop_assert_eq!(seq.ids[0], CLS);
                prop_assert_eq!(*seq.ids.last().unwrap(), SEP);
                prop_assert!(seq.s_len >= text.split_whitespace().count().min(62));
                prop_assert!(decode(&seq, &v).is_ok());
            }
        }
    }
}
