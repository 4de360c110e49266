use std::collections::{BTreeMap, HashMap};

use crate::error::{Result, TextError};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;
pub const SPECIALS: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];
pub const DEFAULT_MAX_LEN: usize = 512;

/// Word-level vocabulary. Ids 0..4 are the special tokens; corpus tokens
/// follow. Special tokens live outside the lookup map, so no corpus word can
/// resolve to them.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub attention_mask: Vec<u8>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of real (unmasked) positions.
    pub fn real_len(&self) -> usize {
        self.attention_mask.iter().filter(|&&m| m == 1).count()
    }
}

pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(str::to_lowercase)
}

impl Vocabulary {
    /// Tokens with count >= `min_count`, ordered by descending count and then
    /// lexicographically.
    pub fn build<S: AsRef<str>>(corpus: &[S], min_count: usize) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for doc in corpus {
            for tok in tokenize(doc.as_ref()) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut kept: Vec<(String, usize)> =
            counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::from_corpus_tokens(kept.into_iter().map(|(t, _)| t))
    }

    fn from_corpus_tokens(words: impl Iterator<Item = String>) -> Self {
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut index = HashMap::new();
        for w in words {
            index.insert(w.clone(), tokens.len());
            tokens.push(w);
        }
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn is_special(id: usize) -> bool {
        id < SPECIALS.len()
    }

    /// `[CLS] body [SEP]`, body truncated to `max_len - 2`, padded to
    /// `max_len`.
    pub fn encode(&self, text: &str, max_len: usize) -> Result<TokenSequence> {
        if max_len < 3 {
            return Err(TextError::Config(format!("max_len {max_len} must be at least 3")));
        }
        let mut ids = Vec::with_capacity(max_len);
        ids.push(CLS);
        ids.extend(tokenize(text).take(max_len - 2).map(|t| self.id(&t)));
        ids.push(SEP);
        let real = ids.len();
        ids.resize(max_len, PAD);
        let mut attention_mask = vec![1u8; real];
        attention_mask.resize(max_len, 0);
        Ok(TokenSequence { ids, attention_mask })
    }

    pub fn decode(&self, seq: &TokenSequence) -> Vec<&str> {
        seq.ids
            .iter()
            .zip(&seq.attention_mask)
            .filter(|(_, &m)| m == 1)
            .map(|(&id, _)| self.token(id).unwrap_or(SPECIALS[UNK]))
            .collect()
    }

    /// One corpus token per line, in id order; specials are implicit.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens[SPECIALS.len()..] {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() || line.contains(char::is_whitespace) || !seen.insert(line) {
                return Err(TextError::Parse {
                    line: i + 1,
                    detail: format!("invalid or duplicate vocabulary token {line:?}"),
                });
            }
        }
        Ok(Self::from_corpus_tokens(text.lines().map(String::from)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specials_plus_corpus() {
        let v = Vocabulary::build(&["a a b"], 1);
        assert_eq!(v.len(), 6);
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("b"), 5);
    }

    #[test]
    fn min_count_sends_rare_to_unk() {
        let v = Vocabulary::build(&["a a b"], 2);
        assert_eq!(v.id("b"), UNK);
        let s = v.encode("a b", 6).unwrap();
        assert_eq!(s.ids, vec![CLS, 4, UNK, SEP, PAD, PAD]);
    }

    #[test]
    fn document_order_irrelevant() {
        let a = Vocabulary::build(&["x y y", "z z z q"], 1);
        let b = Vocabulary::build(&["z z z q", "x y y"], 1);
        assert_eq!(a, b);
    }

    #[test]
    fn empty_text_encoding() {
        let v = Vocabulary::build(&["a"], 1);
        let s = v.encode("", 8).unwrap();
        assert_eq!(s.ids, vec![CLS, SEP, PAD, PAD, PAD, PAD, PAD, PAD]);
        assert_eq!(s.attention_mask, vec![1, 1, 0, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn long_text_truncated() {
        let text = vec!["w"; 600].join(" ");
        let v = Vocabulary::build(&[text.as_str()], 1);
        let s = v.encode(&text, 512).unwrap();
        assert_eq!(s.len(), 512);
        assert_eq!(s.real_len(), 512);
        assert_eq!(s.ids[0], CLS);
        assert_eq!(s.ids[511], SEP);
        assert_eq!(s.ids[1..511].iter().filter(|&&i| i == v.id("w")).count(), 510);
    }

    #[test]
    fn repeated_words_share_id() {
        let v = Vocabulary::build(&["hello"], 1);
        let s = v.encode("Hello hello", 8).unwrap();
        assert_eq!(s.ids[1], s.ids[2]);
    }

    #[test]
    fn bracketed_corpus_word_is_not_special() {
        let v = Vocabulary::build(&["[PAD] [pad]"], 1);
        assert!(v.id("[pad]") >= 4);
    }

    #[test]
    fn text_round_trip() {
        let v = Vocabulary::build(&["the cat the dog"], 1);
        assert_eq!(Vocabulary::from_text(&v.to_text()).unwrap(), v);
        assert!(Vocabulary::from_text("a\na\n").is_err());
    }

    #[test]
    fn max_len_below_three_rejected() {
        assert!(Vocabulary::build(&["a"], 1).encode("a", 2).is_err());
    }
}
