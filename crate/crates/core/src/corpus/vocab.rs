use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const NUM_SPECIALS: usize = 4;
pub const SPECIAL_TOKENS: [&str; NUM_SPECIALS] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Shared source/target token inventory. Ids are dense; the four specials
/// occupy ids 0..4, followed by tokens in descending corpus frequency with
/// ties broken lexicographically.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    id_of: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds one vocabulary over both sides of `corpus`, keeping at most
    /// `max_size` entries (specials included).
    pub fn build(corpus: &[(String, String)], max_size: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::input("cannot build a vocabulary from an empty corpus"));
        }
        if max_size < 8 {
            return Err(Error::input(format!("max_size must be at least 8, got {max_size}")));
        }
        let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
        for (src, tgt) in corpus {
            for tok in src.split_whitespace().chain(tgt.split_whitespace()) {
                if SPECIAL_TOKENS.contains(&tok) {
                    continue;
                }
                *freq.entry(tok).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = freq.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(max_size - NUM_SPECIALS);
        let tokens = SPECIAL_TOKENS
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(t, _)| t.to_string()))
            .collect();
        Self::from_tokens(tokens)
    }

    /// Vocabulary from an explicit id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < NUM_SPECIALS || tokens[..NUM_SPECIALS] != SPECIAL_TOKENS {
            return Err(Error::input(format!(
                "vocabulary must start with the special tokens {SPECIAL_TOKENS:?}"
            )));
        }
        let mut id_of = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::input(format!("invalid vocabulary token {t:?} at line {}", i + 1)));
            }
            if id_of.insert(t.clone(), i).is_some() {
                return Err(Error::input(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, id_of })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.id_of.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Whitespace tokenization; unknown tokens map to UNK. No BOS/EOS is added.
    pub fn encode(&self, sentence: &str) -> Vec<usize> {
        sentence
            .split_whitespace()
            .map(|t| self.id(t).unwrap_or(UNK))
            .collect()
    }

    /// Space-joined tokens. Ids outside the vocabulary render as UNK.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(SPECIAL_TOKENS[UNK]))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// SHA-256 of the id-ordered token list, used to match checkpoints to vocabularies.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// One token per line; line number is the id.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }
}

pub fn is_special(id: usize) -> bool {
    id < NUM_SPECIALS
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(items: &[(&str, &str)]) -> Vec<(String, String)> {
        items.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn tiny_corpus() {
        let v = Vocabulary::build(&pairs(&[("a b", "b a")]), 16).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(&v.tokens()[4..], ["a", "b"]);
    }

    #[test]
    fn equal_frequencies_order_lexicographically() {
        let v = Vocabulary::build(&pairs(&[("zeta alpha", "mid")]), 16).unwrap();
        assert_eq!(&v.tokens()[4..], ["alpha", "mid", "zeta"]);
        // truncation drops the lexicographically later token on ties
        let v = Vocabulary::build(&pairs(&[("d c b a e f", "x")]), 8).unwrap();
        assert_eq!(&v.tokens()[4..], ["a", "b", "c", "d"]);
    }

    #[test]
    fn empty_corpus_is_rejected() {
        assert!(matches!(Vocabulary::build(&[], 16), Err(Error::Input(_))));
    }

    #[test]
    fn encode_decode() {
        let v = Vocabulary::build(&pairs(&[("a b", "b a a")]), 16).unwrap();
        assert_eq!(v.id("a"), Some(4));
        assert_eq!(v.id("b"), Some(5));
        assert_eq!(v.encode("a b a"), vec![4, 5, 4]);
        assert_eq!(v.encode("a zz"), vec![4, UNK]);
        assert!(v.encode("").is_empty());
        assert_eq!(v.decode(&v.encode("b a b")), "b a b");
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let v = Vocabulary::build(&pairs(&[("q w e", "e r")]), 16).unwrap();
        v.write(&path).unwrap();
        let back = Vocabulary::read(&path).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.fingerprint(), v.fingerprint());
    }

    #[test]
    fn token_list_must_start_with_specials() {
        assert!(Vocabulary::from_tokens(vec!["a".into()]).is_err());
    }
}
