use crate::corpus::vocab::{Vocabulary, PAD};
use crate::error::{Error, Result};

/// Encoded source/target sentences; neither side is empty or contains PAD.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SentencePair {
    pub src: Vec<usize>,
    pub tgt: Vec<usize>,
}

impl SentencePair {
    pub fn new(src: Vec<usize>, tgt: Vec<usize>, vocab_size: usize) -> Result<Self> {
        for (side, ids) in [("source", &src), ("target", &tgt)] {
            if ids.is_empty() {
                return Err(Error::input(format!("empty {side} sentence")));
            }
            if let Some(&bad) = ids.iter().find(|&&i| i >= vocab_size || i == PAD) {
                return Err(Error::input(format!("invalid {side} token id {bad}")));
            }
        }
        Ok(SentencePair { src, tgt })
    }
}

/// Encodes raw pairs; fails on the first pair with an empty side, naming its line.
pub fn encode_pairs(vocab: &Vocabulary, raw: &[(String, String)]) -> Result<Vec<SentencePair>> {
    raw.iter()
        .enumerate()
        .map(|(i, (s, t))| {
            SentencePair::new(vocab.encode(s), vocab.encode(t), vocab.len())
                .map_err(|e| Error::input(format!("pair {} (line {}): {e}", i, i + 1)))
        })
        .collect()
}
