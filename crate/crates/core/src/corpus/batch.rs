use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::pair::SentencePair;
use crate::corpus::vocab::PAD;
use crate::error::{Error, Result};

/// Dense row-major matrix of token ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<usize>,
}

impl IdMatrix {
    pub fn filled(rows: usize, cols: usize, value: usize) -> Self {
        IdMatrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Rows padded to the longest one with `PAD`.
    pub fn from_rows(rows: &[&[usize]]) -> Self {
        let cols = rows.iter().map(|r| r.len()).max().unwrap_or(0);
        let mut m = Self::filled(rows.len(), cols, PAD);
        for (i, r) in rows.iter().enumerate() {
            m.data[i * cols..i * cols + r.len()].copy_from_slice(r);
        }
        m
    }

    pub fn row(&self, r: usize) -> &[usize] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> usize {
        self.data[r * self.cols + c]
    }
}

/// Padded source/target id matrices for a group of pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub src: IdMatrix,
    pub tgt: IdMatrix,
    pub src_len: Vec<usize>,
    pub tgt_len: Vec<usize>,
}

impl Batch {
    pub fn from_pairs(pairs: &[&SentencePair]) -> Self {
        let srcs: Vec<&[usize]> = pairs.iter().map(|p| p.src.as_slice()).collect();
        let tgts: Vec<&[usize]> = pairs.iter().map(|p| p.tgt.as_slice()).collect();
        Batch {
            src: IdMatrix::from_rows(&srcs),
            tgt: IdMatrix::from_rows(&tgts),
            src_len: pairs.iter().map(|p| p.src.len()).collect(),
            tgt_len: pairs.iter().map(|p| p.tgt.len()).collect(),
        }
    }

    pub fn size(&self) -> usize {
        self.src_len.len()
    }

    /// Row `i` with padding removed.
    pub fn pair(&self, i: usize) -> SentencePair {
        SentencePair {
            src: self.src.row(i)[..self.src_len[i]].to_vec(),
            tgt: self.tgt.row(i)[..self.tgt_len[i]].to_vec(),
        }
    }

    /// Same sources with every target reversed.
    pub fn with_reversed_targets(&self) -> Batch {
        let pairs: Vec<SentencePair> = (0..self.size())
            .map(|i| {
                let mut p = self.pair(i);
                p.tgt.reverse();
                p
            })
            .collect();
        Batch::from_pairs(&pairs.iter().collect::<Vec<_>>())
    }

    /// Padded cell count `B * max(N_max, T_max)`.
    pub fn token_cost(&self) -> usize {
        self.size() * self.src.cols.max(self.tgt.cols)
    }
}

/// Shuffles `pairs` with `seed` and groups them greedily so that each batch
/// satisfies `B * max(N_max, T_max) <= batch_tokens`.
pub fn make_batches(pairs: &[SentencePair], batch_tokens: usize, seed: u64) -> Result<Vec<Batch>> {
    if let Some((i, p)) = pairs
        .iter()
        .enumerate()
        .find(|(_, p)| p.src.len().max(p.tgt.len()) > batch_tokens)
    {
        return Err(Error::input(format!(
            "pair {i} (src len {}, tgt len {}) exceeds the batch budget of {batch_tokens} tokens",
            p.src.len(),
            p.tgt.len()
        )));
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut batches = Vec::new();
    let mut current: Vec<&SentencePair> = Vec::new();
    let mut width = 0;
    for i in order {
        let p = &pairs[i];
        let w = width.max(p.src.len()).max(p.tgt.len());
        if !current.is_empty() && (current.len() + 1) * w > batch_tokens {
            batches.push(Batch::from_pairs(&current));
            current.clear();
            width = 0;
        }
        width = width.max(p.src.len()).max(p.tgt.len());
        current.push(p);
    }
    if !current.is_empty() {
        batches.push(Batch::from_pairs(&current));
    }
    Ok(batches)
}
