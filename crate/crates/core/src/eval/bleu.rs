use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

/// Numerator used for an order above 1 with no matching n-grams.
pub const SMOOTHING_EPS: f64 = 0.1;

/// Matched and total n-gram counts per order, plus lengths.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: Vec<usize>,
    pub totals: Vec<usize>,
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub(crate) fn new(max_n: usize) -> Self {
        BleuStats {
            matches: vec![0; max_n],
            totals: vec![0; max_n],
            hyp_len: 0,
            ref_len: 0,
        }
    }

    pub(crate) fn add(&mut self, other: &BleuStats) {
        for n in 0..self.matches.len() {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }

    /// Corpus BLEU in [0, 100] from accumulated counts.
    pub fn score(&self) -> f64 {
        if self.hyp_len == 0 || self.matches.first().copied().unwrap_or(0) == 0 {
            return 0.0;
        }
        let max_n = self.matches.len();
        let mut log_sum = 0.0;
        for n in 0..max_n {
            // an order no hypothesis is long enough for carries no evidence
            if self.totals[n] == 0 {
                continue;
            }
            let m = if self.matches[n] == 0 { SMOOTHING_EPS } else { self.matches[n] as f64 };
            log_sum += (m / self.totals[n] as f64).ln();
        }
        let (c, r) = (self.hyp_len as f64, self.ref_len as f64);
        let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
        (100.0 * bp * (log_sum / max_n as f64).exp()).min(100.0)
    }
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram statistics of one sentence pair.
pub fn sentence_stats<T: Eq + Hash>(hyp: &[T], reference: &[T], max_n: usize) -> BleuStats {
    let mut s = BleuStats::new(max_n);
    s.hyp_len = hyp.len();
    s.ref_len = reference.len();
    for n in 1..=max_n {
        let h = ngram_counts(hyp, n);
        let r = ngram_counts(reference, n);
        s.totals[n - 1] = hyp.len().saturating_sub(n - 1);
        s.matches[n - 1] = h.iter().map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0))).sum();
    }
    s
}

fn check_aligned(h: usize, r: usize) -> Result<()> {
    if h != r {
        return Err(Error::input(format!("{h} hypotheses but {r} references")));
    }
    Ok(())
}

/// Accumulated statistics over a corpus. Empty references are rejected.
pub fn corpus_stats<T: Eq + Hash, S: AsRef<[T]>>(hyps: &[S], refs: &[S], max_n: usize) -> Result<BleuStats> {
    check_aligned(hyps.len(), refs.len())?;
    let mut total = BleuStats::new(max_n);
    for (i, (h, r)) in hyps.iter().zip(refs).enumerate() {
        if r.as_ref().is_empty() {
            return Err(Error::input(format!("reference {i} is empty")));
        }
        total.add(&sentence_stats(h.as_ref(), r.as_ref(), max_n));
    }
    Ok(total)
}

/// Corpus BLEU over token sequences.
pub fn bleu_tokens<T: Eq + Hash, S: AsRef<[T]>>(hyps: &[S], refs: &[S], max_n: usize) -> Result<f64> {
    Ok(corpus_stats(hyps, refs, max_n)?.score())
}

pub(crate) fn tokenize<S: AsRef<str>>(lines: &[S]) -> Vec<Vec<&str>> {
    lines.iter().map(|l| l.as_ref().split_whitespace().collect()).collect()
}

/// Corpus BLEU (up to 4-grams) over whitespace-tokenized lines.
pub fn bleu<S: AsRef<str>>(hyps: &[S], refs: &[S]) -> Result<f64> {
    bleu_tokens(&tokenize(hyps), &tokenize(refs), 4)
}
