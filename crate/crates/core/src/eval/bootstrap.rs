use std::hash::Hash;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eval::bleu::{sentence_stats, BleuStats};

pub const MIN_TRIALS: usize = 100;

/// Paired bootstrap over sentences: each trial draws `n` indices with
/// replacement (`gen_range(0..n)` from a ChaCha8 generator seeded with
/// `seed`, consumed trial after trial) and compares corpus BLEU of the two
/// systems on the sample. Returns the fraction of trials with
/// `BLEU(B) >= BLEU(A)`.
pub fn paired_bootstrap_tokens<T: Eq + Hash, S: AsRef<[T]>>(
    hyps_a: &[S],
    hyps_b: &[S],
    refs: &[S],
    trials: usize,
    seed: u64,
) -> Result<f64> {
    let n = refs.len();
    if hyps_a.len() != n || hyps_b.len() != n {
        return Err(Error::input(format!(
            "misaligned inputs: {} / {} hypotheses for {n} references",
            hyps_a.len(),
            hyps_b.len()
        )));
    }
    if n == 0 {
        return Err(Error::input("bootstrap needs at least one sentence"));
    }
    if trials < MIN_TRIALS {
        return Err(Error::usage(format!("bootstrap needs at least {MIN_TRIALS} trials, got {trials}")));
    }
    let stats = |hyps: &[S]| -> Result<Vec<BleuStats>> {
        hyps.iter()
            .zip(refs)
            .enumerate()
            .map(|(i, (h, r))| {
                if r.as_ref().is_empty() {
                    Err(Error::input(format!("reference {i} is empty")))
                } else {
                    Ok(sentence_stats(h.as_ref(), r.as_ref(), 4))
                }
            })
            .collect()
    };
    let (sa, sb) = (stats(hyps_a)?, stats(hyps_b)?);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut wins = 0usize;
    for _ in 0..trials {
        let mut a = BleuStats::new(4);
        let mut b = BleuStats::new(4);
        for _ in 0..n {
            let i = rng.gen_range(0..n);
            a.add(&sa[i]);
            b.add(&sb[i]);
        }
        if b.score() >= a.score() {
            wins += 1;
        }
    }
    Ok(wins as f64 / trials as f64)
}

/// [`paired_bootstrap_tokens`] over whitespace-tokenized lines.
pub fn paired_bootstrap<S: AsRef<str>>(hyps_a: &[S], hyps_b: &[S], refs: &[S], trials: usize, seed: u64) -> Result<f64> {
    use crate::eval::bleu::tokenize;
    paired_bootstrap_tokens(&tokenize(hyps_a), &tokenize(hyps_b), &tokenize(refs), trials, seed)
}
