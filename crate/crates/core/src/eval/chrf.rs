use std::collections::HashMap;

use crate::error::{Error, Result};

/// Character n-gram order used by [`chrf`].
pub const CHRF_ORDER: usize = 6;
/// Recall weight used by [`chrf`].
pub const CHRF_BETA: f64 = 2.0;

fn char_ngrams(chars: &[char], n: usize) -> HashMap<&[char], usize> {
    let mut counts = HashMap::new();
    if chars.len() >= n {
        for w in chars.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus chrF in [0, 100]: character n-gram counts (whitespace included)
/// are summed over the corpus per order, an F-beta score is taken per order,
/// and the scores are averaged over the orders that occur on either side.
pub fn chrf_with<S: AsRef<str>>(hyps: &[S], refs: &[S], max_n: usize, beta: f64) -> Result<f64> {
    if hyps.len() != refs.len() {
        return Err(Error::input(format!("{} hypotheses but {} references", hyps.len(), refs.len())));
    }
    let mut matches = vec![0usize; max_n];
    let mut hyp_total = vec![0usize; max_n];
    let mut ref_total = vec![0usize; max_n];
    for (i, (h, r)) in hyps.iter().zip(refs).enumerate() {
        let (h, r) = (h.as_ref(), r.as_ref());
        if r.is_empty() {
            return Err(Error::input(format!("reference {i} is empty")));
        }
        let hc: Vec<char> = h.chars().collect();
        let rc: Vec<char> = r.chars().collect();
        for n in 1..=max_n {
            let hg = char_ngrams(&hc, n);
            let rg = char_ngrams(&rc, n);
            matches[n - 1] += hg.iter().map(|(g, &c)| c.min(rg.get(g).copied().unwrap_or(0))).sum::<usize>();
            hyp_total[n - 1] += hc.len().saturating_sub(n - 1);
            ref_total[n - 1] += rc.len().saturating_sub(n - 1);
        }
    }
    let b2 = beta * beta;
    let mut sum = 0.0;
    let mut orders = 0;
    for n in 0..max_n {
        if hyp_total[n] == 0 && ref_total[n] == 0 {
            continue;
        }
        orders += 1;
        if hyp_total[n] == 0 || ref_total[n] == 0 || matches[n] == 0 {
            continue;
        }
        let p = matches[n] as f64 / hyp_total[n] as f64;
        let r = matches[n] as f64 / ref_total[n] as f64;
        sum += (1.0 + b2) * p * r / (b2 * p + r);
    }
    Ok(if orders == 0 { 0.0 } else { 100.0 * sum / orders as f64 })
}

/// chrF with character 6-grams and beta 2.
pub fn chrf<S: AsRef<str>>(hyps: &[S], refs: &[S]) -> Result<f64> {
    chrf_with(hyps, refs, CHRF_ORDER, CHRF_BETA)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_disjoint() {
        assert!((chrf(&["a b c", "xy"], &["a b c", "xy"]).unwrap() - 100.0).abs() < 1e-9);
        assert_eq!(chrf(&["abc"], &["xyz"]).unwrap(), 0.0);
    }

    #[test]
    fn count_fixture() {
        // orders 1..3 occur: F1 = 2/3, F2 = 1/2, F3 = 0
        let expected = 100.0 * (2.0 / 3.0 + 0.5 + 0.0) / 3.0;
        assert!((chrf(&["abc"], &["abd"]).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn empty_reference_is_rejected() {
        assert!(chrf(&["a"], &[""]).is_err());
    }
}
