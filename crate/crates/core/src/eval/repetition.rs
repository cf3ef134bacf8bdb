/// Fraction of token positions `t > 0` whose token equals the one at
/// `t - 1`, counted over the whole corpus. Zero when no transitions exist.
pub fn repetition_rate_tokens<T: PartialEq, S: AsRef<[T]>>(hyps: &[S]) -> f64 {
    let (mut repeats, mut transitions) = (0usize, 0usize);
    for h in hyps {
        for w in h.as_ref().windows(2) {
            transitions += 1;
            if w[0] == w[1] {
                repeats += 1;
            }
        }
    }
    if transitions == 0 {
        0.0
    } else {
        repeats as f64 / transitions as f64
    }
}

/// [`repetition_rate_tokens`] over whitespace-tokenized lines.
pub fn repetition_rate<S: AsRef<str>>(hyps: &[S]) -> f64 {
    repetition_rate_tokens(&crate::eval::bleu::tokenize(hyps))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures() {
        assert_eq!(repetition_rate(&["a a b"]), 0.5);
        assert_eq!(repetition_rate(&["a b a", "c"]), 0.0);
        assert_eq!(repetition_rate::<&str>(&[]), 0.0);
        assert_eq!(repetition_rate(&["a a", "b c d"]), 1.0 / 3.0);
    }
}
