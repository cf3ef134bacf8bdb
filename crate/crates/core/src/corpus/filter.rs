use crate::corpus::pair::SentencePair;
use crate::corpus::vocab::{Vocabulary, NUM_SPECIALS};
use crate::error::{Error, Result};

/// Restriction of the shared vocabulary (size `v`) to the ids seen on the
/// target side of the training data plus the specials (size `v'`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TargetVocabFilter {
    keep: Vec<bool>,
    kept: Vec<usize>,
    index_map: Vec<Option<usize>>,
}

impl TargetVocabFilter {
    pub fn build(vocab: &Vocabulary, corpus: &[SentencePair]) -> Self {
        let mut keep = vec![false; vocab.len()];
        keep[..NUM_SPECIALS].iter_mut().for_each(|k| *k = true);
        for pair in corpus {
            for &t in &pair.tgt {
                if t < keep.len() {
                    keep[t] = true;
                }
            }
        }
        Self::from_mask(keep)
    }

    /// Filter that keeps all `v` ids.
    pub fn identity(v: usize) -> Self {
        Self::from_mask(vec![true; v])
    }

    /// Filter from an ascending list of kept global ids.
    pub fn from_kept_ids(v: usize, ids: &[usize]) -> Result<Self> {
        let mut keep = vec![false; v];
        for &i in ids {
            if i >= v {
                return Err(Error::input(format!("kept id {i} out of range for vocabulary of {v}")));
            }
            keep[i] = true;
        }
        if keep.iter().take(NUM_SPECIALS).any(|k| !k) || v < NUM_SPECIALS {
            return Err(Error::input("target filter must keep all special tokens"));
        }
        Ok(Self::from_mask(keep))
    }

    fn from_mask(keep: Vec<bool>) -> Self {
        let kept: Vec<usize> = keep
            .iter()
            .enumerate()
            .filter_map(|(i, &k)| k.then_some(i))
            .collect();
        let mut index_map = vec![None; keep.len()];
        for (j, &g) in kept.iter().enumerate() {
            index_map[g] = Some(j);
        }
        TargetVocabFilter { keep, kept, index_map }
    }

    /// `v`, the size of the unfiltered vocabulary.
    pub fn full_size(&self) -> usize {
        self.keep.len()
    }

    /// `v'`, the number of kept ids.
    pub fn len(&self) -> usize {
        self.kept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept.is_empty()
    }

    pub fn keeps(&self, global: usize) -> bool {
        self.keep.get(global).copied().unwrap_or(false)
    }

    pub fn keep_mask(&self) -> &[bool] {
        &self.keep
    }

    /// Global ids of the kept tokens, ascending; position is the filtered id.
    pub fn kept_ids(&self) -> &[usize] {
        &self.kept
    }

    pub fn to_filtered(&self, global: usize) -> Option<usize> {
        self.index_map.get(global).copied().flatten()
    }

    pub fn to_global(&self, filtered: usize) -> usize {
        self.kept[filtered]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::vocab::UNK;
    use std::collections::BTreeSet;

    fn raw(items: &[(&str, &str)]) -> Vec<(String, String)> {
        items.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    fn encode(v: &Vocabulary, items: &[(String, String)]) -> Vec<SentencePair> {
        items
            .iter()
            .map(|(s, t)| SentencePair::new(v.encode(s), v.encode(t), v.len()).unwrap())
            .collect()
    }

    #[test]
    fn single_pair_keeps_specials_and_target() {
        let corpus = raw(&[("x", "y")]);
        let v = Vocabulary::build(&corpus, 16).unwrap();
        let f = TargetVocabFilter::build(&v, &encode(&v, &corpus));
        assert_eq!(f.len(), 5);
        assert!(f.keeps(v.id("y").unwrap()));
        assert!(!f.keeps(v.id("x").unwrap()));
        assert!((0..4).all(|i| f.keeps(i)));
    }

    #[test]
    fn shared_tokens_give_identity() {
        let corpus = raw(&[("a b", "b a"), ("c", "c a")]);
        let v = Vocabulary::build(&corpus, 16).unwrap();
        let f = TargetVocabFilter::build(&v, &encode(&v, &corpus));
        assert_eq!(f.len(), v.len());
    }

    #[test]
    fn keep_set_is_union_of_target_tokens() {
        let corpus: Vec<(String, String)> = (0..20)
            .map(|i| {
                (
                    format!("s{} s{}", i % 7, (i * 3) % 11),
                    format!("t{} t{} s{}", i % 5, (i * 7) % 9, i % 2),
                )
            })
            .collect();
        let v = Vocabulary::build(&corpus, 64).unwrap();
        let f = TargetVocabFilter::build(&v, &encode(&v, &corpus));
        let mut oracle: BTreeSet<usize> = (0..4).collect();
        for (_, t) in &corpus {
            for tok in t.split_whitespace() {
                oracle.insert(v.id(tok).unwrap());
            }
        }
        assert_eq!(f.kept_ids(), oracle.into_iter().collect::<Vec<_>>().as_slice());
        for (j, &g) in f.kept_ids().iter().enumerate() {
            assert_eq!(f.to_filtered(g), Some(j));
            assert_eq!(f.to_global(j), g);
        }
        assert_eq!(f.to_filtered(UNK), Some(UNK));
    }

    #[test]
    fn kept_ids_round_trip() {
        let f = TargetVocabFilter::from_kept_ids(9, &[0, 1, 2, 3, 5, 8]).unwrap();
        assert_eq!(f.len(), 6);
        assert_eq!(TargetVocabFilter::from_kept_ids(9, f.kept_ids()).unwrap(), f);
        assert!(TargetVocabFilter::from_kept_ids(9, &[0, 1, 2, 5]).is_err());
    }
}
