//! Desk-scale synthetic translation tasks.
//!
//! * `copy`: target equals source.
//! * `reverse`: target is the reversed source.
//! * `homograph`: a lexicon translation from a source alphabet (`s*`, `h*`)
//!   into a disjoint target alphabet (`t*`, `p*`, `r*`). Ordinary token `sK`
//!   becomes `tK`; homograph `hJ` becomes `pJ` when the next source token is
//!   its trigger `sJ` and `rJ` otherwise (including at the end of the
//!   sentence). Sources never repeat a token consecutively, so references
//!   contain no consecutive duplicates.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    Copy,
    Reverse,
    Homograph,
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "copy" => Ok(TaskKind::Copy),
            "reverse" => Ok(TaskKind::Reverse),
            "homograph" => Ok(TaskKind::Homograph),
            other => Err(Error::input(format!(
                "unknown task `{other}` (expected copy, reverse or homograph)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Number of distinct source symbols.
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub n_pairs: usize,
    pub seed: u64,
}

/// Homograph rule set for a given source alphabet size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HomographLexicon {
    plain: usize,
    homographs: usize,
}

impl HomographLexicon {
    pub fn new(vocab_size: usize) -> Self {
        let homographs = (vocab_size / 8).max(1);
        HomographLexicon {
            plain: vocab_size - homographs,
            homographs,
        }
    }

    pub fn num_homographs(&self) -> usize {
        self.homographs
    }

    pub fn source_symbols(&self) -> Vec<String> {
        (0..self.plain)
            .map(|i| format!("s{i}"))
            .chain((0..self.homographs).map(|j| format!("h{j}")))
            .collect()
    }

    /// Index of the homograph `hJ`, if `token` is one.
    pub fn homograph_index(&self, token: &str) -> Option<usize> {
        token
            .strip_prefix('h')
            .and_then(|j| j.parse().ok())
            .filter(|&j| j < self.homographs)
    }

    pub fn trigger(&self, homograph: usize) -> String {
        format!("s{homograph}")
    }

    pub fn translate(&self, src: &[&str]) -> Result<Vec<String>> {
        src.iter()
            .enumerate()
            .map(|(i, tok)| {
                if let Some(j) = self.homograph_index(tok) {
                    let next = src.get(i + 1).copied();
                    Ok(if next == Some(self.trigger(j).as_str()) {
                        format!("p{j}")
                    } else {
                        format!("r{j}")
                    })
                } else if let Some(k) = tok.strip_prefix('s').and_then(|k| k.parse::<usize>().ok()) {
                    Ok(format!("t{k}"))
                } else {
                    Err(Error::input(format!("`{tok}` is not a homograph-task source token")))
                }
            })
            .collect()
    }
}

pub fn make_synthetic_task(spec: &TaskSpec) -> Result<Vec<(String, String)>> {
    if spec.vocab_size < 8 {
        return Err(Error::input(format!("vocab_size must be at least 8, got {}", spec.vocab_size)));
    }
    if spec.min_len < 1 || spec.min_len > spec.max_len {
        return Err(Error::input(format!(
            "invalid length range {}:{}",
            spec.min_len, spec.max_len
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(spec.n_pairs);
    match spec.kind {
        TaskKind::Copy | TaskKind::Reverse => {
            for _ in 0..spec.n_pairs {
                let len = rng.gen_range(spec.min_len..=spec.max_len);
                let src: Vec<String> = (0..len)
                    .map(|_| format!("w{}", rng.gen_range(0..spec.vocab_size)))
                    .collect();
                let mut tgt = src.clone();
                if spec.kind == TaskKind::Reverse {
                    tgt.reverse();
                }
                out.push((src.join(" "), tgt.join(" ")));
            }
        }
        TaskKind::Homograph => {
            let lex = HomographLexicon::new(spec.vocab_size);
            let symbols = lex.source_symbols();
            for _ in 0..spec.n_pairs {
                let len = rng.gen_range(spec.min_len..=spec.max_len);
                let mut src: Vec<&str> = Vec::with_capacity(len);
                for _ in 0..len {
                    let prev = src.last().copied();
                    let forced = prev
                        .and_then(|p| lex.homograph_index(p))
                        .filter(|_| rng.gen_bool(0.5));
                    let tok = match forced {
                        Some(j) => {
                            let trig = lex.trigger(j);
                            symbols.iter().find(|s| **s == trig).unwrap().as_str()
                        }
                        None => loop {
                            let cand = symbols[rng.gen_range(0..symbols.len())].as_str();
                            if Some(cand) != prev {
                                break cand;
                            }
                        },
                    };
                    src.push(tok);
                }
                let tgt = lex.translate(&src)?;
                out.push((src.join(" "), tgt.join(" ")));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: TaskKind) -> TaskSpec {
        TaskSpec {
            kind,
            vocab_size: 16,
            min_len: 2,
            max_len: 9,
            n_pairs: 200,
            seed: 3,
        }
    }

    #[test]
    fn copy_and_reverse() {
        for (s, t) in make_synthetic_task(&spec(TaskKind::Copy)).unwrap() {
            assert_eq!(s, t);
        }
        for (s, t) in make_synthetic_task(&spec(TaskKind::Reverse)).unwrap() {
            let rev: Vec<&str> = s.split(' ').rev().collect();
            assert_eq!(rev.join(" "), t);
        }
    }

    #[test]
    fn homograph_rule_by_construction() {
        let lex = HomographLexicon::new(16);
        assert_eq!(lex.num_homographs(), 2);
        assert_eq!(lex.translate(&["h0", "s0"]).unwrap(), ["p0", "t0"]);
        assert_eq!(lex.translate(&["h0", "s5"]).unwrap(), ["r0", "t5"]);
        assert_eq!(lex.translate(&["s3", "h1"]).unwrap(), ["t3", "r1"]);
        assert!(lex.translate(&["w1"]).is_err());
    }

    #[test]
    fn generation_is_deterministic_and_bounded() {
        for kind in [TaskKind::Copy, TaskKind::Reverse, TaskKind::Homograph] {
            let a = make_synthetic_task(&spec(kind)).unwrap();
            assert_eq!(a, make_synthetic_task(&spec(kind)).unwrap());
            assert_eq!(a.len(), 200);
            for (s, _) in &a {
                let n = s.split(' ').count();
                assert!((2..=9).contains(&n));
            }
        }
        let mut other = spec(TaskKind::Copy);
        other.seed = 4;
        assert_ne!(make_synthetic_task(&other).unwrap(), make_synthetic_task(&spec(TaskKind::Copy)).unwrap());
    }

    #[test]
    fn homograph_targets_have_no_consecutive_duplicates() {
        for (s, t) in make_synthetic_task(&spec(TaskKind::Homograph)).unwrap() {
            let src: Vec<&str> = s.split(' ').collect();
            let tgt: Vec<&str> = t.split(' ').collect();
            assert_eq!(src.len(), tgt.len());
            assert!(src.windows(2).all(|w| w[0] != w[1]));
            assert!(tgt.windows(2).all(|w| w[0] != w[1]));
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = spec(TaskKind::Copy);
        s.vocab_size = 4;
        assert!(make_synthetic_task(&s).is_err());
        let mut s = spec(TaskKind::Copy);
        s.min_len = 0;
        assert!(make_synthetic_task(&s).is_err());
        let mut s = spec(TaskKind::Copy);
        s.min_len = 5;
        s.max_len = 3;
        assert!(make_synthetic_task(&s).is_err());
        assert!("nope".parse::<TaskKind>().is_err());
    }
}
