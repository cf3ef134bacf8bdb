use std::fmt;
use std::str::FromStr;

use crate::corpus::{Batch, IdMatrix, BOS, EOS};
use crate::error::{Error, Result};
use crate::model::{AttentionMask, MaskKind};

/// One stage of a curriculum.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PhaseKind {
    /// Causal decoding of the target, teacher-forced.
    Forward,
    /// Causal decoding of the reversed target.
    Backward,
    /// Parallel decoding from copied source embeddings.
    Nat,
}

impl PhaseKind {
    pub fn mask_kind(self) -> MaskKind {
        match self {
            PhaseKind::Forward | PhaseKind::Backward => MaskKind::Causal,
            PhaseKind::Nat => MaskKind::Full,
        }
    }

    /// Short tag used in logs and checkpoint names.
    pub fn tag(self) -> &'static str {
        match self {
            PhaseKind::Forward => "F",
            PhaseKind::Backward => "B",
            PhaseKind::Nat => "NAT",
        }
    }
}

impl fmt::Display for PhaseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Ordered phases sharing one per-phase step budget. The last phase is NAT.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CurriculumSchedule {
    pub phases: Vec<PhaseKind>,
    pub steps_per_phase: u64,
}

pub const PRESETS: &[&str] = &["NAT", "F-NAT", "B-NAT", "FB-NAT", "BF-NAT", "FBF-NAT"];

impl CurriculumSchedule {
    pub fn new(phases: Vec<PhaseKind>, steps_per_phase: u64) -> Result<Self> {
        if phases.is_empty() {
            return Err(Error::config("curriculum has no phases"));
        }
        if phases.last() != Some(&PhaseKind::Nat) {
            return Err(Error::config("curriculum must end with a NAT phase"));
        }
        if steps_per_phase == 0 {
            return Err(Error::config("steps_per_phase must be positive"));
        }
        Ok(CurriculumSchedule { phases, steps_per_phase })
    }

    /// One of [`PRESETS`], e.g. `FBF-NAT`.
    pub fn preset(name: &str, steps_per_phase: u64) -> Result<Self> {
        let (prefix, last) = name.rsplit_once('-').unwrap_or(("", name));
        if last != "NAT" || !PRESETS.contains(&name) {
            return Err(Error::config(format!(
                "unknown schedule `{name}` (expected one of {})",
                PRESETS.join(", ")
            )));
        }
        let mut phases: Vec<PhaseKind> = prefix
            .chars()
            .map(|c| if c == 'F' { PhaseKind::Forward } else { PhaseKind::Backward })
            .collect();
        phases.push(PhaseKind::Nat);
        Self::new(phases, steps_per_phase)
    }

    pub fn name(&self) -> String {
        let prefix: String = self.phases[..self.phases.len() - 1].iter().map(|p| p.tag()).collect();
        if prefix.is_empty() {
            "NAT".into()
        } else {
            format!("{prefix}-NAT")
        }
    }

    pub fn total_steps(&self) -> u64 {
        self.phases.len() as u64 * self.steps_per_phase
    }

    /// Phase index and 0-based step within it for a 0-based global step.
    pub fn locate(&self, global: u64) -> (usize, u64) {
        ((global / self.steps_per_phase) as usize, global % self.steps_per_phase)
    }
}

impl FromStr for PhaseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "F" => Ok(PhaseKind::Forward),
            "B" => Ok(PhaseKind::Backward),
            "NAT" => Ok(PhaseKind::Nat),
            other => Err(Error::config(format!("unknown phase `{other}`"))),
        }
    }
}

/// Decoder side of a phase batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DecoderInput {
    /// Teacher-forced token ids, embedded by the shared table.
    Ids(IdMatrix),
    /// Copied source embeddings, built inside the model graph.
    Copy,
}

/// A batch prepared for one phase.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhaseBatch {
    pub phase: PhaseKind,
    pub src: IdMatrix,
    pub src_len: Vec<usize>,
    pub input: DecoderInput,
    /// Global target ids, PAD past each row's length (PAD is ignored by the loss).
    pub target: IdMatrix,
    pub tgt_len: Vec<usize>,
    pub mask: AttentionMask,
}

fn shifted(targets: &[Vec<usize>]) -> (IdMatrix, IdMatrix) {
    let inputs: Vec<Vec<usize>> = targets
        .iter()
        .map(|t| std::iter::once(BOS).chain(t[..t.len() - 1].iter().copied()).collect())
        .collect();
    (
        IdMatrix::from_rows(&inputs.iter().map(Vec::as_slice).collect::<Vec<_>>()),
        IdMatrix::from_rows(&targets.iter().map(Vec::as_slice).collect::<Vec<_>>()),
    )
}

fn rows_of(batch: &Batch) -> Result<Vec<Vec<usize>>> {
    (0..batch.size())
        .map(|i| {
            let t = batch.pair(i).tgt;
            if t.is_empty() {
                Err(Error::usage(format!("batch row {i} has no target")))
            } else {
                Ok(t)
            }
        })
        .collect()
}

/// Builds the decoder input, target and mask of `phase` for `batch`.
///
/// * Forward: input `[BOS, y1 .. y(T-1)]`, target `y`, causal mask.
/// * Backward: the same on `reverse(y)`.
/// * NAT: copied source input, target `y`, full mask.
pub fn make_phase_batch(phase: PhaseKind, batch: &Batch) -> Result<PhaseBatch> {
    if batch.size() == 0 {
        return Err(Error::usage("empty batch"));
    }
    let mut targets = rows_of(batch)?;
    if phase == PhaseKind::Backward {
        targets.iter_mut().for_each(|t| t.reverse());
    }
    let tgt_len: Vec<usize> = targets.iter().map(Vec::len).collect();
    let (input, target) = match phase {
        PhaseKind::Forward | PhaseKind::Backward => {
            let (i, t) = shifted(&targets);
            (DecoderInput::Ids(i), t)
        }
        PhaseKind::Nat => (
            DecoderInput::Copy,
            IdMatrix::from_rows(&targets.iter().map(Vec::as_slice).collect::<Vec<_>>()),
        ),
    };
    let mask = AttentionMask::new(phase.mask_kind(), &tgt_len, target.cols);
    Ok(PhaseBatch {
        phase,
        src: batch.src.clone(),
        src_len: batch.src_len.clone(),
        input,
        target,
        tgt_len,
        mask,
    })
}

/// Forward-phase batch for the autoregressive teacher: the target gains a
/// closing EOS, so input `[BOS, y]` predicts `[y, EOS]`.
pub fn make_teacher_batch(batch: &Batch) -> Result<PhaseBatch> {
    let targets: Vec<Vec<usize>> = rows_of(batch)?
        .into_iter()
        .map(|mut t| {
            t.push(EOS);
            t
        })
        .collect();
    let tgt_len: Vec<usize> = targets.iter().map(Vec::len).collect();
    let (input, target) = shifted(&targets);
    let mask = AttentionMask::new(MaskKind::Causal, &tgt_len, target.cols);
    Ok(PhaseBatch {
        phase: PhaseKind::Forward,
        src: batch.src.clone(),
        src_len: batch.src_len.clone(),
        input: DecoderInput::Ids(input),
        target,
        tgt_len,
        mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SentencePair;

    fn batch(tgt: &[usize]) -> Batch {
        let p = SentencePair {
            src: vec![9, 9],
            tgt: tgt.to_vec(),
        };
        Batch::from_pairs(&[&p])
    }

    fn ids(input: &DecoderInput) -> Vec<usize> {
        match input {
            DecoderInput::Ids(m) => m.row(0).to_vec(),
            DecoderInput::Copy => panic!("expected ids"),
        }
    }

    #[test]
    fn forward_shifts_target() {
        let (a, b, c) = (4, 5, 6);
        let pb = make_phase_batch(PhaseKind::Forward, &batch(&[a, b, c])).unwrap();
        assert_eq!(ids(&pb.input), vec![BOS, a, b]);
        assert_eq!(pb.target.row(0), &[a, b, c]);
        assert_eq!(pb.mask.kind, MaskKind::Causal);
    }

    #[test]
    fn backward_reverses_target() {
        let (a, b, c) = (4, 5, 6);
        let pb = make_phase_batch(PhaseKind::Backward, &batch(&[a, b, c])).unwrap();
        assert_eq!(ids(&pb.input), vec![BOS, c, b]);
        assert_eq!(pb.target.row(0), &[c, b, a]);
    }

    #[test]
    fn single_token_backward_equals_forward() {
        let f = make_phase_batch(PhaseKind::Forward, &batch(&[7])).unwrap();
        let mut b = make_phase_batch(PhaseKind::Backward, &batch(&[7])).unwrap();
        b.phase = PhaseKind::Forward;
        assert_eq!(f, b);
    }

    #[test]
    fn nat_uses_copy_and_full_mask() {
        let pb = make_phase_batch(PhaseKind::Nat, &batch(&[4, 5])).unwrap();
        assert_eq!(pb.input, DecoderInput::Copy);
        assert_eq!(pb.mask.kind, MaskKind::Full);
        assert_eq!(pb.target.row(0), &[4, 5]);
    }

    #[test]
    fn teacher_batch_appends_eos() {
        let pb = make_teacher_batch(&batch(&[4, 5])).unwrap();
        assert_eq!(ids(&pb.input), vec![BOS, 4, 5]);
        assert_eq!(pb.target.row(0), &[4, 5, EOS]);
    }

    #[test]
    fn presets_parse() {
        let s = CurriculumSchedule::preset("FBF-NAT", 10).unwrap();
        assert_eq!(
            s.phases,
            vec![PhaseKind::Forward, PhaseKind::Backward, PhaseKind::Forward, PhaseKind::Nat]
        );
        assert_eq!(s.total_steps(), 40);
        assert_eq!(s.name(), "FBF-NAT");
        for name in PRESETS {
            assert_eq!(&CurriculumSchedule::preset(name, 1).unwrap().name(), name);
        }
        assert!(CurriculumSchedule::preset("NAT-F", 1).is_err());
        assert!(CurriculumSchedule::new(vec![], 1).is_err());
        assert_eq!(s.locate(25), (2, 5));
    }
}
