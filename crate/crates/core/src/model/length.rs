use crate::error::Result;
use crate::model::layers::{length_logits, Encoded};
use crate::model::params::ModelParams;
use crate::numerics::{Element, Graph};

/// Distribution over length offsets `Δ ∈ [-C, C]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LengthDistribution {
    pub probs: Vec<f64>,
    pub max_offset: usize,
}

impl LengthDistribution {
    /// Softmax of raw logits over the `2C + 1` offsets.
    pub fn from_logits(logits: &[f64]) -> Self {
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exp.iter().sum();
        LengthDistribution {
            probs: exp.iter().map(|e| e / z).collect(),
            max_offset: logits.len() / 2,
        }
    }

    /// Most probable offset; ties go to the smallest `|Δ|`, then the lower `Δ`.
    pub fn argmax_offset(&self) -> i64 {
        let c = self.max_offset as i64;
        let best = self.probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (-c..=c)
            .filter(|&delta| self.probs[(delta + c) as usize] == best)
            .min_by_key(|&delta| (delta.abs(), delta))
            .expect("at least one offset")
    }

    /// `clamp(n + argmax Δ, 1, t_max)`.
    pub fn predicted_length(&self, n: usize, t_max: usize) -> usize {
        (n as i64 + self.argmax_offset()).clamp(1, t_max.max(1) as i64) as usize
    }
}

/// Offset class of a reference length: `clamp(t - n, -C, C) + C`.
pub fn offset_class(n: usize, t: usize, max_offset: usize) -> usize {
    let c = max_offset as i64;
    ((t as i64 - n as i64).clamp(-c, c) + c) as usize
}

/// Length distributions for every row of an encoded batch.
pub fn predict_length<'p, T: Element>(g: &mut Graph<'p, T>, m: &'p ModelParams<T>, enc: &Encoded) -> Result<Vec<LengthDistribution>> {
    let logits = length_logits(g, m, enc)?;
    let v = g.value(logits);
    Ok((0..enc.batch)
        .map(|r| LengthDistribution::from_logits(&v.row(r).iter().map(|x| x.as_f64()).collect::<Vec<_>>()))
        .collect())
}
