use std::time::Instant;

use crate::error::{Error, Result};
use crate::model::{greedy_decode, translate, ModelParams};

/// Untimed sentences decoded before measuring.
pub const WARMUP_SENTENCES: usize = 10;

/// Batch-1 decoding times in seconds.
#[derive(Clone, Debug, PartialEq)]
pub struct LatencyReport {
    pub n_sentences: usize,
    pub at_mean: f64,
    pub nat_mean: f64,
    /// Wall-clock time of the whole timed loop.
    pub at_total: f64,
    pub nat_total: f64,
    pub speedup: f64,
}

impl LatencyReport {
    /// Largest relative gap between a loop total and `mean * n`.
    pub fn consistency_error(&self) -> f64 {
        let n = self.n_sentences as f64;
        let gap = |total: f64, mean: f64| ((total - mean * n) / total).abs();
        gap(self.at_total, self.at_mean).max(gap(self.nat_total, self.nat_mean))
    }

    pub fn to_text(&self) -> String {
        format!(
            "n_sentences={}\nat_mean_s={:.6e}\nnat_mean_s={:.6e}\nat_total_s={:.6e}\nnat_total_s={:.6e}\nspeedup={:.4}\n",
            self.n_sentences, self.at_mean, self.nat_mean, self.at_total, self.nat_total, self.speedup
        )
    }
}

/// Returns (loop wall time, mean of per-sentence times).
fn time_each(srcs: &[Vec<usize>], mut f: impl FnMut(&[usize]) -> Result<()>) -> Result<(f64, f64)> {
    for s in srcs.iter().cycle().take(WARMUP_SENTENCES) {
        f(s)?;
    }
    let mut sum = 0.0;
    let start = Instant::now();
    for s in srcs {
        let t = Instant::now();
        f(s)?;
        sum += t.elapsed().as_secs_f64();
    }
    Ok((start.elapsed().as_secs_f64(), sum / srcs.len() as f64))
}

/// Times greedy AT decoding and parallel NAT decoding one sentence at a time.
pub fn measure_latency(at: &ModelParams, nat: &ModelParams, srcs: &[Vec<usize>]) -> Result<LatencyReport> {
    if srcs.is_empty() {
        return Err(Error::input("latency needs at least one sentence"));
    }
    if at.vocab_size() != nat.vocab_size() {
        return Err(Error::config(format!(
            "teacher vocabulary ({}) differs from student vocabulary ({})",
            at.vocab_size(),
            nat.vocab_size()
        )));
    }
    let (at_total, at_mean) = time_each(srcs, |s| greedy_decode(at, s).map(|_| ()))?;
    let (nat_total, nat_mean) = time_each(srcs, |s| translate(nat, s).map(|_| ()))?;
    Ok(LatencyReport {
        n_sentences: srcs.len(),
        at_mean,
        nat_mean,
        at_total,
        nat_total,
        speedup: at_mean / nat_mean,
    })
}
