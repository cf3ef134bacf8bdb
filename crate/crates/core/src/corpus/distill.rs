use crate::corpus::pair::SentencePair;
use crate::error::{Error, Result};
use crate::model::{greedy_decode_batch, ModelParams};

/// Sequence-level distillation: every target is replaced by the teacher's
/// greedy decode of its source. Sources are split into `threads` contiguous
/// shards decoded in parallel; the output order matches the input.
pub fn distill(teacher: &ModelParams, pairs: &[SentencePair], vocab_size: usize, threads: usize) -> Result<Vec<SentencePair>> {
    if teacher.vocab_size() != vocab_size {
        return Err(Error::config(format!(
            "teacher vocabulary has {} entries but the corpus vocabulary has {vocab_size}",
            teacher.vocab_size()
        )));
    }
    let srcs: Vec<Vec<usize>> = pairs.iter().map(|p| p.src.clone()).collect();
    let threads = threads.clamp(1, srcs.len().max(1));
    let shard = srcs.len().div_ceil(threads).max(1);
    let decoded: Vec<Vec<usize>> = std::thread::scope(|s| {
        let handles: Vec<_> = srcs
            .chunks(shard)
            .map(|chunk| s.spawn(move || greedy_decode_batch(teacher, chunk)))
            .collect();
        let mut out = Vec::with_capacity(srcs.len());
        for h in handles {
            out.extend(h.join().expect("distillation worker panicked")?);
        }
        Ok::<_, Error>(out)
    })?;
    pairs
        .iter()
        .zip(decoded)
        .enumerate()
        .map(|(i, (p, tgt))| {
            SentencePair::new(p.src.clone(), tgt, vocab_size)
                .map_err(|e| Error::input(format!("distilled pair {i}: {e}")))
        })
        .collect()
}
