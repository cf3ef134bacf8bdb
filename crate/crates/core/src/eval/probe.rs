use crate::corpus::{IdMatrix, SentencePair};
use crate::error::Result;
use crate::model::{nat_input, target_embedding, ModelParams};
use crate::numerics::{Element, Graph};

/// Mean cosine similarity between pooled decoder inputs and pooled target
/// embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeResult {
    pub mean: f64,
    pub samples: usize,
    /// Samples dropped because a pooled vector was zero (including
    /// references with no kept target token).
    pub skipped: usize,
}

/// Cosine of two vectors, `None` when either is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        None
    } else {
        Some(dot / (na * nb))
    }
}

fn mean_rows(rows: impl Iterator<Item = Vec<f64>>, d: usize) -> Vec<f64> {
    let mut acc = vec![0.0; d];
    let mut n = 0;
    for r in rows {
        acc.iter_mut().zip(&r).for_each(|(a, x)| *a += x);
        n += 1;
    }
    acc.iter_mut().for_each(|a| *a /= n.max(1) as f64);
    acc
}

/// For each pair, mean-pools the decoder input built with the reference
/// length (`z`, or `z'` when `use_it`) and the `Emb'` rows of the
/// reference, and averages the cosine of the two over the dataset.
/// Reference tokens outside the kept target vocabulary have no `Emb'` row
/// and are left out of the target pool.
pub fn cosine_probe<T: Element>(m: &ModelParams<T>, pairs: &[SentencePair], use_it: bool) -> Result<ProbeResult> {
    let d = m.config.d_model;
    let mut total = 0.0;
    let (mut samples, mut skipped) = (0, 0);
    for chunk in pairs.chunks(64) {
        let srcs: Vec<&[usize]> = chunk.iter().map(|p| p.src.as_slice()).collect();
        let src = IdMatrix::from_rows(&srcs);
        let src_len: Vec<usize> = chunk.iter().map(|p| p.src.len()).collect();
        let tgt_len: Vec<usize> = chunk.iter().map(|p| p.tgt.len()).collect();
        let width = *tgt_len.iter().max().unwrap_or(&0);
        let mut g = Graph::new();
        let emb_prime = target_embedding(&mut g, m)?;
        let (z, it) = nat_input(&mut g, m, &src, &src_len, &tgt_len, width, use_it, emb_prime)?;
        let input = g.value(it.map(|n| n.z_prime).unwrap_or(z));
        let table = g.value(emb_prime);
        for (r, p) in chunk.iter().enumerate() {
            let pooled_in = mean_rows(
                (0..p.tgt.len()).map(|i| input.row(r * width + i).iter().map(|v| v.as_f64()).collect()),
                d,
            );
            let ids: Vec<usize> = p.tgt.iter().filter_map(|&t| m.filter.to_filtered(t)).collect();
            let pooled_tgt = mean_rows(ids.iter().map(|&i| table.row(i).iter().map(|v| v.as_f64()).collect()), d);
            match cosine(&pooled_in, &pooled_tgt) {
                Some(c) => {
                    total += c;
                    samples += 1;
                }
                None => skipped += 1,
            }
        }
    }
    Ok(ProbeResult {
        mean: if samples == 0 { 0.0 } else { total / samples as f64 },
        samples,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_fixtures() {
        assert!((cosine(&[1.0, 2.0], &[2.0, 4.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        assert!(cosine(&[0.0, 0.0], &[1.0, 0.0]).is_none());
    }
}
