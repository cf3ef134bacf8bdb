//! Inference: parallel decoding and greedy autoregressive decoding.

use crate::corpus::{is_special, IdMatrix, BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::model::bank::{transform_input, ItNodes};
use crate::model::layers::{copy_input, decode, encode, target_embedding, Encoded};
use crate::model::length::predict_length;
use crate::model::mask::{AttentionMask, MaskKind};
use crate::model::params::ModelParams;
use crate::numerics::{Element, Graph, NodeId, Tensor};

const CHUNK: usize = 64;

/// Builds the parallel decoder input `[B * t_width, d]`: uniform (or soft)
/// copy of the source embeddings, then the input transformation when
/// `use_it`. Returns the copied input and, if applied, the transformation.
#[allow(clippy::too_many_arguments)]
pub fn nat_input<'p, T: Element>(
    g: &mut Graph<'p, T>,
    m: &'p ModelParams<T>,
    src: &IdMatrix,
    src_len: &[usize],
    tgt_len: &[usize],
    t_width: usize,
    use_it: bool,
    emb_prime: NodeId,
) -> Result<(NodeId, Option<ItNodes>)> {
    let z = copy_input(g, m, src, src_len, tgt_len, t_width)?;
    if !use_it {
        return Ok((z, None));
    }
    if !m.store.contains("it.wq") {
        return Err(Error::config("model was built without the input transformation (use_it=false)"));
    }
    let it = transform_input(g, m, z, emb_prime)?;
    Ok((z, Some(it)))
}

fn padded(srcs: &[&[usize]]) -> Result<(IdMatrix, Vec<usize>)> {
    if let Some(i) = srcs.iter().position(|s| s.is_empty()) {
        return Err(Error::input(format!("source sentence {i} is empty")));
    }
    Ok((IdMatrix::from_rows(srcs), srcs.iter().map(|s| s.len()).collect()))
}

/// Lowest-index argmax of a row, skipping `banned` filtered indices.
fn argmax<T: Element>(row: &[T], banned: &[usize]) -> usize {
    let mut best = usize::MAX;
    for (i, &v) in row.iter().enumerate() {
        if banned.contains(&i) {
            continue;
        }
        if best == usize::MAX || v > row[best] {
            best = i;
        }
    }
    best
}

/// Parallel decode of one chunk, returning global ids before stripping.
fn nat_chunk<T: Element>(m: &ModelParams<T>, srcs: &[&[usize]], use_it: bool) -> Result<Vec<Vec<usize>>> {
    let (src, src_len) = padded(srcs)?;
    let mut g = Graph::new();
    let enc = encode(&mut g, m, &src, &src_len)?;
    let lengths: Vec<usize> = predict_length(&mut g, m, &enc)?
        .iter()
        .zip(&src_len)
        .map(|(d, &n)| d.predicted_length(n, m.config.max_len))
        .collect();
    let width = *lengths.iter().max().expect("non-empty chunk");
    let emb_prime = target_embedding(&mut g, m)?;
    let (z, it) = nat_input(&mut g, m, &src, &src_len, &lengths, width, use_it, emb_prime)?;
    let input = it.map(|n| n.z_prime).unwrap_or(z);
    let mask = AttentionMask::new(MaskKind::Full, &lengths, width);
    let dec = decode(&mut g, m, input, &mask, &enc, emb_prime)?;
    let logits = g.value(dec.logits);
    Ok(lengths
        .iter()
        .enumerate()
        .map(|(r, &t)| {
            (0..t)
                .map(|i| m.filter.to_global(argmax(logits.row(r * width + i), &[])))
                .collect()
        })
        .collect())
}

/// Removes the special ids from a decoded sequence.
pub fn strip_specials(ids: &[usize]) -> Vec<usize> {
    ids.iter().copied().filter(|&i| !is_special(i)).collect()
}

/// Parallel translation of each source (global ids in, global ids out,
/// specials stripped). Deterministic: argmax ties go to the lower id.
pub fn translate_batch<T: Element>(m: &ModelParams<T>, srcs: &[Vec<usize>], use_it: bool) -> Result<Vec<Vec<usize>>> {
    let mut out = Vec::with_capacity(srcs.len());
    for chunk in srcs.chunks(CHUNK) {
        let refs: Vec<&[usize]> = chunk.iter().map(Vec::as_slice).collect();
        out.extend(nat_chunk(m, &refs, use_it)?.iter().map(|h| strip_specials(h)));
    }
    Ok(out)
}

/// Parallel translation of one source using the model's configured input.
pub fn translate<T: Element>(m: &ModelParams<T>, src: &[usize]) -> Result<Vec<usize>> {
    let raw = nat_chunk(m, &[src], m.config.use_it)?;
    Ok(strip_specials(&raw[0]))
}

/// Encoder states of a batch as a plain tensor, for reuse across decode steps.
fn encode_once<T: Element>(m: &ModelParams<T>, src: &IdMatrix, src_len: &[usize]) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let enc = encode(&mut g, m, src, src_len)?;
    Ok(g.value(enc.states).clone())
}

/// Greedy left-to-right decoding with the causal decoder. Each row stops at
/// EOS or after `N + C` tokens (capped by `max_len`); EOS is never chosen
/// first. The returned sequences exclude EOS.
pub fn greedy_decode_batch<T: Element>(m: &ModelParams<T>, srcs: &[Vec<usize>]) -> Result<Vec<Vec<usize>>> {
    let mut out = Vec::with_capacity(srcs.len());
    for chunk in srcs.chunks(CHUNK) {
        let refs: Vec<&[usize]> = chunk.iter().map(Vec::as_slice).collect();
        out.extend(greedy_chunk(m, &refs)?);
    }
    Ok(out)
}

pub fn greedy_decode<T: Element>(m: &ModelParams<T>, src: &[usize]) -> Result<Vec<usize>> {
    Ok(greedy_chunk(m, &[src])?.remove(0))
}

fn greedy_chunk<T: Element>(m: &ModelParams<T>, srcs: &[&[usize]]) -> Result<Vec<Vec<usize>>> {
    let (src, src_len) = padded(srcs)?;
    let b = srcs.len();
    let states = encode_once(m, &src, &src_len)?;
    let limits: Vec<usize> = src_len
        .iter()
        .map(|&n| (n + m.config.max_offset).min(m.config.max_len).max(1))
        .collect();
    let max_steps = *limits.iter().max().expect("non-empty chunk");
    let banned_always: Vec<usize> = [PAD, BOS].iter().filter_map(|&s| m.filter.to_filtered(s)).collect();
    let mut banned_first = banned_always.clone();
    banned_first.extend(m.filter.to_filtered(EOS));

    let mut prefixes: Vec<Vec<usize>> = vec![vec![BOS]; b];
    let mut done = vec![false; b];
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); b];
    for step in 0..max_steps {
        if done.iter().all(|&d| d) {
            break;
        }
        let width = step + 1;
        let mut g = Graph::new();
        let enc_node = g.constant(states.clone());
        let enc = Encoded {
            states: enc_node,
            batch: b,
            width: src.cols,
            lengths: src_len.clone(),
        };
        let ids = IdMatrix::from_rows(&prefixes.iter().map(Vec::as_slice).collect::<Vec<_>>());
        let emb_prime = target_embedding(&mut g, m)?;
        let emb = g.param(&m.store, "emb")?;
        let input = g.gather_rows(emb, &ids.data)?;
        let mask = AttentionMask::new(MaskKind::Causal, &vec![width; b], width);
        let dec = decode(&mut g, m, input, &mask, &enc, emb_prime)?;
        let logits = g.value(dec.logits);
        for r in 0..b {
            if done[r] {
                prefixes[r].push(PAD);
                continue;
            }
            let banned = if step == 0 { &banned_first } else { &banned_always };
            let tok = m.filter.to_global(argmax(logits.row(r * width + step), banned));
            prefixes[r].push(tok);
            if tok == EOS {
                done[r] = true;
            } else {
                out[r].push(tok);
                if out[r].len() >= limits[r] {
                    done[r] = true;
                }
            }
        }
    }
    Ok(out)
}
