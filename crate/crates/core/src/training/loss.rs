use crate::corpus::TargetVocabFilter;
use crate::error::{Error, Result};
use crate::model::{
    decode, embed_ids, encode, length_logits, nat_input, offset_class, target_embedding, transform_input, ModelParams,
};
use crate::numerics::{Element, Graph, NodeId};
use crate::training::glancing::{glance_node, glancing_positions};
use crate::training::phases::{DecoderInput, PhaseBatch, PhaseKind};

/// Filtered-vocabulary targets for a PAD-padded global id matrix. PAD maps
/// to the filtered PAD index, which the loss ignores.
pub fn filtered_targets(filter: &TargetVocabFilter, global: &[usize]) -> Result<Vec<usize>> {
    global
        .iter()
        .map(|&t| {
            filter
                .to_filtered(t)
                .ok_or_else(|| Error::input(format!("target id {t} is outside the kept target vocabulary")))
        })
        .collect()
}

/// Token cross-entropy ignoring `pad` plus `lambda` times the length
/// cross-entropy. The length term is skipped when `length` is `None`.
pub fn nat_loss<T: Element>(
    g: &mut Graph<'_, T>,
    logits: NodeId,
    targets: &[usize],
    pad: usize,
    length: Option<(NodeId, &[usize])>,
    lambda: f64,
) -> Result<NodeId> {
    let token = g.cross_entropy(logits, targets, pad)?;
    match length {
        Some((len_logits, classes)) if lambda > 0.0 => {
            let len = g.cross_entropy(len_logits, classes, usize::MAX)?;
            let len = g.scale(len, lambda)?;
            g.add(token, len)
        }
        _ => Ok(token),
    }
}

/// Per-step switches for [`phase_loss`].
#[derive(Clone, Debug)]
pub struct StepOptions {
    /// Apply the input transformation to the decoder input.
    pub use_it: bool,
    pub length_weight: f64,
    /// Glancing ratio; 0 skips the prediction pass.
    pub glancing_ratio: f64,
    /// RNG key prefix for glancing, extended by the row index.
    pub glancing_key: Vec<u64>,
}

impl StepOptions {
    pub fn plain(use_it: bool, length_weight: f64) -> Self {
        StepOptions {
            use_it,
            length_weight,
            glancing_ratio: 0.0,
            glancing_key: Vec::new(),
        }
    }
}

/// Graph nodes of one phase step.
#[derive(Clone, Debug)]
pub struct StepNodes {
    pub loss: NodeId,
    pub logits: NodeId,
    /// Decoder input actually fed to the decoder, `[B * T, d]`.
    pub input: NodeId,
}

fn decoder_input<'p, T: Element>(
    g: &mut Graph<'p, T>,
    m: &'p ModelParams<T>,
    pb: &PhaseBatch,
    use_it: bool,
    emb_prime: NodeId,
) -> Result<NodeId> {
    match &pb.input {
        DecoderInput::Ids(ids) => {
            let z = embed_ids(g, m, ids)?;
            if use_it {
                Ok(transform_input(g, m, z, emb_prime)?.z_prime)
            } else {
                Ok(z)
            }
        }
        DecoderInput::Copy => {
            let (z, it) = nat_input(g, m, &pb.src, &pb.src_len, &pb.tgt_len, pb.target.cols, use_it, emb_prime)?;
            Ok(it.map(|n| n.z_prime).unwrap_or(z))
        }
    }
}

/// Argmax predictions (filtered ids) of an eval-mode pass, one per position.
fn predictions<T: Element>(m: &ModelParams<T>, pb: &PhaseBatch, use_it: bool) -> Result<Vec<usize>> {
    let mut g = Graph::new();
    let enc = encode(&mut g, m, &pb.src, &pb.src_len)?;
    let emb_prime = target_embedding(&mut g, m)?;
    let input = decoder_input(&mut g, m, pb, use_it, emb_prime)?;
    let dec = decode(&mut g, m, input, &pb.mask, &enc, emb_prime)?;
    let logits = g.value(dec.logits);
    Ok((0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect())
}

/// Builds the training loss of one phase batch on `g`.
pub fn phase_loss<'p, T: Element>(
    g: &mut Graph<'p, T>,
    m: &'p ModelParams<T>,
    pb: &PhaseBatch,
    opts: &StepOptions,
) -> Result<StepNodes> {
    let targets = filtered_targets(&m.filter, &pb.target.data)?;
    let pad = m.filter.to_filtered(crate::corpus::PAD).unwrap_or(usize::MAX);
    let replaced = if opts.glancing_ratio > 0.0 && pb.phase == PhaseKind::Nat {
        let pred = predictions(m, pb, opts.use_it)?;
        let w = pb.target.cols;
        let mut out = Vec::new();
        for (r, &len) in pb.tgt_len.iter().enumerate() {
            let mut key = opts.glancing_key.clone();
            key.push(r as u64);
            let rows = &targets[r * w..(r + 1) * w];
            for i in glancing_positions(&pred[r * w..(r + 1) * w], rows, len, opts.glancing_ratio, &key) {
                out.push((r * w + i, rows[i]));
            }
        }
        out
    } else {
        Vec::new()
    };

    let enc = encode(g, m, &pb.src, &pb.src_len)?;
    let emb_prime = target_embedding(g, m)?;
    let input = decoder_input(g, m, pb, opts.use_it, emb_prime)?;
    let input = glance_node(g, input, emb_prime, &replaced)?;
    let dec = decode(g, m, input, &pb.mask, &enc, emb_prime)?;
    let loss = if pb.phase == PhaseKind::Nat {
        let c = m.config.max_offset;
        let classes: Vec<usize> = pb
            .src_len
            .iter()
            .zip(&pb.tgt_len)
            .map(|(&n, &t)| offset_class(n, t, c))
            .collect();
        let len_logits = length_logits(g, m, &enc)?;
        nat_loss(g, dec.logits, &targets, pad, Some((len_logits, &classes)), opts.length_weight)?
    } else {
        nat_loss(g, dec.logits, &targets, pad, None, 0.0)?
    };
    Ok(StepNodes {
        loss,
        logits: dec.logits,
        input,
    })
}
