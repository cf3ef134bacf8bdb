//! Graph construction for the encoder and decoder stacks (pre-LN).

use crate::corpus::{IdMatrix, PAD};
use crate::error::{Error, Result};
use crate::model::config::CopyMode;
use crate::model::copy::{soft_copy_batch_matrix, soft_copy_node, uniform_copy_indices};
use crate::model::mask::{key_padding_mask, AttentionMask};
use crate::model::params::ModelParams;
use crate::numerics::{Element, Graph, NodeId, Tensor};

/// Sinusoidal position table for `batch` rows of `width` positions, `[batch * width, d]`.
pub fn positions<T: Element>(batch: usize, width: usize, d: usize) -> Tensor<T> {
    let mut one = vec![0.0f64; width * d];
    for pos in 0..width {
        for i in 0..d {
            let rate = 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let a = pos as f64 / rate;
            one[pos * d + i] = if i % 2 == 0 { a.sin() } else { a.cos() };
        }
    }
    let data: Vec<T> = (0..batch).flat_map(|_| one.iter().map(|&x| T::from_f64(x))).collect();
    Tensor::new(&[batch * width, d], data).expect("shape matches data")
}

pub(crate) fn param<'p, T: Element>(g: &mut Graph<'p, T>, m: &'p ModelParams<T>, name: &str) -> Result<NodeId> {
    g.param(&m.store, name)
}

fn linear<'p, T: Element>(g: &mut Graph<'p, T>, m: &'p ModelParams<T>, x: NodeId, w: &str, b: &str) -> Result<NodeId> {
    let w = param(g, m, w)?;
    let b = param(g, m, b)?;
    let y = g.matmul(x, w)?;
    g.add_bias(y, b)
}

fn norm<'p, T: Element>(g: &mut Graph<'p, T>, m: &'p ModelParams<T>, x: NodeId, prefix: &str) -> Result<NodeId> {
    let gain = param(g, m, &format!("{prefix}.g"))?;
    let bias = param(g, m, &format!("{prefix}.b"))?;
    g.layer_norm(x, gain, bias, 1)
}

/// `[B * len, d] -> [B * heads, len, d / heads]`.
fn split_heads<'p, T: Element>(g: &mut Graph<'p, T>, x: NodeId, b: usize, len: usize, heads: usize) -> Result<NodeId> {
    let d = g.shape(x)[1];
    let x = g.reshape(x, &[b, len, heads, d / heads])?;
    let x = g.permute_0213(x)?;
    g.reshape(x, &[b * heads, len, d / heads])
}

fn merge_heads<'p, T: Element>(g: &mut Graph<'p, T>, x: NodeId, b: usize, len: usize, heads: usize) -> Result<NodeId> {
    let dh = g.shape(x)[2];
    let x = g.reshape(x, &[b, heads, len, dh])?;
    let x = g.permute_0213(x)?;
    g.reshape(x, &[b * len, heads * dh])
}

/// Multi-head attention of `q_in [B*M, d]` over `kv_in [B*N, d]` with an
/// additive `mask [B*H, M, N]`. Returns the output and the attention weights.
#[allow(clippy::too_many_arguments)]
fn attention<'p, T: Element>(
    g: &mut Graph<'p, T>,
    m: &'p ModelParams<T>,
    prefix: &str,
    q_in: NodeId,
    kv_in: NodeId,
    mask: NodeId,
    b: usize,
    q_len: usize,
    k_len: usize,
) -> Result<(NodeId, NodeId)> {
    let heads = m.config.n_heads;
    let q = linear(g, m, q_in, &format!("{prefix}.wq"), &format!("{prefix}.bq"))?;
    let k = linear(g, m, kv_in, &format!("{prefix}.wk"), &format!("{prefix}.bk"))?;
    let v = linear(g, m, kv_in, &format!("{prefix}.wv"), &format!("{prefix}.bv"))?;
    let q = split_heads(g, q, b, q_len, heads)?;
    let k = split_heads(g, k, b, k_len, heads)?;
    let v = split_heads(g, v, b, k_len, heads)?;
    let scores = g.batch_matmul(q, k, false, true)?;
    let scores = g.scale(scores, 1.0 / (m.config.head_dim() as f64).sqrt())?;
    let scores = g.add(scores, mask)?;
    let probs = g.softmax(scores, 2)?;
    let ctx = g.batch_matmul(probs, v, false, false)?;
    let ctx = merge_heads(g, ctx, b, q_len, heads)?;
    let out = linear(g, m, ctx, &format!("{prefix}.wo"), &format!("{prefix}.bo"))?;
    Ok((out, probs))
}

fn feed_forward<'p, T: Element>(g: &mut Graph<'p, T>, m: &'p ModelParams<T>, x: NodeId, prefix: &str) -> Result<NodeId> {
    let h = linear(g, m, x, &format!("{prefix}.w1"), &format!("{prefix}.b1"))?;
    let h = g.gelu(h)?;
    linear(g, m, h, &format!("{prefix}.w2"), &format!("{prefix}.b2"))
}

fn residual<'p, T: Element>(g: &mut Graph<'p, T>, x: NodeId, y: NodeId, p: f64) -> Result<NodeId> {
    let y = g.dropout(y, p)?;
    g.add(x, y)
}

/// Scales table rows into the model input space and adds positions.
fn embed_input<'p, T: Element>(g: &mut Graph<'p, T>, m: &'p ModelParams<T>, rows: NodeId, b: usize, width: usize) -> Result<NodeId> {
    let d = m.config.d_model;
    let x = g.scale(rows, (d as f64).sqrt())?;
    let pe = g.constant(positions(b, width, d));
    let x = g.add(x, pe)?;
    g.dropout(x, m.config.dropout)
}

/// Encoder output for a padded source batch.
#[derive(Clone, Debug)]
pub struct Encoded {
    /// Final encoder states `[B * N, d]`.
    pub states: NodeId,
    pub batch: usize,
    pub width: usize,
    pub lengths: Vec<usize>,
}

/// Runs the encoder over `src [B, N]` with per-row lengths.
pub fn encode<'p, T: Element>(
    g: &mut Graph<'p, T>,
    m: &'p ModelParams<T>,
    src: &IdMatrix,
    src_len: &[usize],
) -> Result<Encoded> {
    let (b, n) = (src.rows, src.cols);
    if src_len.len() != b || src_len.iter().any(|&l| l == 0 || l > n) {
        return Err(Error::input(format!("source lengths {src_len:?} do not fit a {b}x{n} batch")));
    }
    let v = m.vocab_size();
    if let Some(&bad) = src.data.iter().find(|&&i| i >= v) {
        return Err(Error::input(format!("source id {bad} out of range for vocabulary of {v}")));
    }
    let table = param(g, m, m.source_table())?;
    let rows = g.gather_rows(table, &src.data)?;
    let mut x = embed_input(g, m, rows, b, n)?;
    // keys beyond each length are hidden; padded queries are never read
    let mask = g.constant(key_padding_mask(src_len, n, n, m.config.n_heads));
    let p = m.config.dropout;
    for l in 0..m.config.enc_layers {
        let h = norm(g, m, x, &format!("enc.{l}.ln1"))?;
        let (a, _) = attention(g, m, &format!("enc.{l}.attn"), h, h, mask, b, n, n)?;
        x = residual(g, x, a, p)?;
        let h = norm(g, m, x, &format!("enc.{l}.ln2"))?;
        let f = feed_forward(g, m, h, &format!("enc.{l}.ffn"))?;
        x = residual(g, x, f, p)?;
    }
    let states = norm(g, m, x, "enc.ln")?;
    Ok(Encoded {
        states,
        batch: b,
        width: n,
        lengths: src_len.to_vec(),
    })
}

/// Decoder output for a padded batch of `T`-wide inputs.
#[derive(Clone, Debug)]
pub struct Decoded {
    /// Logits over the kept target ids, `[B * T, v']`.
    pub logits: NodeId,
    /// Final decoder states `[B * T, d]`.
    pub states: NodeId,
    /// Self-attention weights per layer, `[B * H, T, T]`.
    pub self_attention: Vec<NodeId>,
}

/// Runs the decoder on `input [B * T, d]` (vectors in embedding space).
/// Output logits are tied to the kept rows of the target embedding.
pub fn decode<'p, T: Element>(
    g: &mut Graph<'p, T>,
    m: &'p ModelParams<T>,
    input: NodeId,
    mask: &AttentionMask,
    enc: &Encoded,
    emb_prime: NodeId,
) -> Result<Decoded> {
    let (b, t) = (mask.batch(), mask.width);
    let d = m.config.d_model;
    if b != enc.batch || g.shape(input) != [b * t, d] {
        return Err(Error::input(format!(
            "decoder input {:?} does not match mask of {b} rows x {t} positions",
            g.shape(input)
        )));
    }
    let mut x = embed_input(g, m, input, b, t)?;
    let heads = m.config.n_heads;
    let self_mask = g.constant(mask.additive(heads));
    let cross_mask = g.constant(key_padding_mask(&enc.lengths, t, enc.width, heads));
    let p = m.config.dropout;
    let mut maps = Vec::with_capacity(m.config.dec_layers);
    for l in 0..m.config.dec_layers {
        let h = norm(g, m, x, &format!("dec.{l}.ln1"))?;
        let (a, probs) = attention(g, m, &format!("dec.{l}.self"), h, h, self_mask, b, t, t)?;
        maps.push(probs);
        x = residual(g, x, a, p)?;
        let h = norm(g, m, x, &format!("dec.{l}.ln2"))?;
        let (c, _) = attention(g, m, &format!("dec.{l}.cross"), h, enc.states, cross_mask, b, t, enc.width)?;
        x = residual(g, x, c, p)?;
        let h = norm(g, m, x, &format!("dec.{l}.ln3"))?;
        let f = feed_forward(g, m, h, &format!("dec.{l}.ffn"))?;
        x = residual(g, x, f, p)?;
    }
    let states = norm(g, m, x, "dec.ln")?;
    let logits = g.matmul_t(states, emb_prime, false, true)?;
    Ok(Decoded {
        logits,
        states,
        self_attention: maps,
    })
}

/// Kept target rows of the shared embedding, `Emb'` as `[v', d]`.
pub fn target_embedding<'p, T: Element>(g: &mut Graph<'p, T>, m: &'p ModelParams<T>) -> Result<NodeId> {
    let emb = param(g, m, "emb")?;
    g.gather_rows(emb, m.filter.kept_ids())
}

/// Rows of the `emb` table for a padded id matrix, `[B * W, d]`.
pub fn embed_ids<'p, T: Element>(g: &mut Graph<'p, T>, m: &'p ModelParams<T>, ids: &IdMatrix) -> Result<NodeId> {
    let emb = param(g, m, "emb")?;
    g.gather_rows(emb, &ids.data)
}

/// Uniform-copy decoder input `[B * t_width, d]` gathered straight from the
/// source table; padded positions read the PAD row.
pub fn copy_input<'p, T: Element>(
    g: &mut Graph<'p, T>,
    m: &'p ModelParams<T>,
    src: &IdMatrix,
    src_len: &[usize],
    tgt_len: &[usize],
    t_width: usize,
) -> Result<NodeId> {
    let table = param(g, m, m.source_table())?;
    match m.config.copy {
        CopyMode::Uniform => {
            let mut ids = vec![PAD; src.rows * t_width];
            for r in 0..src.rows {
                let idx = uniform_copy_indices(src_len[r], tgt_len[r]);
                for (i, j) in idx.into_iter().enumerate() {
                    ids[r * t_width + i] = src.get(r, j);
                }
            }
            g.gather_rows(table, &ids)
        }
        CopyMode::Soft { tau } => {
            let rows = g.gather_rows(table, &src.data)?;
            let w = soft_copy_batch_matrix(src_len, src.cols, tgt_len, t_width, tau);
            soft_copy_node(g, w, rows)
        }
    }
}

/// Length logits `[B, 2C + 1]` from mean-pooled valid encoder states.
pub fn length_logits<'p, T: Element>(g: &mut Graph<'p, T>, m: &'p ModelParams<T>, enc: &Encoded) -> Result<NodeId> {
    let (b, n) = (enc.batch, enc.width);
    let mut pool = vec![T::zero(); b * b * n];
    for (r, &len) in enc.lengths.iter().enumerate() {
        let w = T::from_f64(1.0 / len as f64);
        for j in 0..len {
            pool[r * b * n + r * n + j] = w;
        }
    }
    let pool = g.constant(Tensor::new(&[b, b * n], pool)?);
    let pooled = g.matmul(pool, enc.states)?;
    linear(g, m, pooled, "len.w", "len.b")
}
