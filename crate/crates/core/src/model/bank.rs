//! Target embedding bank and the attentive decoder-input transformation.

use crate::error::{Error, Result};
use crate::model::layers::param;
use crate::model::params::ModelParams;
use crate::numerics::{Element, Graph, NodeId, Tensor};

/// Materialized target-side embedding matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingBank<T: Element = f32> {
    /// `Emb'`: kept target rows, `[v', d]`.
    pub emb_prime: Tensor<T>,
    /// `W_q`, `[d, d]`.
    pub w_q: Tensor<T>,
    /// `W_c`, `[v*, v']`, when compression is enabled.
    pub w_c: Option<Tensor<T>>,
    /// Divide the similarity logits by `sqrt(d)`.
    pub scaled: bool,
}

/// Intermediate values of one input transformation.
#[derive(Clone, Debug, PartialEq)]
pub struct ITState<T: Element = f32> {
    /// Copied input, `[T, d]`.
    pub z: Tensor<T>,
    /// `z · W_q`, `[T, d]`.
    pub z_l: Tensor<T>,
    /// Row-stochastic similarities, `[T, v']` (or `[T, v*]`).
    pub sim: Tensor<T>,
    /// `Sim · Emb'` (or `Sim · Emb*`), `[T, d]`.
    pub z_prime: Tensor<T>,
}

impl<T: Element> EmbeddingBank<T> {
    pub fn from_params(m: &ModelParams<T>) -> Result<Self> {
        let emb = m.tensor("emb")?;
        let d = emb.cols();
        let mut rows = Vec::with_capacity(m.filter.len() * d);
        for &id in m.filter.kept_ids() {
            rows.extend_from_slice(emb.row(id));
        }
        Ok(EmbeddingBank {
            emb_prime: Tensor::new(&[m.filter.len(), d], rows)?,
            w_q: m.tensor("it.wq")?.clone(),
            w_c: match m.config.compress {
                Some(_) => Some(m.tensor("it.wc")?.clone()),
                None => None,
            },
            scaled: m.config.it_scaled,
        })
    }

    /// Attention keys and values: `Emb*` when compressed, else `Emb'`.
    pub fn keys(&self) -> Result<Tensor<T>> {
        match &self.w_c {
            Some(_) => compress_embedding(self),
            None => Ok(self.emb_prime.clone()),
        }
    }
}

/// `Emb* = W_c · Emb'`, `[v*, d]`.
pub fn compress_embedding<T: Element>(bank: &EmbeddingBank<T>) -> Result<Tensor<T>> {
    let w_c = bank
        .w_c
        .as_ref()
        .ok_or_else(|| Error::config("compression requested but the bank has no W_c"))?;
    w_c.matmul(&bank.emb_prime)
}

/// Graph nodes of one transformation.
#[derive(Clone, Copy, Debug)]
pub struct ItNodes {
    pub z_l: NodeId,
    pub sim: NodeId,
    pub z_prime: NodeId,
}

/// Records the transformation of `z [R, d]` on `g`. `keys` is the node
/// returned by [`it_keys`].
pub fn it_nodes<'p, T: Element>(g: &mut Graph<'p, T>, wq: NodeId, keys: NodeId, z: NodeId, scaled: bool) -> Result<ItNodes> {
    let z_l = g.matmul(z, wq)?;
    let mut logits = g.matmul_t(z_l, keys, false, true)?;
    if scaled {
        let d = g.shape(z)[1];
        logits = g.scale(logits, 1.0 / (d as f64).sqrt())?;
    }
    let sim = g.softmax(logits, 1)?;
    let z_prime = g.matmul(sim, keys)?;
    Ok(ItNodes { z_l, sim, z_prime })
}

/// Keys for the model's transformation on `g`: `Emb*` or `Emb'`.
pub fn it_keys<'p, T: Element>(g: &mut Graph<'p, T>, m: &'p ModelParams<T>, emb_prime: NodeId) -> Result<NodeId> {
    match m.config.compress {
        Some(_) => {
            let wc = param(g, m, "it.wc")?;
            g.matmul(wc, emb_prime)
        }
        None => Ok(emb_prime),
    }
}

/// Applies the model's transformation to decoder input `z` on `g`.
pub fn transform_input<'p, T: Element>(g: &mut Graph<'p, T>, m: &'p ModelParams<T>, z: NodeId, emb_prime: NodeId) -> Result<ItNodes> {
    let wq = param(g, m, "it.wq")?;
    let keys = it_keys(g, m, emb_prime)?;
    it_nodes(g, wq, keys, z, m.config.it_scaled)
}

/// Standalone transformation of `z [T, d]` against `bank`.
pub fn it_transform<T: Element>(bank: &EmbeddingBank<T>, z: &Tensor<T>) -> Result<ITState<T>> {
    if !z.is_finite() {
        return Err(Error::NonFinite("it_transform input"));
    }
    let mut g = Graph::new();
    let zn = g.constant(z.clone());
    let wq = g.constant(bank.w_q.clone());
    let keys = g.constant(bank.keys()?);
    let n = it_nodes(&mut g, wq, keys, zn, bank.scaled)?;
    Ok(ITState {
        z: z.clone(),
        z_l: g.value(n.z_l).clone(),
        sim: g.value(n.sim).clone(),
        z_prime: g.value(n.z_prime).clone(),
    })
}
