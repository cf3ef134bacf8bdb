use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::numerics::rng::hash_key;
use crate::numerics::{Element, Graph, NodeId, Tensor};

/// Positions of one row whose input is replaced: `round(ratio * hamming)`
/// of the first `len` positions, drawn uniformly without replacement from a
/// generator keyed by `key`. Returned in ascending order.
pub fn glancing_positions(predicted: &[usize], target: &[usize], len: usize, ratio: f64, key: &[u64]) -> Vec<usize> {
    let hamming = (0..len).filter(|&i| predicted[i] != target[i]).count();
    let count = ((ratio * hamming as f64).round() as usize).min(len);
    if count == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hash_key(key));
    let mut picked = sample(&mut rng, len, count).into_vec();
    picked.sort_unstable();
    picked
}

/// Row selection for a glanced input over `[input; emb_prime]` stacked:
/// row `r` keeps `r` unless replaced, in which case it points at
/// `rows + target[r]` (a row of `emb_prime` indexed by filtered id).
pub fn glancing_index(rows: usize, replaced: &[(usize, usize)]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..rows).collect();
    for &(r, filtered_target) in replaced {
        idx[r] = rows + filtered_target;
    }
    idx
}

/// Replaces rows of `input [R, d]` with target embeddings on the graph.
pub fn glance_node<'p, T: Element>(g: &mut Graph<'p, T>, input: NodeId, emb_prime: NodeId, replaced: &[(usize, usize)]) -> Result<NodeId> {
    if replaced.is_empty() {
        return Ok(input);
    }
    let rows = g.shape(input)[0];
    let stacked = g.concat_rows(input, emb_prime)?;
    g.gather_rows(stacked, &glancing_index(rows, replaced))
}

/// Standalone glancing on plain tensors for a single row of `T` positions:
/// returns the mixed input and the replaced positions.
pub fn glancing_sample<T: Element>(
    input: &Tensor<T>,
    target: &[usize],
    predicted: &[usize],
    emb_prime: &Tensor<T>,
    ratio: f64,
    key: &[u64],
) -> Result<(Tensor<T>, Vec<usize>)> {
    let t = input.rows();
    let pos = glancing_positions(predicted, target, t, ratio, key);
    let mut g = Graph::new();
    let x = g.constant(input.clone());
    let e = g.constant(emb_prime.clone());
    let replaced: Vec<(usize, usize)> = pos.iter().map(|&i| (i, target[i])).collect();
    let out = glance_node(&mut g, x, e, &replaced)?;
    Ok((g.value(out).clone(), pos))
}
