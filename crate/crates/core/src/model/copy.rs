use crate::error::{Error, Result};
use crate::numerics::{Element, Graph, NodeId, Tensor};

/// Source index copied to each of `t` decoder positions: `floor(i * n / t)`.
pub fn uniform_copy_indices(n: usize, t: usize) -> Vec<usize> {
    (0..t).map(|i| i * n / t).collect()
}

/// Soft-copy weights `[t, n]`; row `i` is `softmax_j(-|i - j * t / n| / tau)`.
pub fn soft_copy_weights(n: usize, t: usize, tau: f64) -> Vec<f64> {
    let mut w = Vec::with_capacity(t * n);
    for i in 0..t {
        let logits: Vec<f64> = (0..n)
            .map(|j| -((i as f64) - (j * t) as f64 / n as f64).abs() / tau)
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        w.extend(logits.iter().map(|l| (l - max).exp() / z));
    }
    w
}

fn check_lengths(n: usize, t: usize) -> Result<()> {
    if n == 0 || t == 0 {
        return Err(Error::input(format!("copy needs n >= 1 and t >= 1, got n={n} t={t}")));
    }
    Ok(())
}

/// `z[i] = src_emb[floor(i * N / T)]` for a `[N, d]` source embedding.
pub fn uniform_copy<T: Element>(src_emb: &Tensor<T>, t: usize) -> Result<Tensor<T>> {
    let n = src_emb.rows();
    check_lengths(n, t)?;
    let d = src_emb.cols();
    let mut data = Vec::with_capacity(t * d);
    for i in uniform_copy_indices(n, t) {
        data.extend_from_slice(src_emb.row(i));
    }
    Tensor::new(&[t, d], data)
}

pub fn soft_copy<T: Element>(src_emb: &Tensor<T>, t: usize, tau: f64) -> Result<Tensor<T>> {
    let n = src_emb.rows();
    check_lengths(n, t)?;
    if !(tau > 0.0) {
        return Err(Error::input(format!("soft copy temperature must be positive, got {tau}")));
    }
    let w = Tensor::from_f64(&[t, n], &soft_copy_weights(n, t, tau))?;
    w.matmul(src_emb)
}

/// Block-diagonal soft-copy matrix `[B * t_width, B * n_width]` for a padded
/// batch; padded target rows are all zero.
pub(crate) fn soft_copy_batch_matrix<T: Element>(
    src_len: &[usize],
    n_width: usize,
    tgt_len: &[usize],
    t_width: usize,
    tau: f64,
) -> Tensor<T> {
    let b = src_len.len();
    let cols = b * n_width;
    let mut data = vec![T::zero(); b * t_width * cols];
    for r in 0..b {
        let (n, t) = (src_len[r], tgt_len[r]);
        let w = soft_copy_weights(n, t, tau);
        for i in 0..t {
            for j in 0..n {
                data[(r * t_width + i) * cols + r * n_width + j] = T::from_f64(w[i * n + j]);
            }
        }
    }
    Tensor::new(&[b * t_width, cols], data).expect("shape matches data")
}

/// Soft copy on a graph: `weights · src_rows`.
pub(crate) fn soft_copy_node<'p, T: Element>(g: &mut Graph<'p, T>, weights: Tensor<T>, src_rows: NodeId) -> Result<NodeId> {
    let w = g.constant(weights);
    g.matmul(w, src_rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_indices_by_formula() {
        assert_eq!(uniform_copy_indices(3, 3), vec![0, 1, 2]);
        assert_eq!(uniform_copy_indices(2, 4), vec![0, 0, 1, 1]);
        let direct: Vec<usize> = (0..5).map(|t| (t as f64 * 3.0 / 5.0).floor() as usize).collect();
        assert_eq!(uniform_copy_indices(3, 5), direct);
    }

    #[test]
    fn uniform_copy_identity_when_lengths_match() {
        let e = Tensor::<f64>::from_fn(&[3, 2], |i| i as f64);
        assert_eq!(uniform_copy(&e, 3).unwrap(), e);
    }

    #[test]
    fn soft_weights_rows_are_distributions() {
        let w = soft_copy_weights(4, 7, 0.7);
        for row in w.chunks(4) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn soft_two_by_two_matches_scalar_softmax() {
        let w = soft_copy_weights(2, 2, 1.0);
        let a = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((w[0] - a).abs() < 1e-12 && (w[1] - (1.0 - a)).abs() < 1e-12);
        assert!((w[2] - (1.0 - a)).abs() < 1e-12 && (w[3] - a).abs() < 1e-12);
    }

    #[test]
    fn small_tau_approaches_nearest_index() {
        let e = Tensor::<f64>::from_fn(&[3, 1], |i| (i * 10) as f64);
        let z = soft_copy(&e, 3, 1e-3).unwrap();
        assert!(z.max_abs_diff(&e) < 1e-9);
    }

    #[test]
    fn degenerate_lengths_rejected() {
        let e = Tensor::<f32>::zeros(&[0, 2]);
        assert!(uniform_copy(&e, 2).is_err());
    }
}
