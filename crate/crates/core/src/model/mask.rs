use crate::numerics::{Element, Tensor, MASK_VALUE};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskKind {
    /// Position `i` may attend to `j <= i` only.
    Causal,
    /// Every valid position is visible.
    Full,
}

/// Self-attention visibility for a padded batch of sequences.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    pub kind: MaskKind,
    /// Valid length of each row; positions at or beyond it are padding.
    pub lengths: Vec<usize>,
    pub width: usize,
}

impl AttentionMask {
    pub fn new(kind: MaskKind, lengths: &[usize], width: usize) -> Self {
        AttentionMask {
            kind,
            lengths: lengths.to_vec(),
            width,
        }
    }

    pub fn batch(&self) -> usize {
        self.lengths.len()
    }

    /// Whether query `i` of row `b` may attend to key `j`.
    pub fn allows(&self, b: usize, i: usize, j: usize) -> bool {
        let len = self.lengths[b];
        if i >= len || j >= len {
            return false;
        }
        match self.kind {
            MaskKind::Causal => j <= i,
            MaskKind::Full => true,
        }
    }

    /// Additive mask `[B * heads, width, width]`: 0 where allowed, −1e9 elsewhere.
    pub fn additive<T: Element>(&self, heads: usize) -> Tensor<T> {
        let w = self.width;
        let masked = T::from_f64(MASK_VALUE);
        let mut data = vec![T::zero(); self.batch() * heads * w * w];
        for b in 0..self.batch() {
            let block = &mut data[b * heads * w * w..(b + 1) * heads * w * w];
            for i in 0..w {
                for j in 0..w {
                    if !self.allows(b, i, j) {
                        for h in 0..heads {
                            block[h * w * w + i * w + j] = masked;
                        }
                    }
                }
            }
        }
        Tensor::new(&[self.batch() * heads, w, w], data).expect("shape matches data")
    }
}

/// Additive mask `[B * heads, queries, keys]` hiding key positions at or
/// beyond each row's `key_lengths`.
pub fn key_padding_mask<T: Element>(key_lengths: &[usize], queries: usize, keys: usize, heads: usize) -> Tensor<T> {
    let masked = T::from_f64(MASK_VALUE);
    let b = key_lengths.len();
    let mut data = vec![T::zero(); b * heads * queries * keys];
    for (r, &len) in key_lengths.iter().enumerate() {
        for h in 0..heads {
            let base = (r * heads + h) * queries * keys;
            for i in 0..queries {
                for j in len..keys {
                    data[base + i * keys + j] = masked;
                }
            }
        }
    }
    Tensor::new(&[b * heads, queries, keys], data).expect("shape matches data")
}
