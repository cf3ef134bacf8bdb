//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation applied during a forward pass. Nodes
//! are appended in evaluation order, so a single reverse sweep over the tape
//! visits each node after all of its consumers.

use std::borrow::Cow;
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::rng;
use crate::numerics::tensor::{gemm_checked, Element, Tensor};
use crate::numerics::ParamStore;

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

/// Added to masked attention logits before the softmax.
pub const MASK_VALUE: f64 = -1e9;

const LAYER_NORM_EPS: f64 = 1e-5;

enum Op<T> {
    Leaf,
    MatMul {
        a: NodeId,
        b: NodeId,
        ta: bool,
        tb: bool,
    },
    BatchMatMul {
        a: NodeId,
        b: NodeId,
        ta: bool,
        tb: bool,
    },
    Add(NodeId, NodeId),
    AddBias {
        x: NodeId,
        bias: NodeId,
    },
    Scale(NodeId, T),
    Gelu(NodeId),
    Softmax {
        x: NodeId,
        axis: usize,
    },
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        axis: usize,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    GatherRows {
        table: NodeId,
        ids: Vec<usize>,
    },
    ConcatRows(NodeId, NodeId),
    Reshape(NodeId),
    Permute0213 {
        x: NodeId,
        dims: [usize; 4],
    },
    Dropout {
        x: NodeId,
        mask: Vec<T>,
    },
    CrossEntropy {
        logits: NodeId,
        targets: Vec<usize>,
        ignore: usize,
        probs: Vec<T>,
        count: usize,
    },
    Sum(NodeId),
}

struct Node<'p, T: Element> {
    value: Cow<'p, Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Per-parameter gradients keyed by parameter name.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T = f32> {
    map: BTreeMap<String, Tensor<T>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.map.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.map.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    /// Global L2 norm over all gradient tensors.
    pub fn global_norm(&self) -> f64 {
        self.map
            .values()
            .map(|t| t.norm().powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Clone, Copy, Debug)]
struct DropoutKey {
    seed: u64,
    step: u64,
}

/// Recording of one forward computation.
pub struct Graph<'p, T: Element = f32> {
    nodes: Vec<Node<'p, T>>,
    params: BTreeMap<String, NodeId>,
    param_names: BTreeMap<NodeId, String>,
    dropout: Option<DropoutKey>,
    stochastic: bool,
}

impl<'p, T: Element> Default for Graph<'p, T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

fn check_finite<T: Element>(op: &'static str, t: &Tensor<T>) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(op))
    }
}

/// `(outer, len, inner)` decomposition of `shape` around `axis`.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn gelu_parts<T: Element>(x: T) -> (T, T) {
    // tanh approximation
    let c = T::from_f64((2.0 / std::f64::consts::PI).sqrt());
    let k = T::from_f64(0.044_715);
    let half = T::from_f64(0.5);
    let three = T::from_f64(3.0);
    let u = c * (x + k * x * x * x);
    let th = u.tanh();
    let y = half * x * (T::one() + th);
    let dy = half * (T::one() + th) + half * x * (T::one() - th * th) * c * (T::one() + three * k * x * x);
    (y, dy)
}

impl<'p, T: Element> Graph<'p, T> {
    /// Graph in evaluation mode: dropout is the identity.
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: BTreeMap::new(),
            param_names: BTreeMap::new(),
            dropout: None,
            stochastic: false,
        }
    }

    /// Graph in training mode; dropout masks are keyed by `(seed, step, node)`.
    pub fn training(seed: u64, step: u64) -> Self {
        let mut g = Self::new();
        g.dropout = Some(DropoutKey { seed, step });
        g
    }

    /// Switches this graph to training mode for subsequent dropout calls.
    pub fn enable_dropout(&mut self, seed: u64, step: u64) {
        self.dropout = Some(DropoutKey { seed, step });
    }

    pub fn is_training(&self) -> bool {
        self.dropout.is_some()
    }

    /// True once any dropout with `p > 0` has been applied in training mode.
    pub fn is_stochastic(&self) -> bool {
        self.stochastic
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[NodeId]) -> NodeId {
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Non-trainable input.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op: Op::Leaf,
            requires_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Trainable leaf borrowed from `store`. Repeated calls with the same
    /// name return the same node so gradients accumulate in one place.
    pub fn param(&mut self, store: &'p ParamStore<T>, name: &str) -> Result<NodeId> {
        if let Some(&id) = self.params.get(name) {
            return Ok(id);
        }
        let value = store
            .get(name)
            .ok_or_else(|| Error::usage(format!("unknown parameter `{name}`")))?;
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Leaf,
            requires_grad: true,
        });
        let id = NodeId(self.nodes.len() - 1);
        self.params.insert(name.to_string(), id);
        self.param_names.insert(id, name.to_string());
        Ok(id)
    }

    /// Trainable leaf holding an owned tensor.
    pub fn param_owned(&mut self, name: &str, value: Tensor<T>) -> Result<NodeId> {
        if self.params.contains_key(name) {
            return Err(Error::usage(format!("parameter `{name}` registered twice")));
        }
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op: Op::Leaf,
            requires_grad: true,
        });
        let id = NodeId(self.nodes.len() - 1);
        self.params.insert(name.to_string(), id);
        self.param_names.insert(id, name.to_string());
        Ok(id)
    }

    /// `op(a) · op(b)` for rank-2 inputs; `ta`/`tb` transpose the operand.
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId, ta: bool, tb: bool) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 {
            return Err(shape_err("matmul", sa, sb));
        }
        let (m, k) = if ta { (sa[1], sa[0]) } else { (sa[0], sa[1]) };
        let (k2, n) = if tb { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if k != k2 {
            return Err(shape_err("matmul", sa, sb));
        }
        let mut out = vec![T::zero(); m * n];
        gemm_checked(m, k, n, self.value(a).data(), ta, self.value(b).data(), tb, &mut out, false);
        let out = Tensor::new(&[m, n], out)?;
        check_finite("matmul", &out)?;
        Ok(self.push(out, Op::MatMul { a, b, ta, tb }, &[a, b]))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.matmul_t(a, b, false, false)
    }

    /// Batched `op(a[g]) · op(b[g])` over the leading dimension of rank-3 inputs.
    pub fn batch_matmul(&mut self, a: NodeId, b: NodeId, ta: bool, tb: bool) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(shape_err("batch_matmul", sa, sb));
        }
        let groups = sa[0];
        let (m, k) = if ta { (sa[2], sa[1]) } else { (sa[1], sa[2]) };
        let (k2, n) = if tb { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if k != k2 {
            return Err(shape_err("batch_matmul", sa, sb));
        }
        let mut out = vec![T::zero(); groups * m * n];
        {
            let (av, bv) = (self.value(a).data(), self.value(b).data());
            for g in 0..groups {
                gemm_checked(
                    m,
                    k,
                    n,
                    &av[g * m * k..(g + 1) * m * k],
                    ta,
                    &bv[g * k * n..(g + 1) * k * n],
                    tb,
                    &mut out[g * m * n..(g + 1) * m * n],
                    false,
                );
            }
        }
        let out = Tensor::new(&[groups, m, n], out)?;
        check_finite("batch_matmul", &out)?;
        Ok(self.push(out, Op::BatchMatMul { a, b, ta, tb }, &[a, b]))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("add", self.shape(a), self.shape(b)));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let out = Tensor::new(self.shape(a), data)?;
        check_finite("add", &out)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    /// Adds a vector of length `last_dim(x)` to every row of `x`.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sb.len() != 1 || sx.last() != Some(&sb[0]) {
            return Err(shape_err("add_bias", sx, sb));
        }
        let n = sb[0];
        let bv = self.value(bias).data();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bv[i % n])
            .collect();
        let out = Tensor::new(sx, data)?;
        check_finite("add_bias", &out)?;
        Ok(self.push(out, Op::AddBias { x, bias }, &[x, bias]))
    }

    pub fn scale(&mut self, x: NodeId, s: f64) -> Result<NodeId> {
        let s = T::from_f64(s);
        let out = self.value(x).map(|v| v * s);
        check_finite("scale", &out)?;
        Ok(self.push(out, Op::Scale(x, s), &[x]))
    }

    pub fn gelu(&mut self, x: NodeId) -> Result<NodeId> {
        let out = self.value(x).map(|v| gelu_parts(v).0);
        check_finite("gelu", &out)?;
        Ok(self.push(out, Op::Gelu(x), &[x]))
    }

    /// Softmax along `axis`, computed with max-subtraction.
    pub fn softmax(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(shape_err("softmax", &shape, &[axis]));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut max = T::neg_infinity();
                for j in 0..len {
                    max = max.max(src[base + j * inner]);
                }
                let mut sum = T::zero();
                for j in 0..len {
                    let e = (src[base + j * inner] - max).exp();
                    out[base + j * inner] = e;
                    sum = sum + e;
                }
                for j in 0..len {
                    out[base + j * inner] = out[base + j * inner] / sum;
                }
            }
        }
        let out = Tensor::new(&shape, out)?;
        check_finite("softmax", &out)?;
        Ok(self.push(out, Op::Softmax { x, axis }, &[x]))
    }

    /// Layer normalization along `axis` with affine `gamma`, `beta` of length
    /// `shape[axis]`.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, axis: usize) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(shape_err("layer_norm", &shape, &[axis]));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        if self.shape(gamma) != [len] || self.shape(beta) != [len] {
            return Err(shape_err("layer_norm", &shape, self.shape(gamma)));
        }
        let src = self.value(x).data();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut xhat = vec![T::zero(); src.len()];
        let mut out = vec![T::zero(); src.len()];
        let mut rstd = vec![T::zero(); outer * inner];
        let n = T::from_f64(len as f64);
        let eps = T::from_f64(LAYER_NORM_EPS);
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mean = (0..len).map(|j| src[base + j * inner]).sum::<T>() / n;
                let var = (0..len)
                    .map(|j| {
                        let d = src[base + j * inner] - mean;
                        d * d
                    })
                    .sum::<T>()
                    / n;
                let r = T::one() / (var + eps).sqrt();
                rstd[o * inner + i] = r;
                for j in 0..len {
                    let idx = base + j * inner;
                    let h = (src[idx] - mean) * r;
                    xhat[idx] = h;
                    out[idx] = h * gv[j] + bv[j];
                }
            }
        }
        let out = Tensor::new(&shape, out)?;
        check_finite("layer_norm", &out)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                axis,
                xhat,
                rstd,
            },
            &[x, gamma, beta],
        ))
    }

    /// Rows `table[ids[i]]` of a rank-2 table.
    pub fn gather_rows(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let st = self.shape(table);
        if st.len() != 2 {
            return Err(shape_err("gather_rows", st, &[ids.len()]));
        }
        let (v, d) = (st[0], st[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::input(format!("gather_rows: id {bad} out of range for {v} rows")));
        }
        let tv = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        let out = Tensor::new(&[ids.len(), d], out)?;
        Ok(self.push(
            out,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// Stacks two rank-2 tensors with equal column counts.
    pub fn concat_rows(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(shape_err("concat_rows", sa, sb));
        }
        let shape = [sa[0] + sb[0], sa[1]];
        let mut data = self.value(a).data().to_vec();
        data.extend_from_slice(self.value(b).data());
        let out = Tensor::new(&shape, data)?;
        Ok(self.push(out, Op::ConcatRows(a, b), &[a, b]))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    /// `[a, b, c, e] -> [a, c, b, e]`; used to split and merge attention heads.
    pub fn permute_0213(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape(x);
        if s.len() != 4 {
            return Err(shape_err("permute_0213", s, &[4]));
        }
        let dims = [s[0], s[1], s[2], s[3]];
        let out = permute_0213_data(self.value(x).data(), dims);
        let out = Tensor::new(&[dims[0], dims[2], dims[1], dims[3]], out)?;
        Ok(self.push(out, Op::Permute0213 { x, dims }, &[x]))
    }

    /// Inverted dropout. Identity in evaluation mode or when `p == 0`.
    pub fn dropout(&mut self, x: NodeId, p: f64) -> Result<NodeId> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::usage(format!("dropout probability {p} outside [0, 1)")));
        }
        let key = match self.dropout {
            Some(k) if p > 0.0 => k,
            _ => return Ok(x),
        };
        self.stochastic = true;
        let tensor_id = self.nodes.len() as u64;
        let keep = T::from_f64(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.value(x).len() as u64)
            .map(|i| {
                if rng::uniform(&[key.seed, key.step, tensor_id, i]) < p {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| v * m)
            .collect();
        let out = Tensor::new(self.shape(x), data)?;
        Ok(self.push(out, Op::Dropout { x, mask }, &[x]))
    }

    /// Mean token cross-entropy of `logits [R, C]` against `targets`,
    /// skipping rows whose target is `ignore`. Zero when every row is ignored.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize], ignore: usize) -> Result<NodeId> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != targets.len() {
            return Err(shape_err("cross_entropy", s, &[targets.len()]));
        }
        let (rows, classes) = (s[0], s[1]);
        let lv = self.value(logits).data();
        let mut probs = vec![T::zero(); rows * classes];
        let mut total = 0.0f64;
        let mut count = 0usize;
        for r in 0..rows {
            let row = &lv[r * classes..(r + 1) * classes];
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
            for c in 0..classes {
                probs[r * classes + c] = (row[c] - max).exp() / sum;
            }
            let t = targets[r];
            if t == ignore {
                continue;
            }
            if t >= classes {
                return Err(Error::input(format!("cross_entropy: target {t} out of range for {classes} classes")));
            }
            total += (max + sum.ln() - row[t]).as_f64();
            count += 1;
        }
        let loss = if count == 0 { 0.0 } else { total / count as f64 };
        let out = Tensor::scalar(T::from_f64(loss));
        check_finite("cross_entropy", &out)?;
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                ignore,
                probs,
                count,
            },
            &[logits],
        ))
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let total: f64 = self.value(x).data().iter().map(|v| v.as_f64()).sum();
        let out = Tensor::scalar(T::from_f64(total));
        check_finite("sum", &out)?;
        Ok(self.push(out, Op::Sum(x), &[x]))
    }

    /// Reverse sweep from a scalar `loss`. Returns gradients for every
    /// parameter reachable from it; unreached parameters are absent.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(self.shape(loss), T::one()));
        let mut out = BTreeMap::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    if let Some(name) = self.param_names.get(&NodeId(i)) {
                        out.insert(name.clone(), g);
                    }
                }
                &Op::MatMul { a, b, ta, tb } => {
                    let (sa, sb) = (self.shape(a), self.shape(b));
                    let (m, k) = if ta { (sa[1], sa[0]) } else { (sa[0], sa[1]) };
                    let n = if tb { sb[0] } else { sb[1] };
                    let (av, bv) = (self.value(a).data(), self.value(b).data());
                    if self.nodes[a.0].requires_grad {
                        let mut da = vec![T::zero(); m * k];
                        if ta {
                            gemm_checked(k, n, m, bv, tb, g.data(), true, &mut da, false);
                        } else {
                            gemm_checked(m, n, k, g.data(), false, bv, !tb, &mut da, false);
                        }
                        self.accumulate(&mut grads, a, da);
                    }
                    if self.nodes[b.0].requires_grad {
                        let mut db = vec![T::zero(); k * n];
                        if tb {
                            gemm_checked(n, m, k, g.data(), true, av, ta, &mut db, false);
                        } else {
                            gemm_checked(k, m, n, av, !ta, g.data(), false, &mut db, false);
                        }
                        self.accumulate(&mut grads, b, db);
                    }
                }
                &Op::BatchMatMul { a, b, ta, tb } => {
                    let (sa, sb) = (self.shape(a), self.shape(b));
                    let groups = sa[0];
                    let (m, k) = if ta { (sa[2], sa[1]) } else { (sa[1], sa[2]) };
                    let n = if tb { sb[1] } else { sb[2] };
                    let (av, bv, gv) = (self.value(a).data(), self.value(b).data(), g.data());
                    if self.nodes[a.0].requires_grad {
                        let mut da = vec![T::zero(); groups * m * k];
                        for gi in 0..groups {
                            let ga = &gv[gi * m * n..(gi + 1) * m * n];
                            let bb = &bv[gi * k * n..(gi + 1) * k * n];
                            let dst = &mut da[gi * m * k..(gi + 1) * m * k];
                            if ta {
                                gemm_checked(k, n, m, bb, tb, ga, true, dst, false);
                            } else {
                                gemm_checked(m, n, k, ga, false, bb, !tb, dst, false);
                            }
                        }
                        self.accumulate(&mut grads, a, da);
                    }
                    if self.nodes[b.0].requires_grad {
                        let mut db = vec![T::zero(); groups * k * n];
                        for gi in 0..groups {
                            let ga = &gv[gi * m * n..(gi + 1) * m * n];
                            let aa = &av[gi * m * k..(gi + 1) * m * k];
                            let dst = &mut db[gi * k * n..(gi + 1) * k * n];
                            if tb {
                                gemm_checked(n, m, k, ga, true, aa, ta, dst, false);
                            } else {
                                gemm_checked(k, m, n, aa, !ta, ga, false, dst, false);
                            }
                        }
                        self.accumulate(&mut grads, b, db);
                    }
                }
                &Op::Add(a, b) => {
                    if self.nodes[a.0].requires_grad {
                        self.accumulate(&mut grads, a, g.data().to_vec());
                    }
                    if self.nodes[b.0].requires_grad {
                        self.accumulate(&mut grads, b, g.into_data());
                    }
                }
                &Op::AddBias { x, bias } => {
                    if self.nodes[bias.0].requires_grad {
                        let n = self.shape(bias)[0];
                        let mut db = vec![T::zero(); n];
                        for (j, &v) in g.data().iter().enumerate() {
                            db[j % n] = db[j % n] + v;
                        }
                        self.accumulate(&mut grads, bias, db);
                    }
                    if self.nodes[x.0].requires_grad {
                        self.accumulate(&mut grads, x, g.into_data());
                    }
                }
                &Op::Scale(x, s) => {
                    let dx = g.data().iter().map(|&v| v * s).collect();
                    self.accumulate(&mut grads, x, dx);
                }
                &Op::Gelu(x) => {
                    let dx = g
                        .data()
                        .iter()
                        .zip(self.value(x).data())
                        .map(|(&gv, &xv)| gv * gelu_parts(xv).1)
                        .collect();
                    self.accumulate(&mut grads, x, dx);
                }
                &Op::Softmax { x, axis } => {
                    let (outer, len, inner) = axis_split(node.value.shape(), axis);
                    let y = node.value.data();
                    let gv = g.data();
                    let mut dx = vec![T::zero(); y.len()];
                    for o in 0..outer {
                        for ii in 0..inner {
                            let base = o * len * inner + ii;
                            let dot: T = (0..len).map(|j| gv[base + j * inner] * y[base + j * inner]).sum();
                            for j in 0..len {
                                let idx = base + j * inner;
                                dx[idx] = y[idx] * (gv[idx] - dot);
                            }
                        }
                    }
                    self.accumulate(&mut grads, x, dx);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    axis,
                    xhat,
                    rstd,
                } => {
                    let (outer, len, inner) = axis_split(node.value.shape(), *axis);
                    let gv = g.data();
                    let gam = self.value(*gamma).data();
                    let mut dgamma = vec![T::zero(); len];
                    let mut dbeta = vec![T::zero(); len];
                    let mut dx = vec![T::zero(); gv.len()];
                    let n = T::from_f64(len as f64);
                    for o in 0..outer {
                        for ii in 0..inner {
                            let base = o * len * inner + ii;
                            let mut sum_d = T::zero();
                            let mut sum_dx = T::zero();
                            for j in 0..len {
                                let idx = base + j * inner;
                                dgamma[j] = dgamma[j] + gv[idx] * xhat[idx];
                                dbeta[j] = dbeta[j] + gv[idx];
                                let dh = gv[idx] * gam[j];
                                sum_d = sum_d + dh;
                                sum_dx = sum_dx + dh * xhat[idx];
                            }
                            let r = rstd[o * inner + ii];
                            for j in 0..len {
                                let idx = base + j * inner;
                                let dh = gv[idx] * gam[j];
                                dx[idx] = r * (dh - sum_d / n - xhat[idx] * sum_dx / n);
                            }
                        }
                    }
                    if self.nodes[x.0].requires_grad {
                        self.accumulate(&mut grads, *x, dx);
                    }
                    if self.nodes[gamma.0].requires_grad {
                        self.accumulate(&mut grads, *gamma, dgamma);
                    }
                    if self.nodes[beta.0].requires_grad {
                        self.accumulate(&mut grads, *beta, dbeta);
                    }
                }
                Op::GatherRows { table, ids } => {
                    let st = self.shape(*table);
                    let d = st[1];
                    let mut dt = vec![T::zero(); st[0] * d];
                    for (r, &id) in ids.iter().enumerate() {
                        let src = &g.data()[r * d..(r + 1) * d];
                        for (dst, &v) in dt[id * d..(id + 1) * d].iter_mut().zip(src) {
                            *dst = *dst + v;
                        }
                    }
                    self.accumulate(&mut grads, *table, dt);
                }
                &Op::ConcatRows(a, b) => {
                    let split = self.value(a).len();
                    let data = g.into_data();
                    if self.nodes[a.0].requires_grad {
                        self.accumulate(&mut grads, a, data[..split].to_vec());
                    }
                    if self.nodes[b.0].requires_grad {
                        self.accumulate(&mut grads, b, data[split..].to_vec());
                    }
                }
                &Op::Reshape(x) => {
                    self.accumulate(&mut grads, x, g.into_data());
                }
                &Op::Permute0213 { x, dims } => {
                    let back = permute_0213_data(g.data(), [dims[0], dims[2], dims[1], dims[3]]);
                    self.accumulate(&mut grads, x, back);
                }
                Op::Dropout { x, mask } => {
                    let dx = g.data().iter().zip(mask).map(|(&v, &m)| v * m).collect();
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    ignore,
                    probs,
                    count,
                } => {
                    let classes = self.shape(*logits)[1];
                    let mut dl = vec![T::zero(); probs.len()];
                    if *count > 0 {
                        let scale = g.item() / T::from_f64(*count as f64);
                        for (r, &t) in targets.iter().enumerate() {
                            if t == *ignore {
                                continue;
                            }
                            for c in 0..classes {
                                dl[r * classes + c] = probs[r * classes + c] * scale;
                            }
                            dl[r * classes + t] = dl[r * classes + t] - scale;
                        }
                    }
                    self.accumulate(&mut grads, *logits, dl);
                }
                &Op::Sum(x) => {
                    let n = self.value(x).len();
                    self.accumulate(&mut grads, x, vec![g.item(); n]);
                }
            }
        }
        Ok(Gradients { map: out })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], id: NodeId, delta: Vec<T>) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(existing) => {
                for (e, d) in existing.data_mut().iter_mut().zip(delta) {
                    *e = *e + d;
                }
            }
            slot @ None => {
                *slot = Some(Tensor::new(self.shape(id), delta).expect("gradient shape matches node"));
            }
        }
    }
}

fn permute_0213_data<T: Element>(src: &[T], dims: [usize; 4]) -> Vec<T> {
    let [a, b, c, e] = dims;
    let mut out = vec![T::zero(); src.len()];
    for i in 0..a {
        for j in 0..b {
            for k in 0..c {
                let from = ((i * b + j) * c + k) * e;
                let to = ((i * c + k) * b + j) * e;
                out[to..to + e].copy_from_slice(&src[from..from + e]);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(entries: &[(&str, Tensor<f64>)]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        for (n, t) in entries {
            s.insert(n, t.clone());
        }
        s
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros(&[3]));
        let y = g.softmax(x, 0).unwrap();
        for &v in g.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-7);
        }
    }

    #[test]
    fn softmax_along_first_axis() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_f64(&[2, 2], &[0.0, 1.0, 0.0, 3.0]).unwrap());
        let y = g.softmax(x, 0).unwrap();
        let v = g.value(y).data();
        assert!((v[0] - 0.5).abs() < 1e-12 && (v[2] - 0.5).abs() < 1e-12);
        assert!((v[1] + v[3] - 1.0).abs() < 1e-12);
        assert!(v[3] > v[1]);
    }

    #[test]
    fn matmul_identity() {
        let mut g = Graph::<f32>::new();
        let a = Tensor::from_f64(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let i = g.constant(Tensor::eye(2));
        let an = g.constant(a.clone());
        let y = g.matmul(i, an).unwrap();
        assert_eq!(g.value(y), &a);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut g = Graph::<f32>::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err();
        match err {
            Error::Shape { lhs, rhs, .. } => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn cross_entropy_matches_log_softmax() {
        let mut g = Graph::<f32>::new();
        let l = g.constant(Tensor::from_f64(&[1, 2], &[10.0, -10.0]).unwrap());
        let ce = g.cross_entropy(l, &[0], usize::MAX).unwrap();
        // -log softmax([10,-10])[0] = log(1 + e^-20), evaluated in f64
        let oracle = (1.0f64 + (-20.0f64).exp()).ln();
        assert!((g.value(ce).item() as f64 - oracle).abs() < 1e-7);
    }

    #[test]
    fn cross_entropy_ignores_rows() {
        let mut g = Graph::<f64>::new();
        let l = g.constant(Tensor::from_f64(&[2, 2], &[0.0, 0.0, 5.0, -5.0]).unwrap());
        let ce = g.cross_entropy(l, &[0, 9], 9).unwrap();
        assert!((g.value(ce).item() - 2f64.ln()).abs() < 1e-12);
        let all = g.cross_entropy(l, &[9, 9], 9).unwrap();
        assert_eq!(g.value(all).item(), 0.0);
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::from_f64(&[2], &[3e38, 3e38]).unwrap());
        assert!(matches!(g.add(x, x), Err(Error::NonFinite("add"))));
    }

    #[test]
    fn layer_norm_normalizes() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_f64(&[2, 4], &[1.0, 2.0, 3.0, 4.0, -1.0, 0.0, 7.0, 2.0]).unwrap());
        let gamma = g.constant(Tensor::filled(&[4], 1.0));
        let beta = g.constant(Tensor::zeros(&[4]));
        let y = g.layer_norm(x, gamma, beta, 1).unwrap();
        for r in 0..2 {
            let row = g.value(y).row(r);
            let mean: f64 = row.iter().sum::<f64>() / 4.0;
            let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn unreached_parameter_is_absent() {
        let s = store(&[("w", Tensor::filled(&[2, 2], 1.0)), ("unused", Tensor::zeros(&[3]))]);
        let mut g = Graph::new();
        let w = g.param(&s, "w").unwrap();
        let _ = g.param(&s, "unused").unwrap();
        let x = g.constant(Tensor::from_f64(&[2, 1], &[1.0, 2.0]).unwrap());
        let y = g.matmul(w, x).unwrap();
        let loss = g.sum(y).unwrap();
        let grads = g.backward(loss).unwrap();
        assert!(grads.contains("w"));
        assert!(!grads.contains("unused"));
    }

    #[test]
    fn sum_of_linear_map_has_outer_product_gradient() {
        // loss = sum(W x) => dW[i][j] = x[j]
        let s = store(&[("w", Tensor::from_f64(&[2, 3], &[0.1, -0.2, 0.3, 0.4, 0.5, -0.6]).unwrap())]);
        let mut g = Graph::new();
        let w = g.param(&s, "w").unwrap();
        let x = g.constant(Tensor::from_f64(&[3, 1], &[1.0, 2.0, 3.0]).unwrap());
        let y = g.matmul(w, x).unwrap();
        let loss = g.sum(y).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get("w").unwrap().data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        // a second sweep over the same tape is identical
        assert_eq!(g.backward(loss).unwrap(), grads);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let s = store(&[("w", Tensor::zeros(&[2]))]);
        let mut g = Graph::new();
        let w = g.param(&s, "w").unwrap();
        assert!(matches!(g.backward(w), Err(Error::Usage(_))));
    }

    #[test]
    fn gather_out_of_range_is_input_error() {
        let mut g = Graph::<f32>::new();
        let t = g.constant(Tensor::zeros(&[3, 2]));
        assert!(matches!(g.gather_rows(t, &[0, 3]), Err(Error::Input(_))));
    }

    #[test]
    fn permute_round_trips() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::from_fn(&[2, 3, 4, 5], |i| i as f32));
        let y = g.permute_0213(x).unwrap();
        assert_eq!(g.shape(y), &[2, 4, 3, 5]);
        let z = g.permute_0213(y).unwrap();
        assert_eq!(g.value(z), g.value(x));
    }

    #[test]
    fn dropout_is_identity_in_eval_and_seeded_in_training() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::filled(&[100], 1.0));
        assert_eq!(g.dropout(x, 0.5).unwrap(), x);
        assert!(!g.is_stochastic());

        let run = |seed| {
            let mut g = Graph::<f32>::training(seed, 3);
            let x = g.constant(Tensor::filled(&[100], 1.0));
            let y = g.dropout(x, 0.5).unwrap();
            assert!(g.is_stochastic());
            g.value(y).clone()
        };
        assert_eq!(run(1), run(1));
        assert_ne!(run(1), run(2));
        let kept = run(1).data().iter().filter(|&&v| v > 0.0).count();
        assert!((30..70).contains(&kept));
    }
}
