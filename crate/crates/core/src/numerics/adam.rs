use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::graph::Gradients;
use crate::numerics::tensor::Tensor;
use crate::numerics::ParamStore;

/// Moment estimates for Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub step: u64,
    pub first: BTreeMap<String, Tensor>,
    pub second: BTreeMap<String, Tensor>,
}

impl AdamState {
    pub fn new(beta1: f32, beta2: f32, eps: f32) -> Self {
        AdamState {
            beta1,
            beta2,
            eps,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn reset(&mut self) {
        *self = AdamState::new(self.beta1, self.beta2, self.eps);
    }
}

/// One Adam update of `params` from `grads`.
///
/// Parameters start being tracked the first time they receive a gradient;
/// once tracked, every later call must supply a gradient for them.
pub fn adam_step(params: &mut ParamStore, grads: &Gradients, state: &mut AdamState, lr: f32) -> Result<()> {
    if let Some(missing) = state.first.keys().find(|k| !grads.contains(k)) {
        return Err(Error::usage(format!("no gradient for tracked parameter `{missing}`")));
    }
    for (name, g) in grads.iter() {
        let p = params
            .get(name)
            .ok_or_else(|| Error::usage(format!("gradient for unknown parameter `{name}`")))?;
        if p.shape() != g.shape() {
            return Err(Error::Shape {
                op: "adam_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (name, g) in grads.iter() {
        let m = state
            .first
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(g.shape()));
        let v = state
            .second
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(g.shape()));
        let p = params.get_mut(name).expect("checked above");
        for (((pi, mi), vi), &gi) in p
            .data_mut()
            .iter_mut()
            .zip(m.data_mut())
            .zip(v.data_mut())
            .zip(g.data())
        {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *pi -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    if !params.is_finite() {
        return Err(Error::NonFinite("adam_step"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Graph;

    fn grads_for(store: &ParamStore, name: &str, coeff: f32) -> Gradients {
        // loss = coeff * sum(p)  =>  grad = coeff everywhere
        let mut g = Graph::new();
        let p = g.param(store, name).unwrap();
        let s = g.sum(p).unwrap();
        let l = g.scale(s, coeff as f64).unwrap();
        g.backward(l).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::filled(&[3], 0.5));
        let before = store.clone();
        let mut st = AdamState::new(0.9, 0.999, 1e-8);
        let grads = grads_for(&store, "w", 0.0);
        adam_step(&mut store, &grads, &mut st, 1e-3).unwrap();
        assert_eq!(store, before);
        assert_eq!(st.step, 1);
        assert!(st.first["w"].data().iter().all(|&m| m == 0.0));
    }

    #[test]
    fn scalar_recurrence_matches_hand_computation() {
        // g = 2 on both steps, lr 0.1, b = (0.9, 0.999), eps = 1e-8, p0 = 1
        let mut store = ParamStore::new();
        store.insert("w", Tensor::scalar(1.0));
        let mut st = AdamState::new(0.9, 0.999, 1e-8);
        let grads = grads_for(&store, "w", 2.0);

        let (mut p, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=2 {
            adam_step(&mut store, &grads, &mut st, 0.1).unwrap();
            m = 0.9 * m + 0.1 * 2.0;
            v = 0.999 * v + 0.001 * 4.0;
            let mhat = m / (1.0 - 0.9f64.powi(t));
            let vhat = v / (1.0 - 0.999f64.powi(t));
            p -= 0.1 * mhat / (vhat.sqrt() + 1e-8);
            assert!((store.get("w").unwrap().item() as f64 - p).abs() < 1e-6);
        }
        // each bias-corrected step moves by ~lr
        assert!((p - 0.8).abs() < 1e-6);
    }

    #[test]
    fn zero_learning_rate_only_advances_step() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::filled(&[2], 0.3));
        let before = store.clone();
        let mut st = AdamState::new(0.9, 0.999, 1e-8);
        let grads = grads_for(&store, "w", 1.0);
        adam_step(&mut store, &grads, &mut st, 0.0).unwrap();
        assert_eq!(store, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn missing_gradient_for_tracked_parameter_is_usage_error() {
        let mut store = ParamStore::new();
        store.insert("a", Tensor::scalar(1.0));
        store.insert("b", Tensor::scalar(1.0));
        let mut st = AdamState::new(0.9, 0.999, 1e-8);
        let ga = grads_for(&store, "a", 1.0);
        let gb = grads_for(&store, "b", 1.0);
        adam_step(&mut store, &ga, &mut st, 0.1).unwrap();
        assert!(matches!(adam_step(&mut store, &gb, &mut st, 0.1), Err(Error::Usage(_))));
    }
}
