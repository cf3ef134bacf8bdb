use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::TargetVocabFilter;
use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::numerics::{Element, HasParams, ParamStore, Tensor};

/// Trained (or freshly initialized) model: hyperparameters, the target
/// filter that defines the output space, and named parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T: Element = f32> {
    pub config: ModelConfig,
    pub filter: TargetVocabFilter,
    pub store: ParamStore<T>,
}

#[derive(Clone, Copy)]
enum Init {
    Normal(f64),
    Xavier,
    Ones,
    Zeros,
}

fn push(out: &mut Vec<(String, Vec<usize>, Init)>, name: String, shape: &[usize], init: Init) {
    out.push((name, shape.to_vec(), init));
}

fn attention_block(out: &mut Vec<(String, Vec<usize>, Init)>, prefix: &str, d: usize) {
    for w in ["wq", "wk", "wv", "wo"] {
        push(out, format!("{prefix}.{w}"), &[d, d], Init::Xavier);
    }
    for b in ["bq", "bk", "bv", "bo"] {
        push(out, format!("{prefix}.{b}"), &[d], Init::Zeros);
    }
}

fn layer_norm(out: &mut Vec<(String, Vec<usize>, Init)>, prefix: &str, d: usize) {
    push(out, format!("{prefix}.g"), &[d], Init::Ones);
    push(out, format!("{prefix}.b"), &[d], Init::Zeros);
}

fn ffn(out: &mut Vec<(String, Vec<usize>, Init)>, prefix: &str, d: usize, f: usize) {
    push(out, format!("{prefix}.w1"), &[d, f], Init::Xavier);
    push(out, format!("{prefix}.b1"), &[f], Init::Zeros);
    push(out, format!("{prefix}.w2"), &[f, d], Init::Xavier);
    push(out, format!("{prefix}.b2"), &[d], Init::Zeros);
}

fn layout(config: &ModelConfig, v: usize, v_prime: usize) -> Vec<(String, Vec<usize>, Init)> {
    let d = config.d_model;
    let emb_std = (d as f64).powf(-0.5);
    let mut out = Vec::new();
    push(&mut out, "emb".into(), &[v, d], Init::Normal(emb_std));
    if !config.share_embeddings {
        push(&mut out, "emb_src".into(), &[v, d], Init::Normal(emb_std));
    }
    for l in 0..config.enc_layers {
        attention_block(&mut out, &format!("enc.{l}.attn"), d);
        layer_norm(&mut out, &format!("enc.{l}.ln1"), d);
        layer_norm(&mut out, &format!("enc.{l}.ln2"), d);
        ffn(&mut out, &format!("enc.{l}.ffn"), d, config.ffn_dim);
    }
    layer_norm(&mut out, "enc.ln", d);
    for l in 0..config.dec_layers {
        attention_block(&mut out, &format!("dec.{l}.self"), d);
        attention_block(&mut out, &format!("dec.{l}.cross"), d);
        for ln in ["ln1", "ln2", "ln3"] {
            layer_norm(&mut out, &format!("dec.{l}.{ln}"), d);
        }
        ffn(&mut out, &format!("dec.{l}.ffn"), d, config.ffn_dim);
    }
    layer_norm(&mut out, "dec.ln", d);
    push(&mut out, "len.w".into(), &[d, config.num_offsets()], Init::Xavier);
    push(&mut out, "len.b".into(), &[config.num_offsets()], Init::Zeros);
    if config.use_it {
        push(&mut out, "it.wq".into(), &[d, d], Init::Xavier);
    }
    if let Some(vs) = config.compress {
        push(&mut out, "it.wc".into(), &[vs, v_prime], Init::Xavier);
    }
    out
}

/// Parameter names and shapes implied by `config` for a vocabulary of `v`
/// ids of which `v_prime` are kept on the target side.
pub fn expected_shapes(config: &ModelConfig, v: usize, v_prime: usize) -> BTreeMap<String, Vec<usize>> {
    layout(config, v, v_prime)
        .into_iter()
        .map(|(n, s, _)| (n, s))
        .collect()
}

impl ModelParams<f32> {
    /// Fresh parameters. Embeddings are `N(0, 1/d)`, weight matrices
    /// Xavier-uniform, biases zero and layer-norm gains one.
    pub fn init(config: &ModelConfig, filter: &TargetVocabFilter, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (name, shape, init) in layout(config, filter.full_size(), filter.len()) {
            let n: usize = shape.iter().product();
            let data: Vec<f32> = match init {
                Init::Normal(std) => {
                    let dist = Normal::new(0.0, std).expect("positive std");
                    (0..n).map(|_| dist.sample(&mut rng) as f32).collect()
                }
                Init::Xavier => {
                    let a = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                    (0..n).map(|_| rng.gen_range(-a..a) as f32).collect()
                }
                Init::Ones => vec![1.0; n],
                Init::Zeros => vec![0.0; n],
            };
            store.insert(&name, Tensor::new(&shape, data)?);
        }
        Ok(ModelParams {
            config: config.clone(),
            filter: filter.clone(),
            store,
        })
    }
}

impl HasParams for ModelParams<f64> {
    fn params(&self) -> &ParamStore<f64> {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore<f64> {
        &mut self.store
    }
}

impl<T: Element> ModelParams<T> {
    pub fn vocab_size(&self) -> usize {
        self.filter.full_size()
    }

    pub fn cast<U: Element>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            filter: self.filter.clone(),
            store: self.store.cast(),
        }
    }

    /// Name of the table the encoder and copy inputs read from.
    pub fn source_table(&self) -> &'static str {
        if self.config.share_embeddings {
            "emb"
        } else {
            "emb_src"
        }
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor<T>> {
        self.store
            .get(name)
            .ok_or_else(|| Error::usage(format!("model has no parameter `{name}`")))
    }

    /// Checks the store holds exactly the parameters `config` implies.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let want = expected_shapes(&self.config, self.vocab_size(), self.filter.len());
        for (name, shape) in &want {
            match self.store.get(name) {
                None => return Err(Error::Checkpoint(format!("missing parameter `{name}`"))),
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(Error::Checkpoint(format!(
                        "parameter `{name}` has shape {:?}, expected {shape:?}",
                        t.shape()
                    )))
                }
                _ => {}
            }
        }
        if let Some(extra) = self.store.names().find(|n| !want.contains_key(*n)) {
            return Err(Error::Checkpoint(format!("unexpected parameter `{extra}`")));
        }
        if !self.store.is_finite() {
            return Err(Error::NonFinite("model parameters"));
        }
        Ok(())
    }
}
