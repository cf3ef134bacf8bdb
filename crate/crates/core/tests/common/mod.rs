#![allow(dead_code)]

use depa::corpus::{Batch, SentencePair, TargetVocabFilter, NUM_SPECIALS};
use depa::model::{ModelConfig, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const VOCAB: usize = NUM_SPECIALS + 8;

pub fn tiny_config(d: usize, use_it: bool) -> ModelConfig {
    ModelConfig {
        d_model: d,
        n_heads: 1,
        enc_layers: 1,
        dec_layers: 1,
        ffn_dim: 2 * d,
        dropout: 0.0,
        max_offset: 4,
        max_len: 16,
        use_it,
        ..ModelConfig::default()
    }
}

pub fn tiny_model(config: &ModelConfig, seed: u64) -> ModelParams {
    ModelParams::init(config, &TargetVocabFilter::identity(VOCAB), seed).unwrap()
}

/// Random non-special sentence pairs with lengths in `1..=max_len`.
pub fn random_pairs(n: usize, max_len: usize, seed: u64) -> Vec<SentencePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let sent = |rng: &mut ChaCha8Rng| {
                let len = rng.gen_range(1..=max_len);
                (0..len).map(|_| rng.gen_range(NUM_SPECIALS..VOCAB)).collect::<Vec<_>>()
            };
            let src = sent(&mut rng);
            let tgt = sent(&mut rng);
            SentencePair::new(src, tgt, VOCAB).unwrap()
        })
        .collect()
}

pub fn random_batch(n: usize, max_len: usize, seed: u64) -> Batch {
    let pairs = random_pairs(n, max_len, seed);
    let refs: Vec<&SentencePair> = pairs.iter().collect();
    Batch::from_pairs(&refs)
}
