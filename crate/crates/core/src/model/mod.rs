//! Transformer encoder–decoder with length prediction, copy-based parallel
//! decoder inputs, the attentive input transformation over the target
//! embedding space, and tied output projection.

mod bank;
mod checkpoint;
mod config;
mod copy;
mod decode;
mod layers;
mod length;
mod mask;
mod params;

pub use bank::{compress_embedding, it_keys, it_nodes, it_transform, transform_input, EmbeddingBank, ITState, ItNodes};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{CopyMode, ModelConfig};
pub use copy::{soft_copy, soft_copy_weights, uniform_copy, uniform_copy_indices};
pub use decode::{greedy_decode, greedy_decode_batch, nat_input, strip_specials, translate, translate_batch};
pub use layers::{copy_input, decode, embed_ids, encode, length_logits, positions, target_embedding, Decoded, Encoded};
pub use length::{offset_class, predict_length, LengthDistribution};
pub use mask::{key_padding_mask, AttentionMask, MaskKind};
pub use params::{expected_shapes, ModelParams};
