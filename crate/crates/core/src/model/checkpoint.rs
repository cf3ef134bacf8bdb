//! Binary checkpoint files.
//!
//! Layout (little-endian): magic `DEPA`, format version `u32`, tensor count
//! `u32`, then per tensor the name length `u32`, UTF-8 name, rank `u32`, one
//! `u64` per dimension and the `f32` payload. A footer follows: its byte
//! length `u32` and `key=value` text holding the hyperparameters, the kept
//! target ids and any caller metadata. Optimizer moments are stored as
//! tensors named `adam.m/<param>` and `adam.v/<param>`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::config::KeyValues;
use crate::corpus::TargetVocabFilter;
use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::params::ModelParams;
use crate::numerics::{AdamState, ParamStore, Tensor};

const MAGIC: &[u8; 4] = b"DEPA";
const VERSION: u32 = 1;
const ADAM_M: &str = "adam.m/";
const ADAM_V: &str = "adam.v/";
const RESERVED: &[&str] = &[
    "vocab_size",
    "kept_ids",
    "adam.step",
    "adam.beta1",
    "adam.beta2",
    "adam.eps",
];

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub adam: Option<AdamState>,
    /// Caller metadata stored alongside the hyperparameters.
    pub meta: KeyValues,
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor(buf: &mut Vec<u8>, name: &str, t: &Tensor) {
    put_u32(buf, name.len() as u32);
    buf.extend_from_slice(name.as_bytes());
    put_u32(buf, t.rank() as u32);
    for &d in t.shape() {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &x in t.data() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

/// Serializes a checkpoint to bytes.
pub fn encode_checkpoint(params: &ModelParams, adam: Option<&AdamState>, meta: &KeyValues) -> Result<Vec<u8>> {
    let mut footer = params.config.to_key_values();
    if let Some(k) = meta.keys().find(|k| footer.contains(k) || RESERVED.contains(k)) {
        return Err(Error::usage(format!("checkpoint metadata key `{k}` is reserved")));
    }
    footer.extend(meta);
    footer.set("vocab_size", params.vocab_size());
    let kept: Vec<String> = params.filter.kept_ids().iter().map(|i| i.to_string()).collect();
    footer.set("kept_ids", kept.join(","));

    let mut tensors: Vec<(String, &Tensor)> = params.store.iter().map(|(n, t)| (n.clone(), t)).collect();
    if let Some(a) = adam {
        footer.set("adam.step", a.step);
        footer.set("adam.beta1", a.beta1);
        footer.set("adam.beta2", a.beta2);
        footer.set("adam.eps", a.eps);
        tensors.extend(a.first.iter().map(|(n, t)| (format!("{ADAM_M}{n}"), t)));
        tensors.extend(a.second.iter().map(|(n, t)| (format!("{ADAM_V}{n}"), t)));
    }

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, VERSION);
    put_u32(&mut buf, tensors.len() as u32);
    for (name, t) in &tensors {
        put_tensor(&mut buf, name, t);
    }
    let text = footer.to_text();
    put_u32(&mut buf, text.len() as u32);
    buf.extend_from_slice(text.as_bytes());
    Ok(buf)
}

/// Writes a checkpoint via a temporary file and rename.
pub fn save_checkpoint(path: &Path, params: &ModelParams, adam: Option<&AdamState>, meta: &KeyValues) -> Result<()> {
    let bytes = encode_checkpoint(params, adam, meta)?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses checkpoint bytes and validates tensor shapes against the stored
/// hyperparameters.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic (not a checkpoint file)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((name, Tensor::new(&shape, data)?));
    }
    let flen = r.u32()? as usize;
    let text = std::str::from_utf8(r.take(flen)?)
        .map_err(|_| Error::Checkpoint("footer is not UTF-8".into()))?;
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let footer = KeyValues::parse(text)?;

    let mut model_kv = KeyValues::new();
    let mut meta = KeyValues::new();
    for (k, v) in footer.iter() {
        if ModelConfig::KEYS.contains(&k) {
            model_kv.set(k, v);
        } else if !RESERVED.contains(&k) {
            meta.set(k, v);
        }
    }
    let config = ModelConfig::from_key_values(&model_kv)?;
    let vocab_size: usize = footer.require("vocab_size")?;
    let kept = footer
        .get("kept_ids")
        .ok_or_else(|| Error::Checkpoint("footer lacks kept_ids".into()))?
        .split(',')
        .map(|s| s.parse::<usize>().map_err(|_| Error::Checkpoint(format!("bad kept id `{s}`"))))
        .collect::<Result<Vec<_>>>()?;
    let filter = TargetVocabFilter::from_kept_ids(vocab_size, &kept)?;

    let mut store = ParamStore::new();
    let mut adam = match footer.contains("adam.step") {
        false => None,
        true => {
            let mut a = AdamState::new(
                footer.require("adam.beta1")?,
                footer.require("adam.beta2")?,
                footer.require("adam.eps")?,
            );
            a.step = footer.require("adam.step")?;
            Some(a)
        }
    };
    for (name, t) in tensors {
        if let Some(p) = name.strip_prefix(ADAM_M) {
            adam_slot(&mut adam, &name)?.first.insert(p.to_string(), t);
        } else if let Some(p) = name.strip_prefix(ADAM_V) {
            adam_slot(&mut adam, &name)?.second.insert(p.to_string(), t);
        } else {
            store.insert(&name, t);
        }
    }
    let params = ModelParams { config, filter, store };
    params.validate()?;
    if let Some(a) = &adam {
        for (name, m) in a.first.iter().chain(a.second.iter()) {
            let p = params
                .store
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("optimizer moment for unknown `{name}`")))?;
            if p.shape() != m.shape() {
                return Err(Error::Checkpoint(format!("optimizer moment shape mismatch for `{name}`")));
            }
        }
    }
    Ok(Checkpoint { params, adam, meta })
}

fn adam_slot<'a>(adam: &'a mut Option<AdamState>, name: &str) -> Result<&'a mut AdamState> {
    adam.as_mut()
        .ok_or_else(|| Error::Checkpoint(format!("moment `{name}` without optimizer state")))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .map_err(|e| Error::Checkpoint(format!("cannot open {}: {e}", path.display())))?
        .read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> ModelParams {
        let c = ModelConfig {
            d_model: 8,
            n_heads: 2,
            enc_layers: 1,
            dec_layers: 1,
            ffn_dim: 16,
            use_it: true,
            compress: Some(3),
            ..ModelConfig::default()
        };
        let f = TargetVocabFilter::from_kept_ids(9, &[0, 1, 2, 3, 5, 8]).unwrap();
        ModelParams::init(&c, &f, 4).unwrap()
    }

    #[test]
    fn round_trip_with_optimizer() {
        let p = model();
        let mut adam = AdamState::new(0.9, 0.999, 1e-8);
        adam.step = 7;
        adam.first.insert("len.b".into(), Tensor::filled(&[41], 0.5));
        adam.second.insert("len.b".into(), Tensor::filled(&[41], 0.25));
        let mut meta = KeyValues::new();
        meta.set("train.step", 12);
        let bytes = encode_checkpoint(&p, Some(&adam), &meta).unwrap();
        let c = decode_checkpoint(&bytes).unwrap();
        assert_eq!(c.params, p);
        assert_eq!(c.adam.as_ref(), Some(&adam));
        assert_eq!(c.meta.get("train.step"), Some("12"));
        assert_eq!(encode_checkpoint(&c.params, c.adam.as_ref(), &c.meta).unwrap(), bytes);
    }

    #[test]
    fn header_layout() {
        let bytes = encode_checkpoint(&model(), None, &KeyValues::new()).unwrap();
        assert_eq!(&bytes[..4], b"DEPA");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        assert_eq!(count, model().store.len());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = model();
        p.store.insert("it.wc", Tensor::zeros(&[4, 6]));
        let bytes = encode_checkpoint(&p, None, &KeyValues::new()).unwrap();
        let err = decode_checkpoint(&bytes).unwrap_err().to_string();
        assert!(err.contains("it.wc"), "{err}");
    }

    #[test]
    fn truncation_and_magic() {
        let bytes = encode_checkpoint(&model(), None, &KeyValues::new()).unwrap();
        assert!(decode_checkpoint(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad).unwrap_err().to_string().contains("magic"));
    }
}
