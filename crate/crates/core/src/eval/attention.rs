use std::fs;
use std::path::{Path, PathBuf};

use crate::corpus::{IdMatrix, SentencePair, BOS};
use crate::error::{Error, Result};
use crate::model::{decode, embed_ids, encode, nat_input, target_embedding, AttentionMask, MaskKind, ModelParams};
use crate::numerics::{Element, Graph};

/// Decoder self-attention of one sample: `maps[layer][head]` is `T x T`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionDump {
    pub kind: MaskKind,
    pub maps: Vec<Vec<Vec<Vec<f64>>>>,
}

impl AttentionDump {
    pub fn width(&self) -> usize {
        self.maps.first().and_then(|l| l.first()).map_or(0, |m| m.len())
    }
}

/// Runs the decoder on one pair with the reference length and collects its
/// self-attention weights. A causal mask feeds teacher-forced ids, a full
/// mask the copied source (transformed when the model uses IT). Rows are
/// renormalized over the visible columns.
pub fn attention_maps<T: Element>(m: &ModelParams<T>, pair: &SentencePair, kind: MaskKind) -> Result<AttentionDump> {
    let t = pair.tgt.len();
    if t == 0 || pair.src.is_empty() {
        return Err(Error::input("attention export needs a non-empty pair"));
    }
    let src = IdMatrix::from_rows(&[&pair.src]);
    let mut g = Graph::new();
    let enc = encode(&mut g, m, &src, &[pair.src.len()])?;
    let emb_prime = target_embedding(&mut g, m)?;
    let input = match kind {
        MaskKind::Causal => {
            let ids: Vec<usize> = std::iter::once(BOS).chain(pair.tgt[..t - 1].iter().copied()).collect();
            embed_ids(&mut g, m, &IdMatrix::from_rows(&[&ids]))?
        }
        MaskKind::Full => {
            let (z, it) = nat_input(&mut g, m, &src, &[pair.src.len()], &[t], t, m.config.use_it, emb_prime)?;
            it.map(|n| n.z_prime).unwrap_or(z)
        }
    };
    let mask = AttentionMask::new(kind, &[t], t);
    let dec = decode(&mut g, m, input, &mask, &enc, emb_prime)?;
    let heads = m.config.n_heads;
    let maps = dec
        .self_attention
        .iter()
        .map(|&node| {
            let probs = g.value(node);
            (0..heads)
                .map(|h| {
                    (0..t)
                        .map(|i| {
                            let row = &probs.data()[(h * t + i) * t..(h * t + i + 1) * t];
                            let mut vals: Vec<f64> = (0..t)
                                .map(|j| if mask.allows(0, i, j) { row[j].as_f64() } else { 0.0 })
                                .collect();
                            let s: f64 = vals.iter().sum();
                            vals.iter_mut().for_each(|v| *v /= s);
                            vals
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    Ok(AttentionDump { kind, maps })
}

fn dump_path(dir: &Path, layer: usize, head: usize) -> PathBuf {
    dir.join(format!("attn_l{layer}_h{head}.csv"))
}

/// Writes one CSV per (layer, head) into `dir`; returns the paths.
pub fn write_attention(dump: &AttentionDump, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let t = dump.width();
    let mut paths = Vec::new();
    for (l, layer) in dump.maps.iter().enumerate() {
        for (h, map) in layer.iter().enumerate() {
            let mut text = format!("# layer={l} head={h} T={t}\n");
            for row in map {
                let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
                text.push_str(&cells.join(","));
                text.push('\n');
            }
            let path = dump_path(dir, l, h);
            fs::write(&path, text)?;
            paths.push(path);
        }
    }
    Ok(paths)
}

/// Reads one matrix written by [`write_attention`].
pub fn read_attention_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if !header.starts_with("# layer=") {
        return Err(Error::input(format!("{} lacks the attention header", path.display())));
    }
    lines
        .map(|l| {
            l.split(',')
                .map(|c| c.parse::<f64>().map_err(|_| Error::input(format!("bad cell `{c}` in {}", path.display()))))
                .collect()
        })
        .collect()
}

/// Computes and writes the attention maps of one pair.
pub fn export_attention<T: Element>(m: &ModelParams<T>, pair: &SentencePair, kind: MaskKind, dir: &Path) -> Result<AttentionDump> {
    let dump = attention_maps(m, pair, kind)?;
    write_attention(&dump, dir)?;
    Ok(dump)
}
