use crate::config::{parse_bool, KeyValues};
use crate::error::{Error, Result};

/// How the parallel decoder input is built from source embeddings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CopyMode {
    Uniform,
    /// Distance-weighted copy with temperature `tau`.
    Soft { tau: f64 },
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    /// Length offsets are classified over `[-max_offset, max_offset]`.
    pub max_offset: usize,
    /// Upper clamp for predicted target lengths.
    pub max_len: usize,
    pub share_embeddings: bool,
    pub use_it: bool,
    /// Divide the input-transformation logits by `sqrt(d)`.
    pub it_scaled: bool,
    /// Rows of the compressed target embedding, when enabled.
    pub compress: Option<usize>,
    pub copy: CopyMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_heads: 4,
            enc_layers: 2,
            dec_layers: 2,
            ffn_dim: 256,
            dropout: 0.1,
            max_offset: 20,
            max_len: 64,
            share_embeddings: true,
            use_it: false,
            it_scaled: false,
            compress: None,
            copy: CopyMode::Uniform,
        }
    }
}

impl ModelConfig {
    pub const KEYS: &'static [&'static str] = &[
        "d_model",
        "n_heads",
        "enc_layers",
        "dec_layers",
        "ffn_dim",
        "dropout",
        "max_offset",
        "max_len",
        "share_embeddings",
        "use_it",
        "it_scaled",
        "compress",
        "decoder_input",
        "soft_tau",
    ];

    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let def = ModelConfig::default();
        let d_model = kv.parse_or("d_model", def.d_model)?;
        let compress: usize = kv.parse_or("compress", 0)?;
        let copy = match kv.get("decoder_input").unwrap_or("uniform") {
            "uniform" => CopyMode::Uniform,
            "soft" => CopyMode::Soft {
                tau: kv.parse_or("soft_tau", 1.0)?,
            },
            other => {
                return Err(Error::config(format!(
                    "unknown decoder_input `{other}` (expected uniform or soft)"
                )))
            }
        };
        let c = ModelConfig {
            d_model,
            n_heads: kv.parse_or("n_heads", def.n_heads)?,
            enc_layers: kv.parse_or("enc_layers", def.enc_layers)?,
            dec_layers: kv.parse_or("dec_layers", def.dec_layers)?,
            ffn_dim: kv.parse_or("ffn_dim", 4 * d_model)?,
            dropout: kv.parse_or("dropout", def.dropout)?,
            max_offset: kv.parse_or("max_offset", def.max_offset)?,
            max_len: kv.parse_or("max_len", def.max_len)?,
            share_embeddings: parse_bool(kv, "share_embeddings", def.share_embeddings)?,
            use_it: parse_bool(kv, "use_it", def.use_it)?,
            it_scaled: parse_bool(kv, "it_scaled", def.it_scaled)?,
            compress: (compress > 0).then_some(compress),
            copy,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("d_model", self.d_model);
        kv.set("n_heads", self.n_heads);
        kv.set("enc_layers", self.enc_layers);
        kv.set("dec_layers", self.dec_layers);
        kv.set("ffn_dim", self.ffn_dim);
        kv.set("dropout", self.dropout);
        kv.set("max_offset", self.max_offset);
        kv.set("max_len", self.max_len);
        kv.set("share_embeddings", self.share_embeddings);
        kv.set("use_it", self.use_it);
        kv.set("it_scaled", self.it_scaled);
        kv.set("compress", self.compress.unwrap_or(0));
        match self.copy {
            CopyMode::Uniform => kv.set("decoder_input", "uniform"),
            CopyMode::Soft { tau } => {
                kv.set("decoder_input", "soft");
                kv.set("soft_tau", tau);
            }
        }
        kv
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::config(format!(
                "d_model ({}) must be a positive multiple of n_heads ({})",
                self.d_model, self.n_heads
            )));
        }
        if self.ffn_dim == 0 {
            return Err(Error::config("ffn_dim must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.max_len == 0 {
            return Err(Error::config("max_len must be positive"));
        }
        if self.compress.is_some() && !self.use_it {
            return Err(Error::config("compress needs use_it=true"));
        }
        if let CopyMode::Soft { tau } = self.copy {
            if !(tau > 0.0) {
                return Err(Error::config(format!("soft_tau must be positive, got {tau}")));
            }
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn num_offsets(&self) -> usize {
        2 * self.max_offset + 1
    }
}
