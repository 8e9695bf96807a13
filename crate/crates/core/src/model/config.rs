use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::document::DocumentSchema;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    OneshotTransformer,
    AutoregTransformer,
    OneshotLstm,
    AutoregLstm,
}

impl Variant {
    pub const ALL: [Variant; 4] =
        [Variant::OneshotTransformer, Variant::AutoregTransformer, Variant::OneshotLstm, Variant::AutoregLstm];

    pub fn is_autoregressive(self) -> bool {
        matches!(self, Variant::AutoregTransformer | Variant::AutoregLstm)
    }

    pub fn is_lstm(self) -> bool {
        matches!(self, Variant::OneshotLstm | Variant::AutoregLstm)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::OneshotTransformer => "oneshot-transformer",
            Variant::AutoregTransformer => "autoreg-transformer",
            Variant::OneshotLstm => "oneshot-lstm",
            Variant::AutoregLstm => "autoreg-lstm",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown model variant `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Transformer blocks or recurrent layers, in both encoder and decoder.
    pub num_blocks: usize,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    pub heads: usize,
    /// Feed-forward expansion factor inside transformer blocks.
    pub ffn_mult: usize,
    pub dropout: f64,
    pub max_length: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::OneshotTransformer,
            num_blocks: 1,
            hidden_dim: 256,
            latent_dim: 512,
            heads: 8,
            ffn_mult: 4,
            dropout: 0.1,
            max_length: 50,
        }
    }
}

impl ModelConfig {
    /// Defaults with the latent size used for a schema family
    /// (512 crello-like, 256 rico-like).
    pub fn for_family(family: &str) -> Self {
        let latent_dim = if family == "rico-like" { 256 } else { 512 };
        ModelConfig { latent_dim, ..Default::default() }
    }

    pub fn check(&self, schema: &DocumentSchema) -> Result<()> {
        if self.hidden_dim == 0 || self.heads == 0 || !self.hidden_dim.is_multiple_of(self.heads) {
            return Err(Error::config(format!(
                "hidden_dim {} must be a positive multiple of heads {}",
                self.hidden_dim, self.heads
            )));
        }
        if self.latent_dim == 0 || self.num_blocks == 0 || self.ffn_mult == 0 {
            return Err(Error::config("latent_dim, num_blocks and ffn_mult must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.max_length != schema.max_length {
            return Err(Error::config(format!(
                "model max_length {} != schema max_length {}",
                self.max_length, schema.max_length
            )));
        }
        Ok(())
    }
}
