use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::subword::FIRST_TAG_ID;

/// Architecture and regularization settings of an encoder-decoder model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    /// Language tags occupy ids `4..4 + num_tags`.
    pub num_tags: usize,
    pub d_model: usize,
    pub ff_dim: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default)]
    pub label_smoothing: f64,
    /// One matrix for source embeddings, target embeddings and the softmax.
    #[serde(default = "default_true")]
    pub shared_embeddings: bool,
    /// Each decoder layer attends to a learned mix of all encoder layers.
    #[serde(default)]
    pub transparent_attention: bool,
}

fn default_true() -> bool {
    true
}

impl ModelConfig {
    pub fn new(
        vocab_size: usize,
        num_tags: usize,
        d_model: usize,
        ff_dim: usize,
        heads: usize,
        layers: (usize, usize),
    ) -> Self {
        Self {
            vocab_size,
            num_tags,
            d_model,
            ff_dim,
            heads,
            encoder_layers: layers.0,
            decoder_layers: layers.1,
            dropout: 0.0,
            label_smoothing: 0.0,
            shared_embeddings: true,
            transparent_attention: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return bad(format!(
                "d_model ({}) must be a positive multiple of heads ({})",
                self.d_model, self.heads
            ));
        }
        if self.ff_dim == 0 || self.encoder_layers == 0 || self.decoder_layers == 0 {
            return bad("ff_dim and layer counts must be positive".into());
        }
        if self.vocab_size <= FIRST_TAG_ID as usize + self.num_tags {
            return bad(format!(
                "vocab_size {} leaves no room for pieces after {} tags",
                self.vocab_size, self.num_tags
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.label_smoothing) {
            return bad("dropout and label_smoothing must lie in [0, 1)".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    /// Closed-form parameter count.
    pub fn num_params(&self) -> usize {
        let (v, d, ff) = (self.vocab_size, self.d_model, self.ff_dim);
        let (le, ld) = (self.encoder_layers, self.decoder_layers);
        let attn = 4 * (d * d + d);
        let ffn = 2 * d * ff + ff + d;
        let embeddings = if self.shared_embeddings { v * d } else { 3 * v * d };
        let encoder = le * (attn + ffn + 4 * d) + 2 * d;
        let decoder = ld * (2 * attn + ffn + 6 * d) + 2 * d;
        let transparent = if self.transparent_attention { ld * (le + 1) } else { 0 };
        embeddings + encoder + decoder + transparent
    }

    pub fn is_tag(&self, id: u32) -> bool {
        id >= FIRST_TAG_ID && ((id - FIRST_TAG_ID) as usize) < self.num_tags
    }
}
