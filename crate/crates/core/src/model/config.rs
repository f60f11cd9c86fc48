use serde::{Deserialize, Serialize};

use crate::error::{Result, VigorError};

/// Network family. Only the causal self-attention decoder is implemented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    #[default]
    Decoder,
}

/// Shape of the policy network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Vocabulary size, including the reserved PAD/BOS/EOS ids 0..3.
    pub vocab_size: usize,
    /// Maximum number of positions the model can attend over.
    pub context_length: usize,
    /// Residual stream width.
    pub hidden_dim: usize,
    /// Number of transformer blocks.
    pub num_layers: usize,
    /// Attention heads per block; must divide `hidden_dim`.
    pub num_heads: usize,
    /// Inner width of the feed-forward sublayer.
    pub mlp_dim: usize,
    pub architecture: Architecture,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: crate::tasks::VOCAB_SIZE,
            context_length: 32,
            hidden_dim: 64,
            num_layers: 2,
            num_heads: 4,
            mlp_dim: 128,
            architecture: Architecture::Decoder,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(VigorError::Config(msg));
        if !(3..=256).contains(&self.vocab_size) {
            return bad(format!(
                "vocab_size must be in 3..=256, got {}",
                self.vocab_size
            ));
        }
        if self.context_length == 0 {
            return bad("context_length must be positive".into());
        }
        if self.hidden_dim == 0 || self.num_layers == 0 || self.mlp_dim == 0 {
            return bad("hidden_dim, num_layers and mlp_dim must be positive".into());
        }
        if self.num_heads == 0 || !self.hidden_dim.is_multiple_of(self.num_heads) {
            return bad(format!(
                "num_heads ({}) must be positive and divide hidden_dim ({})",
                self.num_heads, self.hidden_dim
            ));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }
}
