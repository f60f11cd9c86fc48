//! Tiny decoder-only policy model with exact reverse-mode gradients.
//!
//! The model scores a completion `y` given a prompt `x` by teacher forcing and
//! exposes the gradient of the mean token negative log-likelihood with respect
//! to the flat parameter vector. All scoring happens at temperature 1; the
//! sampling temperature only shapes which tokens are drawn.

mod checkpoint;
mod config;
mod params;
mod sample;
mod transformer;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use config::{Architecture, ModelConfig};
pub use params::{
    init_params, GradScope, LayerOffsets, Offsets, ParamVector, TensorSpec, INIT_BOUND,
};
pub use sample::{sample_completion, Completion};
pub use transformer::{
    forward_logits, grad_mean_nll, log_softmax, logprob_vjp, logprob_vjp_with, mean_nll, softmax,
    token_logprobs, DecoderState,
};

/// Token id in the shared vocabulary.
pub type Token = u32;

/// Padding token id.
pub const PAD: Token = 0;
/// Beginning-of-sequence token id.
pub const BOS: Token = 1;
/// End-of-sequence token id; counted as a scored token when emitted.
pub const EOS: Token = 2;
