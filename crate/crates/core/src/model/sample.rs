use rand::Rng;
use serde::{Deserialize, Serialize};

use super::transformer::{log_softmax, softmax, DecoderState};
use super::{ParamVector, Token, EOS};
use crate::error::{Result, VigorError};
use crate::scalar::Scalar;

/// A sampled response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion<T> {
    /// Emitted tokens, including a trailing EOS when one was sampled.
    pub tokens: Vec<Token>,
    /// Temperature-1 log-probability of each emitted token under the sampler.
    pub token_logprobs: Vec<T>,
    /// True when generation stopped on EOS rather than the length cap.
    pub terminated: bool,
}

impl<T> Completion<T> {
    /// Number of scored tokens (EOS counts).
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Draws one completion autoregressively.
///
/// Tokens are drawn from `softmax(logits / temperature)` by inverse-CDF on a
/// single uniform draw per position, so the result is a pure function of the
/// parameters, prompt and rng state.
pub fn sample_completion<T: Scalar, R: Rng + ?Sized>(
    params: &ParamVector<T>,
    prompt: &[Token],
    max_len: usize,
    temperature: f64,
    rng: &mut R,
) -> Result<Completion<T>> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(VigorError::Config(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if prompt.is_empty() {
        return Err(VigorError::Domain(
            "prompt must contain at least BOS".into(),
        ));
    }
    if max_len == 0 {
        return Err(VigorError::Config("max_len must be at least 1".into()));
    }
    let ctx = params.config.context_length;
    if prompt.len() + max_len > ctx {
        return Err(VigorError::Length {
            len: prompt.len() + max_len,
            max: ctx,
        });
    }
    let mut dec = DecoderState::new(params);
    let mut logits = Vec::new();
    for &t in prompt {
        logits = dec.step(t)?;
    }
    let inv_temp = T::of(1.0 / temperature);
    let mut tokens = Vec::with_capacity(max_len);
    let mut logprobs = Vec::with_capacity(max_len);
    let mut terminated = false;
    while tokens.len() < max_len {
        let scaled: Vec<T> = logits.iter().map(|&l| l * inv_temp).collect();
        let probs = softmax(&scaled);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut pick = probs
            .iter()
            .rposition(|p| *p > T::zero())
            .unwrap_or(probs.len() - 1);
        for (k, p) in probs.iter().enumerate() {
            acc += p.to_f64_lossy();
            if u < acc {
                pick = k;
                break;
            }
        }
        let token = pick as Token;
        tokens.push(token);
        logprobs.push(log_softmax(&logits)[pick]);
        if token == EOS {
            terminated = true;
            break;
        }
        if tokens.len() < max_len {
            logits = dec.step(token)?;
        }
    }
    Ok(Completion {
        tokens,
        token_logprobs: logprobs,
        terminated,
    })
}
