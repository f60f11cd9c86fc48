//! Supervised warm start standing in for a pretrained base policy.
//!
//! RL post-training sharpens a policy that already solves part of the task.
//! A random tiny transformer solves none of it, so before the RL loop the
//! policy is fitted for a short while on canonical solutions with a random
//! number of reasoning tokens in front. Stopping early leaves it uncertain.
//!
//! Answer symbols are resampled with a small probability, so the fitted
//! policy puts most but not all of its mass on the right answer, the way a
//! base model trained on a noisy corpus does.
//!
//! The reasoning length is geometric so that the decision to keep thinking is
//! equally uncertain at every position.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::WarmStartConfig;
use super::optim::{cosine_lr, Adam, AdamSettings};
use crate::error::{Result, VigorError};
use crate::model::{logprob_vjp, GradScope, ParamVector};
use crate::reward::accurate_sum;
use crate::scalar::Scalar;
use crate::tasks::TaskInstance;

/// Fits `params` in place; returns the mean batch NLL of every step.
pub fn warm_start<T: Scalar>(
    params: &mut ParamVector<T>,
    instances: &[TaskInstance],
    config: &WarmStartConfig,
    max_len: usize,
    settings: AdamSettings,
    seed: u64,
) -> Result<Vec<f64>> {
    if config.steps == 0 {
        return Ok(Vec::new());
    }
    let pool = &instances[..config.num_examples.min(instances.len())];
    if pool.is_empty() || config.batch_size == 0 {
        return Err(VigorError::Config(
            "warm start needs examples and a positive batch size".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(7);
    let mut opt = Adam::new(params.len(), settings);
    let mut losses = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let mut grad = vec![T::zero(); params.len()];
        let mut batch_nll = Vec::with_capacity(config.batch_size);
        let scale = T::one() / T::of_usize(config.batch_size);
        for _ in 0..config.batch_size {
            let inst = pool.choose(&mut rng).expect("non-empty pool");
            let cap = config
                .max_think
                .min(max_len.saturating_sub(inst.min_response_len()));
            let mut think = 0;
            while think < cap && rng.gen_bool(config.think_prob) {
                think += 1;
            }
            let mut target = inst.solution_tokens(think);
            let n_symbols = target.len() - think - 2;
            for t in &mut target[think + 1..think + 1 + n_symbols] {
                if rng.gen_bool(config.answer_noise) {
                    *t = rng.gen_range(inst.kind.answer_symbols());
                }
            }
            let n = T::of_usize(target.len());
            // Descent direction of the mean NLL: coefficients +1/T on log-probs.
            let coeffs = vec![scale / n; target.len()];
            let (logps, g) = logprob_vjp(
                params,
                &inst.prompt_tokens,
                &target,
                &coeffs,
                GradScope::Full,
            )?;
            batch_nll.push(-accurate_sum(logps) / n);
            for (acc, x) in grad.iter_mut().zip(g) {
                *acc -= x;
            }
        }
        let lr = cosine_lr(config.learning_rate, step, config.steps, 0.1);
        opt.step(&mut params.values, &grad, lr);
        let loss = (accurate_sum(batch_nll) * scale).to_f64_lossy();
        if !loss.is_finite() || !params.all_finite() {
            return Err(VigorError::Numeric(format!(
                "warm start diverged at step {step}"
            )));
        }
        losses.push(loss);
    }
    Ok(losses)
}
