//! Rollout collection and advantage assignment.

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{RewardVariant, TrainerConfig};
use crate::error::{Result, VigorError};
use crate::model::{logprob_vjp, sample_completion, token_logprobs, Completion, ParamVector};
use crate::reward::{
    accurate_sum, gradient_norm_signal, group_advantages, minmax_normalize, rank_normalize,
    RewardKind,
};
use crate::scalar::Scalar;
use crate::tasks::{verify_tokens, TaskInstance};

/// One sampled completion with everything needed to score and update on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout<T> {
    pub completion: Completion<T>,
    /// Teacher-forced log-probabilities under the sampling parameters.
    pub old_logprobs: Vec<T>,
    /// Teacher-forced log-probabilities under the frozen reference.
    pub ref_logprobs: Vec<T>,
    /// `||grad mean NLL||` over the configured scope.
    pub grad_norm: T,
    /// `-sqrt(T) ||g||`.
    pub signal: T,
    /// `-||g||`.
    pub signal_uncorrected: T,
    /// Mean token log-likelihood.
    pub confidence: T,
    /// Verifier outcome; only the `gt` variant trains on it.
    pub correct: bool,
    pub reward: T,
    pub advantage: T,
    /// 1 = largest length-corrected signal (smallest `sqrt(T) ||g||`).
    pub rank_position: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup<T> {
    pub prompt_index: usize,
    pub instance: TaskInstance,
    pub rollouts: Vec<Rollout<T>>,
    pub reward_kind: Option<RewardKind>,
    /// Set when a non-finite gradient was hit; advantages are then zero.
    pub aborted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryBatch<T> {
    pub groups: Vec<RolloutGroup<T>>,
}

impl<T: Scalar> TrajectoryBatch<T> {
    pub fn rollouts(&self) -> impl Iterator<Item = &Rollout<T>> {
        self.groups.iter().flat_map(|g| g.rollouts.iter())
    }
}

/// Ranks by descending signal (1 = best); ties keep sampling order.
fn rank_positions<T: Scalar>(signals: &[T]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..signals.len()).collect();
    order.sort_by(|&a, &b| {
        signals[b]
            .partial_cmp(&signals[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut pos = vec![0; signals.len()];
    for (p, &i) in order.iter().enumerate() {
        pos[i] = p + 1;
    }
    pos
}

fn score_completion<T: Scalar>(
    params: &ParamVector<T>,
    reference: &ParamVector<T>,
    instance: &TaskInstance,
    completion: Completion<T>,
    config: &TrainerConfig,
) -> Result<Rollout<T>> {
    let prompt = &instance.prompt_tokens;
    let n = completion.len();
    // Gradient of the mean NLL is the vjp of the log-probs with weights -1/T.
    let coeffs = vec![-T::one() / T::of_usize(n); n];
    let (old_logprobs, grad) = logprob_vjp(
        params,
        prompt,
        &completion.tokens,
        &coeffs,
        config.grad_scope,
    )?;
    let corrected = gradient_norm_signal(&grad, n, true)?;
    let ref_logprobs = token_logprobs(reference, prompt, &completion.tokens)?;
    let confidence = accurate_sum(old_logprobs.iter().copied()) / T::of_usize(n);
    let correct = verify_tokens(instance, &completion.tokens);
    Ok(Rollout {
        old_logprobs,
        ref_logprobs,
        grad_norm: corrected.gradient_norm,
        signal: corrected.value,
        signal_uncorrected: -corrected.gradient_norm,
        confidence,
        correct,
        reward: T::zero(),
        advantage: T::zero(),
        rank_position: 0,
        completion,
    })
}

/// Samples `group_size` completions per prompt and scores each one under the
/// sampling parameters. Parameters are only read.
pub fn collect_rollouts<T: Scalar, R: Rng + ?Sized>(
    params: &ParamVector<T>,
    reference: &ParamVector<T>,
    prompts: &[(usize, &TaskInstance)],
    config: &TrainerConfig,
    rng: &mut R,
) -> Result<TrajectoryBatch<T>> {
    if prompts.is_empty() {
        return Err(VigorError::Domain("no prompts to roll out".into()));
    }
    let mut groups = Vec::with_capacity(prompts.len());
    for &(prompt_index, instance) in prompts {
        let mut rollouts = Vec::with_capacity(config.group_size);
        let mut aborted = false;
        for _ in 0..config.group_size {
            let completion = sample_completion(
                params,
                &instance.prompt_tokens,
                config.max_response_len,
                config.sample_temperature,
                rng,
            )?;
            match score_completion(params, reference, instance, completion.clone(), config) {
                Ok(r) => rollouts.push(r),
                Err(VigorError::Numeric(msg)) => {
                    warn!("prompt {prompt_index}: {msg}; group aborted");
                    aborted = true;
                    let n = completion.len();
                    let nan = T::nan();
                    rollouts.push(Rollout {
                        old_logprobs: completion.token_logprobs.clone(),
                        ref_logprobs: completion.token_logprobs.clone(),
                        grad_norm: nan,
                        signal: nan,
                        signal_uncorrected: nan,
                        confidence: accurate_sum(completion.token_logprobs.iter().copied())
                            / T::of_usize(n),
                        correct: verify_tokens(instance, &completion.tokens),
                        reward: T::zero(),
                        advantage: T::zero(),
                        rank_position: 0,
                        completion,
                    });
                }
                Err(e) => return Err(e),
            }
        }
        let signals: Vec<T> = rollouts.iter().map(|r| r.signal).collect();
        for (r, pos) in rollouts.iter_mut().zip(rank_positions(&signals)) {
            r.rank_position = pos;
        }
        groups.push(RolloutGroup {
            prompt_index,
            instance: instance.clone(),
            rollouts,
            reward_kind: None,
            aborted,
        });
    }
    Ok(TrajectoryBatch { groups })
}

/// Rewards and advantages for one group under `variant`.
pub fn group_rewards<T: Scalar>(
    group: &RolloutGroup<T>,
    variant: RewardVariant,
) -> Result<(Vec<T>, RewardKind)> {
    let pick = |f: fn(&Rollout<T>) -> T| group.rollouts.iter().map(f).collect::<Vec<T>>();
    Ok(match variant {
        RewardVariant::Vigor => (rank_normalize(&pick(|r| r.signal))?, RewardKind::Rank),
        RewardVariant::VigorNoSqrt => (
            rank_normalize(&pick(|r| r.signal_uncorrected))?,
            RewardKind::Rank,
        ),
        RewardVariant::VigorMinmax => (minmax_normalize(&pick(|r| r.signal))?, RewardKind::Minmax),
        RewardVariant::Confidence => (pick(|r| r.confidence), RewardKind::Raw),
        RewardVariant::ConfidenceRank => {
            (rank_normalize(&pick(|r| r.confidence))?, RewardKind::Rank)
        }
        RewardVariant::Gt => (
            pick(|r| if r.correct { T::one() } else { T::zero() }),
            RewardKind::Binary,
        ),
    })
}

/// Fills rewards and advantages for every group.
pub fn assign_advantages<T: Scalar>(
    batch: &mut TrajectoryBatch<T>,
    variant: RewardVariant,
) -> Result<()> {
    for group in &mut batch.groups {
        if group.aborted {
            for r in &mut group.rollouts {
                r.reward = T::zero();
                r.advantage = T::zero();
            }
            continue;
        }
        let (rewards, kind) = group_rewards(group, variant)?;
        let advantages = group_advantages(&rewards)?;
        for ((r, rew), adv) in group.rollouts.iter_mut().zip(rewards).zip(advantages) {
            r.reward = rew;
            r.advantage = adv;
        }
        group.reward_kind = Some(kind);
    }
    Ok(())
}
