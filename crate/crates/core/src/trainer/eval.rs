//! Held-out evaluation and rank/accuracy probes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainerConfig;
use super::rollout::{assign_advantages, collect_rollouts, RolloutGroup};
use crate::analysis::{DumpEntry, GroupDump};
use crate::error::Result;
use crate::model::{sample_completion, ParamVector};
use crate::scalar::Scalar;
use crate::tasks::{verify_tokens, TaskInstance};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub accuracy: f64,
    pub mean_length: f64,
    pub count: usize,
}

/// Exact-match accuracy of one sampled completion per prompt. The rng is
/// rebuilt from `seed` on every call so repeated evaluations share noise.
pub fn evaluate<T: Scalar>(
    params: &ParamVector<T>,
    instances: &[TaskInstance],
    max_len: usize,
    temperature: f64,
    seed: u64,
) -> Result<EvalSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3);
    let (mut hits, mut tokens) = (0usize, 0usize);
    for inst in instances {
        let c = sample_completion(params, &inst.prompt_tokens, max_len, temperature, &mut rng)?;
        hits += usize::from(verify_tokens(inst, &c.tokens));
        tokens += c.len();
    }
    let n = instances.len().max(1) as f64;
    Ok(EvalSummary {
        accuracy: hits as f64 / n,
        mean_length: tokens as f64 / n,
        count: instances.len(),
    })
}

/// Log form of a scored group.
pub fn group_dump<T: Scalar>(group: &RolloutGroup<T>) -> GroupDump {
    GroupDump {
        prompt_index: group.prompt_index,
        aborted: group.aborted,
        entries: group
            .rollouts
            .iter()
            .map(|r| DumpEntry {
                tokens: r.completion.tokens.clone(),
                length: r.completion.len(),
                grad_norm: r.grad_norm.to_f64_lossy(),
                signal: r.signal.to_f64_lossy(),
                reward: r.reward.to_f64_lossy(),
                advantage: r.advantage.to_f64_lossy(),
                rank_position: r.rank_position,
                correct: r.correct,
            })
            .collect(),
    }
}

/// Rolls out `config.group_size` completions for every instance and returns
/// the scored groups, for rank/accuracy analysis at a fixed checkpoint.
pub fn rank_probe<T: Scalar>(
    params: &ParamVector<T>,
    instances: &[TaskInstance],
    config: &TrainerConfig,
    seed: u64,
) -> Result<Vec<GroupDump>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(5);
    let mut out = Vec::with_capacity(instances.len());
    for (i, inst) in instances.iter().enumerate() {
        let mut batch = collect_rollouts(params, params, &[(i, inst)], config, &mut rng)?;
        assign_advantages(&mut batch, config.reward_variant)?;
        out.extend(batch.groups.iter().map(group_dump));
    }
    Ok(out)
}
