//! Clipped group-relative surrogate with a per-token KL penalty.
//!
//! ```text
//! J = mean_groups (1/G) sum_i (1/|y_i|) sum_t [ min(r A, clip(r, 1-eps, 1+eps) A) - beta k ]
//! r = exp(log pi - log pi_old),  k = exp(d) - d - 1,  d = log pi_ref - log pi
//! ```
//! Advantages are constants: nothing flows back through reward computation.

use serde::{Deserialize, Serialize};

use super::config::TrainerConfig;
use super::rollout::TrajectoryBatch;
use crate::error::{Result, VigorError};
use crate::model::{logprob_vjp_with, GradScope, ParamVector};
use crate::reward::accurate_sum;
use crate::scalar::Scalar;

/// Ratio actually used by the clipped surrogate for advantage `adv`, and
/// whether the gradient flows through it (false when clipping binds).
pub fn effective_ratio<T: Scalar>(ratio: T, adv: T, eps: T) -> (T, bool) {
    let clipped = ratio.max(T::one() - eps).min(T::one() + eps);
    if ratio * adv <= clipped * adv {
        (ratio, true)
    } else {
        (clipped, false)
    }
}

/// `min(r A, clip(r) A)` for one token.
pub fn clipped_surrogate<T: Scalar>(ratio: T, adv: T, eps: T) -> T {
    effective_ratio(ratio, adv, eps).0 * adv
}

/// Non-negative per-token KL estimate `exp(d) - d - 1`, `d = ref - current`.
pub fn kl_estimate<T: Scalar>(logp: T, ref_logp: T) -> T {
    let d = ref_logp - logp;
    d.exp() - d - T::one()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveStats {
    pub objective: f64,
    pub surrogate: f64,
    pub kl: f64,
    /// Fraction of tokens whose ratio was clipped out of the gradient.
    pub clip_fraction: f64,
}

/// Objective value and its gradient with respect to every parameter.
pub fn grpo_objective<T: Scalar>(
    params: &ParamVector<T>,
    batch: &TrajectoryBatch<T>,
    config: &TrainerConfig,
) -> Result<(ObjectiveStats, Vec<T>)> {
    let eps = T::of(config.clip_eps);
    let beta = T::of(config.kl_coef);
    let groups = batch.groups.len();
    if groups == 0 {
        return Err(VigorError::Domain("empty batch".into()));
    }
    let mut grad = vec![T::zero(); params.len()];
    let mut group_surr = Vec::with_capacity(groups);
    let mut group_kl = Vec::with_capacity(groups);
    let (mut clipped, mut tokens) = (0usize, 0usize);
    for group in &batch.groups {
        let g = group.rollouts.len();
        let mut surr_terms = Vec::with_capacity(g);
        let mut kl_terms = Vec::with_capacity(g);
        for r in &group.rollouts {
            let n = r.completion.len();
            let weight = T::one() / (T::of_usize(groups) * T::of_usize(g) * T::of_usize(n));
            let adv = r.advantage;
            let mut ratio_sum = Vec::with_capacity(n);
            let mut kl_sum = Vec::with_capacity(n);
            let mut clipped_here = 0;
            let (_, gr) = logprob_vjp_with(
                params,
                &group.instance.prompt_tokens,
                &r.completion.tokens,
                GradScope::Full,
                |logps| {
                    logps
                        .iter()
                        .zip(&r.old_logprobs)
                        .zip(&r.ref_logprobs)
                        .map(|((&lp, &old), &rf)| {
                            let ratio = (lp - old).exp();
                            let (eff, live) = effective_ratio(ratio, adv, eps);
                            ratio_sum.push(eff);
                            kl_sum.push(kl_estimate(lp, rf));
                            if !live {
                                clipped_here += 1;
                            }
                            // d/dlogp of r A is r A; of -beta k is -beta (1 - e^d).
                            let dsurr = if live { ratio * adv } else { T::zero() };
                            let dkl = T::one() - (rf - lp).exp();
                            weight * (dsurr - beta * dkl)
                        })
                        .collect()
                },
            )?;
            for (acc, x) in grad.iter_mut().zip(gr) {
                *acc += x;
            }
            let nn = T::of_usize(n);
            surr_terms.push(adv * (accurate_sum(ratio_sum) / nn));
            kl_terms.push(accurate_sum(kl_sum) / nn);
            clipped += clipped_here;
            tokens += n;
        }
        group_surr.push(accurate_sum(surr_terms) / T::of_usize(g));
        group_kl.push(accurate_sum(kl_terms) / T::of_usize(g));
    }
    let surrogate = accurate_sum(group_surr) / T::of_usize(groups);
    let kl = accurate_sum(group_kl) / T::of_usize(groups);
    let objective = surrogate - beta * kl;
    if !objective.is_finite() || grad.iter().any(|x| !x.is_finite()) {
        return Err(VigorError::Numeric(
            "non-finite objective or gradient".into(),
        ));
    }
    Ok((
        ObjectiveStats {
            objective: objective.to_f64_lossy(),
            surrogate: surrogate.to_f64_lossy(),
            kl: kl.to_f64_lossy(),
            clip_fraction: clipped as f64 / tokens.max(1) as f64,
        },
        grad,
    ))
}

/// Objective value only, recomputed without gradients; used by tests.
pub fn grpo_objective_value<T: Scalar>(
    params: &ParamVector<T>,
    batch: &TrajectoryBatch<T>,
    config: &TrainerConfig,
) -> Result<T> {
    let eps = T::of(config.clip_eps);
    let beta = T::of(config.kl_coef);
    let mut group_surr = Vec::new();
    let mut group_kl = Vec::new();
    for group in &batch.groups {
        let mut surr_terms = Vec::new();
        let mut kl_terms = Vec::new();
        for r in &group.rollouts {
            let lps = crate::model::token_logprobs(
                params,
                &group.instance.prompt_tokens,
                &r.completion.tokens,
            )?;
            let n = T::of_usize(lps.len());
            let ratios = lps
                .iter()
                .zip(&r.old_logprobs)
                .map(|(&lp, &old)| effective_ratio((lp - old).exp(), r.advantage, eps).0);
            let kls = lps
                .iter()
                .zip(&r.ref_logprobs)
                .map(|(&lp, &rf)| kl_estimate(lp, rf));
            surr_terms.push(r.advantage * (accurate_sum(ratios) / n));
            kl_terms.push(accurate_sum(kls) / n);
        }
        let g = T::of_usize(group.rollouts.len());
        group_surr.push(accurate_sum(surr_terms) / g);
        group_kl.push(accurate_sum(kl_terms) / g);
    }
    let groups = T::of_usize(batch.groups.len());
    Ok(accurate_sum(group_surr) / groups - beta * (accurate_sum(group_kl) / groups))
}
