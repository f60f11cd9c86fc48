//! Per-completion signals, within-group reward shaping and advantages.

use std::cmp::Ordering;

use num_traits::{FromPrimitive, Num};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VigorError};
use crate::model::{mean_nll, Completion, ParamVector, Token};
use crate::scalar::Scalar;
use crate::tasks::{verify, TaskInstance};

/// Standard deviation below which a group carries no learning signal.
pub const MIN_GROUP_STD: f64 = 1e-8;

/// Gradient-norm signal of one completion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawSignal<T> {
    /// `-sqrt(T) * ||g||` when length-corrected, else `-||g||`.
    pub value: T,
    pub gradient_norm: T,
    pub length: usize,
}

/// How a group's rewards were produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    Rank,
    Minmax,
    Binary,
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRewards<T> {
    pub rewards: Vec<T>,
    pub advantages: Vec<T>,
    pub kind: RewardKind,
}

/// Plain l2 norm.
pub fn l2_norm<T: Scalar>(v: &[T]) -> T {
    v.iter().map(|&x| x * x).sum::<T>().sqrt()
}

/// Turns a gradient into the detached scalar signal.
///
/// Entries outside the gradient scope are zero and so do not contribute.
pub fn gradient_norm_signal<T: Scalar>(
    gradient: &[T],
    length: usize,
    length_correct: bool,
) -> Result<RawSignal<T>> {
    if length == 0 {
        return Err(VigorError::Domain(
            "completion length must be at least 1".into(),
        ));
    }
    if let Some(i) = gradient.iter().position(|g| !g.is_finite()) {
        return Err(VigorError::Numeric(format!(
            "non-finite gradient entry at index {i}"
        )));
    }
    let norm = l2_norm(gradient);
    let value = if length_correct {
        -(T::of_usize(length).sqrt() * norm)
    } else {
        -norm
    };
    Ok(RawSignal {
        value,
        gradient_norm: norm,
        length,
    })
}

/// Compensated (Neumaier) summation. Exact for the mirrored reward grids the
/// rank map produces, so their mean is exactly zero.
pub fn accurate_sum<T: Scalar>(xs: impl IntoIterator<Item = T>) -> T {
    let mut sum = T::zero();
    let mut comp = T::zero();
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Value type the rank and min-max maps work over; includes exact rationals.
pub trait RewardValue: Clone + PartialOrd + Num + FromPrimitive {}
impl<T: Clone + PartialOrd + Num + FromPrimitive> RewardValue for T {}

fn check_group<T>(xs: &[T]) -> Result<()> {
    if xs.len() < 2 {
        return Err(VigorError::GroupSize(xs.len()));
    }
    Ok(())
}

fn cmp<T: PartialOrd>(a: &T, b: &T) -> Result<Ordering> {
    a.partial_cmp(b)
        .ok_or_else(|| VigorError::Numeric("signals are not comparable (NaN)".into()))
}

/// Fractional ascending ranks (0-based); ties share the mean of their ranks.
/// Returned doubled (`2 * rank`) so the result stays integral.
pub fn doubled_ranks<T: PartialOrd>(signals: &[T]) -> Result<Vec<usize>> {
    for s in signals {
        cmp(s, s)?;
    }
    let mut order: Vec<usize> = (0..signals.len()).collect();
    order.sort_by(|&a, &b| signals[a].partial_cmp(&signals[b]).unwrap());
    let mut out = vec![0; signals.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && signals[order[end + 1]] == signals[order[start]] {
            end += 1;
        }
        for &i in &order[start..=end] {
            out[i] = start + end;
        }
        start = end + 1;
    }
    Ok(out)
}

/// Maps ascending rank `k` of `G` onto `2k/(G-1) - 1`; larger signal, larger reward.
pub fn rank_normalize<T: RewardValue>(signals: &[T]) -> Result<Vec<T>> {
    check_group(signals)?;
    // (2k - (G-1)) / (G-1) keeps mirrored ranks exact negatives of each other.
    let g1 = T::from_usize(signals.len() - 1).expect("group size fits scalar");
    Ok(doubled_ranks(signals)?
        .into_iter()
        .map(|r2| (T::from_usize(r2).expect("rank fits scalar") - g1.clone()) / g1.clone())
        .collect())
}

/// Affine map sending the group minimum to -1 and maximum to +1.
/// A constant group maps to all zeros.
pub fn minmax_normalize<T: RewardValue>(signals: &[T]) -> Result<Vec<T>> {
    check_group(signals)?;
    let mut lo = signals[0].clone();
    let mut hi = signals[0].clone();
    for s in signals {
        if cmp(s, &lo)? == Ordering::Less {
            lo = s.clone();
        }
        if cmp(s, &hi)? == Ordering::Greater {
            hi = s.clone();
        }
    }
    if lo == hi {
        return Ok(vec![T::zero(); signals.len()]);
    }
    let two = T::one() + T::one();
    let span = hi - lo.clone();
    Ok(signals
        .iter()
        .map(|s| two.clone() * (s.clone() - lo.clone()) / span.clone() - T::one())
        .collect())
}

/// Group-standardized advantages with the population standard deviation.
pub fn group_advantages<T: Scalar>(rewards: &[T]) -> Result<Vec<T>> {
    check_group(rewards)?;
    let n = T::of_usize(rewards.len());
    let mean = accurate_sum(rewards.iter().copied()) / n;
    let var = rewards.iter().map(|&r| (r - mean) * (r - mean)).sum::<T>() / n;
    let std = var.sqrt();
    if !(std >= T::of(MIN_GROUP_STD)) {
        return Ok(vec![T::zero(); rewards.len()]);
    }
    Ok(rewards.iter().map(|&r| (r - mean) / std).collect())
}

/// Likelihood-based confidence: the mean token log-likelihood.
pub fn confidence_signal<T: Scalar>(
    params: &ParamVector<T>,
    prompt: &[Token],
    completion: &Completion<T>,
) -> Result<T> {
    Ok(-mean_nll(params, prompt, completion)?)
}

/// Exact-match verifier reward: 1 for a correct final answer, else 0.
pub fn gt_reward(instance: &TaskInstance, completion_text: &str) -> u8 {
    u8::from(verify(instance, completion_text))
}
