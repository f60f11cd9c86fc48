//! The rollout / reward / update loop.

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainerConfig;
use super::eval::{evaluate, group_dump};
use super::objective::{grpo_objective, ObjectiveStats};
use super::optim::{clip_grad_norm, cosine_lr, Adam, AdamSettings};
use super::rollout::{assign_advantages, collect_rollouts, TrajectoryBatch};
use super::warm_start::warm_start;
use crate::analysis::{ngram_repetition_rate, top_fraction_accuracy, StepRecord};
use crate::error::{Result, VigorError};
use crate::model::{init_params, ParamVector};
use crate::scalar::Scalar;
use crate::tasks::{make_dataset, Dataset, Split};

/// Consecutive skipped steps tolerated before a run is aborted.
pub const MAX_CONSECUTIVE_SKIPS: usize = 3;

/// Receives per-step output while training runs.
pub trait TrainSink<T> {
    fn on_step(&mut self, _record: &StepRecord) -> Result<()> {
        Ok(())
    }
    fn on_checkpoint(&mut self, _step: usize, _params: &ParamVector<T>) -> Result<()> {
        Ok(())
    }
}

/// Sink that keeps every record in memory.
#[derive(Debug, Default)]
pub struct Collect {
    pub records: Vec<StepRecord>,
}

impl<T> TrainSink<T> for Collect {
    fn on_step(&mut self, record: &StepRecord) -> Result<()> {
        self.records.push(record.clone());
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub params: ParamVector<T>,
    pub initial_eval: f64,
    pub final_eval: f64,
    pub final_mean_length: f64,
    pub skipped_steps: usize,
}

/// Train and eval datasets for a config. Both derive from the run seed.
pub fn build_datasets(config: &TrainerConfig) -> Result<(Dataset, Dataset)> {
    let train = make_dataset(
        config.task,
        config.train_size,
        config.difficulty,
        config.seed,
        Split::Train,
    )?;
    let eval = make_dataset(
        config.task,
        config.eval_size,
        config.difficulty,
        config.seed,
        Split::Eval,
    )?;
    Ok((train, eval))
}

pub fn adam_settings(config: &TrainerConfig) -> AdamSettings {
    AdamSettings {
        beta1: config.adam_beta1,
        beta2: config.adam_beta2,
        eps: config.adam_eps,
        weight_decay: config.weight_decay,
    }
}

/// Random initialization followed by the supervised warm start.
pub fn initial_policy<T: Scalar>(
    config: &TrainerConfig,
    train: &Dataset,
) -> Result<ParamVector<T>> {
    let mut params = init_params::<T>(&config.model, config.seed)?;
    let settings = AdamSettings {
        weight_decay: 0.0,
        ..adam_settings(config)
    };
    let losses = warm_start(
        &mut params,
        &train.instances,
        &config.warm_start,
        config.max_response_len,
        settings,
        config.seed,
    )?;
    if let Some(last) = losses.last() {
        info!("warm start: {} steps, final nll {last:.4}", losses.len());
    }
    Ok(params)
}

/// Seed of the evaluation sampler; fixed per run so every eval shares noise.
pub fn eval_seed(config: &TrainerConfig) -> u64 {
    config.seed ^ 0x5eed_e7a1
}

/// Full run from a fresh initial policy.
pub fn train<T: Scalar>(
    config: &TrainerConfig,
    train_set: &Dataset,
    eval_set: &Dataset,
    sink: &mut dyn TrainSink<T>,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    let initial = initial_policy(config, train_set)?;
    train_from(config, initial, train_set, eval_set, sink)
}

fn step_record<T: Scalar>(step: usize, batch: &TrajectoryBatch<T>) -> StepRecord {
    let groups: Vec<_> = batch.groups.iter().map(group_dump).collect();
    let rollouts: Vec<_> = batch.rollouts().collect();
    let n = rollouts.len().max(1) as f64;
    let mean = |f: &dyn Fn(&super::rollout::Rollout<T>) -> f64| {
        rollouts.iter().map(|r| f(r)).sum::<f64>() / n
    };
    StepRecord {
        step,
        eval_accuracy: None,
        train_accuracy: mean(&|r| f64::from(u8::from(r.correct))),
        top25_accuracy: top_fraction_accuracy(&groups, 0.25).unwrap_or(f64::NAN),
        mean_length: mean(&|r| r.completion.len() as f64),
        mean_3gram_repetition: mean(&|r| ngram_repetition_rate(&r.completion.tokens, 3)),
        mean_grad_norm: mean(&|r| r.grad_norm.to_f64_lossy()),
        mean_signal: mean(&|r| r.signal.to_f64_lossy()),
        objective: 0.0,
        kl: 0.0,
        clip_fraction: 0.0,
        update_grad_norm: 0.0,
        learning_rate: 0.0,
        skipped: false,
        groups,
    }
}

/// One ascent step on the objective. Returns the objective statistics and the
/// gradient norm before clipping.
pub fn apply_update<T: Scalar>(
    params: &mut ParamVector<T>,
    opt: &mut Adam<T>,
    batch: &TrajectoryBatch<T>,
    config: &TrainerConfig,
    lr: f64,
) -> Result<(ObjectiveStats, f64)> {
    let (stats, grad) = grpo_objective(params, batch, config)?;
    // Ascend J by descending -J.
    let mut loss_grad: Vec<T> = grad.into_iter().map(|g| -g).collect();
    let norm = clip_grad_norm(&mut loss_grad, config.max_grad_norm);
    opt.step(&mut params.values, &loss_grad, lr);
    Ok((stats, norm))
}

/// Runs the configured number of steps starting from `initial`, which also
/// becomes the frozen reference policy.
pub fn train_from<T: Scalar>(
    config: &TrainerConfig,
    initial: ParamVector<T>,
    train_set: &Dataset,
    eval_set: &Dataset,
    sink: &mut dyn TrainSink<T>,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(VigorError::Config("empty training set".into()));
    }
    let reference = initial.clone();
    let mut params = initial;
    let mut opt = Adam::new(params.len(), adam_settings(config));
    let mut rollout_rng = ChaCha8Rng::seed_from_u64(config.seed);
    rollout_rng.set_stream(1);
    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed);
    order_rng.set_stream(2);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    order.shuffle(&mut order_rng);
    let mut cursor = 0;

    let run_eval = |p: &ParamVector<T>| {
        evaluate(
            p,
            &eval_set.instances,
            config.max_response_len,
            config.eval_temperature,
            eval_seed(config),
        )
    };
    let initial_eval = run_eval(&params)?;
    info!("initial eval accuracy {:.4}", initial_eval.accuracy);
    let mut last_eval = initial_eval;
    let mut consecutive_skips = 0;
    let mut skipped_steps = 0;
    let total_updates = config.steps * config.epochs_per_batch;

    for step in 0..config.steps {
        let mut prompts = Vec::with_capacity(config.prompts_per_step);
        for _ in 0..config.prompts_per_step {
            if cursor == order.len() {
                order.shuffle(&mut order_rng);
                cursor = 0;
            }
            let i = order[cursor];
            cursor += 1;
            prompts.push((i, &train_set.instances[i]));
        }
        let mut batch = collect_rollouts(&params, &reference, &prompts, config, &mut rollout_rng)?;
        assign_advantages(&mut batch, config.reward_variant)?;
        let mut record = step_record(step + 1, &batch);

        let snapshot = params.values.clone();
        let mut skipped = false;
        for epoch in 0..config.epochs_per_batch {
            let lr = cosine_lr(
                config.learning_rate,
                step * config.epochs_per_batch + epoch,
                total_updates,
                config.warmup_ratio,
            );
            match apply_update(&mut params, &mut opt, &batch, config, lr) {
                Ok((stats, norm)) => {
                    if epoch == 0 {
                        record.objective = stats.objective;
                        record.kl = stats.kl;
                        record.clip_fraction = stats.clip_fraction;
                        record.update_grad_norm = norm;
                        record.learning_rate = lr;
                    }
                }
                Err(VigorError::Numeric(msg)) => {
                    warn!("step {}: {msg}; skipped", step + 1);
                    skipped = true;
                    break;
                }
                Err(e) => return Err(e),
            }
            if !params.all_finite() {
                warn!(
                    "step {}: non-finite parameters after update; skipped",
                    step + 1
                );
                skipped = true;
                break;
            }
        }
        if skipped {
            params.values = snapshot;
            consecutive_skips += 1;
            skipped_steps += 1;
            record.skipped = true;
            if consecutive_skips >= MAX_CONSECUTIVE_SKIPS {
                return Err(VigorError::Numeric(format!(
                    "{MAX_CONSECUTIVE_SKIPS} consecutive steps skipped at step {}",
                    step + 1
                )));
            }
        } else {
            consecutive_skips = 0;
        }

        let last = step + 1 == config.steps;
        if last || (config.eval_every > 0 && (step + 1) % config.eval_every == 0) {
            last_eval = run_eval(&params)?;
            record.eval_accuracy = Some(last_eval.accuracy);
            info!(
                "step {}: eval {:.4} len {:.2} train {:.4}",
                step + 1,
                last_eval.accuracy,
                record.mean_length,
                record.train_accuracy
            );
        }
        sink.on_step(&record)?;
        if config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0 && !last {
            sink.on_checkpoint(step + 1, &params)?;
        }
    }
    Ok(TrainOutcome {
        params,
        initial_eval: initial_eval.accuracy,
        final_eval: last_eval.accuracy,
        final_mean_length: last_eval.mean_length,
        skipped_steps,
    })
}
