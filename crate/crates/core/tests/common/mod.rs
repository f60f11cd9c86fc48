#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vigor_core::model::{init_params, Completion, ModelConfig, ParamVector, Token};

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        vocab_size: 6,
        context_length: 10,
        hidden_dim: 4,
        num_layers: 2,
        num_heads: 2,
        mlp_dim: 6,
        ..Default::default()
    }
}

/// Random tiny model plus a random prompt and completion.
pub fn random_case(seed: u64) -> (ParamVector<f64>, Vec<Token>, Completion<f64>) {
    let cfg = tiny_config();
    let mut params = init_params::<f64>(&cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    // Push the gains and bias away from their init values so every tensor is exercised.
    for v in params.values.iter_mut() {
        *v += rng.gen_range(-0.3..0.3);
    }
    let prompt_len = rng.gen_range(1..4);
    let comp_len = rng.gen_range(1..=(cfg.context_length - prompt_len));
    let prompt = (0..prompt_len)
        .map(|_| rng.gen_range(0..cfg.vocab_size) as Token)
        .collect();
    let tokens: Vec<Token> = (0..comp_len)
        .map(|_| rng.gen_range(0..cfg.vocab_size) as Token)
        .collect();
    let completion = Completion {
        token_logprobs: vec![0.0; tokens.len()],
        tokens,
        terminated: false,
    };
    (params, prompt, completion)
}

/// Central finite-difference gradient of `f` at `params`.
pub fn finite_difference<F>(params: &ParamVector<f64>, step: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&ParamVector<f64>) -> f64,
{
    let mut probe = params.clone();
    (0..params.len())
        .map(|i| {
            let orig = probe.values[i];
            probe.values[i] = orig + step;
            let up = f(&probe);
            probe.values[i] = orig - step;
            let down = f(&probe);
            probe.values[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Relative error with a 1e-6 magnitude floor so exact zeros compare sanely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| rel_err(x, y))
        .fold(0.0, f64::max)
}

/// Small trainer setup that runs in well under a second per step.
pub fn tiny_trainer_config() -> vigor_core::trainer::TrainerConfig {
    use vigor_core::trainer::{TrainerConfig, WarmStartConfig};
    TrainerConfig {
        model: ModelConfig {
            context_length: 16,
            hidden_dim: 8,
            num_layers: 1,
            num_heads: 2,
            mlp_dim: 12,
            ..Default::default()
        },
        group_size: 4,
        prompts_per_step: 2,
        max_response_len: 6,
        steps: 5,
        train_size: 40,
        eval_size: 10,
        eval_every: 2,
        difficulty: 1,
        warm_start: WarmStartConfig {
            steps: 3,
            batch_size: 2,
            ..Default::default()
        },
        ..Default::default()
    }
}
