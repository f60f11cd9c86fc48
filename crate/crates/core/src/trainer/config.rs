use serde::{Deserialize, Serialize};

use crate::error::{Result, VigorError};
use crate::model::{GradScope, ModelConfig};
use crate::tasks::{TaskKind, VOCAB_SIZE};

/// Reward used to build advantages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RewardVariant {
    /// Rank-shaped `-sqrt(T) ||g||`.
    #[default]
    Vigor,
    /// Rank-shaped `-||g||` without length correction.
    VigorNoSqrt,
    /// Min-max shaped `-sqrt(T) ||g||`.
    VigorMinmax,
    /// Raw mean token log-likelihood, standardized.
    Confidence,
    /// Rank-shaped mean token log-likelihood.
    ConfidenceRank,
    /// Binary exact-match verifier.
    Gt,
}

impl RewardVariant {
    pub const ALL: [RewardVariant; 6] = [
        RewardVariant::Vigor,
        RewardVariant::VigorNoSqrt,
        RewardVariant::VigorMinmax,
        RewardVariant::Confidence,
        RewardVariant::ConfidenceRank,
        RewardVariant::Gt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RewardVariant::Vigor => "vigor",
            RewardVariant::VigorNoSqrt => "vigor_no_sqrt",
            RewardVariant::VigorMinmax => "vigor_minmax",
            RewardVariant::Confidence => "confidence",
            RewardVariant::ConfidenceRank => "confidence_rank",
            RewardVariant::Gt => "gt",
        }
    }

    pub fn uses_verifier(self) -> bool {
        self == RewardVariant::Gt
    }
}

/// Supervised warm start that stands in for a pretrained base model.
///
/// Targets are canonical solutions preceded by a geometric number of
/// reasoning tokens: each further token follows with probability
/// `think_prob`, up to `max_think` or whatever room the answer leaves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WarmStartConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_think: usize,
    pub think_prob: f64,
    /// Probability that each answer symbol of a target is resampled
    /// uniformly from the task alphabet.
    pub answer_noise: f64,
    /// Number of distinct training prompts the warm start sees.
    pub num_examples: usize,
}

impl Default for WarmStartConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            batch_size: 32,
            learning_rate: 2e-3,
            max_think: 12,
            think_prob: 0.4,
            answer_noise: 0.2,
            num_examples: 4000,
        }
    }
}

/// Full run configuration. Every key is optional; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub group_size: usize,
    pub clip_eps: f64,
    pub kl_coef: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub warmup_ratio: f64,
    /// Global gradient-norm clip for updates; 0 disables.
    pub max_grad_norm: f64,
    pub steps: usize,
    pub prompts_per_step: usize,
    pub sample_temperature: f64,
    pub eval_temperature: f64,
    pub max_response_len: usize,
    pub reward_variant: RewardVariant,
    pub grad_scope: GradScope,
    pub epochs_per_batch: usize,
    pub seed: u64,
    pub task: TaskKind,
    pub difficulty: u32,
    pub train_size: usize,
    pub eval_size: usize,
    /// Evaluate every this many steps (and after the last one).
    pub eval_every: usize,
    /// Write an intermediate checkpoint every this many steps; 0 disables.
    pub checkpoint_every: usize,
    pub model: ModelConfig,
    pub warm_start: WarmStartConfig,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            clip_eps: 0.2,
            kl_coef: 0.01,
            learning_rate: 3e-4,
            weight_decay: 0.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            warmup_ratio: 0.1,
            max_grad_norm: 1.0,
            steps: 200,
            prompts_per_step: 16,
            sample_temperature: 0.9,
            eval_temperature: 0.9,
            max_response_len: 16,
            reward_variant: RewardVariant::Vigor,
            grad_scope: GradScope::Full,
            epochs_per_batch: 1,
            seed: 0,
            task: TaskKind::ModAdd,
            difficulty: 2,
            train_size: 4000,
            eval_size: 500,
            eval_every: 20,
            checkpoint_every: 0,
            model: ModelConfig::default(),
            warm_start: WarmStartConfig::default(),
        }
    }
}

impl TrainerConfig {
    /// Parses a TOML document, naming any unknown or malformed key.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e| VigorError::Config(format!("config parse error: {e}")))?;
        Self::from_table(table)
    }

    fn from_table(table: toml::Table) -> Result<Self> {
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| VigorError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies `key=value` overrides; dotted keys reach nested tables.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut table: toml::Table = toml::Table::try_from(self).expect("config serializes");
        for item in overrides {
            let item = item.as_ref();
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| VigorError::Config(format!("override `{item}` is not key=value")))?;
            let key = key.trim();
            let value = parse_value(raw.trim());
            let mut parts: Vec<&str> = key.split('.').collect();
            let leaf = parts.pop().unwrap();
            let mut cur = &mut table;
            for part in parts {
                cur = cur
                    .get_mut(part)
                    .and_then(toml::Value::as_table_mut)
                    .ok_or_else(|| VigorError::Config(format!("unknown config key `{key}`")))?;
            }
            if !cur.contains_key(leaf) {
                return Err(VigorError::Config(format!("unknown config key `{key}`")));
            }
            cur.insert(leaf.to_string(), value);
        }
        Self::from_table(table)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(VigorError::Config(msg));
        if self.group_size < 2 {
            return bad(format!(
                "group_size must be at least 2, got {}",
                self.group_size
            ));
        }
        if !(self.clip_eps > 0.0) {
            return bad("clip_eps must be positive".into());
        }
        if !(self.kl_coef >= 0.0) {
            return bad("kl_coef must be non-negative".into());
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive".into());
        }
        if !(self.sample_temperature > 0.0) || !(self.eval_temperature > 0.0) {
            return bad("temperatures must be positive".into());
        }
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if self.epochs_per_batch == 0 || self.prompts_per_step == 0 {
            return bad("epochs_per_batch and prompts_per_step must be at least 1".into());
        }
        if self.max_response_len == 0 {
            return bad("max_response_len must be at least 1".into());
        }
        if self.train_size == 0 || self.eval_size == 0 {
            return bad("train_size and eval_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return bad("warmup_ratio must be in [0, 1)".into());
        }
        if !self.task.difficulty_range().contains(&self.difficulty) {
            return bad(format!(
                "difficulty {} outside {:?} for {}",
                self.difficulty,
                self.task.difficulty_range(),
                self.task.name()
            ));
        }
        self.model.validate()?;
        if self.model.vocab_size < VOCAB_SIZE {
            return bad(format!(
                "model.vocab_size must cover the task vocabulary ({VOCAB_SIZE})"
            ));
        }
        let prompt = self.task.max_prompt_len(self.difficulty);
        if prompt + self.max_response_len > self.model.context_length {
            return bad(format!(
                "model.context_length {} < max prompt {prompt} + max_response_len {}",
                self.model.context_length, self.max_response_len
            ));
        }
        let min_answer = self.task.max_answer_len(self.difficulty) + 2;
        if min_answer > self.max_response_len {
            return bad(format!(
                "max_response_len {} cannot hold a {min_answer}-token answer",
                self.max_response_len
            ));
        }
        if !(0.0..1.0).contains(&self.warm_start.think_prob) {
            return bad("warm_start.think_prob must be in [0, 1)".into());
        }
        if !(0.0..=1.0).contains(&self.warm_start.answer_noise) {
            return bad("warm_start.answer_noise must be in [0, 1]".into());
        }
        Ok(())
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}
