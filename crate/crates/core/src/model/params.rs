use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::error::{Result, VigorError};
use crate::scalar::Scalar;

/// Which parameters a gradient is taken over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GradScope {
    #[default]
    Full,
    /// Output projection (weight and bias) only; every other entry is zero.
    LmHeadOnly,
}

/// One named tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerOffsets {
    pub ln1: usize,
    pub qkv: usize,
    pub proj: usize,
    pub ln2: usize,
    pub up: usize,
    pub down: usize,
}

/// Start offsets of every tensor, in flattening order.
///
/// Order: `tok_emb [V,D]`, `pos_emb [C,D]`, then per block `ln1 [D]`,
/// `qkv [D,3D]`, `proj [D,D]`, `ln2 [D]`, `up [D,F]`, `down [F,D]`, then
/// `ln_f [D]`, `lm_head.weight [D,V]`, `lm_head.bias [V]`. All matrices are
/// row-major. The LM head is the trailing contiguous span.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Offsets {
    pub tok_emb: usize,
    pub pos_emb: usize,
    pub layers: Vec<LayerOffsets>,
    pub ln_f: usize,
    pub head_w: usize,
    pub head_b: usize,
    pub total: usize,
}

impl Offsets {
    pub fn new(config: &ModelConfig) -> Self {
        let (v, c, d, f) = (
            config.vocab_size,
            config.context_length,
            config.hidden_dim,
            config.mlp_dim,
        );
        let mut at = 0;
        let mut take = |n: usize| {
            let start = at;
            at += n;
            start
        };
        let tok_emb = take(v * d);
        let pos_emb = take(c * d);
        let layers = (0..config.num_layers)
            .map(|_| LayerOffsets {
                ln1: take(d),
                qkv: take(d * 3 * d),
                proj: take(d * d),
                ln2: take(d),
                up: take(d * f),
                down: take(f * d),
            })
            .collect();
        let ln_f = take(d);
        let head_w = take(d * v);
        let head_b = take(v);
        Self {
            tok_emb,
            pos_emb,
            layers,
            ln_f,
            head_w,
            head_b,
            total: at,
        }
    }

    /// Index range of the LM head (output projection weight and bias).
    pub fn lm_head(&self) -> Range<usize> {
        self.head_w..self.total
    }

    pub fn specs(&self, config: &ModelConfig) -> Vec<TensorSpec> {
        let (v, c, d, f) = (
            config.vocab_size,
            config.context_length,
            config.hidden_dim,
            config.mlp_dim,
        );
        let spec = |name: String, offset: usize, shape: Vec<usize>| TensorSpec {
            name,
            offset,
            shape,
        };
        let mut out = vec![
            spec("tok_emb".into(), self.tok_emb, vec![v, d]),
            spec("pos_emb".into(), self.pos_emb, vec![c, d]),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            out.push(spec(format!("blocks.{i}.ln1.gain"), l.ln1, vec![d]));
            out.push(spec(format!("blocks.{i}.attn.qkv"), l.qkv, vec![d, 3 * d]));
            out.push(spec(format!("blocks.{i}.attn.proj"), l.proj, vec![d, d]));
            out.push(spec(format!("blocks.{i}.ln2.gain"), l.ln2, vec![d]));
            out.push(spec(format!("blocks.{i}.mlp.up"), l.up, vec![d, f]));
            out.push(spec(format!("blocks.{i}.mlp.down"), l.down, vec![f, d]));
        }
        out.push(spec("ln_f.gain".into(), self.ln_f, vec![d]));
        out.push(spec("lm_head.weight".into(), self.head_w, vec![d, v]));
        out.push(spec("lm_head.bias".into(), self.head_b, vec![v]));
        out
    }
}

/// Flat, deterministically ordered model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector<T> {
    pub config: ModelConfig,
    pub values: Vec<T>,
    pub layout: Vec<TensorSpec>,
}

impl<T: Scalar> ParamVector<T> {
    /// All-zero parameters for `config`.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let offsets = Offsets::new(config);
        Ok(Self {
            config: config.clone(),
            values: vec![T::zero(); offsets.total],
            layout: offsets.specs(config),
        })
    }

    /// Wraps raw values, checking the length against the layout.
    pub fn from_values(config: &ModelConfig, values: Vec<T>) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        if values.len() != p.values.len() {
            return Err(VigorError::Config(format!(
                "expected {} parameter values, got {}",
                p.values.len(),
                values.len()
            )));
        }
        p.values = values;
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn offsets(&self) -> Offsets {
        Offsets::new(&self.config)
    }

    pub fn lm_head_range(&self) -> Range<usize> {
        self.offsets().lm_head()
    }

    pub fn tensor(&self, name: &str) -> Option<&[T]> {
        let spec = self.layout.iter().find(|s| s.name == name)?;
        Some(&self.values[spec.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [T]> {
        let range = self.layout.iter().find(|s| s.name == name)?.range();
        Some(&mut self.values[range])
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Converts to another scalar type, e.g. for f64 checkpoints.
    pub fn cast<U: Scalar>(&self) -> ParamVector<U> {
        ParamVector {
            config: self.config.clone(),
            values: self
                .values
                .iter()
                .map(|v| U::of(v.to_f64_lossy()))
                .collect(),
            layout: self.layout.clone(),
        }
    }
}

/// Largest absolute value produced by [`init_params`].
pub const INIT_BOUND: f64 = 1.0;

/// Deterministic initialization.
///
/// Embeddings are uniform in `[-0.5, 0.5]`, weight matrices uniform in
/// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` (residual output projections further
/// scaled by `1/sqrt(2 * num_layers)`), norm gains are 1 and the head bias 0.
/// Every entry therefore lies within [`INIT_BOUND`].
pub fn init_params<T: Scalar>(config: &ModelConfig, seed: u64) -> Result<ParamVector<T>> {
    let mut p = ParamVector::<T>::zeros(config)?;
    let o = p.offsets();
    let (v, c, d, f) = (
        config.vocab_size,
        config.context_length,
        config.hidden_dim,
        config.mlp_dim,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let residual = 1.0 / ((2 * config.num_layers) as f64).sqrt();
    let mut fill = |vals: &mut [T], start: usize, n: usize, bound: f64| {
        for x in &mut vals[start..start + n] {
            *x = T::of(rng.gen_range(-bound..=bound));
        }
    };
    let vals = &mut p.values;
    fill(vals, o.tok_emb, v * d, 0.5);
    fill(vals, o.pos_emb, c * d, 0.5);
    let inv_sqrt = |n: usize| 1.0 / (n as f64).sqrt();
    for l in &o.layers {
        vals[l.ln1..l.ln1 + d].fill(T::one());
        fill(vals, l.qkv, d * 3 * d, inv_sqrt(d));
        fill(vals, l.proj, d * d, inv_sqrt(d) * residual);
        vals[l.ln2..l.ln2 + d].fill(T::one());
        fill(vals, l.up, d * f, inv_sqrt(d));
        fill(vals, l.down, f * d, inv_sqrt(f) * residual);
    }
    vals[o.ln_f..o.ln_f + d].fill(T::one());
    fill(vals, o.head_w, d * v, inv_sqrt(d));
    Ok(p)
}
