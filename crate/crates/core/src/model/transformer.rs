//! Forward pass, teacher-forced scoring and hand-derived backward pass.
//!
//! Block structure (pre-norm): `h += Attn(RMSNorm(h))`, `h += MLP(RMSNorm(h))`,
//! followed by a final RMSNorm and an affine LM head. The MLP uses the tanh
//! GELU so every operation is smooth, which keeps finite-difference checks
//! meaningful.

use super::params::{GradScope, LayerOffsets, Offsets, ParamVector};
use super::{Completion, Token};
use crate::error::{Result, VigorError};
use crate::scalar::Scalar;

const RMS_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// `out[n x m] = a[n x k] * b[k x m]`.
fn matmul<T: Scalar>(a: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for l in 0..k {
            let x = a[i * k + l];
            if x == T::zero() {
                continue;
            }
            for (o, &w) in row.iter_mut().zip(&b[l * m..(l + 1) * m]) {
                *o += x * w;
            }
        }
    }
    out
}

/// `out[k x m] += a[n x k]^T * d[n x m]`.
fn acc_at_b<T: Scalar>(a: &[T], d: &[T], out: &mut [T], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let drow = &d[i * m..(i + 1) * m];
        for l in 0..k {
            let x = a[i * k + l];
            if x == T::zero() {
                continue;
            }
            for (o, &g) in out[l * m..(l + 1) * m].iter_mut().zip(drow) {
                *o += x * g;
            }
        }
    }
}

/// `out[n x k] = d[n x m] * b[k x m]^T`.
fn matmul_bt<T: Scalar>(d: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * k];
    for i in 0..n {
        let drow = &d[i * m..(i + 1) * m];
        for l in 0..k {
            let mut s = T::zero();
            for (&g, &w) in drow.iter().zip(&b[l * m..(l + 1) * m]) {
                s += g * w;
            }
            out[i * k + l] = s;
        }
    }
    out
}

/// Row-wise RMSNorm; returns normalized rows and the per-row inverse RMS.
fn rmsnorm<T: Scalar>(x: &[T], gain: &[T], n: usize, d: usize) -> (Vec<T>, Vec<T>) {
    let mut y = vec![T::zero(); n * d];
    let mut inv = vec![T::zero(); n];
    let eps = T::of(RMS_EPS);
    let dn = T::of_usize(d);
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        let ms = row.iter().map(|&v| v * v).sum::<T>() / dn;
        let r = T::one() / (ms + eps).sqrt();
        inv[i] = r;
        for k in 0..d {
            y[i * d + k] = row[k] * r * gain[k];
        }
    }
    (y, inv)
}

/// Backward of [`rmsnorm`]: accumulates into `dx` and `dgain`.
#[allow(clippy::too_many_arguments)]
fn rmsnorm_backward<T: Scalar>(
    x: &[T],
    inv: &[T],
    gain: &[T],
    dy: &[T],
    dx: &mut [T],
    dgain: &mut [T],
    n: usize,
    d: usize,
) {
    let dn = T::of_usize(d);
    for i in 0..n {
        let r = inv[i];
        let xr = &x[i * d..(i + 1) * d];
        let dyr = &dy[i * d..(i + 1) * d];
        let mut dot = T::zero();
        for k in 0..d {
            dgain[k] += dyr[k] * xr[k] * r;
            dot += dyr[k] * gain[k] * xr[k];
        }
        let c = r * r * r * dot / dn;
        for k in 0..d {
            dx[i * d + k] += r * gain[k] * dyr[k] - xr[k] * c;
        }
    }
}

fn gelu<T: Scalar>(u: T) -> T {
    let half = T::of(0.5);
    let t = (T::of(GELU_C) * (u + T::of(GELU_A) * u * u * u)).tanh();
    half * u * (T::one() + t)
}

fn gelu_grad<T: Scalar>(u: T) -> T {
    let half = T::of(0.5);
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let t = (c * (u + a * u * u * u)).tanh();
    half * (T::one() + t) + half * u * (T::one() - t * t) * c * (T::one() + T::of(3.0) * a * u * u)
}

/// Numerically stable softmax of one row.
pub fn softmax<T: Scalar>(row: &[T]) -> Vec<T> {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Numerically stable log-softmax of one row.
pub fn log_softmax<T: Scalar>(row: &[T]) -> Vec<T> {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
    row.iter().map(|&v| v - lse).collect()
}

struct LayerCache<T> {
    h_in: Vec<T>,
    inv1: Vec<T>,
    a: Vec<T>,
    qkv: Vec<T>,
    att: Vec<T>,
    cat: Vec<T>,
    h_mid: Vec<T>,
    inv2: Vec<T>,
    b: Vec<T>,
    u: Vec<T>,
    z: Vec<T>,
}

struct ForwardCache<T> {
    tokens: Vec<Token>,
    layers: Vec<LayerCache<T>>,
    h_out: Vec<T>,
    inv_f: Vec<T>,
    f: Vec<T>,
    logits: Vec<T>,
}

fn check_tokens<T: Scalar>(params: &ParamVector<T>, tokens: &[Token]) -> Result<()> {
    let cfg = &params.config;
    if tokens.len() > cfg.context_length {
        return Err(VigorError::Length {
            len: tokens.len(),
            max: cfg.context_length,
        });
    }
    if let Some(&t) = tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
        return Err(VigorError::Domain(format!(
            "token id {t} outside vocabulary of size {}",
            cfg.vocab_size
        )));
    }
    Ok(())
}

fn attention<T: Scalar>(qkv: &[T], n: usize, d: usize, heads: usize) -> (Vec<T>, Vec<T>) {
    let hd = d / heads;
    let scale = T::one() / T::of_usize(hd).sqrt();
    let mut att = vec![T::zero(); heads * n * n];
    let mut cat = vec![T::zero(); n * d];
    for h in 0..heads {
        let (qo, ko, vo) = (h * hd, d + h * hd, 2 * d + h * hd);
        for i in 0..n {
            let q = &qkv[i * 3 * d + qo..i * 3 * d + qo + hd];
            let arow = &mut att[(h * n + i) * n..(h * n + i) * n + n];
            let mut max = T::neg_infinity();
            for j in 0..=i {
                let k = &qkv[j * 3 * d + ko..j * 3 * d + ko + hd];
                let s = q.iter().zip(k).map(|(&a, &b)| a * b).sum::<T>() * scale;
                arow[j] = s;
                max = max.max(s);
            }
            let mut total = T::zero();
            for a in arow.iter_mut().take(i + 1) {
                *a = (*a - max).exp();
                total += *a;
            }
            for a in arow.iter_mut().take(i + 1) {
                *a /= total;
            }
            let out = &mut cat[i * d + h * hd..i * d + (h + 1) * hd];
            for j in 0..=i {
                let w = arow[j];
                let v = &qkv[j * 3 * d + vo..j * 3 * d + vo + hd];
                for (o, &x) in out.iter_mut().zip(v) {
                    *o += w * x;
                }
            }
        }
    }
    (att, cat)
}

fn embed<T: Scalar>(params: &ParamVector<T>, o: &Offsets, tokens: &[Token]) -> Vec<T> {
    let d = params.config.hidden_dim;
    let vals = &params.values;
    let mut h = vec![T::zero(); tokens.len() * d];
    for (i, &t) in tokens.iter().enumerate() {
        let e = &vals[o.tok_emb + t as usize * d..o.tok_emb + (t as usize + 1) * d];
        let p = &vals[o.pos_emb + i * d..o.pos_emb + (i + 1) * d];
        for k in 0..d {
            h[i * d + k] = e[k] + p[k];
        }
    }
    h
}

fn forward<T: Scalar>(params: &ParamVector<T>, tokens: &[Token]) -> Result<ForwardCache<T>> {
    check_tokens(params, tokens)?;
    let cfg = &params.config;
    let (n, d, f, v) = (tokens.len(), cfg.hidden_dim, cfg.mlp_dim, cfg.vocab_size);
    let o = params.offsets();
    let vals = &params.values;
    let mut h = embed(params, &o, tokens);
    let mut layers = Vec::with_capacity(o.layers.len());
    for l in &o.layers {
        let (a, inv1) = rmsnorm(&h, &vals[l.ln1..l.ln1 + d], n, d);
        let qkv = matmul(&a, &vals[l.qkv..l.qkv + d * 3 * d], n, d, 3 * d);
        let (att, cat) = attention(&qkv, n, d, cfg.num_heads);
        let proj = matmul(&cat, &vals[l.proj..l.proj + d * d], n, d, d);
        let h_mid: Vec<T> = h.iter().zip(&proj).map(|(&x, &y)| x + y).collect();
        let (b, inv2) = rmsnorm(&h_mid, &vals[l.ln2..l.ln2 + d], n, d);
        let u = matmul(&b, &vals[l.up..l.up + d * f], n, d, f);
        let z: Vec<T> = u.iter().map(|&x| gelu(x)).collect();
        let down = matmul(&z, &vals[l.down..l.down + f * d], n, f, d);
        let h_out: Vec<T> = h_mid.iter().zip(&down).map(|(&x, &y)| x + y).collect();
        layers.push(LayerCache {
            h_in: std::mem::replace(&mut h, h_out),
            inv1,
            a,
            qkv,
            att,
            cat,
            h_mid,
            inv2,
            b,
            u,
            z,
        });
    }
    let (fnorm, inv_f) = rmsnorm(&h, &vals[o.ln_f..o.ln_f + d], n, d);
    let mut logits = matmul(&fnorm, &vals[o.head_w..o.head_w + d * v], n, d, v);
    for row in logits.chunks_mut(v) {
        for (x, &b) in row.iter_mut().zip(&vals[o.head_b..o.head_b + v]) {
            *x += b;
        }
    }
    Ok(ForwardCache {
        tokens: tokens.to_vec(),
        layers,
        h_out: h,
        inv_f,
        f: fnorm,
        logits,
    })
}

fn attention_backward<T: Scalar>(
    qkv: &[T],
    att: &[T],
    dcat: &[T],
    n: usize,
    d: usize,
    heads: usize,
) -> Vec<T> {
    let hd = d / heads;
    let scale = T::one() / T::of_usize(hd).sqrt();
    let mut dqkv = vec![T::zero(); n * 3 * d];
    let mut datt = vec![T::zero(); n];
    for h in 0..heads {
        let (qo, ko, vo) = (h * hd, d + h * hd, 2 * d + h * hd);
        for i in 0..n {
            let arow = &att[(h * n + i) * n..(h * n + i) * n + n];
            let dout = &dcat[i * d + h * hd..i * d + (h + 1) * hd];
            let mut weighted = T::zero();
            for j in 0..=i {
                let v = &qkv[j * 3 * d + vo..j * 3 * d + vo + hd];
                let g = dout.iter().zip(v).map(|(&a, &b)| a * b).sum::<T>();
                datt[j] = g;
                weighted += arow[j] * g;
                let dv = &mut dqkv[j * 3 * d + vo..j * 3 * d + vo + hd];
                for (x, &y) in dv.iter_mut().zip(dout) {
                    *x += arow[j] * y;
                }
            }
            for j in 0..=i {
                let ds = arow[j] * (datt[j] - weighted) * scale;
                if ds == T::zero() {
                    continue;
                }
                for e in 0..hd {
                    let q = qkv[i * 3 * d + qo + e];
                    let k = qkv[j * 3 * d + ko + e];
                    dqkv[i * 3 * d + qo + e] += ds * k;
                    dqkv[j * 3 * d + ko + e] += ds * q;
                }
            }
        }
    }
    dqkv
}

fn backward<T: Scalar>(
    params: &ParamVector<T>,
    cache: &ForwardCache<T>,
    dlogits: &[T],
    scope: GradScope,
) -> Vec<T> {
    let cfg = &params.config;
    let (n, d, f, v) = (
        cache.tokens.len(),
        cfg.hidden_dim,
        cfg.mlp_dim,
        cfg.vocab_size,
    );
    let o = params.offsets();
    let vals = &params.values;
    let mut grad = vec![T::zero(); params.len()];

    acc_at_b(
        &cache.f,
        dlogits,
        &mut grad[o.head_w..o.head_w + d * v],
        n,
        d,
        v,
    );
    for row in dlogits.chunks(v) {
        for (g, &x) in grad[o.head_b..o.head_b + v].iter_mut().zip(row) {
            *g += x;
        }
    }
    if scope == GradScope::LmHeadOnly {
        return grad;
    }

    let df = matmul_bt(dlogits, &vals[o.head_w..o.head_w + d * v], n, d, v);
    let mut dh = vec![T::zero(); n * d];
    rmsnorm_backward(
        &cache.h_out,
        &cache.inv_f,
        &vals[o.ln_f..o.ln_f + d],
        &df,
        &mut dh,
        &mut grad[o.ln_f..o.ln_f + d],
        n,
        d,
    );

    for (l, lc) in o.layers.iter().zip(&cache.layers).rev() {
        layer_backward(vals, l, lc, &mut dh, &mut grad, n, d, f, cfg.num_heads);
    }

    for (i, &t) in cache.tokens.iter().enumerate() {
        let row = &dh[i * d..(i + 1) * d];
        let te = o.tok_emb + t as usize * d;
        let pe = o.pos_emb + i * d;
        for k in 0..d {
            grad[te + k] += row[k];
            grad[pe + k] += row[k];
        }
    }
    grad
}

#[allow(clippy::too_many_arguments)]
fn layer_backward<T: Scalar>(
    vals: &[T],
    l: &LayerOffsets,
    lc: &LayerCache<T>,
    dh: &mut [T],
    grad: &mut [T],
    n: usize,
    d: usize,
    f: usize,
    heads: usize,
) {
    // MLP sublayer: h_out = h_mid + GELU(b W_up) W_down.
    acc_at_b(&lc.z, dh, &mut grad[l.down..l.down + f * d], n, f, d);
    let mut du = matmul_bt(dh, &vals[l.down..l.down + f * d], n, f, d);
    for (g, &u) in du.iter_mut().zip(&lc.u) {
        *g *= gelu_grad(u);
    }
    acc_at_b(&lc.b, &du, &mut grad[l.up..l.up + d * f], n, d, f);
    let db = matmul_bt(&du, &vals[l.up..l.up + d * f], n, d, f);
    let mut dmid = dh.to_vec();
    rmsnorm_backward(
        &lc.h_mid,
        &lc.inv2,
        &vals[l.ln2..l.ln2 + d],
        &db,
        &mut dmid,
        &mut grad[l.ln2..l.ln2 + d],
        n,
        d,
    );

    // Attention sublayer: h_mid = h_in + Attn(a) W_proj.
    acc_at_b(&lc.cat, &dmid, &mut grad[l.proj..l.proj + d * d], n, d, d);
    let dcat = matmul_bt(&dmid, &vals[l.proj..l.proj + d * d], n, d, d);
    let dqkv = attention_backward(&lc.qkv, &lc.att, &dcat, n, d, heads);
    acc_at_b(
        &lc.a,
        &dqkv,
        &mut grad[l.qkv..l.qkv + d * 3 * d],
        n,
        d,
        3 * d,
    );
    let da = matmul_bt(&dqkv, &vals[l.qkv..l.qkv + d * 3 * d], n, d, 3 * d);
    dh.copy_from_slice(&dmid);
    rmsnorm_backward(
        &lc.h_in,
        &lc.inv1,
        &vals[l.ln1..l.ln1 + d],
        &da,
        dh,
        &mut grad[l.ln1..l.ln1 + d],
        n,
        d,
    );
}

/// Next-token logits, one row per input position.
pub fn forward_logits<T: Scalar>(params: &ParamVector<T>, tokens: &[Token]) -> Result<Vec<Vec<T>>> {
    let v = params.config.vocab_size;
    let cache = forward(params, tokens)?;
    Ok(cache.logits.chunks(v).map(<[T]>::to_vec).collect())
}

/// Teacher-forced input: the prompt followed by all but the last completion token.
fn scoring_input(prompt: &[Token], completion: &[Token]) -> Result<Vec<Token>> {
    if prompt.is_empty() {
        return Err(VigorError::Domain(
            "prompt must contain at least BOS".into(),
        ));
    }
    if completion.is_empty() {
        return Err(VigorError::Domain("completion is empty".into()));
    }
    let mut seq = Vec::with_capacity(prompt.len() + completion.len() - 1);
    seq.extend_from_slice(prompt);
    seq.extend_from_slice(&completion[..completion.len() - 1]);
    Ok(seq)
}

/// Per-token log-probabilities of `completion` given `prompt` at temperature 1.
pub fn token_logprobs<T: Scalar>(
    params: &ParamVector<T>,
    prompt: &[Token],
    completion: &[Token],
) -> Result<Vec<T>> {
    let seq = scoring_input(prompt, completion)?;
    let cache = forward(params, &seq)?;
    let v = params.config.vocab_size;
    let p = prompt.len();
    Ok(completion
        .iter()
        .enumerate()
        .map(|(t, &y)| {
            let row = &cache.logits[(p - 1 + t) * v..(p + t) * v];
            log_softmax(row)[y as usize]
        })
        .collect())
}

/// Teacher-forced log-probabilities together with the gradient of
/// `sum_t coeffs[t] * log p(y_t | x, y_<t)` with respect to the parameters.
pub fn logprob_vjp<T: Scalar>(
    params: &ParamVector<T>,
    prompt: &[Token],
    completion: &[Token],
    coeffs: &[T],
    scope: GradScope,
) -> Result<(Vec<T>, Vec<T>)> {
    if coeffs.len() != completion.len() {
        return Err(VigorError::Domain(format!(
            "{} coefficients for {} completion tokens",
            coeffs.len(),
            completion.len()
        )));
    }
    logprob_vjp_with(params, prompt, completion, scope, |_| coeffs.to_vec())
}

/// Like [`logprob_vjp`], but the coefficients are computed from the
/// log-probabilities of the same forward pass.
pub fn logprob_vjp_with<T: Scalar, F>(
    params: &ParamVector<T>,
    prompt: &[Token],
    completion: &[Token],
    scope: GradScope,
    coeffs_for: F,
) -> Result<(Vec<T>, Vec<T>)>
where
    F: FnOnce(&[T]) -> Vec<T>,
{
    let seq = scoring_input(prompt, completion)?;
    let cache = forward(params, &seq)?;
    let v = params.config.vocab_size;
    let p = prompt.len();
    let mut probs = Vec::with_capacity(completion.len());
    let mut logps = Vec::with_capacity(completion.len());
    for (t, &y) in completion.iter().enumerate() {
        let r = p - 1 + t;
        let ls = log_softmax(&cache.logits[r * v..(r + 1) * v]);
        logps.push(ls[y as usize]);
        probs.push(ls);
    }
    let coeffs = coeffs_for(&logps);
    if coeffs.len() != completion.len() {
        return Err(VigorError::Domain("coefficient count mismatch".into()));
    }
    let mut dlogits = vec![T::zero(); seq.len() * v];
    for (t, ((&y, &c), ls)) in completion.iter().zip(&coeffs).zip(&probs).enumerate() {
        let r = p - 1 + t;
        // d log p_y / d logits = onehot(y) - softmax
        let drow = &mut dlogits[r * v..(r + 1) * v];
        for (k, (dx, &l)) in drow.iter_mut().zip(ls).enumerate() {
            let ind = if k == y as usize { T::one() } else { T::zero() };
            *dx = c * (ind - l.exp());
        }
    }
    let grad = backward(params, &cache, &dlogits, scope);
    Ok((logps, grad))
}

/// Mean token negative log-likelihood of the completion.
pub fn mean_nll<T: Scalar>(
    params: &ParamVector<T>,
    prompt: &[Token],
    completion: &Completion<T>,
) -> Result<T> {
    let lp = token_logprobs(params, prompt, &completion.tokens)?;
    let n = T::of_usize(lp.len());
    Ok(-lp.into_iter().sum::<T>() / n)
}

/// Exact gradient of [`mean_nll`]; entries outside `scope` are exactly zero.
pub fn grad_mean_nll<T: Scalar>(
    params: &ParamVector<T>,
    prompt: &[Token],
    completion: &Completion<T>,
    scope: GradScope,
) -> Result<Vec<T>> {
    let n = completion.tokens.len();
    if n == 0 {
        return Err(VigorError::Domain("completion is empty".into()));
    }
    let coeffs = vec![-T::one() / T::of_usize(n); n];
    let (_, grad) = logprob_vjp(params, prompt, &completion.tokens, &coeffs, scope)?;
    Ok(grad)
}

/// Incremental decoder with a key/value cache, used for sampling.
pub struct DecoderState<'a, T> {
    params: &'a ParamVector<T>,
    offsets: Offsets,
    keys: Vec<Vec<T>>,
    values: Vec<Vec<T>>,
    pos: usize,
}

impl<'a, T: Scalar> DecoderState<'a, T> {
    pub fn new(params: &'a ParamVector<T>) -> Self {
        let layers = params.config.num_layers;
        Self {
            params,
            offsets: params.offsets(),
            keys: vec![Vec::new(); layers],
            values: vec![Vec::new(); layers],
            pos: 0,
        }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    /// Feeds one token and returns the next-token logits.
    pub fn step(&mut self, token: Token) -> Result<Vec<T>> {
        let cfg = &self.params.config;
        if self.pos >= cfg.context_length {
            return Err(VigorError::Length {
                len: self.pos + 1,
                max: cfg.context_length,
            });
        }
        check_tokens(self.params, &[token])?;
        let (d, f, v, heads) = (cfg.hidden_dim, cfg.mlp_dim, cfg.vocab_size, cfg.num_heads);
        let hd = d / heads;
        let scale = T::one() / T::of_usize(hd).sqrt();
        let o = &self.offsets;
        let vals = &self.params.values;
        let pos = self.pos;
        let mut h: Vec<T> = (0..d)
            .map(|k| vals[o.tok_emb + token as usize * d + k] + vals[o.pos_emb + pos * d + k])
            .collect();
        for (li, l) in o.layers.iter().enumerate() {
            let (a, _) = rmsnorm(&h, &vals[l.ln1..l.ln1 + d], 1, d);
            let qkv = matmul(&a, &vals[l.qkv..l.qkv + d * 3 * d], 1, d, 3 * d);
            self.keys[li].extend_from_slice(&qkv[d..2 * d]);
            self.values[li].extend_from_slice(&qkv[2 * d..3 * d]);
            let (keys, values) = (&self.keys[li], &self.values[li]);
            let mut cat = vec![T::zero(); d];
            for hh in 0..heads {
                let q = &qkv[hh * hd..(hh + 1) * hd];
                let mut scores: Vec<T> = (0..=pos)
                    .map(|j| {
                        let k = &keys[j * d + hh * hd..j * d + (hh + 1) * hd];
                        q.iter().zip(k).map(|(&a, &b)| a * b).sum::<T>() * scale
                    })
                    .collect();
                let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for s in scores.iter_mut() {
                    *s = (*s - max).exp();
                    total += *s;
                }
                for (j, s) in scores.iter().enumerate() {
                    let w = *s / total;
                    let vv = &values[j * d + hh * hd..j * d + (hh + 1) * hd];
                    for (c, &x) in cat[hh * hd..(hh + 1) * hd].iter_mut().zip(vv) {
                        *c += w * x;
                    }
                }
            }
            let proj = matmul(&cat, &vals[l.proj..l.proj + d * d], 1, d, d);
            for (x, y) in h.iter_mut().zip(&proj) {
                *x += *y;
            }
            let (b, _) = rmsnorm(&h, &vals[l.ln2..l.ln2 + d], 1, d);
            let z: Vec<T> = matmul(&b, &vals[l.up..l.up + d * f], 1, d, f)
                .into_iter()
                .map(gelu)
                .collect();
            let down = matmul(&z, &vals[l.down..l.down + f * d], 1, f, d);
            for (x, y) in h.iter_mut().zip(&down) {
                *x += *y;
            }
        }
        let (fnorm, _) = rmsnorm(&h, &vals[o.ln_f..o.ln_f + d], 1, d);
        let mut logits = matmul(&fnorm, &vals[o.head_w..o.head_w + d * v], 1, d, v);
        for (x, &b) in logits.iter_mut().zip(&vals[o.head_b..o.head_b + v]) {
            *x += b;
        }
        self.pos += 1;
        Ok(logits)
    }
}
