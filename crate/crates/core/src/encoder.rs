//! Post-norm Transformer encoder blocks and the classification head.

use fragroup_tensor::{Graph, Real, Tensor, Var};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::params::{xavier, Bound, ParamStore};
use crate::{Error, Result};

pub const NUM_CLASSES: usize = 3;
const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub d: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { layers: 2, heads: 4, d: 32, ffn_dim: 64, dropout: 0.2 }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Config("encoder needs at least one layer".into()));
        }
        if self.heads == 0 || self.d % self.heads != 0 {
            return Err(Error::Config(format!("d={} is not divisible by heads={}", self.d, self.heads)));
        }
        if self.ffn_dim == 0 {
            return Err(Error::Config("ffn_dim must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }
}

fn linear_params<T: Real, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    prefix: &str,
    (w, b): (&str, &str),
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Result<()> {
    store.insert(format!("{prefix}.{w}"), xavier(&[fan_in, fan_out], fan_in, fan_out, rng))?;
    store.insert(format!("{prefix}.{b}"), Tensor::zeros(&[fan_out]))?;
    Ok(())
}

pub(crate) fn init_params<T: Real, R: Rng + ?Sized>(cfg: &EncoderConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<()> {
    let d = cfg.d;
    for i in 0..cfg.layers {
        for proj in ["q", "k", "v", "o"] {
            linear_params(store, &format!("encoder.{i}.attn.{proj}"), ("weight", "bias"), d, d, rng)?;
        }
        store.insert(format!("encoder.{i}.norm1.gamma"), Tensor::full(&[d], T::one()))?;
        store.insert(format!("encoder.{i}.norm1.beta"), Tensor::zeros(&[d]))?;
        linear_params(store, &format!("encoder.{i}.ffn"), ("w1", "b1"), d, cfg.ffn_dim, rng)?;
        linear_params(store, &format!("encoder.{i}.ffn"), ("w2", "b2"), cfg.ffn_dim, d, rng)?;
        store.insert(format!("encoder.{i}.norm2.gamma"), Tensor::full(&[d], T::one()))?;
        store.insert(format!("encoder.{i}.norm2.beta"), Tensor::zeros(&[d]))?;
    }
    linear_params(store, "head", ("w1", "b1"), d, d, rng)?;
    linear_params(store, "head", ("w2", "b2"), d, NUM_CLASSES, rng)?;
    Ok(())
}

/// Dropout switch threaded through a forward pass.
pub struct Mode<'r> {
    pub dropout: f64,
    pub rng: Option<&'r mut dyn RngCore>,
}

impl Mode<'_> {
    pub fn eval() -> Self {
        Mode { dropout: 0.0, rng: None }
    }

    pub(crate) fn drop<T: Real>(&mut self, g: &Graph<T>, x: Var) -> Result<Var> {
        match self.rng.as_deref_mut() {
            Some(rng) => Ok(g.dropout(x, self.dropout, true, rng)?),
            None => Ok(x),
        }
    }
}

fn dense<T: Real>(g: &Graph<T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = g.matmul(x, w)?;
    Ok(g.add_row(y, b)?)
}

/// Scaled dot-product self-attention over all rows, per head, followed by
/// the output projection. Returns the output and the per-head attention
/// weights before dropout.
pub fn multi_head_attention<T: Real>(
    g: &Graph<T>,
    p: &Bound,
    block: usize,
    h: Var,
    cfg: &EncoderConfig,
    mode: &mut Mode,
) -> Result<(Var, Vec<Var>)> {
    cfg.validate()?;
    let proj = |name: &str| -> Result<Var> {
        let pre = format!("encoder.{block}.attn.{name}");
        dense(g, h, p.var(&format!("{pre}.weight"))?, p.var(&format!("{pre}.bias"))?)
    };
    let (q, k, v) = (proj("q")?, proj("k")?, proj("v")?);
    let dh = cfg.d / cfg.heads;
    let scale = T::of(1.0 / (dh as f64).sqrt());
    let mut outs = Vec::with_capacity(cfg.heads);
    let mut weights = Vec::with_capacity(cfg.heads);
    for head in 0..cfg.heads {
        let qh = g.slice_cols(q, head * dh, dh)?;
        let kh = g.slice_cols(k, head * dh, dh)?;
        let vh = g.slice_cols(v, head * dh, dh)?;
        let scores = g.scale(g.matmul(qh, g.transpose(kh)?)?, scale)?;
        let a = g.softmax(scores)?;
        weights.push(a);
        let a = mode.drop(g, a)?;
        outs.push(g.matmul(a, vh)?);
    }
    let cat = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs)? };
    let pre = format!("encoder.{block}.attn.o");
    let out = dense(g, cat, p.var(&format!("{pre}.weight"))?, p.var(&format!("{pre}.bias"))?)?;
    Ok((out, weights))
}

/// `H1 = LN(H + MHA(H))`, `H' = LN(H1 + FFN(H1))`.
pub fn encoder_block<T: Real>(g: &Graph<T>, p: &Bound, block: usize, h: Var, cfg: &EncoderConfig, mode: &mut Mode) -> Result<Var> {
    let eps = T::of(LN_EPS);
    let name = |s: &str| format!("encoder.{block}.{s}");
    let (attn, _) = multi_head_attention(g, p, block, h, cfg, mode)?;
    let h1 = g.layer_norm(g.add(h, attn)?, p.var(&name("norm1.gamma"))?, p.var(&name("norm1.beta"))?, eps)?;
    let hidden = g.relu(dense(g, h1, p.var(&name("ffn.w1"))?, p.var(&name("ffn.b1"))?)?)?;
    let hidden = mode.drop(g, hidden)?;
    let ffn = dense(g, hidden, p.var(&name("ffn.w2"))?, p.var(&name("ffn.b2"))?)?;
    Ok(g.layer_norm(g.add(h1, ffn)?, p.var(&name("norm2.gamma"))?, p.var(&name("norm2.beta"))?, eps)?)
}

pub fn encode<T: Real>(g: &Graph<T>, p: &Bound, f: Var, cfg: &EncoderConfig, mode: &mut Mode) -> Result<Var> {
    let mut h = f;
    for block in 0..cfg.layers {
        h = encoder_block(g, p, block, h, cfg, mode)?;
    }
    Ok(h)
}

/// `ReLU(H·W1 + b1)·W2 + b2` and its row softmax.
pub fn classify<T: Real>(g: &Graph<T>, p: &Bound, h: Var) -> Result<(Var, Var)> {
    let hidden = g.relu(dense(g, h, p.var("head.w1")?, p.var("head.b1")?)?)?;
    let logits = dense(g, hidden, p.var("head.w2")?, p.var("head.b2")?)?;
    let probs = g.softmax(logits)?;
    Ok((logits, probs))
}
