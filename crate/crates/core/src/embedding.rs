//! Per-element modality embeddings, their fusion and positional encoding.

use fragroup_tensor::{Graph, Real, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::Mode;
use crate::params::{xavier, Bound, ParamStore};
use crate::proto::{ElementSequence, Frame, NodeClass, Rgba};
use crate::synth::{IMAGE_CHANNELS, IMAGE_LEN, IMAGE_SIDE};
use crate::{Error, Result};

/// Which modalities enter the fused embedding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Modalities {
    pub image: bool,
    pub text: bool,
    pub color: bool,
    pub frame: bool,
    pub class: bool,
}

impl Default for Modalities {
    fn default() -> Self {
        Self { image: true, text: true, color: true, frame: true, class: true }
    }
}

impl Modalities {
    pub const NAMES: [&'static str; 5] = ["image", "text", "color", "frame", "class"];

    pub fn none() -> Self {
        Self { image: false, text: false, color: false, frame: false, class: false }
    }

    pub fn get(&self, name: &str) -> Option<bool> {
        Some(match name {
            "image" => self.image,
            "text" => self.text,
            "color" => self.color,
            "frame" => self.frame,
            "class" => self.class,
            _ => return None,
        })
    }

    pub fn set(&mut self, name: &str, on: bool) -> bool {
        let slot = match name {
            "image" => &mut self.image,
            "text" => &mut self.text,
            "color" => &mut self.color,
            "frame" => &mut self.frame,
            "class" => &mut self.class,
            _ => return false,
        };
        *slot = on;
        true
    }

    pub fn without(mut self, name: &str) -> Self {
        self.set(name, false);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedConfig {
    pub d: usize,
    pub text_len: usize,
    pub text_vocab: usize,
    pub modalities: Modalities,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self { d: 32, text_len: 32, text_vocab: 1024, modalities: Modalities::default() }
    }
}

impl EmbedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.d % 2 != 0 {
            return Err(Error::Config(format!("embedding dimension must be even and positive, got {}", self.d)));
        }
        if self.text_len == 0 {
            return Err(Error::Config("text_len must be at least 1".into()));
        }
        if self.text_vocab < 2 {
            return Err(Error::Config(format!("text_vocab must be at least 2, got {}", self.text_vocab)));
        }
        Ok(())
    }
}

/// Image encoder channel widths; each stage is a 3×3 stride-2 convolution.
pub const IMAGE_WIDTHS: [usize; 3] = [8, 16, 32];
pub const IMAGE_KERNEL: usize = 3;

pub(crate) fn init_params<T: Real, R: Rng + ?Sized>(cfg: &EmbedConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<()> {
    let d = cfg.d;
    let k = IMAGE_KERNEL;
    let mut in_ch = IMAGE_CHANNELS;
    for (i, &out_ch) in IMAGE_WIDTHS.iter().enumerate() {
        let w = xavier(&[out_ch, in_ch, k, k], in_ch * k * k, out_ch * k * k, rng);
        store.insert(format!("image.conv{}.weight", i + 1), w)?;
        store.insert(format!("image.conv{}.bias", i + 1), Tensor::zeros(&[out_ch]))?;
        in_ch = out_ch;
    }
    store.insert("image.proj.weight", xavier(&[in_ch, d], in_ch, d, rng))?;
    store.insert("image.proj.bias", Tensor::zeros(&[d]))?;

    let mut table: Tensor<T> = xavier(&[cfg.text_vocab, d], cfg.text_vocab, d, rng);
    table.data_mut()[..d].fill(T::zero());
    store.insert("text.table", table)?;
    store.insert("color.weight", xavier(&[4, d], 4, d, rng))?;
    store.insert("color.bias", Tensor::zeros(&[d]))?;
    store.insert("frame.weight", xavier(&[4, d], 4, d, rng))?;
    store.insert("frame.bias", Tensor::zeros(&[d]))?;
    store.insert("class.table", xavier(&[NodeClass::VOCAB, d], NodeClass::VOCAB, d, rng))?;
    Ok(())
}

/// Lowercases, splits on non-alphanumeric runs, hashes each token into
/// `[1, vocab)` and centers the tokens in `len` slots padded with 0. The extra
/// pad of an odd split goes on the right; only the first `len` tokens are kept.
pub fn tokenize_text(name: &str, vocab: usize, len: usize) -> Vec<usize> {
    let lower = name.to_lowercase();
    let ids: Vec<usize> = lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .take(len)
        .map(|t| 1 + (crate::synth::fnv1a(t.as_bytes()) % (vocab as u64 - 1)) as usize)
        .collect();
    let pad = len - ids.len();
    let left = pad / 2;
    let mut out = vec![0; len];
    out[left..left + ids.len()].copy_from_slice(&ids);
    out
}

/// Sinusoidal encoding of position `i`:
/// `PE[2j] = sin(i / 10000^(2j/d))`, `PE[2j+1] = cos(i / 10000^(2j/d))`.
pub fn positional_encoding(i: usize, d: usize) -> Result<Vec<f64>> {
    if d % 2 != 0 {
        return Err(Error::Config(format!("positional encoding needs an even dimension, got {d}")));
    }
    let mut pe = Vec::with_capacity(d);
    for j in 0..d / 2 {
        let angle = i as f64 / 10000f64.powf(2.0 * j as f64 / d as f64);
        pe.push(angle.sin());
        pe.push(angle.cos());
    }
    Ok(pe)
}

/// `n×d` matrix of positional encodings for positions `0..n`.
pub fn positional_table<T: Real>(n: usize, d: usize) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(n * d);
    for i in 0..n {
        data.extend(positional_encoding(i, d)?.into_iter().map(T::of));
    }
    Ok(Tensor::new(&[n, d], data)?)
}

/// `[r, g, b, a] / 255`, or zeros when the color is absent.
pub fn color_features(color: Option<Rgba>) -> Result<[f64; 4]> {
    let Some(c) = color else { return Ok([0.0; 4]) };
    let ch = c.channels();
    if ch.iter().any(|v| !(0.0..=255.0).contains(v)) {
        return Err(Error::Validation(format!("color channel outside [0, 255]: {ch:?}")));
    }
    Ok(ch.map(|v| v / 255.0))
}

/// Corners `(x, y, x+w, y+h)` divided by the canvas size and clamped to `[0, 1]`.
pub fn frame_features(frame: &Frame, canvas_width: f64, canvas_height: f64) -> Result<[f64; 4]> {
    if !(canvas_width > 0.0 && canvas_height > 0.0) {
        return Err(Error::Validation(format!("canvas must be positive, got {canvas_width}×{canvas_height}")));
    }
    Ok([
        frame.x / canvas_width,
        frame.y / canvas_height,
        frame.right() / canvas_width,
        frame.bottom() / canvas_height,
    ]
    .map(|v| v.clamp(0.0, 1.0)))
}

/// Model inputs for one element sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Features {
    pub n: usize,
    /// `n × 3·64·64` images, channel-major per element.
    pub images: Vec<f32>,
    /// `n × text_len` token ids.
    pub tokens: Vec<usize>,
    pub colors: Vec<[f64; 4]>,
    pub frames: Vec<[f64; 4]>,
    pub classes: Vec<usize>,
}

impl Features {
    pub fn new(seq: &ElementSequence, canvas: (f64, f64), images: Vec<f32>, cfg: &EmbedConfig) -> Result<Self> {
        let n = seq.len();
        if images.len() != n * IMAGE_LEN {
            return Err(Error::Alignment(format!("{} image values for {n} elements", images.len())));
        }
        let mut f = Features {
            n,
            images,
            tokens: Vec::with_capacity(n * cfg.text_len),
            colors: Vec::with_capacity(n),
            frames: Vec::with_capacity(n),
            classes: Vec::with_capacity(n),
        };
        for e in &seq.records {
            f.tokens.extend(tokenize_text(&e.name, cfg.text_vocab, cfg.text_len));
            f.colors.push(color_features(e.color)?);
            f.frames.push(frame_features(&e.frame, canvas.0, canvas.1)?);
            f.classes.push(e.class.index());
        }
        Ok(f)
    }
}

fn rows_constant<T: Real>(g: &Graph<T>, rows: &[[f64; 4]]) -> Result<Var> {
    let data = rows.iter().flatten().map(|&v| T::of(v)).collect();
    Ok(g.constant(Tensor::new(&[rows.len(), 4], data)?))
}

fn linear<T: Real>(g: &Graph<T>, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let y = g.matmul(x, p.var(&format!("{prefix}.weight"))?)?;
    Ok(g.add_row(y, p.var(&format!("{prefix}.bias"))?)?)
}

/// CNN image embedding of `n` stacked images: `n×d`.
pub fn image_embedding<T: Real>(g: &Graph<T>, p: &Bound, images: &[f32], n: usize) -> Result<Var> {
    if images.len() != n * IMAGE_LEN {
        return Err(Error::Shape(format!("expected {n}×{IMAGE_CHANNELS}×{IMAGE_SIDE}×{IMAGE_SIDE} image values, got {}", images.len())));
    }
    let data = images.iter().map(|&v| T::of(f64::from(v))).collect();
    let mut x = g.constant(Tensor::new(&[n, IMAGE_CHANNELS, IMAGE_SIDE, IMAGE_SIDE], data)?);
    for i in 1..=IMAGE_WIDTHS.len() {
        let w = p.var(&format!("image.conv{i}.weight"))?;
        let b = p.var(&format!("image.conv{i}.bias"))?;
        x = g.relu(g.conv2d(x, w, b, 2)?)?;
    }
    let pooled = g.global_avg_pool(x)?;
    linear(g, p, "image.proj", pooled)
}

/// Column sum of the token rows: `n×d`. Padding tokens contribute zero.
pub fn text_embedding<T: Real>(g: &Graph<T>, p: &Bound, tokens: &[usize], text_len: usize) -> Result<Var> {
    let rows = g.embedding(p.var("text.table")?, tokens, Some(0))?;
    Ok(g.segment_sum(rows, text_len)?)
}

pub fn color_embedding<T: Real>(g: &Graph<T>, p: &Bound, colors: &[[f64; 4]]) -> Result<Var> {
    let x = rows_constant(g, colors)?;
    linear(g, p, "color", x)
}

pub fn frame_embedding<T: Real>(g: &Graph<T>, p: &Bound, frames: &[[f64; 4]]) -> Result<Var> {
    let x = rows_constant(g, frames)?;
    linear(g, p, "frame", x)
}

pub fn class_embedding<T: Real>(g: &Graph<T>, p: &Bound, classes: &[usize]) -> Result<Var> {
    Ok(g.embedding(p.var("class.table")?, classes, None)?)
}

/// Sum of the enabled modality embeddings for every element: `n×d`, or
/// `None` when every modality is disabled.
pub fn fused_embedding<T: Real>(g: &Graph<T>, p: &Bound, x: &Features, cfg: &EmbedConfig) -> Result<Option<Var>> {
    let m = &cfg.modalities;
    let mut parts = Vec::new();
    if m.image {
        parts.push(image_embedding(g, p, &x.images, x.n)?);
    }
    if m.text {
        parts.push(text_embedding(g, p, &x.tokens, cfg.text_len)?);
    }
    if m.color {
        parts.push(color_embedding(g, p, &x.colors)?);
    }
    if m.frame {
        parts.push(frame_embedding(g, p, &x.frames)?);
    }
    if m.class {
        parts.push(class_embedding(g, p, &x.classes)?);
    }
    let mut acc: Option<Var> = None;
    for v in parts {
        acc = Some(match acc {
            Some(a) => g.add(a, v)?,
            None => v,
        });
    }
    Ok(acc)
}

/// Encoder input `F = e + PE`, with dropout applied in training mode.
pub fn embed_sequence<T: Real>(g: &Graph<T>, p: &Bound, x: &Features, cfg: &EmbedConfig, mode: &mut Mode) -> Result<Var> {
    let pe = g.constant(positional_table(x.n, cfg.d)?);
    let f = match fused_embedding(g, p, x, cfg)? {
        Some(e) => g.add(e, pe)?,
        None => pe,
    };
    mode.drop(g, f)
}
