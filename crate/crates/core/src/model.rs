//! The full element classifier: embeddings, encoder and head.

use fragroup_tensor::{Graph, Real, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{self, embed_sequence, EmbedConfig, Features};
use crate::encoder::{self, classify, encode, EncoderConfig, Mode, NUM_CLASSES};
use crate::params::{Bound, ParamStore};
use crate::proto::Label;
use crate::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embed: EmbedConfig,
    pub encoder: EncoderConfig,
}

impl ModelConfig {
    /// Sizes used for the gradient check.
    pub fn tiny() -> Self {
        Self {
            embed: EmbedConfig { d: 16, ..EmbedConfig::default() },
            encoder: EncoderConfig { layers: 2, heads: 2, d: 16, ffn_dim: 32, dropout: 0.2 },
        }
    }

    /// Full-size architecture: d=256, 6 layers, 8 heads, 2048-wide FFN.
    pub fn large() -> Self {
        Self {
            embed: EmbedConfig { d: 256, ..EmbedConfig::default() },
            encoder: EncoderConfig { layers: 6, heads: 8, d: 256, ffn_dim: 2048, dropout: 0.2 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.embed.validate()?;
        self.encoder.validate()?;
        if self.embed.d != self.encoder.d {
            return Err(Error::Config(format!(
                "embedding dimension {} differs from encoder dimension {}",
                self.embed.d, self.encoder.d
            )));
        }
        Ok(())
    }

    /// Sets the model dimension of both halves.
    pub fn set_d(&mut self, d: usize) {
        self.embed.d = d;
        self.encoder.d = d;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T = f32> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
}

impl<T: Real> Model<T> {
    /// Freshly initialized parameters drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        embedding::init_params(&config.embed, &mut params, &mut rng)?;
        encoder::init_params(&config.encoder, &mut params, &mut rng)?;
        Ok(Self { config, params })
    }

    /// Wraps loaded parameters after checking that every expected tensor is
    /// present with the expected shape and nothing else is.
    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        let reference = Model::<T>::new(config.clone(), 0)?;
        if reference.params.len() != params.len() {
            return Err(Error::CheckpointFormat(format!(
                "expected {} parameters, found {}",
                reference.params.len(),
                params.len()
            )));
        }
        for (name, t) in reference.params.iter() {
            let got = params.get(name).ok_or_else(|| Error::CheckpointFormat(format!("missing parameter `{name}`")))?;
            if got.shape() != t.shape() {
                return Err(Error::CheckpointFormat(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    got.shape(),
                    t.shape()
                )));
            }
        }
        Ok(Self { config, params })
    }

    /// Logits (`n×3`) for one sequence on `g`.
    pub fn logits(&self, g: &Graph<T>, p: &Bound, x: &Features, mode: &mut Mode) -> Result<Var> {
        let f = embed_sequence(g, p, x, &self.config.embed, mode)?;
        let h = encode(g, p, f, &self.config.encoder, mode)?;
        Ok(classify(g, p, h)?.0)
    }

    /// Eval-mode class probabilities, `n×3`.
    pub fn predict_proba(&self, x: &Features) -> Result<Tensor<T>> {
        if x.n == 0 {
            return Ok(Tensor::zeros(&[0, NUM_CLASSES]));
        }
        let g = Graph::new();
        let p = self.params.bind(&g, false);
        let f = embed_sequence(&g, &p, x, &self.config.embed, &mut Mode::eval())?;
        let h = encode(&g, &p, f, &self.config.encoder, &mut Mode::eval())?;
        let (_, probs) = classify(&g, &p, h)?;
        Ok(g.value(probs))
    }

    /// Arg-max labels; ties go to the lower class index.
    pub fn predict(&self, x: &Features) -> Result<Vec<Label>> {
        Ok(argmax_labels(&self.predict_proba(x)?))
    }
}

pub fn argmax_labels<T: Real>(probs: &Tensor<T>) -> Vec<Label> {
    let k = NUM_CLASSES;
    probs
        .data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            Label::from_index(best).expect("three classes")
        })
        .collect()
}
