//! Run configuration: a JSON file merged with command-line overrides.

use std::fs;
use std::path::Path;

use clap::Args;
use fragroup_core::embedding::Modalities;
use fragroup_core::synth::GenConfig;
use fragroup_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synth: GenConfig,
    /// Train/val/test proportions for the file-wise split.
    pub split: [usize; 3],
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { synth: GenConfig::default(), split: [8, 1, 1], train: TrainConfig::default() }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let bytes = fs::read(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        let mut de = serde_json::Deserializer::from_slice(&bytes);
        let cfg: Self = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let at = e.path().to_string();
            CliError::config(format!("{} at `{at}`: {}", path.display(), e.into_inner()))
        })?;
        de.end().map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }
}

#[derive(Args, Clone, Debug, Default)]
pub struct TrainFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Prototypes per optimizer step.
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub lr_drop_epoch: Option<usize>,
    /// Model dimension for both the embeddings and the encoder.
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub ffn_dim: Option<usize>,
    #[arg(long)]
    pub no_image: bool,
    #[arg(long)]
    pub no_text: bool,
    #[arg(long)]
    pub no_color: bool,
    #[arg(long)]
    pub no_frame: bool,
    #[arg(long)]
    pub no_class: bool,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl TrainFlags {
    pub fn apply(&self, cfg: &mut TrainConfig) {
        macro_rules! set {
            ($flag:ident => $($field:tt)+) => {
                if let Some(v) = self.$flag {
                    cfg.$($field)+ = v;
                }
            };
        }
        set!(epochs => epochs);
        set!(lr => lr);
        set!(batch => batch_size);
        set!(dropout => model.encoder.dropout);
        set!(l2 => l2_lambda);
        set!(lr_drop_epoch => lr_drop_epoch);
        set!(layers => model.encoder.layers);
        set!(heads => model.encoder.heads);
        set!(ffn_dim => model.encoder.ffn_dim);
        set!(seed => seed);
        if let Some(d) = self.d {
            cfg.model.set_d(d);
        }
        let m: &mut Modalities = &mut cfg.model.embed.modalities;
        for (off, name) in [
            (self.no_image, "image"),
            (self.no_text, "text"),
            (self.no_color, "color"),
            (self.no_frame, "frame"),
            (self.no_class, "class"),
        ] {
            if off {
                m.set(name, false);
            }
        }
    }
}
