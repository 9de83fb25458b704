//! Model-ready examples built from prototypes on disk or in memory.

use std::fs;
use std::path::{Path, PathBuf};

use crate::embedding::{EmbedConfig, Features};
use crate::grouping::{decode_groups, GroupSource, MergedGroup, StrataFlags};
use crate::proto::{extract_sequence, parse_prototype, validate, DesignPrototype, Label};
use crate::synth::{load_manifest, rasterize_record, read_images, tag_strata, IMAGE_LEN};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct Example {
    pub id: String,
    pub uuids: Vec<String>,
    /// Present when every element carries a label.
    pub labels: Option<Vec<Label>>,
    pub features: Features,
    pub strata: StrataFlags,
}

impl Example {
    /// Builds an example, rendering element images from the hierarchy.
    pub fn from_prototype(proto: &DesignPrototype, cfg: &EmbedConfig) -> Result<Self> {
        let seq = extract_sequence(proto);
        let mut images = Vec::with_capacity(seq.len() * IMAGE_LEN);
        for e in &seq.records {
            images.extend_from_slice(rasterize_record(e).data());
        }
        Self::with_images(proto, images, cfg)
    }

    pub fn with_images(proto: &DesignPrototype, images: Vec<f32>, cfg: &EmbedConfig) -> Result<Self> {
        let seq = extract_sequence(proto);
        let features = Features::new(&seq, (proto.canvas_width, proto.canvas_height), images, cfg)?;
        Ok(Self {
            id: proto.id.clone(),
            uuids: seq.uuids(),
            labels: seq.labels(),
            features,
            strata: tag_strata(proto),
        })
    }

    pub fn len(&self) -> usize {
        self.uuids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.uuids.is_empty()
    }

    pub fn labels(&self) -> Result<&[Label]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::Data(format!("prototype `{}` has unlabeled elements", self.id)))
    }

    pub fn ground_truth_groups(&self) -> Result<Vec<MergedGroup>> {
        decode_groups(self.labels()?, &self.uuids, GroupSource::GroundTruth)
    }
}

pub fn read_prototype(path: &Path) -> Result<DesignPrototype> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let proto = parse_prototype(&bytes)?;
    validate(&proto)?;
    Ok(proto)
}

/// Loads one prototype file, using its stored image blob when there is one
/// and rendering the images otherwise.
pub fn load_example(path: &Path, cfg: &EmbedConfig) -> Result<Example> {
    let proto = read_prototype(path)?;
    if path.with_extension("images.bin").exists() {
        let uuids = extract_sequence(&proto).uuids();
        let images = read_images(path, &uuids)?;
        Example::with_images(&proto, images, cfg)
    } else {
        Example::from_prototype(&proto, cfg)
    }
}

/// Resolves the files of `split` relative to the manifest's directory.
pub fn split_paths(manifest_path: &Path, split: &str) -> Result<Vec<PathBuf>> {
    let manifest = load_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    Ok(manifest.split(split)?.iter().map(|rel| base.join(rel)).collect())
}

pub fn load_split(manifest_path: &Path, split: &str, cfg: &EmbedConfig) -> Result<Vec<Example>> {
    split_paths(manifest_path, split)?.iter().map(|p| load_example(p, cfg)).collect()
}
