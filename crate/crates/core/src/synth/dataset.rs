//! On-disk corpus layout, manifests and file-wise splits.
//!
//! ```text
//! <root>/manifest.json
//! <root>/prototypes/<id>.json          canonical prototype document
//! <root>/prototypes/<id>.images.bin    n × 3·64·64 little-endian f32
//! <root>/prototypes/<id>.images.json   {uuid: row in the blob}
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::raster::{rasterize_record, IMAGE_LEN};
use super::{generate, GenConfig};
use crate::proto::{extract_sequence, serialize_prototype, DesignPrototype, Label};
use crate::{Error, Result};

pub const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];
/// Split holding every file before partitioning.
pub const ALL_SPLIT: &str = "all";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct LabelCounts {
    pub start_merge: u64,
    pub merge: u64,
    pub non_merge: u64,
}

impl LabelCounts {
    pub fn add_label(&mut self, label: Label) {
        match label {
            Label::StartMerge => self.start_merge += 1,
            Label::Merge => self.merge += 1,
            Label::NonMerge => self.non_merge += 1,
        }
    }

    pub fn add(&mut self, other: &LabelCounts) {
        self.start_merge += other.start_merge;
        self.merge += other.merge;
        self.non_merge += other.non_merge;
    }

    /// Counts indexed by [`Label::index`].
    pub fn as_array(&self) -> [u64; 3] {
        [self.start_merge, self.merge, self.non_merge]
    }

    pub fn total(&self) -> u64 {
        self.start_merge + self.merge + self.non_merge
    }

    /// Merged (start-merge plus merge) elements per non-merge element.
    pub fn merge_ratio(&self) -> f64 {
        (self.start_merge + self.merge) as f64 / self.non_merge as f64
    }
}

/// Label counts of one prototype; unlabeled elements are ignored.
pub fn label_counts(proto: &DesignPrototype) -> LabelCounts {
    let mut c = LabelCounts::default();
    for e in extract_sequence(proto).records {
        if let Some(l) = e.label {
            c.add_label(l);
        }
    }
    c
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    /// Split name to prototype paths relative to the manifest directory.
    pub splits: BTreeMap<String, Vec<String>>,
    pub counts: BTreeMap<String, LabelCounts>,
    /// Per-file label counts, so splits can be recounted without reparsing.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub files: BTreeMap<String, LabelCounts>,
}

impl DatasetManifest {
    pub fn split(&self, name: &str) -> Result<&[String]> {
        self.splits
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Data(format!("manifest has no `{name}` split")))
    }

    fn recount(&mut self) {
        self.counts = self
            .splits
            .iter()
            .map(|(name, files)| {
                let mut c = LabelCounts::default();
                for f in files {
                    if let Some(fc) = self.files.get(f) {
                        c.add(fc);
                    }
                }
                (name.clone(), c)
            })
            .collect();
    }

    /// Fails if a file is listed in two splits.
    pub fn check_disjoint(&self) -> Result<()> {
        let mut owner: BTreeMap<&str, &str> = BTreeMap::new();
        for (split, files) in &self.splits {
            for f in files {
                if let Some(prev) = owner.insert(f, split) {
                    return Err(Error::Split(format!("`{f}` appears in both `{prev}` and `{split}`")));
                }
            }
        }
        Ok(())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes prototypes with their rendered element images and returns a
/// manifest with everything in the `all` split.
pub fn write_dataset(root: &Path, protos: &[DesignPrototype], seed: u64) -> Result<DatasetManifest> {
    let dir = root.join("prototypes");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut manifest = DatasetManifest { seed, ..Default::default() };
    let mut all = Vec::with_capacity(protos.len());
    for proto in protos {
        let rel = format!("prototypes/{}.json", proto.id);
        write_file(&root.join(&rel), &serialize_prototype(proto))?;

        let seq = extract_sequence(proto);
        let mut blob = Vec::with_capacity(seq.len() * IMAGE_LEN * 4);
        let mut index = BTreeMap::new();
        for (i, e) in seq.records.iter().enumerate() {
            for v in rasterize_record(e).data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
            index.insert(e.uuid.clone(), i);
        }
        write_file(&dir.join(format!("{}.images.bin", proto.id)), &blob)?;
        let index_json = serde_json::to_vec(&index).expect("string map serializes");
        write_file(&dir.join(format!("{}.images.json", proto.id)), &index_json)?;

        manifest.files.insert(rel.clone(), label_counts(proto));
        all.push(rel);
    }
    manifest.splits.insert(ALL_SPLIT.to_string(), all);
    manifest.recount();
    Ok(manifest)
}

pub fn generate_dataset(config: &GenConfig, root: &Path) -> Result<DatasetManifest> {
    let protos = generate(config)?;
    write_dataset(root, &protos, config.seed)
}

/// Reads the image blob stored next to a prototype file, returning one
/// `3·64·64` row per uuid in `uuids` order.
pub fn read_images(proto_path: &Path, uuids: &[String]) -> Result<Vec<f32>> {
    let stem = proto_path.with_extension("");
    let bin: PathBuf = stem.with_extension("images.bin");
    let idx: PathBuf = stem.with_extension("images.json");
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let index_bytes = fs::read(&idx).map_err(|e| Error::io(&idx, e))?;
    let index: BTreeMap<String, usize> =
        serde_json::from_slice(&index_bytes).map_err(|e| Error::Data(format!("{}: {e}", idx.display())))?;
    if bytes.len() % (IMAGE_LEN * 4) != 0 {
        return Err(Error::Data(format!("{}: blob length {} is not a whole number of images", bin.display(), bytes.len())));
    }
    let rows = bytes.len() / (IMAGE_LEN * 4);
    let mut out = Vec::with_capacity(uuids.len() * IMAGE_LEN);
    for u in uuids {
        let &row = index.get(u).ok_or_else(|| Error::Alignment(format!("no image for element `{u}`")))?;
        if row >= rows {
            return Err(Error::Alignment(format!("image row {row} for `{u}` is past the end of the blob")));
        }
        let chunk = &bytes[row * IMAGE_LEN * 4..(row + 1) * IMAGE_LEN * 4];
        out.extend(chunk.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])));
    }
    Ok(out)
}

pub fn save_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(manifest).expect("manifest serializes");
    bytes.push(b'\n');
    write_file(path, &bytes)
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let manifest: DatasetManifest =
        serde_json::from_slice(&bytes).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    manifest.check_disjoint()?;
    Ok(manifest)
}

/// Shuffles every file of `manifest` with `seed` and partitions the files
/// into train/val/test in proportion to `ratios`, largest remainder first.
/// Every split receives at least one file.
pub fn split_dataset(manifest: &DatasetManifest, ratios: [usize; 3], seed: u64) -> Result<DatasetManifest> {
    let mut files: Vec<String> = manifest.splits.values().flatten().cloned().collect();
    files.sort();
    files.dedup();
    let n = files.len();
    if n < ratios.len() {
        return Err(Error::Split(format!("{n} files cannot fill {} splits", ratios.len())));
    }
    let weight: usize = ratios.iter().sum();
    if weight == 0 || ratios.contains(&0) {
        return Err(Error::Split(format!("split ratios must be positive, got {ratios:?}")));
    }

    let mut sizes: Vec<usize> = ratios.iter().map(|r| n * r / weight).collect();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(n * ratios[i] % weight), i));
    let left = n - sizes.iter().sum::<usize>();
    for &i in order.iter().cycle().take(left) {
        sizes[i] += 1;
    }
    // Borrow from the largest split for any that rounded down to nothing.
    while let Some(empty) = sizes.iter().position(|&s| s == 0) {
        let largest = (0..sizes.len()).max_by_key(|&i| sizes[i]).unwrap();
        sizes[largest] -= 1;
        sizes[empty] += 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    files.shuffle(&mut rng);
    let mut out = DatasetManifest { seed: manifest.seed, files: manifest.files.clone(), ..Default::default() };
    let mut start = 0;
    for (name, size) in SPLIT_NAMES.iter().zip(&sizes) {
        let mut part = files[start..start + size].to_vec();
        part.sort();
        out.splits.insert(name.to_string(), part);
        start += size;
    }
    out.recount();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn manifest_of(n: usize) -> DatasetManifest {
        let files = (0..n).map(|i| format!("prototypes/p{i:03}.json")).collect();
        DatasetManifest { splits: [(ALL_SPLIT.to_string(), files)].into(), ..Default::default() }
    }

    #[test]
    fn ten_files_split_eight_one_one() {
        let s = split_dataset(&manifest_of(10), [8, 1, 1], 1).unwrap();
        let sizes: Vec<usize> = SPLIT_NAMES.iter().map(|n| s.splits[*n].len()).collect();
        assert_eq!(sizes, [8, 1, 1]);
        assert_eq!(s, split_dataset(&manifest_of(10), [8, 1, 1], 1).unwrap());
    }

    #[test]
    fn splits_partition_the_files() {
        for n in [3usize, 4, 7, 11, 500] {
            let m = manifest_of(n);
            let s = split_dataset(&m, [8, 1, 1], 42).unwrap();
            s.check_disjoint().unwrap();
            let union: BTreeSet<&String> = s.splits.values().flatten().collect();
            assert_eq!(union.len(), n);
            assert!(s.splits.values().all(|v| !v.is_empty()));
        }
        let s = split_dataset(&manifest_of(500), [8, 1, 1], 42).unwrap();
        assert_eq!([s.splits["train"].len(), s.splits["val"].len(), s.splits["test"].len()], [400, 50, 50]);
    }

    #[test]
    fn too_few_files() {
        assert!(matches!(split_dataset(&manifest_of(2), [8, 1, 1], 0), Err(Error::Split(_))));
    }
}
