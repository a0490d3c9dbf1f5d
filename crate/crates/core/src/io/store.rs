//! Dataset stores: a directory of GRD1 records plus a TOML manifest.
//!
//! Stores are assembled in a sibling staging directory and committed with a
//! single rename, so readers never observe a partially written dataset.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::ArrayD;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::grd1::{self, Dtype};
use crate::error::{Error, Result};
use crate::grid::Boundary;
use crate::train::norm::NormStats;

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceTag {
    NsSim,
    ExternalGrid,
}

/// Train/val/test fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.7, val: 0.2, test: 0.1 }
    }
}

impl FromStr for SplitRatios {
    type Err = Error;

    /// Parses `train/val/test`, e.g. `70/20/10` or `0.7/0.15/0.15`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(['/', ','])
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::invalid(format!("split ratios `{s}`: {e}")))?;
        if parts.len() != 3 || parts.iter().any(|&p| p.is_nan() || p < 0.0) {
            return Err(Error::invalid(format!("split ratios `{s}` must be three non-negative numbers")));
        }
        let total: f64 = parts.iter().sum();
        if total <= 0.0 {
            return Err(Error::invalid(format!("split ratios `{s}` sum to zero")));
        }
        Ok(Self { train: parts[0] / total, val: parts[1] / total, test: parts[2] / total })
    }
}

impl SplitRatios {
    /// Seeded assignment of `n` items; every split with a positive ratio gets
    /// at least one item when `n >= 3`.
    pub fn assign(&self, n: usize, seed: u64) -> Vec<Split> {
        let mut n_val = (self.val * n as f64).round() as usize;
        let mut n_test = (self.test * n as f64).round() as usize;
        if n >= 3 {
            if self.val > 0.0 {
                n_val = n_val.max(1);
            }
            if self.test > 0.0 {
                n_test = n_test.max(1);
            }
        }
        n_val = n_val.min(n);
        n_test = n_test.min(n - n_val);
        let n_train = n - n_val - n_test;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut out = vec![Split::Train; n];
        for (rank, &idx) in order.iter().enumerate() {
            out[idx] = if rank < n_train {
                Split::Train
            } else if rank < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub resolution: usize,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordEntry {
    pub id: String,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub files: Vec<FileEntry>,
}

impl RecordEntry {
    pub fn file(&self, resolution: usize) -> Option<&FileEntry> {
        self.files.iter().find(|f| f.resolution == resolution)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub id: String,
    pub source: SourceTag,
    pub format_version: u32,
    /// Base resolution first, then the pooled levels.
    pub ladder: Vec<usize>,
    pub boundary: Boundary,
    pub channels: Vec<String>,
    /// Frames per record for spatio-temporal data; absent for static fields.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
    pub split_ratios: SplitRatios,
    pub split_seed: u64,
    /// Computed from the training split at the base resolution.
    pub norm: NormStats,
    #[serde(default)]
    pub dropped_seeds: Vec<u64>,
    #[serde(default)]
    pub dropped_patches: usize,
    /// Generator settings, echoed as a TOML table.
    pub generator: toml::Table,
    pub records: Vec<RecordEntry>,
}

impl DatasetManifest {
    pub fn base_resolution(&self) -> usize {
        self.ladder[0]
    }

    pub fn validate(&self) -> Result<()> {
        let base = *self
            .ladder
            .first()
            .ok_or_else(|| Error::Data("manifest has an empty resolution ladder".into()))?;
        for &r in &self.ladder {
            if r == 0 || base % r != 0 {
                return Err(Error::Data(format!("ladder member {r} is not an exact pool factor of {base}")));
            }
        }
        let mut ids: Vec<&str> = self.records.iter().map(|r| r.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Data(format!("record `{}` appears more than once", w[0])));
        }
        if self.norm.channels() != self.channels.len() {
            return Err(Error::Data("normalization does not match the channel list".into()));
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &RecordEntry> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let m: Self = toml::from_str(s).map_err(|e| Error::Format(format!("manifest: {e}")))?;
        m.validate()?;
        Ok(m)
    }

    /// SHA-256 of the serialized manifest, a fingerprint of the whole dataset.
    pub fn checksum(&self) -> Result<String> {
        Ok(sha256_hex(self.to_toml()?.as_bytes()))
    }

    /// Checksum of just the record-to-split table.
    pub fn split_checksum(&self) -> String {
        let mut h = Sha256::new();
        for r in &self.records {
            h.update(r.id.as_bytes());
            h.update([0]);
            h.update(r.split.to_string().as_bytes());
            h.update([0]);
        }
        hex::encode(h.finalize())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Staging area for a dataset that is committed atomically.
pub struct StoreWriter {
    target: PathBuf,
    staging: PathBuf,
}

impl StoreWriter {
    pub fn create(target: &Path) -> Result<Self> {
        let name = target
            .file_name()
            .ok_or_else(|| Error::invalid(format!("bad dataset path {}", target.display())))?
            .to_string_lossy()
            .into_owned();
        let parent = target.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(parent)?;
        let staging = parent.join(format!(".{name}.staging-{}", std::process::id()));
        if staging.exists() {
            fs::remove_dir_all(&staging)?;
        }
        fs::create_dir_all(staging.join("records"))?;
        Ok(Self { target: target.to_path_buf(), staging })
    }

    /// Writes one array record and returns its manifest entry.
    pub fn write_array(&self, stem: &str, resolution: usize, array: &ArrayD<f64>, names: Vec<String>) -> Result<FileEntry> {
        let rel = format!("records/{stem}_r{resolution}.grd1");
        let rec = grd1::Record::from_array(array, names, Dtype::F64);
        let mut bytes = Vec::new();
        rec.write_to(&mut bytes)?;
        fs::write(self.staging.join(&rel), &bytes)?;
        Ok(FileEntry { resolution, path: rel, sha256: sha256_hex(&bytes) })
    }

    /// Writes the manifest and moves the staged directory into place,
    /// replacing any previous dataset at the target.
    pub fn commit(self, manifest: &DatasetManifest) -> Result<PathBuf> {
        manifest.validate()?;
        fs::write(self.staging.join(MANIFEST_FILE), manifest.to_toml()?)?;
        if self.target.exists() {
            fs::remove_dir_all(&self.target)?;
        }
        fs::rename(&self.staging, &self.target)?;
        Ok(self.target.clone())
    }
}

impl Drop for StoreWriter {
    fn drop(&mut self) {
        if self.staging.exists() {
            let _ = fs::remove_dir_all(&self.staging);
        }
    }
}

/// An opened dataset store.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
        Ok(Self { root: root.to_path_buf(), manifest: DatasetManifest::from_toml(&text)? })
    }

    /// Loads one record at `resolution`, verifying its checksum.
    pub fn load(&self, record: &RecordEntry, resolution: usize) -> Result<ArrayD<f64>> {
        let entry = record
            .file(resolution)
            .ok_or_else(|| Error::Data(format!("record `{}` has no {resolution} level", record.id)))?;
        let bytes = fs::read(self.root.join(&entry.path))?;
        if sha256_hex(&bytes) != entry.sha256 {
            return Err(Error::Data(format!("checksum mismatch for {}", entry.path)));
        }
        let rec = grd1::Record::read_from(&mut bytes.as_slice())?
            .ok_or_else(|| Error::Data(format!("{} is empty", entry.path)))?;
        rec.to_array()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ratio_parsing() {
        let r: SplitRatios = "70/15/15".parse().unwrap();
        assert!((r.val - 0.15).abs() < 1e-12);
        assert!("1/2".parse::<SplitRatios>().is_err());
        assert!("a/b/c".parse::<SplitRatios>().is_err());
    }

    #[test]
    fn default_counts() {
        let s = SplitRatios::default().assign(100, 1);
        let count = |k| s.iter().filter(|&&x| x == k).count();
        assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (70, 20, 10));
    }

    proptest! {
        #[test]
        fn assignment_is_a_partition(n in 0usize..300, seed in any::<u64>()) {
            let s = SplitRatios::default().assign(n, seed);
            prop_assert_eq!(s.len(), n);
            prop_assert_eq!(s, SplitRatios::default().assign(n, seed));
        }
    }

    #[test]
    fn staged_store_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let target = dir.path().join("ds");
        let w = StoreWriter::create(&target).unwrap();
        let arr = ndarray::Array::from_shape_fn((1, 4, 4), |(_, i, j)| (i * 4 + j) as f64).into_dyn();
        let f = w.write_array("rec0", 4, &arr, vec!["w".into()]).unwrap();
        let manifest = DatasetManifest {
            id: "t".into(),
            source: SourceTag::ExternalGrid,
            format_version: 1,
            ladder: vec![4, 2],
            boundary: Boundary::Replicate,
            channels: vec!["w".into()],
            frames: None,
            window: None,
            split_ratios: SplitRatios::default(),
            split_seed: 0,
            norm: NormStats::identity(1),
            dropped_seeds: vec![],
            dropped_patches: 0,
            generator: toml::Table::new(),
            records: vec![RecordEntry { id: "rec0".into(), split: Split::Train, seed: None, files: vec![f] }],
        };
        assert!(!target.exists());
        w.commit(&manifest).unwrap();
        let ds = Dataset::open(&target).unwrap();
        assert_eq!(ds.manifest, manifest);
        assert_eq!(ds.load(&ds.manifest.records[0], 4).unwrap(), arr);
        assert!(ds.load(&ds.manifest.records[0], 2).is_err());
        let leftovers: Vec<_> = fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
    }
}
