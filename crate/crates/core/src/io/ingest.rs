//! Static gridded data: synthetic source fields and patch ingestion.

use std::path::Path;

use ndarray::{s, Array3, Axis};
use serde::{Deserialize, Serialize};

use super::grd1::{read_array, write_array, Dtype};
use super::store::{sha256_hex, DatasetManifest, RecordEntry, SourceTag, Split, SplitRatios, StoreWriter};
use crate::error::{Error, Result};
use crate::grid::{average_pool, Boundary, Field};
use crate::ns::{sample_grf, vorticity_to_velocity, GrfConfig};
use crate::train::norm::{NormAccumulator, NormStats};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub size: usize,
    /// Defaults to `size` (non-overlapping tiles).
    pub stride: Option<usize>,
    /// `[row0, row1, col0, col1]` in source indices, end-exclusive.
    pub region: Option<[usize; 4]>,
}

impl Default for PatchSpec {
    fn default() -> Self {
        Self { size: 128, stride: None, region: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    pub patch: PatchSpec,
    /// Pooling factors applied to each patch.
    pub factors: Vec<usize>,
    pub splits: SplitRatios,
    pub seed: u64,
    pub boundary: Boundary,
    /// Expected channel names; empty accepts whatever the source declares.
    pub channels: Vec<String>,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            patch: PatchSpec::default(),
            factors: vec![2, 4, 8],
            splits: SplitRatios::default(),
            seed: 0,
            boundary: Boundary::Replicate,
            channels: Vec::new(),
        }
    }
}

impl IngestConfig {
    pub fn validate(&self) -> Result<()> {
        let p = &self.patch;
        if p.size == 0 || p.stride == Some(0) {
            return Err(Error::invalid("patch size and stride must be positive"));
        }
        for &f in &self.factors {
            if f < 2 || !p.size.is_multiple_of(f) {
                return Err(Error::invalid(format!("patch size {} is not divisible by pooling factor {f}", p.size)));
            }
        }
        Ok(())
    }

    pub fn ladder(&self) -> Vec<usize> {
        let mut l = vec![self.patch.size];
        l.extend(self.factors.iter().map(|f| self.patch.size / f));
        l
    }
}

/// Top-left corners of every patch inside `region`.
pub fn patch_origins(spec: &PatchSpec, height: usize, width: usize) -> Result<Vec<(usize, usize)>> {
    let [r0, r1, c0, c1] = spec.region.unwrap_or([0, height, 0, width]);
    if r0 >= r1 || c0 >= c1 || r1 > height || c1 > width {
        return Err(Error::invalid(format!("region {:?} outside the {height}x{width} source", [r0, r1, c0, c1])));
    }
    let stride = spec.stride.unwrap_or(spec.size);
    let axis = |a: usize, b: usize| -> Vec<usize> {
        if b - a < spec.size {
            Vec::new()
        } else {
            (a..=b - spec.size).step_by(stride).collect()
        }
    };
    let rows = axis(r0, r1);
    let cols = axis(c0, c1);
    if rows.is_empty() || cols.is_empty() {
        return Err(Error::Data(format!(
            "a {}x{} region cannot hold one {}x{} patch",
            r1 - r0,
            c1 - c0,
            spec.size,
            spec.size
        )));
    }
    Ok(rows.iter().flat_map(|&r| cols.iter().map(move |&c| (r, c))).collect())
}

/// Tiles a `[C, H, W]` GRD1 source into a pooled, split dataset at `out`.
pub fn ingest_grid(source: &Path, cfg: &IngestConfig, out: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    let bytes = std::fs::read(source).map_err(|e| Error::Data(format!("cannot read {}: {e}", source.display())))?;
    let (array, names) = read_array(source)?;
    let data: Array3<f64> = array
        .into_dimensionality()
        .map_err(|_| Error::Data(format!("{} must hold a [C, H, W] array", source.display())))?;
    let (c, h, w) = data.dim();
    if names.len() != c {
        return Err(Error::Data(format!("source declares {} channel names for {c} channels", names.len())));
    }
    if !cfg.channels.is_empty() && cfg.channels != names {
        return Err(Error::Data(format!("source channels {names:?} differ from the expected {:?}", cfg.channels)));
    }
    let origins = patch_origins(&cfg.patch, h, w)?;
    let size = cfg.patch.size;
    let ladder = cfg.ladder();

    let mut kept = Vec::new();
    let mut dropped = 0;
    for &(r, col) in &origins {
        let patch = data.slice(s![.., r..r + size, col..col + size]).to_owned();
        if patch.iter().any(|v| !v.is_finite()) {
            dropped += 1;
            continue;
        }
        kept.push((format!("patch_r{r:05}_c{col:05}"), Field::new(patch)?));
    }
    if kept.is_empty() {
        return Err(Error::Data(format!("all {} patches contain missing values", origins.len())));
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} of {} patches with missing values", origins.len());
    }

    let writer = StoreWriter::create(out)?;
    let splits = cfg.splits.assign(kept.len(), cfg.seed);
    let mut acc = NormAccumulator::new(c);
    let mut records = Vec::with_capacity(kept.len());
    for ((id, field), split) in kept.into_iter().zip(splits) {
        if split == Split::Train {
            acc.add(field.data().view().into_dyn(), 0)?;
        }
        let mut files = vec![writer.write_array(&id, size, &field.data().clone().into_dyn(), names.clone())?];
        for &f in &cfg.factors {
            let pooled = average_pool(&field, f)?;
            files.push(writer.write_array(&id, size / f, &pooled.into_inner().into_dyn(), names.clone())?);
        }
        records.push(RecordEntry { id, split, seed: None, files });
    }
    let norm = acc.finish().unwrap_or_else(|_| NormStats::identity(c));

    let stem = source.file_stem().and_then(|s| s.to_str()).unwrap_or("grid");
    let mut generator = toml::Table::try_from(cfg).map_err(|e| Error::Format(e.to_string()))?;
    generator.insert("source_file".into(), source.file_name().and_then(|s| s.to_str()).unwrap_or_default().into());
    generator.insert("source_sha256".into(), sha256_hex(&bytes).into());
    generator.insert("source_shape".into(), toml::Value::Array(vec![c, h, w].into_iter().map(|v| (v as i64).into()).collect()));
    let manifest = DatasetManifest {
        id: format!("grid-{stem}-p{size}-seed{}", cfg.seed),
        source: SourceTag::ExternalGrid,
        format_version: 1,
        ladder,
        boundary: cfg.boundary,
        channels: names,
        frames: None,
        window: None,
        split_ratios: cfg.splits,
        split_seed: cfg.seed,
        norm,
        dropped_seeds: Vec::new(),
        dropped_patches: dropped,
        generator,
        records,
    };
    writer.commit(&manifest)?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    /// Wavelength in grid cells where the spectrum turns over.
    pub eddy_scale: f64,
    /// Vorticity spectral exponent; velocity amplitudes fall off as `k^-(1 + alpha)`
    /// beyond the turnover.
    pub alpha: f64,
    /// Root-mean-square speed of the result.
    pub rms: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { height: 512, width: 512, seed: 0, eddy_scale: 24.0, alpha: 1.0, rms: 0.2 }
    }
}

/// Channel names of the synthetic source, eastward and northward velocity.
pub const SYNTH_CHANNELS: [&str; 2] = ["uo", "vo"];

/// A divergence-free two-component velocity field, `[2, height, width]`.
///
/// A square periodic field is sampled and cropped to the requested shape, so
/// the result is not periodic unless it is square.
pub fn synth_velocity(cfg: &SynthConfig) -> Result<Array3<f64>> {
    if cfg.height == 0 || cfg.width == 0 {
        return Err(Error::invalid("synthetic grid must be non-empty"));
    }
    if !(cfg.eddy_scale > 0.0 && cfg.rms > 0.0 && cfg.alpha.is_finite()) {
        return Err(Error::invalid(format!("bad synthetic field settings {cfg:?}")));
    }
    let n = cfg.height.max(cfg.width).max(16);
    let grf = GrfConfig { tau: 2.0 * std::f64::consts::PI * n as f64 / cfg.eddy_scale, alpha: cfg.alpha, sigma: 1.0 };
    let w = sample_grf(&grf, n, cfg.seed)?;
    let uv = vorticity_to_velocity(&w)?;
    let mut out = uv.data().slice(s![.., ..cfg.height, ..cfg.width]).to_owned();
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / (out.len() / 2) as f64).sqrt();
    if rms > 0.0 {
        out.mapv_inplace(|v| v * cfg.rms / rms);
    }
    Ok(out)
}

pub fn write_synth(cfg: &SynthConfig, out: &Path) -> Result<()> {
    let uv = synth_velocity(cfg)?;
    write_array(out, &uv.into_dyn(), SYNTH_CHANNELS.iter().map(|s| s.to_string()).collect(), Dtype::F64)
}

/// Mean of each channel over the spatial axes.
pub fn channel_means(a: &Array3<f64>) -> Vec<f64> {
    a.axis_iter(Axis(0)).map(|c| c.mean().unwrap_or(0.0)).collect()
}
