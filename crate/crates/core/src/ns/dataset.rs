//! The multi-resolution spatio-temporal Navier–Stokes dataset.

use std::path::Path;

use ndarray::{Array4, Axis};
use serde::{Deserialize, Serialize};

use super::solver::{simulate, NsConfig};
use crate::error::{Error, Result};
use crate::grid::{average_pool, Boundary, Field};
use crate::io::store::{DatasetManifest, RecordEntry, SourceTag, SplitRatios, StoreWriter};
use crate::train::norm::NormAccumulator;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NsDatasetConfig {
    /// Solver settings; `solver.seed` is the base seed and simulation `i` uses `seed + i`.
    pub solver: NsConfig,
    pub sims: usize,
    /// Pooled resolutions stored next to the solver resolution.
    pub pooled: Vec<usize>,
    /// Input frames per window; each window holds `2 * input_frames` frames.
    pub input_frames: usize,
    pub splits: SplitRatios,
}

impl Default for NsDatasetConfig {
    fn default() -> Self {
        Self { solver: NsConfig::default(), sims: 10, pooled: vec![32, 16], input_frames: 5, splits: SplitRatios::default() }
    }
}

impl NsDatasetConfig {
    pub fn window(&self) -> usize {
        2 * self.input_frames
    }

    pub fn ladder(&self) -> Vec<usize> {
        let mut l = vec![self.solver.resolution];
        l.extend(&self.pooled);
        l
    }
}

/// Number of overlapping windows of `window` frames in `frames` recorded frames.
pub fn windows_per_record(frames: usize, window: usize) -> usize {
    (frames + 1).saturating_sub(window)
}

fn stack(frames: &[Field]) -> Array4<f64> {
    let views: Vec<_> = frames.iter().map(|f| f.data().view()).collect();
    ndarray::stack(Axis(0), &views).expect("frames share a shape")
}

/// Runs `cfg.sims` simulations and commits the dataset store at `out`.
///
/// Each record holds a `[T, 1, n, n]` vorticity array per ladder level.
/// Trajectories that blow up are dropped and listed in the manifest.
pub fn generate_dataset(cfg: &NsDatasetConfig, out: &Path) -> Result<DatasetManifest> {
    cfg.solver.validate()?;
    if cfg.sims == 0 {
        return Err(Error::invalid("need at least one simulation"));
    }
    if cfg.input_frames == 0 || cfg.window() > cfg.solver.record_steps {
        return Err(Error::invalid(format!(
            "window of {} frames does not fit {} recorded frames",
            cfg.window(),
            cfg.solver.record_steps
        )));
    }
    let base = cfg.solver.resolution;
    for &r in &cfg.pooled {
        if r == 0 || !base.is_multiple_of(r) || r >= base {
            return Err(Error::invalid(format!("pooled level {r} is not a divisor of {base}")));
        }
    }

    let writer = StoreWriter::create(out)?;
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for i in 0..cfg.sims {
        let seed = cfg.solver.seed.wrapping_add(i as u64);
        let sim_cfg = NsConfig { seed, ..cfg.solver.clone() };
        let frames = match simulate(&sim_cfg) {
            Ok(f) => f,
            Err(Error::Numeric(msg)) => {
                log::warn!("dropping simulation {i}: {msg}");
                dropped.push(seed);
                continue;
            }
            Err(e) => return Err(e),
        };
        let id = format!("sim_{i:05}");
        let mut files = vec![writer.write_array(&id, base, &stack(&frames).into_dyn(), vec!["vorticity".into()])?];
        for &r in &cfg.pooled {
            let pooled: Vec<Field> = frames.iter().map(|f| average_pool(f, base / r)).collect::<Result<_>>()?;
            files.push(writer.write_array(&id, r, &stack(&pooled).into_dyn(), vec!["vorticity".into()])?);
        }
        log::info!("simulation {i} (seed {seed}) done");
        kept.push((id, seed, files, frames));
    }
    if kept.is_empty() {
        return Err(Error::Numeric(format!("all {} simulations blew up", cfg.sims)));
    }

    let splits = cfg.splits.assign(kept.len(), cfg.solver.seed);
    let mut acc = NormAccumulator::new(1);
    let mut records = Vec::with_capacity(kept.len());
    for ((id, seed, files, frames), split) in kept.into_iter().zip(splits) {
        if split == crate::io::store::Split::Train {
            for f in &frames {
                acc.add(f.data().view().into_dyn(), 0)?;
            }
        }
        records.push(RecordEntry { id, split, seed: Some(seed), files });
    }
    // With very few simulations the training split can be empty; fall back to all data.
    let norm = match acc.finish() {
        Ok(n) => n,
        Err(_) => {
            log::warn!("empty training split; normalization left as identity");
            crate::train::norm::NormStats::identity(1)
        }
    };
    let manifest = DatasetManifest {
        id: format!("ns-n{}-seed{}-sims{}", base, cfg.solver.seed, cfg.sims),
        source: SourceTag::NsSim,
        format_version: 1,
        ladder: cfg.ladder(),
        boundary: Boundary::Periodic,
        channels: vec!["vorticity".into()],
        frames: Some(cfg.solver.record_steps),
        window: Some(cfg.window()),
        split_ratios: cfg.splits,
        split_seed: cfg.solver.seed,
        norm,
        dropped_seeds: dropped,
        dropped_patches: 0,
        generator: toml::Table::try_from(cfg).map_err(|e| Error::Format(e.to_string()))?,
        records,
    };
    writer.commit(&manifest)?;
    Ok(manifest)
}
