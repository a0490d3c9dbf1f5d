use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dfno_core::io::grd1::read_array;
use dfno_core::io::ingest::{ingest_grid, write_synth, IngestConfig, PatchSpec, SynthConfig};
use dfno_core::io::{Split, SplitRatios};
use dfno_core::models::{ModelSpec, Variant};
use dfno_core::ns::{generate_dataset, NsConfig, NsDatasetConfig};
use dfno_core::plot::{plot_curves, plot_panels};
use dfno_core::train::{Loss, TrainConfig};
use dfno_core::workflow::{eval_job, init_checkpoint, parse_boundary, predict_job, train_job, TrainJob};
use dfno_core::{Error, Result};
use ndarray::{Array2, Array3, Axis, Ix3};

#[derive(Parser)]
#[command(name = "dfno", version, about = "Neural-operator downscaling of gridded fields")]
struct Cli {
    /// Log verbosity (error, warn, info, debug).
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate forced 2-D Navier–Stokes and store a multi-resolution dataset.
    GenNs(GenNs),
    /// Tile a [C, H, W] GRD1 grid into pooled patches.
    Ingest(Ingest),
    /// Write a synthetic divergence-free velocity grid as GRD1.
    SynthGrid(SynthGrid),
    Train(Train),
    /// Score a checkpoint on the test split and write an EvalRows CSV.
    Eval(Eval),
    /// Zero-shot inference on one sample.
    Predict(Predict),
    /// Render loss curves or prediction panels to PNG.
    Plot(Plot),
}

fn target(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected HxW, got `{s}`"))?;
    Ok((h.parse().map_err(|_| format!("bad height `{h}`"))?, w.parse().map_err(|_| format!("bad width `{w}`"))?))
}

#[derive(Args)]
struct GenNs {
    #[arg(long, default_value_t = 10)]
    sims: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    resolution: usize,
    /// Stored snapshots per simulation.
    #[arg(long, default_value_t = 50)]
    frames: usize,
    /// Simulated time between snapshots.
    #[arg(long, default_value_t = 1.0)]
    interval: f64,
    #[arg(long, default_value_t = 1e-4)]
    viscosity: f64,
    #[arg(long, value_delimiter = ',', default_value = "32,16")]
    pooled: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    input_frames: usize,
    #[arg(long, default_value = "70/20/10")]
    splits: SplitRatios,
}

#[derive(Args)]
struct Ingest {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 128)]
    patch: usize,
    /// Defaults to the patch size.
    #[arg(long)]
    stride: Option<usize>,
    /// row0,row1,col0,col1 (end-exclusive).
    #[arg(long, value_delimiter = ',')]
    region: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',', default_value = "2,4,8")]
    factors: Vec<usize>,
    #[arg(long, default_value = "70/20/10")]
    splits: SplitRatios,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "replicate")]
    boundary: String,
    /// Expected channel names, comma separated.
    #[arg(long, value_delimiter = ',')]
    channels: Option<Vec<String>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthGrid {
    #[arg(long, default_value_t = 512)]
    height: usize,
    #[arg(long, default_value_t = 512)]
    width: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 24.0)]
    eddy_scale: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long)]
    out: PathBuf,
}

/// Train a model on a dataset, keeping the best-validation checkpoint.
#[derive(Args)]
struct Train {
    #[arg(long, env = "DFNO_DATA")]
    data: PathBuf,
    #[arg(long)]
    model: Variant,
    #[arg(long, default_value = "l2")]
    loss: Loss,
    #[arg(long, default_value_t = 600)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Append-only per-epoch CSV log.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    blocks: Option<usize>,
    /// Kept Fourier modes per axis, e.g. 12,12 or 2,8,8.
    #[arg(long, value_delimiter = ',')]
    modes: Option<Vec<usize>>,
    /// U-Net level widths.
    #[arg(long, value_delimiter = ',')]
    unet: Option<Vec<usize>>,
    #[arg(long)]
    constraint: bool,
    #[arg(long)]
    input_res: Option<usize>,
    /// Target side lengths, e.g. 16,32.
    #[arg(long, value_delimiter = ',')]
    targets: Option<Vec<usize>>,
    /// Loss weight per target.
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    /// Offset between consecutive windows of one simulation.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long, default_value_t = 1)]
    eval_every: usize,
    /// Write the initialized model and stop.
    #[arg(long)]
    init_only: bool,
}

#[derive(Args)]
struct Eval {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, env = "DFNO_DATA")]
    data: PathBuf,
    #[arg(long, value_delimiter = ',')]
    res: Vec<usize>,
    #[arg(long)]
    csv: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Omit the bicubic reference rows.
    #[arg(long)]
    no_baseline: bool,
}

#[derive(Args)]
struct Predict {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_parser = target)]
    target: (usize, usize),
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Plot {
    /// Training log for `curves`.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, value_parser = ["curves", "panels"])]
    kind: String,
    /// Prediction GRD1 for `panels`.
    #[arg(long)]
    pred: Option<PathBuf>,
    /// Ground-truth GRD1 for `panels`.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::GenNs(a) => {
            let cfg = NsDatasetConfig {
                solver: NsConfig {
                    resolution: a.resolution,
                    record_steps: a.frames,
                    record_interval: a.interval,
                    viscosity: a.viscosity,
                    seed: a.seed,
                    ..NsConfig::default()
                },
                sims: a.sims,
                pooled: a.pooled,
                input_frames: a.input_frames,
                splits: a.splits,
            };
            let m = generate_dataset(&cfg, &a.out)?;
            println!("{} records ({} dropped) -> {}", m.records.len(), m.dropped_seeds.len(), a.out.display());
        }
        Cmd::Ingest(a) => {
            let region = match a.region.as_deref() {
                None => None,
                Some(&[r0, r1, c0, c1]) => Some([r0, r1, c0, c1]),
                Some(_) => return Err(Error::Invalid("--region takes row0,row1,col0,col1".into())),
            };
            let cfg = IngestConfig {
                patch: PatchSpec { size: a.patch, stride: a.stride, region },
                factors: a.factors,
                splits: a.splits,
                seed: a.seed,
                boundary: parse_boundary(&a.boundary)?,
                channels: a.channels.unwrap_or_default(),
            };
            let m = ingest_grid(&a.input, &cfg, &a.out)?;
            println!("{} patches ({} dropped), split checksum {}", m.records.len(), m.dropped_patches, m.split_checksum());
        }
        Cmd::SynthGrid(a) => {
            let cfg = SynthConfig { height: a.height, width: a.width, seed: a.seed, eddy_scale: a.eddy_scale, alpha: a.alpha, ..SynthConfig::default() };
            write_synth(&cfg, &a.out)?;
        }
        Cmd::Train(a) => {
            let mut spec = ModelSpec::new(a.model, 1);
            if let Some(w) = a.width {
                spec.width = w;
            }
            if let Some(b) = a.blocks {
                spec.blocks = b;
            }
            if let Some(m) = a.modes {
                spec.modes = m;
            }
            if let Some(u) = a.unet {
                spec.unet.widths = u;
            }
            spec.constraint = a.constraint;
            if a.init_only {
                return init_checkpoint(&a.data, spec, a.seed, a.stride, &a.out);
            }
            let job = TrainJob {
                data: a.data,
                spec,
                input_res: a.input_res,
                targets: a.targets,
                stride: a.stride,
                init_seed: a.seed,
                cfg: TrainConfig {
                    lr: a.lr,
                    epochs: a.epochs,
                    batch: a.batch,
                    loss: a.loss,
                    seed: a.seed,
                    eval_every: a.eval_every,
                    max_steps: a.max_steps,
                    target_weights: a.weights.unwrap_or_default(),
                },
                checkpoint: a.out,
                log: a.log,
            };
            let r = train_job(&job)?;
            println!("best epoch {} (score {:.6e}), {} steps", r.best_epoch, r.best_score, r.steps);
        }
        Cmd::Eval(a) => {
            let split = match a.split.as_str() {
                "train" => Split::Train,
                "val" => Split::Val,
                "test" => Split::Test,
                other => return Err(Error::Invalid(format!("unknown split `{other}`"))),
            };
            let r = eval_job(&a.ckpt, &a.data, &a.res, split, !a.no_baseline, &a.csv)?;
            println!("{} rows, {} skipped -> {}", r.rows.len(), r.skipped.len(), a.csv.display());
        }
        Cmd::Predict(a) => {
            let y = predict_job(&a.ckpt, &a.input, a.target, &a.out)?;
            println!("{:?} -> {}", y.shape(), a.out.display());
        }
        Cmd::Plot(a) => match a.kind.as_str() {
            "curves" => {
                let csv = a.csv.ok_or_else(|| Error::Invalid("--kind curves needs --csv".into()))?;
                let mut r = csv::Reader::from_path(&csv)?;
                let headers = r.headers()?.clone();
                let col = |name: &str| headers.iter().position(|h| h == name);
                let cols: Vec<usize> = ["train_loss", "val_mse"].iter().filter_map(|n| col(n)).collect();
                if cols.is_empty() {
                    return Err(Error::Data(format!("{} has no train_loss or val_mse column", csv.display())));
                }
                let mut series = vec![Vec::new(); cols.len()];
                for rec in r.records() {
                    let rec = rec?;
                    for (s, &c) in series.iter_mut().zip(&cols) {
                        s.push(rec.get(c).and_then(|v| v.parse().ok()).unwrap_or(f64::NAN));
                    }
                }
                plot_curves(&series, &a.out)?;
            }
            _ => {
                let (p, t) = match (a.pred, a.truth) {
                    (Some(p), Some(t)) => (p, t),
                    _ => return Err(Error::Invalid("--kind panels needs --pred and --truth".into())),
                };
                plot_panels(&panels(&p)?, &panels(&t)?, &a.out)?;
            }
        },
    }
    Ok(())
}

/// Channels of a `[C, H, W]` field, or of the last frame of `[C, T, H, W]`.
fn panels(path: &std::path::Path) -> Result<Vec<Array2<f64>>> {
    let (a, _) = read_array(path)?;
    let a = match a.ndim() {
        3 => a,
        4 => {
            let t = a.shape()[1];
            a.index_axis(Axis(1), t - 1).to_owned()
        }
        n => return Err(Error::Data(format!("{} has rank {n}; expected [C, H, W] or [C, T, H, W]", path.display()))),
    };
    let a: Array3<f64> = a.into_dimensionality::<Ix3>().expect("rank checked");
    Ok(a.outer_iter().map(|c| c.to_owned()).collect())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::new().parse_filters(&cli.log_level).format_timestamp(None).init();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": e.kind(), "code": e.exit_code(), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
