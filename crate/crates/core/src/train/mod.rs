//! Normalization, losses, metrics, the training loop and evaluation.

pub mod data;
pub mod eval;
pub mod metrics;
pub mod norm;
pub mod trainer;

pub use data::{load_samples, split_ranges, Sample, SampleSet, TaskSpec};
pub use eval::{bicubic_baseline, evaluate, EvalReport, EvalRow, Metrics};
pub use metrics::{mae, mse, psnr, ssim, Loss};
pub use norm::{NormAccumulator, NormStats};
pub use trainer::{train, TrainConfig, TrainOutputs, TrainReport};
