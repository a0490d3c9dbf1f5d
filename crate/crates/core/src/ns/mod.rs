//! Navier–Stokes data generation: random initial vorticity, the pseudo-spectral
//! solver and the multi-resolution windowed dataset.

pub mod grf;
pub mod solver;
pub(crate) mod spectral;

pub use grf::{sample_grf, GrfConfig};
pub use solver::{simulate, spectral_divergence, vorticity_to_velocity, NsConfig, Solver};
pub mod dataset;

pub use dataset::{generate_dataset, windows_per_record, NsDatasetConfig};
