//! Numerical substrate: fields, Fourier transforms, resampling and gradient filters.

pub mod fft;
pub mod field;
pub mod resample;
pub mod sobel;

pub use fft::{fft2, ifft2, Spectrum};
pub use field::{Field, SpatioTemporalField};
pub use resample::{average_pool, resample, upsample, Boundary, ResampleMode, ResampleSpec};
pub use sobel::sobel;
