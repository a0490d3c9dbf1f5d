//! Square 2D complex transforms on flat row-major buffers, used by the solver's
//! hot loop.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub struct Fft2 {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
    tmp: Vec<Complex64>,
}

impl Fft2 {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let len = forward.get_inplace_scratch_len().max(inverse.get_inplace_scratch_len());
        Self {
            n,
            forward,
            inverse,
            scratch: vec![Complex64::new(0.0, 0.0); len],
            tmp: vec![Complex64::new(0.0, 0.0); n * n],
        }
    }

    /// Unnormalized forward transform.
    pub fn forward(&mut self, data: &mut [Complex64]) {
        self.run(data, false);
    }

    /// Inverse transform including the `1 / n^2` factor.
    pub fn inverse(&mut self, data: &mut [Complex64]) {
        self.run(data, true);
        let norm = 1.0 / (self.n * self.n) as f64;
        for v in data.iter_mut() {
            *v *= norm;
        }
    }

    fn run(&mut self, data: &mut [Complex64], inverse: bool) {
        let n = self.n;
        assert_eq!(data.len(), n * n, "buffer is not {n} x {n}");
        let fft = if inverse { &self.inverse } else { &self.forward };
        fft.process_with_scratch(data, &mut self.scratch);
        transpose(data, &mut self.tmp, n);
        fft.process_with_scratch(&mut self.tmp, &mut self.scratch);
        transpose(&self.tmp, data, n);
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], n: usize) {
    const B: usize = 16;
    for ib in (0..n).step_by(B) {
        for jb in (0..n).step_by(B) {
            for i in ib..(ib + B).min(n) {
                for j in jb..(jb + B).min(n) {
                    dst[j * n + i] = src[i * n + j];
                }
            }
        }
    }
}
