//! Discrete Fourier transforms over gridded data.
//!
//! Normalization convention used everywhere in this crate: the forward
//! transform is unnormalized, `X[k] = sum_n x[n] exp(-2 pi i k n / N)`, and the
//! inverse carries the full `1 / N` factor. For an `H x W` field Parseval reads
//! `sum |x|^2 = (1 / (H W)) sum |X|^2` over the full spectrum.

use std::cell::RefCell;
use std::sync::Arc;

use ndarray::{Array3, ArrayViewMutD, Axis, Zip};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::field::{check_finite, Field};
use crate::error::{Error, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    })
}

/// Signed frequency of bin `n` on an axis of length `len`.
///
/// Bins past the midpoint wrap to negative frequencies; the Nyquist bin of an
/// even-length axis maps to `-len / 2`.
pub fn wavenumber(n: usize, len: usize) -> i64 {
    if 2 * n < len {
        n as i64
    } else {
        n as i64 - len as i64
    }
}

/// In-place unnormalized transform along one axis (no `1/N` on the inverse).
pub fn fft_axis(mut data: ArrayViewMutD<'_, Complex64>, axis: usize, inverse: bool) {
    let len = data.len_of(Axis(axis));
    if len <= 1 {
        return;
    }
    let fft = plan(len, inverse);
    let mut buf = vec![Complex64::new(0.0, 0.0); len];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for mut lane in data.lanes_mut(Axis(axis)) {
        for (b, v) in buf.iter_mut().zip(lane.iter()) {
            *b = *v;
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (v, b) in lane.iter_mut().zip(buf.iter()) {
            *v = *b;
        }
    }
}

/// Unnormalized transform over the trailing `naxes` axes of `data`.
pub fn fft_trailing(mut data: ArrayViewMutD<'_, Complex64>, naxes: usize, inverse: bool) {
    let nd = data.ndim();
    for axis in nd - naxes..nd {
        fft_axis(data.view_mut(), axis, inverse);
    }
}

/// Half-plane Fourier coefficients of a real field, `[C, H, W / 2 + 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    coeffs: Array3<Complex64>,
    height: usize,
    width: usize,
}

impl Spectrum {
    pub fn from_coeffs(coeffs: Array3<Complex64>, height: usize, width: usize) -> Result<Self> {
        let (_, h, wh) = coeffs.dim();
        if h != height || wh != width / 2 + 1 {
            return Err(Error::shape(format!(
                "half spectrum {:?} does not match grid {height}x{width}",
                coeffs.dim()
            )));
        }
        Ok(Self { coeffs, height, width })
    }

    pub fn coeffs(&self) -> &Array3<Complex64> {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut Array3<Complex64> {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Array3<Complex64> {
        self.coeffs
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// `(k_x, k_y)` of bin `(row, col)`.
    pub fn wavenumbers(&self, row: usize, col: usize) -> (i64, i64) {
        (col as i64, wavenumber(row, self.height))
    }

    /// Sum of squared magnitudes over the full (both half-planes) spectrum.
    pub fn full_energy(&self) -> f64 {
        let w = self.width;
        let mut total = 0.0;
        for ((_, _, col), v) in self.coeffs.indexed_iter() {
            // Columns other than DC and (even-width) Nyquist stand for a conjugate pair.
            let mult = if col == 0 || (w.is_multiple_of(2) && col == w / 2) { 1.0 } else { 2.0 };
            total += mult * v.norm_sqr();
        }
        total
    }
}

/// Forward transform of every channel of `field`.
pub fn fft2(field: &Field) -> Result<Spectrum> {
    check_finite(field.data().view())?;
    let (c, h, w) = field.dims();
    let mut full = field.data().mapv(|v| Complex64::new(v, 0.0)).into_dyn();
    fft_axis(full.view_mut(), 2, false);
    let wh = w / 2 + 1;
    let mut half = full.slice_move(ndarray::s![.., .., 0..wh]).into_dyn();
    fft_axis(half.view_mut(), 1, false);
    let coeffs = half
        .into_dimensionality::<ndarray::Ix3>()
        .map_err(|e| Error::shape(e.to_string()))?;
    debug_assert_eq!(coeffs.dim(), (c, h, wh));
    Spectrum::from_coeffs(coeffs, h, w)
}

/// Inverse transform back to an `H x W` real field.
pub fn ifft2(spec: &Spectrum) -> Result<Field> {
    Field::new(ifft2_raw(spec.coeffs(), spec.height, spec.width))
}

/// Inverse transform without the finiteness check, for hot solver loops.
pub(crate) fn ifft2_raw(coeffs: &Array3<Complex64>, h: usize, w: usize) -> Array3<f64> {
    let (c, _, wh) = coeffs.dim();
    let mut cols = coeffs.clone().into_dyn();
    fft_axis(cols.view_mut(), 1, true);
    let mut full = Array3::<Complex64>::zeros((c, h, w));
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                full[[ch, i, j]] = if j < wh {
                    cols[[ch, i, j]]
                } else {
                    // After the column transform each row is a 1D half spectrum
                    // of a real signal.
                    cols[[ch, i, w - j]].conj()
                };
            }
        }
    }
    let mut full = full.into_dyn();
    fft_axis(full.view_mut(), 2, true);
    let norm = 1.0 / (h * w) as f64;
    let mut out = Array3::zeros((c, h, w));
    Zip::from(&mut out)
        .and(&full.into_dimensionality::<ndarray::Ix3>().expect("rank 3"))
        .for_each(|o, v| *o = v.re * norm);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_field(c: usize, h: usize, w: usize, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Field::new(Array3::from_shape_fn((c, h, w), |_| rng.random_range(-1.0..1.0))).unwrap()
    }

    /// Direct O(N^2) DFT, the reference for the fast path.
    fn naive_dft(f: &Field, c: usize, ky: i64, kx: i64) -> Complex64 {
        let (_, h, w) = f.dims();
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..h {
            for j in 0..w {
                let phase = -2.0 * PI * (ky as f64 * i as f64 / h as f64 + kx as f64 * j as f64 / w as f64);
                acc += f.data()[[c, i, j]] * Complex64::from_polar(1.0, phase);
            }
        }
        acc
    }

    #[test]
    fn constant_field_has_only_dc() {
        let f = Field::from_fn(1, 8, 6, |_, _, _| 2.5).unwrap();
        let s = fft2(&f).unwrap();
        for ((_, r, c), v) in s.coeffs().indexed_iter() {
            if (r, c) == (0, 0) {
                assert!((v - Complex64::new(2.5 * 48.0, 0.0)).norm() < 1e-12);
            } else {
                assert!(v.norm() < 1e-12, "bin ({r},{c}) = {v}");
            }
        }
    }

    #[test]
    fn round_trip_random() {
        for (h, w) in [(16, 16), (8, 12), (5, 7), (1, 4)] {
            let f = random_field(2, h, w, 7);
            let back = ifft2(&fft2(&f).unwrap()).unwrap();
            let err = (f.data() - back.data()).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
            assert!(err <= 1e-12 * f.max_abs(), "{h}x{w}: {err}");
        }
    }

    #[test]
    fn sine_energy_matches_direct_dft() {
        let f = Field::from_fn(1, 8, 8, |_, x, _| (2.0 * PI * x).sin()).unwrap();
        let s = fft2(&f).unwrap();
        for r in 0..8 {
            for c in 0..5 {
                let (kx, ky) = s.wavenumbers(r, c);
                let reference = naive_dft(&f, 0, ky, kx);
                assert!((s.coeffs()[[0, r, c]] - reference).norm() < 1e-10);
                if (kx, ky) == (1, 0) {
                    assert!((reference - Complex64::new(0.0, -32.0)).norm() < 1e-10);
                } else {
                    assert!(reference.norm() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn matches_direct_dft_on_random_odd_grid() {
        let f = random_field(1, 5, 7, 3);
        let s = fft2(&f).unwrap();
        for r in 0..5 {
            for c in 0..4 {
                let (kx, ky) = s.wavenumbers(r, c);
                assert!((s.coeffs()[[0, r, c]] - naive_dft(&f, 0, ky, kx)).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn parseval_up_to_128() {
        for n in [4usize, 17, 64, 128] {
            let f = random_field(1, n, n, n as u64);
            let s = fft2(&f).unwrap();
            let lhs: f64 = f.data().iter().map(|v| v * v).sum();
            let rhs = s.full_energy() / (n * n) as f64;
            assert!((lhs - rhs).abs() <= 1e-10 * lhs, "{n}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn dc_is_real() {
        let s = fft2(&random_field(3, 9, 10, 1)).unwrap();
        for c in 0..3 {
            assert!(s.coeffs()[[c, 0, 0]].im.abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_input_names_channel() {
        let mut data = Array3::zeros((2, 4, 4));
        data[[1, 0, 0]] = f64::INFINITY;
        let err = Field::new(data).unwrap_err();
        assert!(err.to_string().contains("channel 1"), "{err}");
    }

    #[test]
    fn wavenumber_layout() {
        assert_eq!((0..8).map(|n| wavenumber(n, 8)).collect::<Vec<_>>(), vec![0, 1, 2, 3, -4, -3, -2, -1]);
        assert_eq!((0..5).map(|n| wavenumber(n, 5)).collect::<Vec<_>>(), vec![0, 1, 2, -2, -1]);
    }
}
