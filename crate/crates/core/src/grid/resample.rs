//! Resampling between grids: block averaging for coarsening and
//! nearest / bilinear / bicubic interpolation for refinement.
//!
//! Every mode is a separable linear map, so each is expressed as a pair of
//! `[n_out, n_in]` matrices applied along rows and columns. The same matrices
//! back the differentiable resampling primitive in the autodiff engine.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Array3, ArrayView2};
use serde::{Deserialize, Serialize};

use super::field::Field;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResampleMode {
    Nearest,
    Bilinear,
    Bicubic,
    AveragePool,
}

impl ResampleMode {
    /// The three interpolation kernels mixed by the meta upsampler, in order.
    pub const INTERPOLATORS: [ResampleMode; 3] = [ResampleMode::Nearest, ResampleMode::Bilinear, ResampleMode::Bicubic];
}

impl fmt::Display for ResampleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ResampleMode::Nearest => "nearest",
            ResampleMode::Bilinear => "bilinear",
            ResampleMode::Bicubic => "bicubic",
            ResampleMode::AveragePool => "average-pool",
        })
    }
}

impl FromStr for ResampleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(ResampleMode::Nearest),
            "bilinear" => Ok(ResampleMode::Bilinear),
            "bicubic" => Ok(ResampleMode::Bicubic),
            "average-pool" | "avgpool" => Ok(ResampleMode::AveragePool),
            other => Err(Error::invalid(format!("unknown resample mode `{other}`"))),
        }
    }
}

/// Edge handling for stencils that reach past the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    /// Wrap around; the domain is a torus.
    #[default]
    Periodic,
    /// Clamp to the nearest edge sample.
    Replicate,
}

impl Boundary {
    #[inline]
    pub fn index(self, i: isize, n: usize) -> usize {
        match self {
            Boundary::Periodic => i.rem_euclid(n as isize) as usize,
            Boundary::Replicate => i.clamp(0, n as isize - 1) as usize,
        }
    }
}

impl FromStr for Boundary {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "periodic" => Ok(Boundary::Periodic),
            "replicate" => Ok(Boundary::Replicate),
            other => Err(Error::invalid(format!("unknown boundary `{other}`"))),
        }
    }
}

/// Resampling mode plus scale factor `num / den` (> 1 refines, < 1 coarsens).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResampleSpec {
    pub mode: ResampleMode,
    pub num: usize,
    pub den: usize,
    pub boundary: Boundary,
}

impl ResampleSpec {
    pub fn upsample(mode: ResampleMode, factor: usize) -> Self {
        Self { mode, num: factor, den: 1, boundary: Boundary::Periodic }
    }

    pub fn pool(factor: usize) -> Self {
        Self { mode: ResampleMode::AveragePool, num: 1, den: factor, boundary: Boundary::Periodic }
    }

    pub fn with_boundary(mut self, boundary: Boundary) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn factor(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

/// Resamples `field` to `target = (H', W')`.
pub fn resample(field: &Field, spec: &ResampleSpec, target: (usize, usize)) -> Result<Field> {
    let (_, h, w) = field.dims();
    let (th, tw) = target;
    if th == 0 || tw == 0 {
        return Err(Error::shape(format!("target dims must be >= 1, got {th}x{tw}")));
    }
    if spec.num == 0 || spec.den == 0 {
        return Err(Error::invalid("resample factor must be positive"));
    }
    if th * spec.den != h * spec.num || tw * spec.den != w * spec.num {
        return Err(Error::shape(format!(
            "factor {}/{} does not map {h}x{w} to {th}x{tw}",
            spec.num, spec.den
        )));
    }
    let (my, mx) = match spec.mode {
        ResampleMode::AveragePool => (pool_matrix(h, th)?, pool_matrix(w, tw)?),
        mode => {
            if spec.num < spec.den {
                return Err(Error::invalid(format!(
                    "{mode} cannot downsample (factor {}/{}); use average-pool",
                    spec.num, spec.den
                )));
            }
            (
                interp_matrix(mode, h, th, spec.boundary)?,
                interp_matrix(mode, w, tw, spec.boundary)?,
            )
        }
    };
    Field::new(apply_separable(field.data(), my.view(), mx.view()))
}

/// Block-average `field` by an integer `factor` along both axes.
pub fn average_pool(field: &Field, factor: usize) -> Result<Field> {
    if factor == 0 || !field.height().is_multiple_of(factor) || !field.width().is_multiple_of(factor) {
        return Err(Error::shape(format!(
            "pool factor {factor} does not divide {}x{}",
            field.height(),
            field.width()
        )));
    }
    resample(
        field,
        &ResampleSpec::pool(factor),
        (field.height() / factor, field.width() / factor),
    )
}

/// Interpolates `field` to `target` with periodic edges.
pub fn upsample(field: &Field, mode: ResampleMode, target: (usize, usize)) -> Result<Field> {
    upsample_with(field, mode, target, Boundary::Periodic)
}

pub fn upsample_with(field: &Field, mode: ResampleMode, target: (usize, usize), boundary: Boundary) -> Result<Field> {
    let (_, h, w) = field.dims();
    if target.0 < h || target.1 < w {
        return Err(Error::invalid(format!(
            "cannot upsample {h}x{w} to smaller {}x{}",
            target.0, target.1
        )));
    }
    let my = interp_matrix(mode, h, target.0, boundary)?;
    let mx = interp_matrix(mode, w, target.1, boundary)?;
    Field::new(apply_separable(field.data(), my.view(), mx.view()))
}

/// `out[c] = my * data[c] * mx^T`.
pub fn apply_separable(data: &Array3<f64>, my: ArrayView2<f64>, mx: ArrayView2<f64>) -> Array3<f64> {
    let (c, _, _) = data.dim();
    let mut out = Array3::zeros((c, my.nrows(), mx.nrows()));
    for k in 0..c {
        let tmp = my.dot(&data.index_axis(ndarray::Axis(0), k));
        out.index_axis_mut(ndarray::Axis(0), k).assign(&tmp.dot(&mx.t()));
    }
    out
}

/// `[n_out, n_in]` block-averaging matrix.
pub fn pool_matrix(n_in: usize, n_out: usize) -> Result<Array2<f64>> {
    if n_out == 0 || !n_in.is_multiple_of(n_out) {
        return Err(Error::shape(format!("non-integer pooling ratio {n_in}/{n_out}")));
    }
    let k = n_in / n_out;
    let mut m = Array2::zeros((n_out, n_in));
    for i in 0..n_out {
        for j in 0..k {
            m[[i, i * k + j]] = 1.0 / k as f64;
        }
    }
    Ok(m)
}

/// Catmull-Rom cubic convolution weight (`a = -0.5`).
fn cubic_weight(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

/// `[n_out, n_in]` interpolation matrix for one axis.
///
/// Output sample `j` sits at source coordinate `j * n_in / n_out`, so the first
/// sample of both grids coincides at the origin.
pub fn interp_matrix(mode: ResampleMode, n_in: usize, n_out: usize, boundary: Boundary) -> Result<Array2<f64>> {
    if n_in == 0 || n_out == 0 {
        return Err(Error::shape("interpolation axis of length 0"));
    }
    let mut m = Array2::zeros((n_out, n_in));
    for j in 0..n_out {
        let num = j * n_in;
        let base = (num / n_out) as isize;
        let frac = (num % n_out) as f64 / n_out as f64;
        match mode {
            ResampleMode::Nearest => {
                m[[j, boundary.index(base, n_in)]] += 1.0;
            }
            ResampleMode::Bilinear => {
                m[[j, boundary.index(base, n_in)]] += 1.0 - frac;
                m[[j, boundary.index(base + 1, n_in)]] += frac;
            }
            ResampleMode::Bicubic => {
                for off in -1..=2isize {
                    let wgt = cubic_weight(frac - off as f64);
                    m[[j, boundary.index(base + off, n_in)]] += wgt;
                }
            }
            ResampleMode::AveragePool => return pool_matrix(n_in, n_out),
        }
    }
    Ok(m)
}

/// Evaluates the interpolant at the points of a coarser grid.
///
/// This is point decimation through the kernel, not an anti-aliased
/// coarsening; [`resample`] refuses it and callers that need it (the
/// cross-factor adapters) ask for it explicitly.
pub fn interp_decimate(field: &Field, mode: ResampleMode, target: (usize, usize)) -> Result<Field> {
    let (_, h, w) = field.dims();
    let my = interp_matrix(mode, h, target.0, Boundary::Periodic)?;
    let mx = interp_matrix(mode, w, target.1, Boundary::Periodic)?;
    Field::new(apply_separable(field.data(), my.view(), mx.view()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn field(data: Array3<f64>) -> Field {
        Field::new(data).unwrap()
    }

    #[test]
    fn pool_two_by_two() {
        let f = field(array![[[1.0, 1.0], [3.0, 3.0]]]);
        let p = average_pool(&f, 2).unwrap();
        assert_eq!(p.data(), &array![[[2.0]]]);
    }

    #[test]
    fn nearest_replicates() {
        let f = field(array![[[1.5]]]);
        let up = resample(&f, &ResampleSpec::upsample(ResampleMode::Nearest, 2), (2, 2)).unwrap();
        assert_eq!(up.data(), &array![[[1.5, 1.5], [1.5, 1.5]]]);
    }

    #[test]
    fn bicubic_sine_refinement() {
        let coarse = Field::from_fn(1, 32, 32, |_, x, _| (2.0 * PI * x).sin()).unwrap();
        let fine = upsample(&coarse, ResampleMode::Bicubic, (64, 64)).unwrap();
        let exact = Field::from_fn(1, 64, 64, |_, x, _| (2.0 * PI * x).sin()).unwrap();
        let err = (fine.data() - exact.data()).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(err <= 1e-2, "max error {err}");
    }

    #[test]
    fn interpolation_reproduces_samples_at_coincident_points() {
        let coarse = Field::from_fn(1, 8, 8, |_, x, y| (2.0 * PI * x).cos() + y * y).unwrap();
        for mode in ResampleMode::INTERPOLATORS {
            let fine = upsample(&coarse, mode, (16, 16)).unwrap();
            for i in 0..8 {
                for j in 0..8 {
                    assert!((fine.data()[[0, 2 * i, 2 * j]] - coarse.data()[[0, i, j]]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn errors() {
        let f = Field::zeros(1, 6, 6);
        assert!(resample(&f, &ResampleSpec::pool(4), (1, 1)).is_err());
        let down = ResampleSpec { mode: ResampleMode::Bicubic, num: 1, den: 2, boundary: Boundary::Periodic };
        assert!(resample(&f, &down, (3, 3)).is_err());
        assert!(resample(&f, &ResampleSpec::upsample(ResampleMode::Bilinear, 2), (0, 12)).is_err());
        assert!(resample(&f, &ResampleSpec::upsample(ResampleMode::Bilinear, 2), (12, 10)).is_err());
    }

    #[test]
    fn interpolation_rows_sum_to_one() {
        for mode in ResampleMode::INTERPOLATORS {
            for b in [Boundary::Periodic, Boundary::Replicate] {
                let m = interp_matrix(mode, 5, 13, b).unwrap();
                for row in m.rows() {
                    assert!((row.sum() - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn replicate_edges_do_not_wrap() {
        let f = field(array![[[0.0, 0.0, 0.0, 10.0]]]);
        let up = upsample_with(&f, ResampleMode::Bilinear, (1, 8), Boundary::Replicate).unwrap();
        assert_eq!(up.data()[[0, 0, 7]], 10.0);
        let wrapped = upsample(&f, ResampleMode::Bilinear, (1, 8)).unwrap();
        assert_eq!(wrapped.data()[[0, 0, 7]], 5.0);
    }

    fn arb_field(max: usize) -> impl Strategy<Value = Field> {
        (1usize..3, 1usize..max, 1usize..max).prop_flat_map(|(c, h, w)| {
            proptest::collection::vec(-10.0f64..10.0, c * h * w)
                .prop_map(move |v| Field::new(Array3::from_shape_vec((c, h, w), v).unwrap()).unwrap())
        })
    }

    proptest! {
        #[test]
        fn pool_of_replication_is_identity(f in arb_field(7), k in 1usize..4) {
            let (_, h, w) = f.dims();
            let up = resample(&f, &ResampleSpec::upsample(ResampleMode::Nearest, k), (h * k, w * k)).unwrap();
            let back = average_pool(&up, k).unwrap();
            for (a, b) in back.data().iter().zip(f.data().iter()) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }

        #[test]
        fn pooling_preserves_mean(f in arb_field(5), k in 1usize..4) {
            let (c, h, w) = f.dims();
            let big = resample(&f, &ResampleSpec::upsample(ResampleMode::Bicubic, k), (h * k, w * k)).unwrap();
            let pooled = average_pool(&big, k).unwrap();
            prop_assert!((pooled.mean() - big.mean()).abs() < 1e-12);
            prop_assert_eq!(pooled.dims(), (c, h, w));
        }

        #[test]
        fn shift_equivariance(f in arb_field(6), k in 1usize..4, di in -3isize..3, dj in -3isize..3, m in 0usize..4) {
            let (_, h, w) = f.dims();
            let spec = if m == 3 {
                ResampleSpec::upsample(ResampleMode::Nearest, k)
            } else {
                ResampleSpec::upsample(ResampleMode::INTERPOLATORS[m], k)
            };
            let a = resample(&f.roll(di, dj), &spec, (h * k, w * k)).unwrap();
            let b = resample(&f, &spec, (h * k, w * k)).unwrap().roll(di * k as isize, dj * k as isize);
            for (x, y) in a.data().iter().zip(b.data().iter()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
            // Coarsening direction: shift by whole coarse cells.
            let fine = resample(&f, &ResampleSpec::upsample(ResampleMode::Bilinear, k), (h * k, w * k)).unwrap();
            let p1 = average_pool(&fine.roll(di * k as isize, dj * k as isize), k).unwrap();
            let p2 = average_pool(&fine, k).unwrap().roll(di, dj);
            for (x, y) in p1.data().iter().zip(p2.data().iter()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
