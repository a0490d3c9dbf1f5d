//! Gridded real-valued samples on the unit torus.
//!
//! Grid point `(i, j)` of an `H x W` field sits at physical location
//! `(x, y) = (j / W, i / H)`; storage is row-major `[C, H, W]`.

use ndarray::{s, Array3, Array4, ArrayView3, Axis};

use crate::error::{Error, Result};

/// A `[C, H, W]` field with every entry finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    data: Array3<f64>,
}

impl Field {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        let (c, h, w) = data.dim();
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::shape(format!("field dims must be >= 1, got [{c}, {h}, {w}]")));
        }
        check_finite(data.view())?;
        Ok(Self { data })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self { data: Array3::zeros((channels.max(1), height.max(1), width.max(1))) }
    }

    /// Samples `f(x, y)` for every channel at the canonical grid locations.
    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        f: impl Fn(usize, f64, f64) -> f64,
    ) -> Result<Self> {
        let data = Array3::from_shape_fn((channels, height, width), |(c, i, j)| {
            f(c, j as f64 / width as f64, i as f64 / height as f64)
        });
        Self::new(data)
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_inner(self) -> Array3<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> Result<Field> {
        if c >= self.channels() {
            return Err(Error::shape(format!("channel {c} out of range for {} channels", self.channels())));
        }
        Ok(Field { data: self.data.slice(s![c..c + 1, .., ..]).to_owned() })
    }

    pub fn mean(&self) -> f64 {
        self.data.mean().unwrap_or(0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Concatenates fields along the channel axis.
    pub fn concat(parts: &[&Field]) -> Result<Field> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat of zero fields"))?;
        let (h, w) = (first.height(), first.width());
        if let Some(bad) = parts.iter().find(|p| p.height() != h || p.width() != w) {
            return Err(Error::shape(format!(
                "cannot concat {}x{} with {}x{}",
                h,
                w,
                bad.height(),
                bad.width()
            )));
        }
        let views: Vec<_> = parts.iter().map(|p| p.data.view()).collect();
        let data = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::shape(e.to_string()))?;
        Ok(Field { data })
    }

    /// Whole-pixel periodic shift: `out[i, j] = self[i - di, j - dj]`.
    pub fn roll(&self, di: isize, dj: isize) -> Field {
        let (c, h, w) = self.dims();
        let data = Array3::from_shape_fn((c, h, w), |(k, i, j)| {
            let si = (i as isize - di).rem_euclid(h as isize) as usize;
            let sj = (j as isize - dj).rem_euclid(w as isize) as usize;
            self.data[[k, si, sj]]
        });
        Field { data }
    }
}

/// A `[C, T, H, W]` time window of fields spaced `dt` apart.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatioTemporalField {
    data: Array4<f64>,
    dt: f64,
}

impl SpatioTemporalField {
    pub fn new(data: Array4<f64>, dt: f64) -> Result<Self> {
        let (c, t, h, w) = data.dim();
        if c == 0 || t == 0 || h == 0 || w == 0 {
            return Err(Error::shape(format!("dims must be >= 1, got [{c}, {t}, {h}, {w}]")));
        }
        for k in 0..t {
            check_finite(data.index_axis(Axis(1), k))?;
        }
        Ok(Self { data, dt })
    }

    pub fn from_frames(frames: &[Field], dt: f64) -> Result<Self> {
        let first = frames.first().ok_or_else(|| Error::invalid("empty frame list"))?;
        let (c, h, w) = first.dims();
        let mut data = Array4::zeros((c, frames.len(), h, w));
        for (t, f) in frames.iter().enumerate() {
            if f.dims() != (c, h, w) {
                return Err(Error::shape(format!("frame {t} has dims {:?}, expected {:?}", f.dims(), (c, h, w))));
            }
            data.slice_mut(s![.., t, .., ..]).assign(f.data());
        }
        Ok(Self { data, dt })
    }

    pub fn frames(&self) -> usize {
        self.data.dim().1
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        self.data.dim()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn data(&self) -> &Array4<f64> {
        &self.data
    }

    pub fn into_inner(self) -> Array4<f64> {
        self.data
    }

    pub fn frame(&self, t: usize) -> Result<Field> {
        if t >= self.frames() {
            return Err(Error::shape(format!("frame {t} out of range for {} frames", self.frames())));
        }
        Ok(Field { data: self.data.index_axis(Axis(1), t).to_owned() })
    }
}

pub(crate) fn check_finite(data: ArrayView3<f64>) -> Result<()> {
    for ((channel, row, col), v) in data.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::NonFinite { channel, row, col });
        }
    }
    Ok(())
}
