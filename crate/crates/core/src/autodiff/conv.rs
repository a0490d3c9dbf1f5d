//! im2col-style kernels for strided convolutions over up to three spatial axes.
//!
//! Tensors are handled as `[B, C, D, H, W]`; 2D convolutions use `D = 1` with a
//! depth-1 kernel.

use ndarray::{Array2, Array5, ArrayView2, ArrayView5, Axis};
use serde::{Deserialize, Serialize};

const OUTSIDE: u32 = u32::MAX;

/// Border handling for one spatial axis of a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PadMode {
    /// No padding; the output shrinks by `k - 1`.
    Valid,
    /// Same-size padding with zeros.
    Zero,
    /// Same-size padding by wrap-around.
    Periodic,
    /// Same-size padding by repeating the edge sample.
    Replicate,
}

impl PadMode {
    fn pad(self, k: usize) -> usize {
        match self {
            PadMode::Valid => 0,
            _ => k / 2,
        }
    }

    fn map(self, i: isize, n: usize) -> Option<usize> {
        if (0..n as isize).contains(&i) {
            return Some(i as usize);
        }
        match self {
            PadMode::Valid | PadMode::Zero => None,
            PadMode::Periodic => Some(i.rem_euclid(n as isize) as usize),
            PadMode::Replicate => Some(i.clamp(0, n as isize - 1) as usize),
        }
    }
}

/// Output extent along one axis.
pub fn out_len(n: usize, k: usize, stride: usize, mode: PadMode) -> Option<usize> {
    let padded = n + 2 * mode.pad(k);
    if padded < k || stride == 0 {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// For every kernel offset and output position, the flat input index read
/// (or `OUTSIDE` for zero padding). Rows are kernel offsets, columns outputs.
pub(crate) struct IndexTable {
    pub out: [usize; 3],
    pub taps: usize,
    pub positions: usize,
    idx: Vec<u32>,
}

impl IndexTable {
    pub fn new(input: [usize; 3], kernel: [usize; 3], stride: usize, pads: [PadMode; 3]) -> Option<Self> {
        let mut out = [0; 3];
        for a in 0..3 {
            out[a] = out_len(input[a], kernel[a], stride, pads[a])?;
        }
        let taps = kernel.iter().product();
        let positions = out.iter().product();
        let mut idx = Vec::with_capacity(taps * positions);
        for kd in 0..kernel[0] {
            for kh in 0..kernel[1] {
                for kw in 0..kernel[2] {
                    for od in 0..out[0] {
                        let d = pads[0].map((od * stride + kd) as isize - pads[0].pad(kernel[0]) as isize, input[0]);
                        for oh in 0..out[1] {
                            let h = pads[1].map((oh * stride + kh) as isize - pads[1].pad(kernel[1]) as isize, input[1]);
                            for ow in 0..out[2] {
                                let w =
                                    pads[2].map((ow * stride + kw) as isize - pads[2].pad(kernel[2]) as isize, input[2]);
                                idx.push(match (d, h, w) {
                                    (Some(d), Some(h), Some(w)) => ((d * input[1] + h) * input[2] + w) as u32,
                                    _ => OUTSIDE,
                                });
                            }
                        }
                    }
                }
            }
        }
        Some(Self { out, taps, positions, idx })
    }

    /// Gathers `[Ci * taps, positions]` columns from one `[Ci, spatial]` sample.
    pub fn im2col(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let ci = x.nrows();
        let mut cols = Array2::zeros((ci * self.taps, self.positions));
        for c in 0..ci {
            let src = x.row(c);
            let src = src.as_slice().expect("contiguous rows");
            for t in 0..self.taps {
                let mut row = cols.row_mut(c * self.taps + t);
                let row = row.as_slice_mut().expect("contiguous");
                let map = &self.idx[t * self.positions..(t + 1) * self.positions];
                for (dst, &i) in row.iter_mut().zip(map) {
                    if i != OUTSIDE {
                        *dst = src[i as usize];
                    }
                }
            }
        }
        cols
    }

    /// Adjoint of [`im2col`]: scatter-adds columns back into `[Ci, spatial]`.
    pub fn col2im(&self, cols: ArrayView2<f64>, out: &mut Array2<f64>) {
        let ci = out.nrows();
        for c in 0..ci {
            let mut dst = out.row_mut(c);
            let dst = dst.as_slice_mut().expect("contiguous rows");
            for t in 0..self.taps {
                let row = cols.row(c * self.taps + t);
                let map = &self.idx[t * self.positions..(t + 1) * self.positions];
                for (v, &i) in row.iter().zip(map) {
                    if i != OUTSIDE {
                        dst[i as usize] += v;
                    }
                }
            }
        }
    }
}

fn flat_sample(x: &ArrayView5<f64>, b: usize) -> Array2<f64> {
    let (_, c, d, h, w) = x.dim();
    x.index_axis(Axis(0), b)
        .to_owned()
        .into_shape_with_order((c, d * h * w))
        .expect("contiguous sample")
}

/// Correlation `y[b, o] = sum_i w[o, i] * x[b, i] + bias[o]`.
pub fn conv_forward(
    x: ArrayView5<f64>,
    w: ArrayView5<f64>,
    bias: Option<&[f64]>,
    stride: usize,
    pads: [PadMode; 3],
) -> Option<Array5<f64>> {
    let (bsz, ci, d, h, wd) = x.dim();
    let (co, wci, kd, kh, kw) = w.dim();
    if wci != ci {
        return None;
    }
    let table = IndexTable::new([d, h, wd], [kd, kh, kw], stride, pads)?;
    let w2 = w.to_owned().into_shape_with_order((co, ci * table.taps)).ok()?;
    let [od, oh, ow] = table.out;
    let mut y = Array5::zeros((bsz, co, od, oh, ow));
    for b in 0..bsz {
        let cols = table.im2col(flat_sample(&x, b).view());
        let mut out = w2.dot(&cols);
        if let Some(bias) = bias {
            for (mut row, bv) in out.rows_mut().into_iter().zip(bias) {
                row += *bv;
            }
        }
        y.index_axis_mut(Axis(0), b)
            .assign(&out.into_shape_with_order((co, od, oh, ow)).expect("shape"));
    }
    Some(y)
}

/// Returns `(grad_x, grad_w, grad_bias)` for [`conv_forward`].
pub fn conv_backward(
    x: ArrayView5<f64>,
    w: ArrayView5<f64>,
    gy: ArrayView5<f64>,
    stride: usize,
    pads: [PadMode; 3],
    need_x: bool,
) -> (Option<Array5<f64>>, Array5<f64>, Vec<f64>) {
    let (bsz, ci, d, h, wd) = x.dim();
    let (co, _, kd, kh, kw) = w.dim();
    let table = IndexTable::new([d, h, wd], [kd, kh, kw], stride, pads).expect("validated in forward");
    let w2 = w.to_owned().into_shape_with_order((co, ci * table.taps)).expect("shape");
    let mut gw2 = Array2::<f64>::zeros((co, ci * table.taps));
    let mut gbias = vec![0.0; co];
    let mut gx = need_x.then(|| Array5::<f64>::zeros((bsz, ci, d, h, wd)));
    for b in 0..bsz {
        let g = flat_sample(&gy, b);
        for (o, row) in g.rows().into_iter().enumerate() {
            gbias[o] += row.sum();
        }
        let cols = table.im2col(flat_sample(&x, b).view());
        gw2 += &g.dot(&cols.t());
        if let Some(gx) = gx.as_mut() {
            let gcols = w2.t().dot(&g);
            let mut acc = Array2::zeros((ci, d * h * wd));
            table.col2im(gcols.view(), &mut acc);
            gx.index_axis_mut(Axis(0), b)
                .assign(&acc.into_shape_with_order((ci, d, h, wd)).expect("shape"));
        }
    }
    let gw = gw2.into_shape_with_order((co, ci, kd, kh, kw)).expect("shape");
    (gx, gw, gbias)
}

/// Transposed 2D convolution with kernel `[Ci, Co, k, k]`, no padding:
/// `y[b, o, ih * s + a, iw * s + c] += x[b, i, ih, iw] * w[i, o, a, c]`.
pub fn conv_transpose_forward(
    x: ndarray::ArrayView4<f64>,
    w: ndarray::ArrayView4<f64>,
    bias: Option<&[f64]>,
    stride: usize,
) -> Option<ndarray::Array4<f64>> {
    let (bsz, ci, h, wd) = x.dim();
    let (wci, co, kh, kw) = w.dim();
    if wci != ci || stride == 0 {
        return None;
    }
    let (oh, ow) = ((h - 1) * stride + kh, (wd - 1) * stride + kw);
    let w2 = w.to_owned().into_shape_with_order((ci, co * kh * kw)).ok()?;
    let mut y = ndarray::Array4::zeros((bsz, co, oh, ow));
    for b in 0..bsz {
        let xs = x.index_axis(Axis(0), b).to_owned().into_shape_with_order((ci, h * wd)).ok()?;
        let cols = w2.t().dot(&xs);
        let mut out = y.index_axis_mut(Axis(0), b);
        for o in 0..co {
            for a in 0..kh {
                for c in 0..kw {
                    let row = cols.row((o * kh + a) * kw + c);
                    for ih in 0..h {
                        for iw in 0..wd {
                            out[[o, ih * stride + a, iw * stride + c]] += row[ih * wd + iw];
                        }
                    }
                }
            }
            if let Some(bias) = bias {
                out.index_axis_mut(Axis(0), o).mapv_inplace(|v| v + bias[o]);
            }
        }
    }
    Some(y)
}

pub fn conv_transpose_backward(
    x: ndarray::ArrayView4<f64>,
    w: ndarray::ArrayView4<f64>,
    gy: ndarray::ArrayView4<f64>,
    stride: usize,
    need_x: bool,
) -> (Option<ndarray::Array4<f64>>, ndarray::Array4<f64>, Vec<f64>) {
    let (bsz, ci, h, wd) = x.dim();
    let (_, co, kh, kw) = w.dim();
    let w2 = w.to_owned().into_shape_with_order((ci, co * kh * kw)).expect("shape");
    let mut gw2 = Array2::<f64>::zeros((ci, co * kh * kw));
    let mut gbias = vec![0.0; co];
    let mut gx = need_x.then(|| ndarray::Array4::<f64>::zeros((bsz, ci, h, wd)));
    for b in 0..bsz {
        let g = gy.index_axis(Axis(0), b);
        let mut gcols = Array2::zeros((co * kh * kw, h * wd));
        for o in 0..co {
            gbias[o] += g.index_axis(Axis(0), o).sum();
            for a in 0..kh {
                for c in 0..kw {
                    let mut row = gcols.row_mut((o * kh + a) * kw + c);
                    for ih in 0..h {
                        for iw in 0..wd {
                            row[ih * wd + iw] = g[[o, ih * stride + a, iw * stride + c]];
                        }
                    }
                }
            }
        }
        let xs = x.index_axis(Axis(0), b).to_owned().into_shape_with_order((ci, h * wd)).expect("shape");
        gw2 += &xs.dot(&gcols.t());
        if let Some(gx) = gx.as_mut() {
            let gxs = w2.dot(&gcols);
            gx.index_axis_mut(Axis(0), b)
                .assign(&gxs.into_shape_with_order((ci, h, wd)).expect("shape"));
        }
    }
    (gx, gw2.into_shape_with_order((ci, co, kh, kw)).expect("shape"), gbias)
}
