//! Losses and image-quality metrics.

use ndarray::{Array2, ArrayView2, ArrayViewD, Axis};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    L1,
    L2,
}

impl Loss {
    pub fn tag(self) -> &'static str {
        match self {
            Loss::L1 => "l1",
            Loss::L2 => "l2",
        }
    }

    /// Differentiable mean loss between two graph values of equal shape.
    pub fn build(self, g: &mut Graph, pred: Var, target: Var) -> Result<Var> {
        if g.shape(pred) != g.shape(target) {
            return Err(Error::shape(format!("loss operands {:?} and {:?} differ", g.shape(pred), g.shape(target))));
        }
        let d = g.sub(pred, target)?;
        match self {
            Loss::L1 => g.mean_abs(d),
            Loss::L2 => g.mean_square(d),
        }
    }
}

impl std::fmt::Display for Loss {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

impl std::str::FromStr for Loss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" | "mae" => Ok(Loss::L1),
            "l2" | "mse" => Ok(Loss::L2),
            _ => Err(Error::invalid(format!("unknown loss `{s}` (expected l1 or l2)"))),
        }
    }
}

fn check_pair(a: &ArrayViewD<f64>, b: &ArrayViewD<f64>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("metric operands {:?} and {:?} differ", a.shape(), b.shape())));
    }
    if a.is_empty() {
        return Err(Error::shape("metric on empty arrays"));
    }
    Ok(())
}

pub fn mae(pred: ArrayViewD<f64>, target: ArrayViewD<f64>) -> Result<f64> {
    check_pair(&pred, &target)?;
    Ok(pred.iter().zip(target.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>() / pred.len() as f64)
}

pub fn mse(pred: ArrayViewD<f64>, target: ArrayViewD<f64>) -> Result<f64> {
    check_pair(&pred, &target)?;
    Ok(pred.iter().zip(target.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / pred.len() as f64)
}

/// Peak signal-to-noise ratio in dB; identical inputs give `+inf`.
pub fn psnr(pred: ArrayViewD<f64>, target: ArrayViewD<f64>, peak: f64) -> Result<f64> {
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::invalid(format!("PSNR peak must be positive, got {peak}")));
    }
    let m = mse(pred, target)?;
    Ok(if m == 0.0 { f64::INFINITY } else { 10.0 * (peak * peak / m).log10() })
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let w: Vec<f64> = (0..SSIM_WINDOW).map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Gaussian-weighted local mean along axis 0, truncating the window at the
/// image edge and renormalizing the remaining weights.
fn smooth_rows(x: ArrayView2<f64>, w: &[f64]) -> Array2<f64> {
    let (h, wd) = x.dim();
    let r = (w.len() / 2) as isize;
    let mut out = Array2::zeros((h, wd));
    for i in 0..h {
        let mut norm = 0.0;
        for (t, &wt) in w.iter().enumerate() {
            let k = i as isize + t as isize - r;
            if k < 0 || k >= h as isize {
                continue;
            }
            norm += wt;
            out.row_mut(i).scaled_add(wt, &x.row(k as usize));
        }
        out.row_mut(i).mapv_inplace(|v| v / norm);
    }
    out
}

fn smooth(x: &Array2<f64>, w: &[f64]) -> Array2<f64> {
    let rows = smooth_rows(x.view(), w);
    smooth_rows(rows.t(), w).reversed_axes()
}

/// Mean SSIM of one 2-D image pair with dynamic range `range`.
pub fn ssim2d(a: ArrayView2<f64>, b: ArrayView2<f64>, range: f64) -> Result<f64> {
    if a.shape() != b.shape() || a.is_empty() {
        return Err(Error::shape(format!("SSIM operands {:?} and {:?}", a.shape(), b.shape())));
    }
    if !(range > 0.0 && range.is_finite()) {
        return Err(Error::invalid(format!("SSIM range must be positive, got {range}")));
    }
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let w = gaussian_window();
    let (a, b) = (a.to_owned(), b.to_owned());
    let mu_a = smooth(&a, &w);
    let mu_b = smooth(&b, &w);
    let saa = smooth(&(&a * &a), &w);
    let sbb = smooth(&(&b * &b), &w);
    let sab = smooth(&(&a * &b), &w);
    let mut total = 0.0;
    for idx in 0..a.len() {
        let (i, j) = (idx / a.ncols(), idx % a.ncols());
        let (ma, mb) = (mu_a[[i, j]], mu_b[[i, j]]);
        let va = saa[[i, j]] - ma * ma;
        let vb = sbb[[i, j]] - mb * mb;
        let cov = sab[[i, j]] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / a.len() as f64)
}

/// SSIM over the trailing two axes of `[..., C, H, W]`-style arrays, averaged
/// over every leading slice. `channel_axis` selects the per-channel range.
pub fn ssim(pred: ArrayViewD<f64>, target: ArrayViewD<f64>, channel_axis: usize, ranges: &[f64]) -> Result<f64> {
    check_pair(&pred, &target)?;
    let n = pred.ndim();
    if n < 3 || channel_axis >= n - 2 || ranges.len() != pred.shape()[channel_axis] {
        return Err(Error::shape(format!(
            "SSIM needs a channel axis before [H, W] and one range per channel; got {:?}, axis {channel_axis}, {} ranges",
            pred.shape(),
            ranges.len()
        )));
    }
    let (mut total, mut count) = (0.0, 0usize);
    for (c, &range) in ranges.iter().enumerate() {
        let p = pred.index_axis(Axis(channel_axis), c);
        let t = target.index_axis(Axis(channel_axis), c);
        let (h, w) = (p.shape()[p.ndim() - 2], p.shape()[p.ndim() - 1]);
        let p = p.to_shape((p.len() / (h * w), h, w)).map_err(|e| Error::shape(e.to_string()))?;
        let t = t.to_shape((t.len() / (h * w), h, w)).map_err(|e| Error::shape(e.to_string()))?;
        for (pi, ti) in p.outer_iter().zip(t.outer_iter()) {
            total += ssim2d(pi, ti, range)?;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Per-channel PSNR (each with its own peak), averaged over channels.
pub fn psnr_channels(pred: ArrayViewD<f64>, target: ArrayViewD<f64>, channel_axis: usize, peaks: &[f64]) -> Result<f64> {
    check_pair(&pred, &target)?;
    if channel_axis >= pred.ndim() || peaks.len() != pred.shape()[channel_axis] {
        return Err(Error::shape(format!("PSNR needs one peak per channel, got {} for {:?}", peaks.len(), pred.shape())));
    }
    let mut total = 0.0;
    for (c, &peak) in peaks.iter().enumerate() {
        total += psnr(pred.index_axis(Axis(channel_axis), c), target.index_axis(Axis(channel_axis), c), peak)?;
    }
    Ok(total / peaks.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check::check_gradients;
    use ndarray::{Array, Array4, IxDyn};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal, Uniform};

    /// Direct double loop over every window position.
    fn naive_ssim(a: &Array2<f64>, b: &Array2<f64>, range: f64) -> f64 {
        let (h, w) = a.dim();
        let r = (SSIM_WINDOW / 2) as isize;
        let c1 = (SSIM_K1 * range).powi(2);
        let c2 = (SSIM_K2 * range).powi(2);
        let mut total = 0.0;
        for i in 0..h as isize {
            for j in 0..w as isize {
                let (mut sw, mut ma, mut mb) = (0.0, 0.0, 0.0);
                let mut pts = Vec::new();
                for di in -r..=r {
                    for dj in -r..=r {
                        let (y, x) = (i + di, j + dj);
                        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                            continue;
                        }
                        let wt = (-((di * di + dj * dj) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
                        let (va, vb) = (a[[y as usize, x as usize]], b[[y as usize, x as usize]]);
                        sw += wt;
                        ma += wt * va;
                        mb += wt * vb;
                        pts.push((wt, va, vb));
                    }
                }
                ma /= sw;
                mb /= sw;
                let (mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0);
                for (wt, va, vb) in pts {
                    saa += wt * (va - ma).powi(2);
                    sbb += wt * (vb - mb).powi(2);
                    sab += wt * (va - ma) * (vb - mb);
                }
                let (saa, sbb, sab) = (saa / sw, sbb / sw, sab / sw);
                total += ((2.0 * ma * mb + c1) * (2.0 * sab + c2)) / ((ma * ma + mb * mb + c1) * (saa + sbb + c2));
            }
        }
        total / (h * w) as f64
    }

    #[test]
    fn ssim_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let u = Uniform::new(0.0, 1.0).unwrap();
        let mut worst: f64 = 0.0;
        for _ in 0..50 {
            let a = Array2::from_shape_simple_fn((8, 8), || u.sample(&mut rng));
            let noise = Array2::from_shape_simple_fn((8, 8), || 0.2 * u.sample(&mut rng));
            let b = &a + &noise;
            let fast = ssim2d(a.view(), b.view(), 1.0).unwrap();
            worst = worst.max((fast - naive_ssim(&a, &b, 1.0)).abs());
        }
        assert!(worst <= 1e-6, "{worst}");
        let big = Array2::from_shape_fn((20, 13), |(i, j)| ((i * 7 + j * 3) % 5) as f64);
        let other = big.mapv(|v| v * 0.9 + 0.1);
        let d = ssim2d(big.view(), other.view(), 4.0).unwrap() - naive_ssim(&big, &other, 4.0);
        assert!(d.abs() <= 1e-10, "{d}");
    }

    #[test]
    fn self_similarity() {
        let x = Array4::from_shape_fn((2, 2, 9, 9), |(b, c, i, j)| (b + c * 3 + i * j) as f64).into_dyn();
        assert_eq!(ssim(x.view(), x.view(), 1, &[1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(psnr(x.view(), x.view(), 1.0).unwrap(), f64::INFINITY);
        assert_eq!(mae(x.view(), x.view()).unwrap(), 0.0);
        assert_eq!(mse(x.view(), x.view()).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset_and_formula() {
        let a = Array::from_elem(IxDyn(&[3, 4]), 1.0);
        let b = a.mapv(|v| v + 0.5);
        assert_eq!(mae(b.view(), a.view()).unwrap(), 0.5);
        assert_eq!(mse(b.view(), a.view()).unwrap(), 0.25);
        let c = a.mapv(|v| v + 0.1);
        assert!((psnr(c.view(), a.view(), 1.0).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(c.view(), a.view(), 0.0).is_err());
        assert!(mse(a.view(), Array::zeros(IxDyn(&[4, 3])).view()).is_err());
    }

    #[test]
    fn psnr_decreases_with_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array::from_shape_simple_fn(IxDyn(&[1, 1, 16, 16]), || StandardNormal.sample(&mut rng));
        let e: ndarray::ArrayD<f64> = Array::from_shape_simple_fn(IxDyn(&[1, 1, 16, 16]), || StandardNormal.sample(&mut rng));
        let vals: Vec<f64> = [0.01, 0.02, 0.04].iter().map(|&s| psnr((&x + &(&e * s)).view(), x.view(), 2.0).unwrap()).collect();
        assert!(vals[0] > vals[1] && vals[1] > vals[2], "{vals:?}");
    }

    #[test]
    fn mse_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = Array::from_shape_simple_fn(IxDyn(&[2, 3]), || StandardNormal.sample(&mut rng));
        let t: ndarray::ArrayD<f64> = Array::from_shape_simple_fn(IxDyn(&[2, 3]), || StandardNormal.sample(&mut rng));
        let mut g = Graph::new();
        let pv = g.input(p.clone());
        let tv = g.constant(t.clone());
        let l = Loss::L2.build(&mut g, pv, tv).unwrap();
        g.backward(l).unwrap();
        let expected = (&p - &t) * (2.0 / 6.0);
        let got = g.real_grad(pv).unwrap();
        assert!(got.iter().zip(expected.iter()).all(|(a, b)| (a - b).abs() < 1e-14));
        for loss in [Loss::L1, Loss::L2] {
            let check = check_gradients(&[p.clone(), t.clone()], 1e-6, 10, 0, |g, v| loss.build(g, v[0], v[1])).unwrap();
            assert!(check.max_rel_error() <= 1e-6, "{loss}: {:?}", check.rel_errors);
        }
    }
}
