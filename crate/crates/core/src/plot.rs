//! PNG figures: training curves and prediction / truth / difference panels.

use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

const BG: Rgb<u8> = Rgb([255, 255, 255]);
const AXIS: Rgb<u8> = Rgb([60, 60, 60]);
const SERIES: [Rgb<u8>; 4] = [Rgb([31, 119, 180]), Rgb([214, 39, 40]), Rgb([44, 160, 44]), Rgb([148, 103, 189])];

fn save(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|e| Error::Format(format!("cannot write {}: {e}", path.display())))
}

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, c);
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Line plot of each series against its index, y on a log10 axis when every
/// value is positive. Non-finite points are skipped.
pub fn plot_curves(series: &[Vec<f64>], path: &Path) -> Result<()> {
    let (w, h, m) = (640u32, 400u32, 40i64);
    let all: Vec<f64> = series.iter().flatten().copied().filter(|v| v.is_finite()).collect();
    if all.is_empty() {
        return Err(Error::Data("nothing to plot".into()));
    }
    let log = all.iter().all(|&v| v > 0.0);
    let tf = |v: f64| if log { v.log10() } else { v };
    let lo = all.iter().map(|&v| tf(v)).fold(f64::INFINITY, f64::min);
    let hi = all.iter().map(|&v| tf(v)).fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let n = series.iter().map(Vec::len).max().unwrap_or(1).max(2);
    let mut img = RgbImage::from_pixel(w, h, BG);
    let (x0, x1, y0, y1) = (m, w as i64 - m / 2, h as i64 - m, m / 2);
    line(&mut img, (x0, y0), (x1, y0), AXIS);
    line(&mut img, (x0, y0), (x0, y1), AXIS);
    for (k, s) in series.iter().enumerate() {
        let mut prev = None;
        for (i, &v) in s.iter().enumerate() {
            if !v.is_finite() {
                prev = None;
                continue;
            }
            let px = x0 + ((x1 - x0) as f64 * i as f64 / (n - 1) as f64).round() as i64;
            let py = y0 - ((y0 - y1) as f64 * (tf(v) - lo) / span).round() as i64;
            if let Some(p) = prev {
                line(&mut img, p, (px, py), SERIES[k % SERIES.len()]);
            }
            prev = Some((px, py));
        }
    }
    save(&img, path)
}

fn viridis(t: f64) -> Rgb<u8> {
    // Piecewise-linear through five anchor colors.
    const A: [[f64; 3]; 5] = [[68., 1., 84.], [59., 82., 139.], [33., 145., 140.], [94., 201., 98.], [253., 231., 37.]];
    let t = t.clamp(0.0, 1.0) * 4.0;
    let i = (t.floor() as usize).min(3);
    let f = t - i as f64;
    Rgb(std::array::from_fn(|c| (A[i][c] + f * (A[i + 1][c] - A[i][c])).round() as u8))
}

fn diverging(t: f64) -> Rgb<u8> {
    // t in [-1, 1]: blue, white, red.
    let t = t.clamp(-1.0, 1.0);
    let a = (255.0 * (1.0 - t.abs())).round() as u8;
    if t >= 0.0 {
        Rgb([255, a, a])
    } else {
        Rgb([a, a, 255])
    }
}

fn upscale(field: ArrayView2<f64>, cell: u32, img: &mut RgbImage, ox: u32, oy: u32, color: impl Fn(f64) -> Rgb<u8>) {
    for ((i, j), &v) in field.indexed_iter() {
        let c = color(v);
        for di in 0..cell {
            for dj in 0..cell {
                img.put_pixel(ox + j as u32 * cell + dj, oy + i as u32 * cell + di, c);
            }
        }
    }
}

/// One row per channel: prediction | ground truth | difference. Prediction
/// and truth share a color scale; the difference is symmetric about zero.
pub fn plot_panels(pred: &[Array2<f64>], truth: &[Array2<f64>], path: &Path) -> Result<()> {
    if pred.len() != truth.len() || pred.is_empty() || pred.iter().zip(truth).any(|(p, t)| p.dim() != t.dim()) {
        return Err(Error::shape("prediction and truth panels must match"));
    }
    let (h, w) = pred[0].dim();
    if pred.iter().any(|p| p.dim() != (h, w)) {
        return Err(Error::shape("all panels must share one grid"));
    }
    let cell = (256 / h.max(w)).max(1) as u32;
    let gap = 8u32;
    let (pw, ph) = (w as u32 * cell, h as u32 * cell);
    let mut img = RgbImage::from_pixel(3 * pw + 4 * gap, pred.len() as u32 * (ph + gap) + gap, BG);
    for (c, (p, t)) in pred.iter().zip(truth).enumerate() {
        let lo = p.iter().chain(t.iter()).copied().fold(f64::INFINITY, f64::min);
        let hi = p.iter().chain(t.iter()).copied().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let diff = p - t;
        let dmax = diff.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let oy = gap + c as u32 * (ph + gap);
        upscale(p.view(), cell, &mut img, gap, oy, |v| viridis((v - lo) / span));
        upscale(t.view(), cell, &mut img, 2 * gap + pw, oy, |v| viridis((v - lo) / span));
        upscale(diff.view(), cell, &mut img, 3 * gap + 2 * pw, oy, |v| diverging(v / dmax));
    }
    save(&img, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_pngs() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.png");
        plot_curves(&[vec![1.0, 0.5, 0.2, f64::NAN, 0.1], vec![0.8, 0.6]], &p).unwrap();
        let img = image::open(&p).unwrap();
        assert_eq!((img.width(), img.height()), (640, 400));
        let a = Array2::from_shape_fn((16, 16), |(i, j)| (i * j) as f64);
        let b = a.mapv(|v| v + 1.0);
        let q = dir.path().join("p.png");
        plot_panels(&[a.clone(), a.clone()], &[b.clone(), b], &q).unwrap();
        let img = image::open(&q).unwrap();
        assert_eq!(img.width(), 3 * 256 + 32);
        assert!(plot_curves(&[vec![f64::NAN]], &p).is_err());
        assert!(plot_panels(&[a], &[], &q).is_err());
    }
}
