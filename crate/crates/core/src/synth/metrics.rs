use serde::{Deserialize, Serialize};

use crate::image::{DepthMap, Image};
use crate::knn::nearest_distances;
use crate::linalg::Vec3;

/// `−10 log10(MSE)` over all channels; `+∞` for identical images.
pub fn psnr(a: &Image, b: &Image) -> f64 {
    assert_eq!((a.width, a.height), (b.width, b.height), "image size mismatch");
    let n = (a.pixels.len() * 3) as f64;
    let mse: f64 = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(p, q)| (0..3).map(|k| (p[k] - q[k]).powi(2)).sum::<f64>())
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_window(size: usize) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Mean SSIM over the valid region of an 11×11 Gaussian window (σ = 1.5),
/// averaged over channels. Images smaller than the window use the largest
/// odd window that fits.
pub fn ssim(a: &Image, b: &Image) -> f64 {
    assert_eq!((a.width, a.height), (b.width, b.height), "image size mismatch");
    let (w, h) = (a.width as usize, a.height as usize);
    let mut size = SSIM_WINDOW.min(w).min(h);
    if size % 2 == 0 {
        size -= 1;
    }
    let g = gaussian_window(size);
    let (ow, oh) = (w - size + 1, h - size + 1);
    let mut total = 0.0;
    for ch in 0..3 {
        let x: Vec<f64> = a.pixels.iter().map(|p| p[ch]).collect();
        let y: Vec<f64> = b.pixels.iter().map(|p| p[ch]).collect();
        let mut sum = 0.0;
        for r in 0..oh {
            for c in 0..ow {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..size {
                    for j in 0..size {
                        let wgt = g[i] * g[j];
                        let idx = (r + i) * w + c + j;
                        let (xv, yv) = (x[idx], y[idx]);
                        mx += wgt * xv;
                        my += wgt * yv;
                        sxx += wgt * xv * xv;
                        syy += wgt * yv * yv;
                        sxy += wgt * xv * yv;
                    }
                }
                let vx = sxx - mx * mx;
                let vy = syy - my * my;
                let cxy = sxy - mx * my;
                sum += ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                    / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
            }
        }
        total += sum / (ow * oh) as f64;
    }
    total / 3.0
}

/// Mean `|pred − gt| / far` over pixels with finite ground truth; 0 when
/// there are none.
pub fn depth_mae(pred: &DepthMap, gt: &DepthMap, far: f64) -> f64 {
    assert_eq!((pred.width, pred.height), (gt.width, gt.height), "depth size mismatch");
    let (mut s, mut n) = (0.0, 0usize);
    for (p, g) in pred.values.iter().zip(&gt.values) {
        if g.is_finite() {
            s += (p - g).abs() / far;
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Symmetric Chamfer distance: the average of the two mean nearest-neighbour
/// Euclidean distances.
pub fn chamfer_l1(a: &[Vec3<f64>], b: &[Vec3<f64>]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    if a.is_empty() || b.is_empty() {
        return f64::INFINITY;
    }
    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    0.5 * (mean(nearest_distances(a, b)) + mean(nearest_distances(b, a)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
    pub depth_mae: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub psnr: f64,
    pub ssim: f64,
    pub depth_mae: f64,
    /// Between the predicted surface points and ground-truth surface points.
    pub chamfer_l1: Option<f64>,
    pub per_view: Vec<ViewMetrics>,
}

impl EvalReport {
    /// Averages per-view metrics.
    pub fn from_views(per_view: Vec<ViewMetrics>, chamfer_l1: Option<f64>) -> Self {
        let n = per_view.len().max(1) as f64;
        Self {
            psnr: per_view.iter().map(|v| v.psnr).sum::<f64>() / n,
            ssim: per_view.iter().map(|v| v.ssim).sum::<f64>() / n,
            depth_mae: per_view.iter().map(|v| v.depth_mae).sum::<f64>() / n,
            chamfer_l1,
            per_view,
        }
    }
}
