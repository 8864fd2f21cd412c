//! PSNR, SSIM and average end-point error.
//!
//! Images are quantised to 8 bits (round half up) before PSNR/SSIM. The Y
//! channel uses full-swing BT.601 luma `0.299 R + 0.587 G + 0.114 B` on the
//! 0–255 scale, kept in double precision. No border is shaved.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::descriptor::CorrespondenceField;
use crate::error::{contract, Error, Result};
use crate::image::ImageTensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Channel {
    Y,
    Rgb,
}

impl Channel {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "Y" | "y" => Ok(Channel::Y),
            "RGB" | "rgb" => Ok(Channel::Rgb),
            _ => Err(Error::Config(format!("unknown channel mode {s:?}; expected Y or RGB"))),
        }
    }
}

pub const Y_COEFFS: [f64; 3] = [0.299, 0.587, 0.114];

/// Full-swing luma of an 8-bit RGB triple.
pub fn luma(r: u8, g: u8, b: u8) -> f64 {
    Y_COEFFS[0] * r as f64 + Y_COEFFS[1] * g as f64 + Y_COEFFS[2] * b as f64
}

/// Planes compared by the metrics, each `h·w` values on the 0–255 scale.
fn planes(img: &ImageTensor, mode: Channel) -> Vec<Vec<f64>> {
    let q: Vec<u8> = img.to_u8();
    let (n, c) = (img.height() * img.width(), img.channels());
    match (mode, c) {
        (_, 1) => vec![q.iter().map(|&v| v as f64).collect()],
        (Channel::Y, _) => vec![(0..n).map(|i| luma(q[3 * i], q[3 * i + 1], q[3 * i + 2])).collect()],
        (Channel::Rgb, _) => (0..c).map(|ch| (0..n).map(|i| q[i * c + ch] as f64).collect()).collect(),
    }
}

fn same_shape(a: &ImageTensor, b: &ImageTensor) -> Result<()> {
    if (a.height(), a.width(), a.channels()) != (b.height(), b.width(), b.channels()) {
        return Err(contract!(
            "image shapes differ: {}x{}x{} vs {}x{}x{}",
            a.height(),
            a.width(),
            a.channels(),
            b.height(),
            b.width(),
            b.channels()
        ));
    }
    Ok(())
}

/// Mean squared error on the quantised planes.
pub fn mse(a: &ImageTensor, b: &ImageTensor, mode: Channel) -> Result<f64> {
    same_shape(a, b)?;
    let (pa, pb) = (planes(a, mode), planes(b, mode));
    let mut s = 0.0;
    let mut n = 0usize;
    for (x, y) in pa.iter().zip(&pb) {
        for (u, v) in x.iter().zip(y) {
            s += (u - v) * (u - v);
        }
        n += x.len();
    }
    Ok(s / n as f64)
}

/// `10·log10(255² / MSE)`; identical images give `+∞`.
pub fn psnr(a: &ImageTensor, b: &ImageTensor, mode: Channel) -> Result<f64> {
    let m = mse(a, b, mode)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * libm::log10(255.0 * 255.0 / m))
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW).map(|i| libm::exp(-((i as f64 - r) * (i as f64 - r)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA))).collect();
    let s: f64 = g.iter().sum();
    g.iter().map(|v| v / s).collect()
}

/// Separable valid-window filtering of an `h×w` plane.
fn filter_valid(p: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|j| k[j] * p[y * w + x + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|j| k[j] * rows[(y + j) * ow + x]).sum();
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let k = gaussian_window();
    let c1 = (0.01f64 * 255.0) * (0.01 * 255.0);
    let c2 = (0.03f64 * 255.0) * (0.03 * 255.0);
    let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(u, v)| u * v).collect() };
    let ma = filter_valid(a, h, w, &k);
    let mb = filter_valid(b, h, w, &k);
    let aa = filter_valid(&prod(a, a), h, w, &k);
    let bb = filter_valid(&prod(b, b), h, w, &k);
    let ab = filter_valid(&prod(a, b), h, w, &k);
    let mut s = 0.0;
    for i in 0..ma.len() {
        let (mu_a, mu_b) = (ma[i], mb[i]);
        let va = aa[i] - mu_a * mu_a;
        let vb = bb[i] - mu_b * mu_b;
        let cov = ab[i] - mu_a * mu_b;
        s += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (va + vb + c2));
    }
    s / ma.len() as f64
}

/// Structural similarity with an 11×11 Gaussian window (σ = 1.5),
/// `K1 = 0.01`, `K2 = 0.03`, `L = 255`, averaged over valid windows (and over
/// channels in RGB mode).
pub fn ssim(a: &ImageTensor, b: &ImageTensor, mode: Channel) -> Result<f64> {
    same_shape(a, b)?;
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Domain(format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images, got {h}x{w}")));
    }
    let (pa, pb) = (planes(a, mode), planes(b, mode));
    let total: f64 = pa.iter().zip(&pb).map(|(x, y)| ssim_plane(x, y, h, w)).sum();
    Ok(total / pa.len() as f64)
}

/// Mean Euclidean distance between predicted and valid ground-truth points.
pub fn aee_points(pred: &[(f64, f64)], gt: &[Option<(f64, f64)>]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(contract!("lattices differ: {} vs {} cells", pred.len(), gt.len()));
    }
    let mut s = 0.0;
    let mut n = 0usize;
    for (p, g) in pred.iter().zip(gt) {
        if let Some(g) = g {
            s += libm::hypot(p.0 - g.0, p.1 - g.1);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::NoValidPoints("AEE needs at least one valid cell".into()));
    }
    Ok(s / n as f64)
}

/// AEE of a correspondence field in grid cells.
pub fn aee(pred: &CorrespondenceField, gt: &[Option<(f64, f64)>]) -> Result<f64> {
    let pts: Vec<(f64, f64)> = pred.targets.iter().map(|t| (t[0] as f64, t[1] as f64)).collect();
    aee_points(&pts, gt)
}

/// Arithmetic mean (used for report aggregates).
pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}
