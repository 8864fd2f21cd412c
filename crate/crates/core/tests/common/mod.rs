#![allow(dead_code)]

pub mod gradcheck;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use refsr_core::descriptor::{DescriptorGrid, Role};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
}

pub fn grid(h: usize, w: usize, d: usize, data: Vec<f32>) -> DescriptorGrid {
    DescriptorGrid::new(h, w, d, 4, Role::Hr, data).unwrap()
}

pub fn random_grid(r: &mut ChaCha8Rng, h: usize, w: usize, d: usize) -> DescriptorGrid {
    grid(h, w, d, (0..h * w * d).map(|_| r.random_range(-1.0f32..1.0)).collect())
}

/// Central differences of `f` at `x`.
pub fn fd_grad(x: &[f64], step: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let v = x[i];
            x[i] = v + step;
            let fp = f(&x);
            x[i] = v - step;
            let fm = f(&x);
            x[i] = v;
            (fp - fm) / (2.0 * step)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Exhaustive cosine-similarity argmax with lowest-index ties.
pub fn brute_match(a: &DescriptorGrid, b: &DescriptorGrid) -> Vec<(usize, f64)> {
    let unit = |g: &DescriptorGrid, p: usize| -> Vec<f64> {
        let n = g.cells();
        let v: Vec<f64> = (0..g.d).map(|c| g.data[c * n + p] as f64).collect();
        let s = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| if s > 0.0 { x / s } else { 0.0 }).collect()
    };
    (0..a.cells())
        .map(|p| {
            let u = unit(a, p);
            let mut best = (0usize, f64::NEG_INFINITY);
            for q in 0..b.cells() {
                let s: f64 = u.iter().zip(unit(b, q)).map(|(x, y)| x * y).sum();
                if s > best.1 {
                    best = (q, s);
                }
            }
            best
        })
        .collect()
}

/// Direct softmax of cosine similarities over `τ`.
pub fn brute_volume(a: &DescriptorGrid, b: &DescriptorGrid, tau: f64) -> Vec<f64> {
    let unit = |g: &DescriptorGrid, p: usize| -> Vec<f64> {
        let n = g.cells();
        let v: Vec<f64> = (0..g.d).map(|c| g.data[c * n + p] as f64).collect();
        let s = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| if s > 0.0 { x / s } else { 0.0 }).collect()
    };
    let mut out = Vec::new();
    for p in 0..a.cells() {
        let u = unit(a, p);
        let e: Vec<f64> = (0..b.cells()).map(|q| (u.iter().zip(unit(b, q)).map(|(x, y)| x * y).sum::<f64>() / tau).exp()).collect();
        let s: f64 = e.iter().sum();
        out.extend(e.iter().map(|v| v / s));
    }
    out
}
