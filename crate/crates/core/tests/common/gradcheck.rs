//! Finite-difference gradient checks of the f64 loss and aggregation kernels.
//! Each routine returns the norm-wise relative errors of `count` accepted
//! instances; instances too close to a kink or tie are redrawn.

use rand::Rng;
use refsr_core::kernels::deform::{deform_backward, deform_forward, DeformGeom, DeformGrads};
use refsr_core::kernels::losses::{charbonnier, correlation_kl, correlation_softmax, normalize_columns, perceptual, triplet_margin, TripletParams};

use super::{fd_grad, rel_err, rng, uniform};

const STEP: f64 = 1e-6;
/// Instances whose hinge or negative ranking is closer than this to a switch
/// are skipped.
const KINK_GAP: f64 = 1e-3;

fn sqdist(x: &[f64], nx: usize, i: usize, y: &[f64], ny: usize, j: usize, d: usize) -> f64 {
    (0..d).map(|c| (x[c * nx + i] - y[c * ny + j]).powi(2)).sum()
}

/// Smallest distance from a hinge or negative-selection switch.
fn margin_gap(a: &[f64], la: (usize, usize), b: &[f64], lb: (usize, usize), d: usize, gt: &[Option<(f64, f64)>], p: &TripletParams) -> f64 {
    let (n, m) = (la.0 * la.1, lb.0 * lb.1);
    let mut gap = f64::INFINITY;
    for (i, g) in gt.iter().enumerate() {
        let Some((gx, gy)) = *g else { continue };
        let q = gy.round() as usize * lb.1 + gx.round() as usize;
        let mut negs: Vec<f64> = Vec::new();
        for k in 0..m {
            let (kx, ky) = ((k % lb.1) as f64, (k / lb.1) as f64);
            if (kx - gx).abs().max((ky - gy).abs()) > p.threshold {
                negs.push(sqdist(a, n, i, b, m, k, d));
            }
        }
        let (px, py) = ((i % la.1) as f64, (i / la.1) as f64);
        for k in 0..n {
            let (kx, ky) = ((k % la.1) as f64, (k / la.1) as f64);
            if (kx - px).abs().max((ky - py).abs()) > p.threshold {
                negs.push(sqdist(a, n, k, b, m, q, d));
            }
        }
        negs.sort_by(f64::total_cmp);
        if negs.len() > 1 {
            gap = gap.min(negs[1] - negs[0]);
        }
        let pos = sqdist(a, n, i, b, m, q, d);
        gap = gap.min((p.margin + pos - negs[0]).abs());
    }
    gap
}

pub fn margin(count: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    let params = TripletParams { margin: 1.0, threshold: 1.0 };
    let (la, lb, d) = ((3, 4), (4, 3), 4);
    let mut out = Vec::new();
    while out.len() < count {
        let a: Vec<f64> = uniform(&mut r, d * 12).iter().map(|v| 0.5 * v).collect();
        let b: Vec<f64> = uniform(&mut r, d * 12).iter().map(|v| 0.5 * v).collect();
        let gt: Vec<_> = (0..12).map(|_| Some((r.random_range(0.0..2.4), r.random_range(0.0..3.4)))).collect();
        if margin_gap(&a, la, &b, lb, d, &gt, &params) < KINK_GAP {
            continue;
        }
        let mut da = vec![0.0; a.len()];
        let mut db = vec![0.0; b.len()];
        triplet_margin(&a, la, &b, lb, d, &gt, &params, Some(&mut da), Some(&mut db), 1.0).unwrap();
        let fa = fd_grad(&a, STEP, |x| triplet_margin(x, la, &b, lb, d, &gt, &params, None, None, 1.0).unwrap());
        let fb = fd_grad(&b, STEP, |x| triplet_margin(&a, la, x, lb, d, &gt, &params, None, None, 1.0).unwrap());
        out.push(rel_err(&[da, db].concat(), &[fa, fb].concat()));
    }
    out
}

pub fn kl(count: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    let (n, m, d, tau) = (5, 6, 4, 0.15);
    (0..count)
        .map(|_| {
            let a = uniform(&mut r, d * n);
            let b = uniform(&mut r, d * m);
            let (th, _) = normalize_columns(&uniform(&mut r, d * n), d, n);
            let (bh, _) = normalize_columns(&b, d, m);
            let teacher = correlation_softmax(&th, n, &bh, m, d, tau);
            let mut da = vec![0.0; a.len()];
            let mut db = vec![0.0; b.len()];
            correlation_kl(&teacher, &a, n, &b, m, d, tau, Some(&mut da), Some(&mut db), 1.0);
            let fa = fd_grad(&a, STEP, |x| correlation_kl(&teacher, x, n, &b, m, d, tau, None, None, 1.0));
            let fb = fd_grad(&b, STEP, |x| correlation_kl(&teacher, &a, n, x, m, d, tau, None, None, 1.0));
            rel_err(&[da, db].concat(), &[fa, fb].concat())
        })
        .collect()
}

pub fn charbonnier_check(count: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..count)
        .map(|i| {
            let a = uniform(&mut r, 40);
            let b = uniform(&mut r, 40);
            // Small eps exercises the sharp regime; differences stay away from 0.
            let eps = if i % 2 == 0 { 1e-3 } else { 1e-1 };
            let mut da = vec![0.0; a.len()];
            charbonnier(&a, &b, eps, Some(&mut da), 1.0);
            let fa = fd_grad(&a, STEP * 1e-1, |x| charbonnier(x, &b, eps, None, 1.0));
            rel_err(&da, &fa)
        })
        .collect()
}

/// Perceptual distance with the identity as feature extractor.
pub fn perceptual_identity(count: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    let (n, c, hw) = (2, 3, 16);
    (0..count)
        .map(|_| {
            let a = uniform(&mut r, n * c * hw);
            let b = uniform(&mut r, n * c * hw);
            let mut da = vec![0.0; a.len()];
            perceptual(&a, &b, n, c, hw, Some(&mut da), 1.0);
            let fa = fd_grad(&a, STEP, |x| perceptual(x, &b, n, c, hw, None, 1.0));
            rel_err(&da, &fa)
        })
        .collect()
}

/// Gradient of `⟨r, aggregate(x, Δp, Δm, w)⟩` with respect to every input.
pub fn dynamic_aggregation(count: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    let g = DeformGeom { cin: 2, hs: 5, ws: 6, h: 4, w: 4, cout: 3, side: 3 };
    let (hw, k) = (g.h * g.w, g.taps());
    (0..count)
        .map(|_| {
            let x = uniform(&mut r, g.cin * g.hs * g.ws);
            let anchor: Vec<f64> = (0..2 * hw).map(|_| r.random_range(-1i32..=1) as f64).collect();
            // Fractional parts bounded away from the bilinear kinks.
            let off: Vec<f64> = (0..2 * k * hw)
                .map(|_| r.random_range(-2i32..2) as f64 + r.random_range(0.15..0.85))
                .collect();
            let mods: Vec<f64> = (0..k * hw).map(|_| r.random_range(0.0..1.0)).collect();
            let w = uniform(&mut r, g.cout * g.cin * k);
            let proj = uniform(&mut r, g.cout * hw);
            let f = |x: &[f64], off: &[f64], mods: &[f64], w: &[f64]| {
                let mut out = vec![0.0; g.cout * hw];
                deform_forward(&g, x, &anchor, off, mods, w, &mut out);
                out.iter().zip(&proj).map(|(a, b)| a * b).sum::<f64>()
            };
            let (mut dx, mut doff, mut dm, mut dw) = (vec![0.0; x.len()], vec![0.0; off.len()], vec![0.0; mods.len()], vec![0.0; w.len()]);
            deform_backward(
                &g,
                &x,
                &anchor,
                &off,
                &mods,
                &w,
                &proj,
                DeformGrads { x: Some(&mut dx), offsets: Some(&mut doff), mods: Some(&mut dm), weight: Some(&mut dw) },
            );
            let fx = fd_grad(&x, STEP, |v| f(v, &off, &mods, &w));
            let fo = fd_grad(&off, STEP, |v| f(&x, v, &mods, &w));
            let fm = fd_grad(&mods, STEP, |v| f(&x, &off, v, &w));
            let fw = fd_grad(&w, STEP, |v| f(&x, &off, &mods, v));
            rel_err(&[dx, doff, dm, dw].concat(), &[fx, fo, fm, fw].concat())
        })
        .collect()
}
