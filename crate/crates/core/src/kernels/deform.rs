//! Correspondence-anchored modulated deformable aggregation.
//!
//! For output position `p` and tap `k` the source is sampled at
//! `p + anchor(p) + base_k + offset_k(p)` and scaled by `mod_k(p)`; the taps are
//! then mixed by a `[cout, cin·K]` weight matrix:
//!
//! ```text
//! y(p) = Σ_k w_k · x(p + anchor(p) + base_k + Δp_k(p)) · Δm_k(p)
//! ```

use alloc::vec;

use super::sample::Taps;
use crate::real::{gemm, Mat, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DeformGeom {
    pub cin: usize,
    /// Source (reference) lattice.
    pub hs: usize,
    pub ws: usize,
    /// Output lattice.
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    /// Side of the square tap pattern; `K = side²`.
    pub side: usize,
}

impl DeformGeom {
    pub fn taps(&self) -> usize {
        self.side * self.side
    }
    /// Base displacement `(dx, dy)` of tap `k` (row-major over the pattern).
    pub fn base(&self, k: usize) -> (isize, isize) {
        let r = (self.side / 2) as isize;
        ((k % self.side) as isize - r, (k / self.side) as isize - r)
    }
}

#[inline]
fn tap_coord<F: Real>(g: &DeformGeom, k: usize, p: usize, anchor: &[F], offsets: &[F]) -> (F, F) {
    let hw = g.h * g.w;
    let (bx, by) = g.base(k);
    let x = F::of((p % g.w) as f64 + bx as f64) + anchor[p] + offsets[2 * k * hw + p];
    let y = F::of((p / g.w) as f64 + by as f64) + anchor[hw + p] + offsets[(2 * k + 1) * hw + p];
    (x, y)
}

/// Modulated sampled columns `[cin·K, h·w]`.
pub fn deform_cols<F: Real>(g: &DeformGeom, x: &[F], anchor: &[F], offsets: &[F], mods: &[F], cols: &mut [F]) {
    let (hw, shw, kn) = (g.h * g.w, g.hs * g.ws, g.taps());
    for k in 0..kn {
        for p in 0..hw {
            let (sx, sy) = tap_coord(g, k, p, anchor, offsets);
            let t = Taps::new(sx, sy, g.hs, g.ws);
            let m = mods[k * hw + p];
            for ci in 0..g.cin {
                cols[(ci * kn + k) * hw + p] = m * t.sample(&x[ci * shw..(ci + 1) * shw]);
            }
        }
    }
}

/// `out = weight · cols`, `out` is `[cout, h·w]`.
pub fn deform_forward<F: Real>(
    g: &DeformGeom,
    x: &[F],
    anchor: &[F],
    offsets: &[F],
    mods: &[F],
    weight: &[F],
    out: &mut [F],
) {
    let hw = g.h * g.w;
    let rows = g.cin * g.taps();
    let mut cols = vec![F::zero(); rows * hw];
    deform_cols(g, x, anchor, offsets, mods, &mut cols);
    gemm(Mat::new(weight, g.cout, rows), Mat::new(&cols, rows, hw), F::zero(), out);
}

/// Gradient buffers for [`deform_backward`]; any may be skipped.
pub struct DeformGrads<'a, F> {
    pub x: Option<&'a mut [F]>,
    pub offsets: Option<&'a mut [F]>,
    pub mods: Option<&'a mut [F]>,
    pub weight: Option<&'a mut [F]>,
}

/// Accumulate gradients of [`deform_forward`]. The anchor is a constant.
#[allow(clippy::too_many_arguments)]
pub fn deform_backward<F: Real>(
    g: &DeformGeom,
    x: &[F],
    anchor: &[F],
    offsets: &[F],
    mods: &[F],
    weight: &[F],
    dout: &[F],
    grads: DeformGrads<'_, F>,
) {
    let DeformGrads { x: mut dx, offsets: mut doff, mods: mut dmod, weight: dw } = grads;
    let (hw, shw, kn) = (g.h * g.w, g.hs * g.ws, g.taps());
    let rows = g.cin * kn;
    if let Some(dw) = dw {
        let mut cols = vec![F::zero(); rows * hw];
        deform_cols(g, x, anchor, offsets, mods, &mut cols);
        gemm(Mat::new(dout, g.cout, hw), Mat::t(&cols, hw, rows), F::one(), dw);
    }
    if dx.is_none() && doff.is_none() && dmod.is_none() {
        return;
    }
    let mut dcols = vec![F::zero(); rows * hw];
    gemm(Mat::t(weight, rows, g.cout), Mat::new(dout, g.cout, hw), F::zero(), &mut dcols);
    for k in 0..kn {
        for p in 0..hw {
            let (sx, sy) = tap_coord(g, k, p, anchor, offsets);
            let t = Taps::new(sx, sy, g.hs, g.ws);
            let m = mods[k * hw + p];
            let (mut gm, mut gx, mut gy) = (F::zero(), F::zero(), F::zero());
            for ci in 0..g.cin {
                let gc = dcols[(ci * kn + k) * hw + p];
                if gc == F::zero() {
                    continue;
                }
                let plane = &x[ci * shw..(ci + 1) * shw];
                if dmod.is_some() {
                    gm = gm + gc * t.sample(plane);
                }
                if doff.is_some() {
                    let (px, py) = t.grad(plane);
                    gx = gx + gc * m * px;
                    gy = gy + gc * m * py;
                }
                if let Some(dx) = dx.as_deref_mut() {
                    t.scatter(&mut dx[ci * shw..(ci + 1) * shw], gc * m);
                }
            }
            if let Some(dm) = dmod.as_deref_mut() {
                dm[k * hw + p] = dm[k * hw + p] + gm;
            }
            if let Some(d) = doff.as_deref_mut() {
                d[2 * k * hw + p] = d[2 * k * hw + p] + gx;
                d[(2 * k + 1) * hw + p] = d[(2 * k + 1) * hw + p] + gy;
            }
        }
    }
}
