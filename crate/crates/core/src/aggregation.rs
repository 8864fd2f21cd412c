//! Correspondence-anchored dynamic aggregation of reference features.
//!
//! For every input position `p` with matched displacement `p₀(p) = p′ − p`,
//! a small head looks at the input feature and the reference feature gathered
//! at `p + p₀` and predicts, per tap `k`, a bounded offset `Δp_k` and a
//! modulation `Δm_k ∈ [0, 1]`. The output is
//! `y(p) = Σ_k w_k · x(p + p₀ + base_k + Δp_k) · Δm_k`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{contract, Result};
use crate::graph::{Graph, Var};
use crate::kernels::deform::{deform_forward, DeformGeom};
use crate::kernels::sample;
use crate::nn::{Conv2d, Init, ParamId, ParamStore, LRELU};
use crate::tensor::Tensor;

/// Taps of the 3×3 pattern.
pub const TAPS: usize = 9;
/// Default bound on `|Δp|` in grid units.
pub const MAX_OFFSET: f32 = 8.0;

/// Offsets `[2K, h, w]` (channel `2k` is x, `2k+1` is y) and modulations
/// `[K, h, w]` for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct OffsetField {
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub offsets: Vec<f32>,
    pub mods: Vec<f32>,
}

impl OffsetField {
    pub fn zeros(h: usize, w: usize, k: usize) -> Self {
        Self { h, w, k, offsets: vec![0.0; 2 * k * h * w], mods: vec![1.0; k * h * w] }
    }

    /// `(Δx, Δy)` of tap `k` at cell `(x, y)`.
    pub fn offset(&self, k: usize, x: usize, y: usize) -> (f32, f32) {
        let (hw, p) = (self.h * self.w, y * self.w + x);
        (self.offsets[2 * k * hw + p], self.offsets[(2 * k + 1) * hw + p])
    }

    pub fn modulation(&self, k: usize, x: usize, y: usize) -> f32 {
        self.mods[k * self.h * self.w + y * self.w + x]
    }
}

/// Bilinear sample of every channel of a `[c, h, w]` map at `(x, y)`, zero
/// outside.
pub fn bilinear_sample(feat: &[f32], c: usize, h: usize, w: usize, x: f32, y: f32) -> Vec<f32> {
    let mut out = vec![0.0; c];
    sample::bilinear_sample(feat, c, h, w, x, y, &mut out);
    out
}

/// Functional aggregation of one `[cin, hs, ws]` reference map onto an
/// `h×w` lattice. `anchor` is `[2, h, w]`, `weight` is `[cout, cin·K]`.
pub fn aggregate(
    ref_feat: &[f32],
    (cin, hs, ws): (usize, usize, usize),
    anchor: &[f32],
    off: &OffsetField,
    weight: &[f32],
    cout: usize,
) -> Result<Vec<f32>> {
    let side = libm::sqrt(off.k as f64) as usize;
    if side * side != off.k || weight.len() != cout * cin * off.k || anchor.len() != 2 * off.h * off.w {
        return Err(contract!("aggregation shapes do not agree with K = {}", off.k));
    }
    let g = DeformGeom { cin, hs, ws, h: off.h, w: off.w, cout, side };
    let mut out = vec![0.0; cout * off.h * off.w];
    deform_forward(&g, ref_feat, anchor, &off.offsets, &off.mods, weight, &mut out);
    Ok(out)
}

/// Rescale a matching-lattice displacement `[n, 2, h, w]` to a lattice `s`
/// times finer: `disp(P) = s · p₀(⌊P / s⌋)`.
pub fn rescale_anchor(p0: &Tensor, s: usize) -> Tensor {
    let [n, c, h, w] = p0.shape();
    let mut out = Tensor::zeros([n, c, h * s, w * s]);
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h * s {
                for x in 0..w * s {
                    out.set(b, ch, y, x, s as f32 * p0.at(b, ch, y / s, x / s));
                }
            }
        }
    }
    out
}

/// Offset/modulation head plus aggregation kernel for one pyramid level.
#[derive(Clone, Debug)]
pub struct DynAgg {
    pub head1: Conv2d,
    pub head2: Conv2d,
    pub weight: ParamId,
    pub cin: usize,
    pub cout: usize,
    pub max_offset: f32,
}

impl DynAgg {
    /// `c_feat` input channels, `cin` reference channels, `cout` outputs.
    /// The last head layer starts at zero (no offset, modulation 0.5).
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, c_feat: usize, cin: usize, cout: usize) -> Self {
        let hidden = cin.max(8);
        let head1 = Conv2d::new(store, init, &format!("{name}.head1"), c_feat + cin, hidden, 3, 1, 1.0);
        let head2 = Conv2d::zeros(store, &format!("{name}.head2"), hidden, 3 * TAPS, 3, 1);
        let std = libm::sqrtf(1.0 / (cin * TAPS) as f32);
        let weight = store.add(format!("{name}.weight"), init.tensor([cout, cin * TAPS, 1, 1], std));
        Self { head1, head2, weight, cin, cout, max_offset: MAX_OFFSET }
    }

    /// Offsets `[n, 2K, h, w]` and modulations `[n, K, h, w]`.
    pub fn predict(&self, g: &mut Graph, store: &ParamStore, feat: Var, gathered: Var) -> (Var, Var) {
        let x = g.concat(&[feat, gathered]);
        let x = self.head1.forward(g, store, x);
        let x = g.leaky_relu(x, LRELU);
        let raw = self.head2.forward(g, store, x);
        let off = g.narrow(raw, 0, 2 * TAPS);
        let off = g.bounded_tanh(off, self.max_offset);
        let m = g.narrow(raw, 2 * TAPS, TAPS);
        let m = g.sigmoid(m);
        (off, m)
    }

    /// Aggregate `ref_feat` onto the lattice of `feat` around `anchor`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, feat: Var, ref_feat: Var, anchor: &Tensor) -> Var {
        let disp = g.input(anchor.clone());
        let gathered = g.displaced(ref_feat, disp);
        let (off, m) = self.predict(g, store, feat, gathered);
        let w = g.param(store, self.weight);
        g.deform(ref_feat, anchor.clone(), off, m, w)
    }

    /// The offset field predicted for batch item 0 (inspection helper).
    pub fn offsets(&self, store: &ParamStore, feat: &Tensor, ref_feat: &Tensor, anchor: &Tensor) -> OffsetField {
        let mut g = Graph::new();
        let (f, r) = (g.input(feat.clone()), g.input(ref_feat.clone()));
        let disp = g.input(anchor.clone());
        let gathered = g.displaced(r, disp);
        let (off, m) = self.predict(&mut g, store, f, gathered);
        let [_, _, h, w] = feat.shape();
        OffsetField { h, w, k: TAPS, offsets: g.value(off).item(0).to_vec(), mods: g.value(m).item(0).to_vec() }
    }
}
