//! Dense optical flow and backward warping.
//!
//! Convention: `estimate_flow(a, b)` returns `f` with `a(p) ≈ b(p + f(p))`,
//! so `flow_warp(b, f)` aligns `b` to `a`. A 2 px rightward shift of the
//! content from `a` to `b` gives `f ≈ (+2, 0)`.
//!
//! The estimator is coarse-to-fine Lucas–Kanade on luma, optionally followed
//! by a learned residual head that starts at zero.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{contract, Error, Result};
use crate::graph::{Graph, Var};
use crate::image::ImageTensor;
use crate::kernels::sample::{displaced_forward, DisplacedGeom};
use crate::nn::{Conv2d, Init, ParamStore, LRELU};
use crate::tensor::Tensor;

/// Displacements `(dx, dy)` in pixels; `data` is `[2, h, w]` (x plane first).
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl FlowField {
    pub fn zeros(h: usize, w: usize) -> Self {
        Self { h, w, data: vec![0.0; 2 * h * w] }
    }

    pub fn at(&self, x: usize, y: usize) -> (f32, f32) {
        let p = y * self.w + x;
        (self.data[p], self.data[self.h * self.w + p])
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec([1, 2, self.h, self.w], self.data.clone())
    }

    pub fn from_tensor(t: &Tensor, n: usize) -> Result<Self> {
        let [_, c, h, w] = t.shape();
        if c != 2 {
            return Err(contract!("flow tensors have 2 channels, got {c}"));
        }
        Ok(Self { h, w, data: t.item(n).to_vec() })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Mean `‖f‖` over the cells at least `border` away from the edges.
    pub fn mean_magnitude(&self, border: usize) -> f64 {
        self.mean_error(border, (0.0, 0.0))
    }

    /// Mean `‖f − target‖` over the interior.
    pub fn mean_error(&self, border: usize, target: (f64, f64)) -> f64 {
        let mut s = 0.0;
        let mut n = 0usize;
        for y in border..self.h.saturating_sub(border) {
            for x in border..self.w.saturating_sub(border) {
                let (dx, dy) = self.at(x, y);
                s += libm::hypot(dx as f64 - target.0, dy as f64 - target.1);
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            s / n as f64
        }
    }
}

/// Backward warp `out(p) = feat(p + flow(p))` with bilinear sampling and zero
/// outside. `feat` is `[n, c, h, w]`, `flow` is `[n, 2, h, w]`.
pub fn flow_warp(feat: &Tensor, flow: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = feat.shape();
    if flow.shape() != [n, 2, h, w] {
        return Err(contract!("flow {:?} does not match features {:?}", flow.shape(), feat.shape()));
    }
    let g = DisplacedGeom { c, hs: h, ws: w, h, w };
    let mut out = Tensor::zeros(feat.shape());
    for b in 0..n {
        displaced_forward(&g, feat.item(b), flow.item(b), out.item_mut(b));
    }
    Ok(out)
}

/// Coarse-to-fine Lucas–Kanade settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LkConfig {
    pub max_levels: usize,
    /// Smallest side kept in the pyramid.
    pub min_size: usize,
    pub iterations: usize,
    /// Half-width of the square aggregation window.
    pub radius: usize,
    /// Tikhonov term added to the structure tensor.
    pub damping: f64,
    /// Largest update per iteration, in pixels of the current level.
    pub max_step: f64,
    /// Radius of the box filter applied to the flow after every iteration.
    pub smooth: usize,
}

impl Default for LkConfig {
    fn default() -> Self {
        Self { max_levels: 4, min_size: 8, iterations: 10, radius: 3, damping: 3e-2, max_step: 1.0, smooth: 1 }
    }
}

#[derive(Clone, Debug)]
struct Plane {
    h: usize,
    w: usize,
    v: Vec<f64>,
}

impl Plane {
    fn luma(img: &ImageTensor) -> Self {
        let (h, w, c) = (img.height(), img.width(), img.channels());
        let v = (0..h * w)
            .map(|i| {
                if c >= 3 {
                    let d = &img.data()[i * c..i * c + 3];
                    0.299 * d[0] as f64 + 0.587 * d[1] as f64 + 0.114 * d[2] as f64
                } else {
                    img.data()[i * c] as f64
                }
            })
            .collect();
        Self { h, w, v }
    }

    fn get(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.w as isize - 1) as usize;
        let y = y.clamp(0, self.h as isize - 1) as usize;
        self.v[y * self.w + x]
    }

    /// Bilinear sample with border clamping.
    fn sample(&self, x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, (self.w - 1) as f64);
        let y = y.clamp(0.0, (self.h - 1) as f64);
        let (x0, y0) = (libm::floor(x), libm::floor(y));
        let (fx, fy) = (x - x0, y - y0);
        let (ix, iy) = (x0 as isize, y0 as isize);
        let top = self.get(ix, iy) * (1.0 - fx) + self.get(ix + 1, iy) * fx;
        let bot = self.get(ix, iy + 1) * (1.0 - fx) + self.get(ix + 1, iy + 1) * fx;
        top * (1.0 - fy) + bot * fy
    }

    fn half(&self) -> Self {
        let (h, w) = (self.h / 2, self.w / 2);
        let mut v = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = (2 * x as isize, 2 * y as isize);
                v[y * w + x] = 0.25 * (self.get(sx, sy) + self.get(sx + 1, sy) + self.get(sx, sy + 1) + self.get(sx + 1, sy + 1));
            }
        }
        Self { h, w, v }
    }
}

/// Box sums over a `(2r+1)²` window with border clamping.
fn box_sum(p: &[f64], h: usize, w: usize, r: usize) -> Vec<f64> {
    let r = r as isize;
    let at = |x: isize, y: isize| p[y.clamp(0, h as isize - 1) as usize * w + x.clamp(0, w as isize - 1) as usize];
    let mut rows = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            rows[y as usize * w + x as usize] = (-r..=r).map(|d| at(x + d, y)).sum();
        }
    }
    let at = |x: isize, y: isize| rows[y.clamp(0, h as isize - 1) as usize * w + x.clamp(0, w as isize - 1) as usize];
    let mut out = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            out[y as usize * w + x as usize] = (-r..=r).map(|d| at(x, y + d)).sum();
        }
    }
    out
}

fn refine_level(a: &Plane, b: &Plane, fx: &mut [f64], fy: &mut [f64], cfg: &LkConfig) {
    let (h, w) = (a.h, a.w);
    for _ in 0..cfg.iterations {
        let mut bw = Plane { h, w, v: vec![0.0; h * w] };
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                bw.v[p] = b.sample(x as f64 + fx[p], y as f64 + fy[p]);
            }
        }
        let n = h * w;
        let (mut xx, mut xy, mut yy, mut xt, mut yt) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for y in 0..h as isize {
            for x in 0..w as isize {
                let p = y as usize * w + x as usize;
                let gx = 0.5 * (bw.get(x + 1, y) - bw.get(x - 1, y));
                let gy = 0.5 * (bw.get(x, y + 1) - bw.get(x, y - 1));
                let it = bw.v[p] - a.v[p];
                xx[p] = gx * gx;
                xy[p] = gx * gy;
                yy[p] = gy * gy;
                xt[p] = gx * it;
                yt[p] = gy * it;
            }
        }
        let [xx, xy, yy, xt, yt] = [xx, xy, yy, xt, yt].map(|v| box_sum(&v, h, w, cfg.radius));
        for p in 0..n {
            let (a11, a12, a22) = (xx[p] + cfg.damping, xy[p], yy[p] + cfg.damping);
            let det = a11 * a22 - a12 * a12;
            let dx = -(a22 * xt[p] - a12 * yt[p]) / det;
            let dy = -(a11 * yt[p] - a12 * xt[p]) / det;
            fx[p] += dx.clamp(-cfg.max_step, cfg.max_step);
            fy[p] += dy.clamp(-cfg.max_step, cfg.max_step);
        }
        if cfg.smooth > 0 {
            let area = ((2 * cfg.smooth + 1) * (2 * cfg.smooth + 1)) as f64;
            for f in [&mut *fx, &mut *fy] {
                let s = box_sum(f, h, w, cfg.smooth);
                f.iter_mut().zip(s).for_each(|(v, s)| *v = s / area);
            }
        }
    }
}

/// Coarse-to-fine Lucas–Kanade flow from `a` to `b`.
pub fn lucas_kanade(a: &ImageTensor, b: &ImageTensor, cfg: &LkConfig) -> Result<FlowField> {
    if (a.height(), a.width(), a.channels()) != (b.height(), b.width(), b.channels()) {
        return Err(contract!("flow inputs differ in shape"));
    }
    let mut pa = vec![Plane::luma(a)];
    let mut pb = vec![Plane::luma(b)];
    while pa.len() < cfg.max_levels && pa.last().map(|p| p.h.min(p.w) / 2 >= cfg.min_size).unwrap_or(false) {
        let (na, nb) = (pa.last().unwrap().half(), pb.last().unwrap().half());
        pa.push(na);
        pb.push(nb);
    }
    let mut fx: Vec<f64> = Vec::new();
    let mut fy: Vec<f64> = Vec::new();
    let mut prev: Option<(usize, usize)> = None;
    for level in (0..pa.len()).rev() {
        let (h, w) = (pa[level].h, pa[level].w);
        let (mut nx, mut ny) = (vec![0.0; h * w], vec![0.0; h * w]);
        if let Some((ph, pw)) = prev {
            let cx = Plane { h: ph, w: pw, v: fx.clone() };
            let cy = Plane { h: ph, w: pw, v: fy.clone() };
            for y in 0..h {
                for x in 0..w {
                    let (sx, sy) = ((x as f64 + 0.5) / 2.0 - 0.5, (y as f64 + 0.5) / 2.0 - 0.5);
                    nx[y * w + x] = 2.0 * cx.sample(sx, sy);
                    ny[y * w + x] = 2.0 * cy.sample(sx, sy);
                }
            }
        }
        refine_level(&pa[level], &pb[level], &mut nx, &mut ny, cfg);
        fx = nx;
        fy = ny;
        prev = Some((h, w));
    }
    let (h, w) = (a.height(), a.width());
    let mut data: Vec<f32> = fx.iter().map(|&v| v as f32).collect();
    data.extend(fy.iter().map(|&v| v as f32));
    let f = FlowField { h, w, data };
    if !f.is_finite() {
        return Err(Error::Degenerate("flow estimate is not finite".into()));
    }
    Ok(f)
}

/// Learned residual on top of the Lucas–Kanade estimate.
#[derive(Clone, Debug)]
pub struct FlowRefiner {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

impl FlowRefiner {
    /// The last layer starts at zero so the refined flow equals the input.
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, hidden: usize) -> Self {
        let conv1 = Conv2d::new(store, init, &format!("{name}.conv1"), 8, hidden, 3, 1, 1.0);
        let conv2 = Conv2d::zeros(store, &format!("{name}.conv2"), hidden, 2, 3, 1);
        Self { conv1, conv2 }
    }

    /// `lk + head(a ∥ warp(b, lk) ∥ lk)`; `a`, `b` are `[n, 3, h, w]` images
    /// and `lk` is `[n, 2, h, w]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, a: &Tensor, b: &Tensor, lk: &Tensor) -> Result<Var> {
        let warped = flow_warp(b, lk)?;
        let inp = g.input(a.map(|v| v - 0.5));
        let wb = g.input(warped.map(|v| v - 0.5));
        let f = g.input(lk.clone());
        let x = g.concat(&[inp, wb, f]);
        let x = self.conv1.forward(g, store, x);
        let x = g.leaky_relu(x, LRELU);
        let d = self.conv2.forward(g, store, x);
        Ok(g.add(f, d))
    }
}

/// Default estimator: Lucas–Kanade plus an optional learned refinement whose
/// parameters live in the owning model's store.
#[derive(Clone, Debug)]
pub struct FlowEstimator {
    pub lk: LkConfig,
    pub refiner: Option<FlowRefiner>,
}

impl FlowEstimator {
    pub fn new(lk: LkConfig, refiner: Option<FlowRefiner>) -> Self {
        Self { lk, refiner }
    }

    /// Flow between batched images `[n, 3, h, w]` as a graph value.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, a: &Tensor, b: &Tensor) -> Result<Var> {
        let lk = self.lk_batch(a, b)?;
        match &self.refiner {
            Some(r) => r.forward(g, store, a, b, &lk),
            None => Ok(g.input(lk)),
        }
    }

    /// Lucas–Kanade part only, `[n, 2, h, w]`.
    pub fn lk_batch(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(contract!("flow inputs differ: {:?} vs {:?}", a.shape(), b.shape()));
        }
        let [n, _, h, w] = a.shape();
        let mut out = Tensor::zeros([n, 2, h, w]);
        for i in 0..n {
            let f = lucas_kanade(&ImageTensor::from_tensor(a, i)?, &ImageTensor::from_tensor(b, i)?, &self.lk)?;
            out.item_mut(i).copy_from_slice(&f.data);
        }
        Ok(out)
    }

    pub fn estimate(&self, store: &ParamStore, a: &ImageTensor, b: &ImageTensor) -> Result<FlowField> {
        let mut g = Graph::new();
        let v = self.forward(&mut g, store, &a.to_tensor(), &b.to_tensor())?;
        FlowField::from_tensor(g.value(v), 0)
    }
}

/// `estimate_flow(a, b)` with the parameter-free estimator.
pub fn estimate_flow(a: &ImageTensor, b: &ImageTensor) -> Result<FlowField> {
    lucas_kanade(a, b, &LkConfig::default())
}
