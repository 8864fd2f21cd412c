//! Define-by-run reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] is built fresh for every forward pass. Parameters enter through
//! [`Graph::param`]; after [`Graph::backward`] their gradients are pulled into
//! the owning store with [`crate::nn::ParamStore::accumulate`].

use alloc::vec::Vec;

use crate::kernels::conv::{conv2d_backward, conv2d_forward, ConvGeom};
use crate::kernels::deform::{deform_backward, deform_forward, DeformGeom, DeformGrads};
use crate::kernels::losses::{self, TripletParams};
use crate::kernels::sample::{displaced_backward, displaced_forward, DisplacedGeom};
use crate::kernels::shuffle::{depth_to_space, depth_to_space_backward};
use crate::nn::{ParamId, ParamStore};
use crate::tensor::Tensor;
use crate::Result;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Var(usize);

/// Per-item ground truth for the triplet loss: one optional target per input
/// cell, in reference-grid coordinates.
pub type TripletTargets = Vec<Vec<Option<(f64, f64)>>>;

enum Op {
    Leaf,
    Param,
    Conv { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    LeakyRelu(Var, f32),
    Sigmoid(Var),
    BoundedTanh(Var, f32),
    UnitChannels(Var, Vec<f32>),
    CenterSpatial(Var),
    Concat(Vec<Var>),
    Narrow(Var, usize),
    PixelShuffle(Var, usize),
    Displaced { src: Var, disp: Var },
    Deform { x: Var, anchor: Tensor, offsets: Var, mods: Var, weight: Var, side: usize },
    SpatialMean(Var),
    Mean(Var),
    L1(Var, Tensor),
    Charbonnier(Var, Tensor, f32),
    Perceptual(Var, Tensor),
    Triplet { a: Var, b: Var, gt: TripletTargets, params: TripletParams },
    CorrKl { a: Var, b: Var, teacher: Vec<Vec<f32>>, tau: f32 },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(usize, ParamId, Var)>,
    grads: Vec<Option<Tensor>>,
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f32, f32) -> f32) -> Tensor {
    assert_eq!(a.shape(), b.shape(), "elementwise shape mismatch");
    Tensor::from_vec(a.shape(), a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect())
}

#[inline]
fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + libm::expf(-x))
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `[1,1,1,1]` node.
    pub fn scalar(&self, v: Var) -> f32 {
        self.value(v).data()[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A constant.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf whose gradient is wanted (see [`Graph::grad`]).
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Parameter `id` of `store`; repeated requests return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let uid = store.uid();
        if let Some(&(_, _, v)) = self.params.iter().find(|(s, i, _)| *s == uid && *i == id) {
            return v;
        }
        let p = store.get(id);
        let v = self.push(p.value.clone(), Op::Param, !p.frozen);
        self.params.push((uid, id, v));
        v
    }

    /// 2-D convolution; `w` is `[cout, cin, k, k]`, `b` is `[1, cout, 1, 1]`.
    pub fn conv(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let [n, cin, h, wd] = self.value(x).shape();
        let [cout, wcin, k, _] = self.value(w).shape();
        assert_eq!(cin, wcin, "conv channel mismatch");
        let g = ConvGeom { n, cin, h, w: wd, cout, k, stride, pad };
        let mut out = Tensor::zeros([n, cout, g.out_h(), g.out_w()]);
        conv2d_forward(&g, self.value(x).data(), self.value(w).data(), b.map(|b| self.value(b).data()), out.data_mut());
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        self.push(out, Op::Conv { x, w, b, stride, pad }, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = zip_map(self.value(a), self.value(b), |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, s: f32) -> Var {
        let v = self.value(a).map(|x| x * s);
        let ng = self.ng(a);
        self.push(v, Op::Scale(a, s), ng)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f32) -> Var {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        let ng = self.ng(a);
        self.push(v, Op::LeakyRelu(a, slope), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        let ng = self.ng(a);
        self.push(v, Op::Sigmoid(a), ng)
    }

    /// `bound · tanh(x / bound)`: smooth, strictly inside `(−bound, bound)`.
    pub fn bounded_tanh(&mut self, a: Var, bound: f32) -> Var {
        let v = self.value(a).map(|x| bound * libm::tanhf(x / bound));
        let ng = self.ng(a);
        self.push(v, Op::BoundedTanh(a, bound), ng)
    }

    /// Scale each pixel's channel vector to unit length,
    /// `x / sqrt(|x|² + eps)`.
    pub fn unit_channels(&mut self, a: Var, eps: f32) -> Var {
        let [n, c, h, w] = self.value(a).shape();
        let hw = h * w;
        let mut v = self.value(a).clone();
        let mut norms = Vec::with_capacity(n * hw);
        for b in 0..n {
            let item = v.item_mut(b);
            for p in 0..hw {
                let s: f32 = (0..c).map(|ch| item[ch * hw + p] * item[ch * hw + p]).sum();
                let norm = libm::sqrtf(s + eps);
                (0..c).for_each(|ch| item[ch * hw + p] /= norm);
                norms.push(norm);
            }
        }
        let ng = self.ng(a);
        self.push(v, Op::UnitChannels(a, norms), ng)
    }

    /// Subtract each channel's spatial mean, per batch item.
    pub fn center_spatial(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        let hw = v.h() * v.w();
        for plane in v.data_mut().chunks_mut(hw) {
            let m = plane.iter().map(|&x| x as f64).sum::<f64>() / hw as f64;
            plane.iter_mut().for_each(|x| *x -= m as f32);
        }
        let ng = self.ng(a);
        self.push(v, Op::CenterSpatial(a), ng)
    }

    /// Channel concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let [n, _, h, w] = self.value(parts[0]).shape();
        let c: usize = parts.iter().map(|&p| self.value(p).c()).sum();
        let mut out = Tensor::zeros([n, c, h, w]);
        let hw = h * w;
        for b in 0..n {
            let mut off = 0;
            for &p in parts {
                let t = self.value(p);
                assert_eq!([t.n(), t.h(), t.w()], [n, h, w], "concat shape mismatch");
                let len = t.c() * hw;
                out.item_mut(b)[off..off + len].copy_from_slice(t.item(b));
                off += len;
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(out, Op::Concat(parts.to_vec()), ng)
    }

    /// Channels `[c0, c0 + len)`.
    pub fn narrow(&mut self, a: Var, c0: usize, len: usize) -> Var {
        let [n, c, h, w] = self.value(a).shape();
        assert!(c0 + len <= c, "narrow out of range");
        let hw = h * w;
        let mut out = Tensor::zeros([n, len, h, w]);
        for b in 0..n {
            out.item_mut(b).copy_from_slice(&self.value(a).item(b)[c0 * hw..(c0 + len) * hw]);
        }
        let ng = self.ng(a);
        self.push(out, Op::Narrow(a, c0), ng)
    }

    /// Depth-to-space by factor `r`.
    pub fn pixel_shuffle(&mut self, a: Var, r: usize) -> Var {
        let [n, c, h, w] = self.value(a).shape();
        assert_eq!(c % (r * r), 0, "pixel shuffle needs channels divisible by r²");
        let co = c / (r * r);
        let mut out = Tensor::zeros([n, co, h * r, w * r]);
        for b in 0..n {
            depth_to_space(self.value(a).item(b), co, h, w, r, out.item_mut(b));
        }
        let ng = self.ng(a);
        self.push(out, Op::PixelShuffle(a, r), ng)
    }

    /// Bilinear gather `out(p) = src(p + disp(p))`, zero outside; `disp` is
    /// `[n, 2, h, w]` with channel 0 the x component.
    pub fn displaced(&mut self, src: Var, disp: Var) -> Var {
        let [n, c, hs, ws] = self.value(src).shape();
        let [dn, two, h, w] = self.value(disp).shape();
        assert_eq!((dn, two), (n, 2), "displacement must be [n, 2, h, w]");
        let g = DisplacedGeom { c, hs, ws, h, w };
        let mut out = Tensor::zeros([n, c, h, w]);
        for b in 0..n {
            displaced_forward(&g, self.value(src).item(b), self.value(disp).item(b), out.item_mut(b));
        }
        let ng = self.ng(src) || self.ng(disp);
        self.push(out, Op::Displaced { src, disp }, ng)
    }

    /// Modulated deformable aggregation of `x` around a constant anchor
    /// displacement. `offsets` is `[n, 2K, h, w]` (even channels x), `mods` is
    /// `[n, K, h, w]`, `weight` is `[cout, cin·K, 1, 1]`.
    pub fn deform(&mut self, x: Var, anchor: Tensor, offsets: Var, mods: Var, weight: Var) -> Var {
        let [n, cin, hs, ws] = self.value(x).shape();
        let [_, kk, h, w] = self.value(mods).shape();
        let side = libm::sqrt(kk as f64) as usize;
        assert_eq!(side * side, kk, "tap count must be a square");
        assert_eq!(anchor.shape(), [n, 2, h, w], "anchor shape");
        assert_eq!(self.value(offsets).shape(), [n, 2 * kk, h, w], "offset shape");
        let cout = self.value(weight).n();
        assert_eq!(self.value(weight).c(), cin * kk, "aggregation weight shape");
        let g = DeformGeom { cin, hs, ws, h, w, cout, side };
        let mut out = Tensor::zeros([n, cout, h, w]);
        for b in 0..n {
            deform_forward(
                &g,
                self.value(x).item(b),
                anchor.item(b),
                self.value(offsets).item(b),
                self.value(mods).item(b),
                self.value(weight).data(),
                out.item_mut(b),
            );
        }
        let ng = self.ng(x) || self.ng(offsets) || self.ng(mods) || self.ng(weight);
        self.push(out, Op::Deform { x, anchor, offsets, mods, weight, side }, ng)
    }

    /// Global average pool to `[n, c, 1, 1]`.
    pub fn spatial_mean(&mut self, a: Var) -> Var {
        let [n, c, h, w] = self.value(a).shape();
        let hw = (h * w) as f32;
        let t = self.value(a);
        let data = (0..n * c).map(|i| t.data()[i * h * w..(i + 1) * h * w].iter().sum::<f32>() / hw).collect();
        let ng = self.ng(a);
        self.push(Tensor::from_vec([n, c, 1, 1], data), Op::SpatialMean(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = (self.value(a).sum() / self.value(a).len() as f64) as f32;
        let ng = self.ng(a);
        self.push(Tensor::scalar(v), Op::Mean(a), ng)
    }

    pub fn l1(&mut self, a: Var, target: Tensor) -> Var {
        let v = losses::l1(self.value(a).data(), target.data(), None, 1.0);
        let ng = self.ng(a);
        self.push(Tensor::scalar(v), Op::L1(a, target), ng)
    }

    pub fn charbonnier(&mut self, a: Var, target: Tensor, eps: f32) -> Var {
        let v = losses::charbonnier(self.value(a).data(), target.data(), eps, None, 1.0);
        let ng = self.ng(a);
        self.push(Tensor::scalar(v), Op::Charbonnier(a, target, eps), ng)
    }

    /// Per-channel Frobenius distance normalised by feature volume.
    pub fn perceptual(&mut self, a: Var, target: Tensor) -> Var {
        let [n, c, h, w] = self.value(a).shape();
        let v = losses::perceptual(self.value(a).data(), target.data(), n, c, h * w, None, 1.0);
        let ng = self.ng(a);
        self.push(Tensor::scalar(v), Op::Perceptual(a, target), ng)
    }

    /// Batch mean of the triplet margin loss between input descriptors `a`
    /// and reference descriptors `b`.
    pub fn triplet(&mut self, a: Var, b: Var, gt: TripletTargets, params: TripletParams) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let n = ta.n();
        assert_eq!(gt.len(), n, "one target map per batch item");
        let mut total = 0.0f64;
        for i in 0..n {
            total += losses::triplet_margin(
                ta.item(i),
                (ta.h(), ta.w()),
                tb.item(i),
                (tb.h(), tb.w()),
                ta.c(),
                &gt[i],
                &params,
                None,
                None,
                1.0,
            )? as f64;
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::scalar((total / n as f64) as f32), Op::Triplet { a, b, gt, params }, ng))
    }

    /// Batch mean KL from constant teacher volumes to the student volume of
    /// `(a, b)`.
    pub fn corr_kl(&mut self, a: Var, b: Var, teacher: Vec<Vec<f32>>, tau: f32) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let n = ta.n();
        let (na, nb) = (ta.h() * ta.w(), tb.h() * tb.w());
        let mut total = 0.0f64;
        for (i, t) in teacher.iter().enumerate() {
            assert_eq!(t.len(), na * nb, "teacher volume lattice mismatch");
            total += losses::correlation_kl(t, ta.item(i), na, tb.item(i), nb, ta.c(), tau, None, None, 1.0) as f64;
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(Tensor::scalar((total / n as f64) as f32), Op::CorrKl { a, b, teacher, tau }, ng)
    }

    /// Gradient of the last [`Graph::backward`] target w.r.t. `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradients of parameters that belong to the store with `uid`.
    pub fn param_grads(&self, uid: usize) -> impl Iterator<Item = (ParamId, &Tensor)> + '_ {
        self.params.iter().filter(move |(s, _, _)| *s == uid).filter_map(|&(_, id, v)| self.grad(v).map(|g| (id, g)))
    }

    /// Reverse pass from `root`, seeded with `seed` (a tensor of the root's
    /// shape; ones for a scalar loss).
    pub fn backward_with(&mut self, root: Var, seed: Tensor) {
        assert_eq!(seed.shape(), self.value(root).shape());
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(seed);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].needs_grad {
                self.backprop(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        self.grads = grads;
    }

    pub fn backward(&mut self, loss: Var) {
        let shape = self.value(loss).shape();
        self.backward_with(loss, Tensor::full(shape, 1.0));
    }

    fn backprop(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let nodes = &self.nodes;
        let val = |v: Var| &nodes[v.0].value;
        // Accumulation buffer for `v`, or None when `v` needs no gradient.
        macro_rules! buf {
            ($v:expr) => {{
                let v: Var = $v;
                if nodes[v.0].needs_grad {
                    Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(nodes[v.0].value.shape())).data_mut())
                } else {
                    None
                }
            }};
        }
        // Owned buffer for kernels that fill several gradients at once.
        macro_rules! take {
            ($v:expr) => {{
                let v: Var = $v;
                if nodes[v.0].needs_grad {
                    Some(grads[v.0].take().unwrap_or_else(|| Tensor::zeros(nodes[v.0].value.shape())).into_vec())
                } else {
                    None
                }
            }};
        }
        macro_rules! put {
            ($v:expr, $d:expr) => {{
                let v: Var = $v;
                if let Some(d) = $d {
                    grads[v.0] = Some(Tensor::from_vec(nodes[v.0].value.shape(), d));
                }
            }};
        }
        let gd = g.data();
        match &nodes[i].op {
            Op::Leaf | Op::Param => {}
            Op::Conv { x, w, b, stride, pad } => {
                let [n, cin, h, wd] = val(*x).shape();
                let [cout, _, k, _] = val(*w).shape();
                let geom = ConvGeom { n, cin, h, w: wd, cout, k, stride: *stride, pad: *pad };
                let mut dw = take!(*w);
                let mut db = b.and_then(|b| take!(b));
                let mut dx = take!(*x);
                conv2d_backward(
                    &geom,
                    val(*x).data(),
                    val(*w).data(),
                    gd,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                put!(*x, dx);
                put!(*w, dw);
                if let Some(b) = b {
                    put!(*b, db);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(d) = buf!(v) {
                        d.iter_mut().zip(gd).for_each(|(d, &g)| *d += g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(d) = buf!(*a) {
                    d.iter_mut().zip(gd).for_each(|(d, &g)| *d += g);
                }
                if let Some(d) = buf!(*b) {
                    d.iter_mut().zip(gd).for_each(|(d, &g)| *d -= g);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a).data().to_vec(), val(*b).data().to_vec());
                if let Some(d) = buf!(*a) {
                    d.iter_mut().zip(gd).zip(&vb).for_each(|((d, &g), &y)| *d += g * y);
                }
                if let Some(d) = buf!(*b) {
                    d.iter_mut().zip(gd).zip(&va).for_each(|((d, &g), &x)| *d += g * x);
                }
            }
            Op::Scale(a, s) => {
                if let Some(d) = buf!(*a) {
                    d.iter_mut().zip(gd).for_each(|(d, &g)| *d += g * s);
                }
            }
            Op::LeakyRelu(a, slope) => {
                let x = val(*a).data().to_vec();
                if let Some(d) = buf!(*a) {
                    for ((d, &g), &x) in d.iter_mut().zip(gd).zip(&x) {
                        *d += if x > 0.0 { g } else { slope * g };
                    }
                }
            }
            Op::Sigmoid(a) => {
                let y = nodes[i].value.data();
                if let Some(d) = buf!(*a) {
                    d.iter_mut().zip(gd).zip(y).for_each(|((d, &g), &y)| *d += g * y * (1.0 - y));
                }
            }
            Op::BoundedTanh(a, bound) => {
                let y = nodes[i].value.data();
                if let Some(d) = buf!(*a) {
                    for ((d, &g), &y) in d.iter_mut().zip(gd).zip(y) {
                        let t = y / bound;
                        *d += g * (1.0 - t * t);
                    }
                }
            }
            Op::UnitChannels(a, norms) => {
                let y = &nodes[i].value;
                let [n, c, h, w] = y.shape();
                let hw = h * w;
                if let Some(d) = buf!(*a) {
                    for b in 0..n {
                        let (yi, gi) = (y.item(b), &gd[b * c * hw..(b + 1) * c * hw]);
                        let di = &mut d[b * c * hw..(b + 1) * c * hw];
                        for p in 0..hw {
                            let dot: f32 = (0..c).map(|ch| yi[ch * hw + p] * gi[ch * hw + p]).sum();
                            let norm = norms[b * hw + p];
                            for ch in 0..c {
                                di[ch * hw + p] += (gi[ch * hw + p] - yi[ch * hw + p] * dot) / norm;
                            }
                        }
                    }
                }
            }
            Op::CenterSpatial(a) => {
                let hw = g.h() * g.w();
                if let Some(d) = buf!(*a) {
                    for (dp, gp) in d.chunks_mut(hw).zip(gd.chunks(hw)) {
                        let m = (gp.iter().map(|&x| x as f64).sum::<f64>() / hw as f64) as f32;
                        dp.iter_mut().zip(gp).for_each(|(d, &g)| *d += g - m);
                    }
                }
            }
            Op::Concat(parts) => {
                let [n, _, h, w] = g.shape();
                let hw = h * w;
                let ctot = g.c();
                let mut off = 0;
                for &p in parts {
                    let c = val(p).c();
                    if let Some(d) = buf!(p) {
                        for b in 0..n {
                            let src = &gd[b * ctot * hw + off * hw..b * ctot * hw + (off + c) * hw];
                            let dst = &mut d[b * c * hw..(b + 1) * c * hw];
                            dst.iter_mut().zip(src).for_each(|(d, &g)| *d += g);
                        }
                    }
                    off += c;
                }
            }
            Op::Narrow(a, c0) => {
                let [n, c, h, w] = val(*a).shape();
                let (len, hw) = (g.c(), h * w);
                if let Some(d) = buf!(*a) {
                    for b in 0..n {
                        let dst = &mut d[(b * c + c0) * hw..(b * c + c0 + len) * hw];
                        dst.iter_mut().zip(g.item(b)).for_each(|(d, &g)| *d += g);
                    }
                }
            }
            Op::PixelShuffle(a, r) => {
                let [n, c, h, w] = val(*a).shape();
                let co = c / (r * r);
                if let Some(d) = buf!(*a) {
                    let il = c * h * w;
                    for b in 0..n {
                        depth_to_space_backward(g.item(b), co, h, w, *r, &mut d[b * il..(b + 1) * il]);
                    }
                }
            }
            Op::Displaced { src, disp } => {
                let [n, c, hs, ws] = val(*src).shape();
                let [_, _, h, w] = val(*disp).shape();
                let geom = DisplacedGeom { c, hs, ws, h, w };
                let (sl, dl) = (c * hs * ws, 2 * h * w);
                let mut ds = take!(*src);
                let mut dd = take!(*disp);
                for b in 0..n {
                    displaced_backward(
                        &geom,
                        val(*src).item(b),
                        val(*disp).item(b),
                        g.item(b),
                        ds.as_deref_mut().map(|s| &mut s[b * sl..(b + 1) * sl]),
                        dd.as_deref_mut().map(|s| &mut s[b * dl..(b + 1) * dl]),
                    );
                }
                put!(*src, ds);
                put!(*disp, dd);
            }
            Op::Deform { x, anchor, offsets, mods, weight, side } => {
                let [n, cin, hs, ws] = val(*x).shape();
                let [_, kk, h, w] = val(*mods).shape();
                let cout = val(*weight).n();
                let geom = DeformGeom { cin, hs, ws, h, w, cout, side: *side };
                let (xl, ol, ml) = (cin * hs * ws, 2 * kk * h * w, kk * h * w);
                let mut dx = take!(*x);
                let mut doff = take!(*offsets);
                let mut dm = take!(*mods);
                let mut dw = take!(*weight);
                for b in 0..n {
                    deform_backward(
                        &geom,
                        val(*x).item(b),
                        anchor.item(b),
                        val(*offsets).item(b),
                        val(*mods).item(b),
                        val(*weight).data(),
                        g.item(b),
                        DeformGrads {
                            x: dx.as_deref_mut().map(|s| &mut s[b * xl..(b + 1) * xl]),
                            offsets: doff.as_deref_mut().map(|s| &mut s[b * ol..(b + 1) * ol]),
                            mods: dm.as_deref_mut().map(|s| &mut s[b * ml..(b + 1) * ml]),
                            weight: dw.as_deref_mut(),
                        },
                    );
                }
                for (v, d) in [(*x, dx), (*offsets, doff), (*mods, dm), (*weight, dw)] {
                    put!(v, d);
                }
            }
            Op::SpatialMean(a) => {
                let [_, _, h, w] = val(*a).shape();
                let hw = h * w;
                if let Some(d) = buf!(*a) {
                    for (i, &gv) in gd.iter().enumerate() {
                        d[i * hw..(i + 1) * hw].iter_mut().for_each(|d| *d += gv / hw as f32);
                    }
                }
            }
            Op::Mean(a) => {
                let s = gd[0] / val(*a).len() as f32;
                if let Some(d) = buf!(*a) {
                    d.iter_mut().for_each(|d| *d += s);
                }
            }
            Op::L1(a, t) => {
                let x = val(*a).data();
                if let Some(d) = buf!(*a) {
                    losses::l1(x, t.data(), Some(d), gd[0]);
                }
            }
            Op::Charbonnier(a, t, eps) => {
                let x = val(*a).data();
                if let Some(d) = buf!(*a) {
                    losses::charbonnier(x, t.data(), *eps, Some(d), gd[0]);
                }
            }
            Op::Perceptual(a, t) => {
                let [n, c, h, w] = val(*a).shape();
                let x = val(*a).data();
                if let Some(d) = buf!(*a) {
                    losses::perceptual(x, t.data(), n, c, h * w, Some(d), gd[0]);
                }
            }
            Op::Triplet { a, b, gt, params } => {
                let (ta, tb) = (val(*a), val(*b));
                let n = ta.n();
                let (al, bl) = (ta.item_len(), tb.item_len());
                let mut da = take!(*a);
                let mut db = take!(*b);
                let s = gd[0] / n as f32;
                for i in 0..n {
                    // Forward already succeeded on identical inputs.
                    let _ = losses::triplet_margin(
                        ta.item(i),
                        (ta.h(), ta.w()),
                        tb.item(i),
                        (tb.h(), tb.w()),
                        ta.c(),
                        &gt[i],
                        params,
                        da.as_deref_mut().map(|s| &mut s[i * al..(i + 1) * al]),
                        db.as_deref_mut().map(|s| &mut s[i * bl..(i + 1) * bl]),
                        s,
                    );
                }
                put!(*a, da);
                put!(*b, db);
            }
            Op::CorrKl { a, b, teacher, tau } => {
                let (ta, tb) = (val(*a), val(*b));
                let n = ta.n();
                let (na, nb) = (ta.h() * ta.w(), tb.h() * tb.w());
                let (al, bl) = (ta.item_len(), tb.item_len());
                let mut da = take!(*a);
                let mut db = take!(*b);
                let s = gd[0] / n as f32;
                for (i, t) in teacher.iter().enumerate() {
                    losses::correlation_kl(
                        t,
                        ta.item(i),
                        na,
                        tb.item(i),
                        nb,
                        ta.c(),
                        *tau,
                        da.as_deref_mut().map(|s| &mut s[i * al..(i + 1) * al]),
                        db.as_deref_mut().map(|s| &mut s[i * bl..(i + 1) * bl]),
                        s,
                    );
                }
                put!(*a, da);
                put!(*b, db);
            }
        }
    }
}
