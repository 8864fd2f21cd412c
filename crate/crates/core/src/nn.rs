//! Parameters, layers and the Adam optimizer.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{contract, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

static NEXT_UID: AtomicUsize = AtomicUsize::new(1);

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    /// Frozen parameters enter graphs as constants and are skipped by Adam.
    pub frozen: bool,
    /// Multiplier on the optimizer learning rate.
    pub lr_scale: f32,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

/// Named parameters of one network plus their Adam state.
#[derive(Debug)]
pub struct ParamStore {
    uid: usize,
    params: Vec<Param>,
    /// Adam steps taken.
    pub step: u64,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl Clone for ParamStore {
    /// Deep copy with a fresh identity, so graphs never confuse the two.
    fn clone(&self) -> Self {
        let params = self
            .params
            .iter()
            .map(|p| Param {
                name: p.name.clone(),
                value: p.value.clone(),
                grad: p.grad.clone(),
                frozen: p.frozen,
                lr_scale: p.lr_scale,
                m: p.m.clone(),
                v: p.v.clone(),
            })
            .collect();
        Self { uid: NEXT_UID.fetch_add(1, Ordering::Relaxed), params, step: self.step }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Adam {
    pub fn new(lr: f32) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Learning-rate multiplier at `step` of `total`: half-cosine from 1 to 0
/// when `cosine`, else 1.
pub fn lr_factor(cosine: bool, step: usize, total: usize) -> f32 {
    if !cosine || total == 0 {
        return 1.0;
    }
    0.5 * (1.0 + libm::cosf(core::f32::consts::PI * step as f32 / total as f32))
}

impl ParamStore {
    pub fn new() -> Self {
        Self { uid: NEXT_UID.fetch_add(1, Ordering::Relaxed), params: Vec::new(), step: 0 }
    }

    pub fn uid(&self) -> usize {
        self.uid
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let len = value.len();
        self.params.push(Param {
            name: name.into(),
            grad: Tensor::zeros(value.shape()),
            value,
            frozen: false,
            lr_scale: 1.0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.params.iter_mut().for_each(|p| p.frozen = frozen);
    }

    /// Freeze or unfreeze every parameter whose name starts with `prefix`.
    pub fn set_frozen_prefix(&mut self, prefix: &str, frozen: bool) {
        self.params.iter_mut().filter(|p| p.name.starts_with(prefix)).for_each(|p| p.frozen = frozen);
    }

    pub fn set_lr_scale_prefix(&mut self, prefix: &str, scale: f32) {
        self.params.iter_mut().filter(|p| p.name.starts_with(prefix)).for_each(|p| p.lr_scale = scale);
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Add this store's parameter gradients from a differentiated graph.
    pub fn accumulate(&mut self, graph: &Graph) {
        self.accumulate_scaled(graph, 1.0);
    }

    pub fn accumulate_scaled(&mut self, graph: &Graph, s: f32) {
        for (id, g) in graph.param_grads(self.uid) {
            let p = &mut self.params[id.0];
            for (d, &v) in p.grad.data_mut().iter_mut().zip(g.data()) {
                *d += s * v;
            }
        }
    }

    /// True when every gradient is finite.
    pub fn grads_finite(&self) -> bool {
        self.params.iter().all(|p| p.grad.is_finite())
    }

    /// One Adam update of all unfrozen parameters; gradients are cleared.
    pub fn adam_step(&mut self, opt: &Adam) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - libm::powf(opt.beta1, t as f32);
        let bc2 = 1.0 - libm::powf(opt.beta2, t as f32);
        for p in &mut self.params {
            if p.frozen || p.lr_scale == 0.0 {
                continue;
            }
            let lr = opt.lr * p.lr_scale;
            let vals = p.value.data_mut();
            for (i, &g) in p.grad.data().iter().enumerate() {
                p.m[i] = opt.beta1 * p.m[i] + (1.0 - opt.beta1) * g;
                p.v[i] = opt.beta2 * p.v[i] + (1.0 - opt.beta2) * g * g;
                let mh = p.m[i] / bc1;
                let vh = p.v[i] / bc2;
                vals[i] -= lr * mh / (libm::sqrtf(vh) + opt.eps);
            }
        }
        self.zero_grad();
    }

    /// Copy values from `other` by name; shapes must agree.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        for p in &mut self.params {
            let Some(src) = other.params.iter().find(|q| q.name == p.name) else {
                return Err(contract!("parameter {} missing from source", p.name));
            };
            if src.value.shape() != p.value.shape() {
                return Err(contract!("parameter {} has shape {:?}, expected {:?}", p.name, src.value.shape(), p.value.shape()));
            }
            p.value = src.value.clone();
        }
        Ok(())
    }
}

/// Deterministic parameter initialiser.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Standard normal via Box–Muller.
    pub fn normal(&mut self) -> f32 {
        let u1: f64 = self.rng.random::<f64>().max(1e-300);
        let u2: f64 = self.rng.random::<f64>();
        (libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)) as f32
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn tensor(&mut self, shape: [usize; 4], std: f32) -> Tensor {
        let len = shape.iter().product();
        Tensor::from_vec(shape, (0..len).map(|_| self.normal() * std).collect())
    }
}

/// Square-kernel convolution with bias and "same" padding.
#[derive(Clone, Copy, Debug)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    /// He-style init for leaky-ReLU networks, scaled by `gain`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        gain: f32,
    ) -> Self {
        let std = gain * libm::sqrtf(2.0 / (cin * k * k) as f32);
        let w = store.add(alloc::format!("{name}.w"), init.tensor([cout, cin, k, k], std));
        let b = store.add(alloc::format!("{name}.b"), Tensor::zeros([1, cout, 1, 1]));
        Self { w, b, stride, pad: k / 2 }
    }

    /// All-zero weights and bias.
    pub fn zeros(store: &mut ParamStore, name: &str, cin: usize, cout: usize, k: usize, stride: usize) -> Self {
        let w = store.add(alloc::format!("{name}.w"), Tensor::zeros([cout, cin, k, k]));
        let b = store.add(alloc::format!("{name}.b"), Tensor::zeros([1, cout, 1, 1]));
        Self { w, b, stride, pad: k / 2 }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.conv(x, w, Some(b), self.stride, self.pad)
    }

    pub fn cout(&self, store: &ParamStore) -> usize {
        store.get(self.w).value.n()
    }
}

/// Leaky-ReLU slope used throughout.
pub const LRELU: f32 = 0.1;

/// `x + conv(lrelu(conv(x)))`.
#[derive(Clone, Copy, Debug)]
pub struct ResBlock {
    pub c1: Conv2d,
    pub c2: Conv2d,
}

impl ResBlock {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, c: usize) -> Self {
        Self {
            c1: Conv2d::new(store, init, &alloc::format!("{name}.c1"), c, c, 3, 1, 1.0),
            c2: Conv2d::new(store, init, &alloc::format!("{name}.c2"), c, c, 3, 1, 0.1),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let h = self.c1.forward(g, store, x);
        let h = g.leaky_relu(h, LRELU);
        let h = self.c2.forward(g, store, h);
        g.add(x, h)
    }
}

/// A chain of residual blocks.
pub fn res_chain(store: &mut ParamStore, init: &mut Init, name: &str, c: usize, n: usize) -> Vec<ResBlock> {
    (0..n).map(|i| ResBlock::new(store, init, &alloc::format!("{name}.{i}"), c)).collect()
}

pub fn run_chain(blocks: &[ResBlock], g: &mut Graph, store: &ParamStore, mut x: Var) -> Var {
    for b in blocks {
        x = b.forward(g, store, x);
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_moves_against_gradient() {
        let mut s = ParamStore::new();
        let id = s.add("p", Tensor::scalar(1.0));
        s.get_mut(id).grad = Tensor::scalar(2.0);
        s.adam_step(&Adam::new(0.1));
        assert!((s.get(id).value.data()[0] - 0.9).abs() < 1e-6);
        assert_eq!(s.get(id).grad.data()[0], 0.0);
    }

    #[test]
    fn clone_gets_new_identity() {
        let s = ParamStore::new();
        assert_ne!(s.uid(), s.clone().uid());
    }

    #[test]
    fn init_is_seeded() {
        let a = Init::new(7).tensor([1, 1, 4, 4], 1.0);
        let b = Init::new(7).tensor([1, 1, 4, 4], 1.0);
        assert_eq!(a, b);
    }

    #[test]
    fn cosine_factor_runs_from_one_to_zero() {
        assert_eq!(lr_factor(false, 50, 100), 1.0);
        assert_eq!(lr_factor(true, 0, 100), 1.0);
        assert!((lr_factor(true, 50, 100) - 0.5).abs() < 1e-6);
        assert!(lr_factor(true, 100, 100).abs() < 1e-6);
        assert!((1..100).all(|s| lr_factor(true, s, 100) < lr_factor(true, s - 1, 100)));
    }
}
