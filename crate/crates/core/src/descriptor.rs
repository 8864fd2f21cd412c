//! Dense descriptors, patch descriptors, argmax matching and correlation
//! volumes.
//!
//! Grids are stored channel-major: descriptor `p` of a `[d, h, w]` grid is the
//! strided column `data[c·h·w + p]`. Cell `(x, y)` is centred on source pixel
//! `(stride·x, stride·y)`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{bicubic_upsample, SCALE};
use crate::error::{contract, Error, Result};
use crate::graph::{Graph, Var};
use crate::image::ImageTensor;
use crate::kernels::losses::normalize_columns;
use crate::nn::{Conv2d, Init, ParamStore, LRELU};
use crate::real::{gemm, Mat};
use crate::tensor::Tensor;

/// Pixels per descriptor cell.
pub const STRIDE: usize = 4;

/// Default softmax temperature of correlation volumes.
pub const DEFAULT_TEMPERATURE: f64 = 0.15;
/// Guards the descriptor normalisation of an all-zero cell.
const UNIT_EPS: f32 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Lr,
    Hr,
}

/// Widths of the three encoder stages and the descriptor dimension.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderConfig {
    pub channels: [usize; 3],
    pub dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { channels: [64, 128, 256], dim: 256 }
    }
}

impl EncoderConfig {
    pub fn architecture_id(&self) -> String {
        let [a, b, c] = self.channels;
        format!("conv7-s{STRIDE}-c{a}.{b}.{c}-d{}", self.dim)
    }
}

/// Seven convolutions, two of them stride 2, leaky ReLU between layers and a
/// linear 1×1 projection to the descriptor, scaled to unit length per cell.
#[derive(Clone, Debug)]
pub struct Encoder {
    layers: Vec<Conv2d>,
}

impl Encoder {
    pub fn new(store: &mut ParamStore, init: &mut Init, prefix: &str, cfg: &EncoderConfig) -> Self {
        let [c1, c2, c3] = cfg.channels;
        let spec = [(3, c1, 3, 1), (c1, c1, 3, 1), (c1, c2, 3, 2), (c2, c2, 3, 1), (c2, c3, 3, 2), (c3, c3, 3, 1), (c3, cfg.dim, 1, 1)];
        let layers = spec
            .iter()
            .enumerate()
            .map(|(i, &(ci, co, k, s))| Conv2d::new(store, init, &format!("{prefix}.conv{i}"), ci, co, k, s, 1.0))
            .collect();
        Self { layers }
    }

    /// `x` is a prepared `[n, 3, H, W]` batch with `H, W` multiples of the
    /// stride; the result is `[n, d, H/4, W/4]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, mut x: Var) -> Var {
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            x = l.forward(g, store, x);
            if i != last {
                x = g.leaky_relu(x, LRELU);
            }
        }
        let x = g.center_spatial(x);
        g.unit_channels(x, UNIT_EPS)
    }

    /// Descriptor grid of one image (no gradient bookkeeping is kept).
    pub fn extract(&self, store: &ParamStore, img: &ImageTensor, role: Role) -> Result<DescriptorGrid> {
        if img.channels() != 3 {
            return Err(Error::Config(format!("encoder expects 3 channels, got {}", img.channels())));
        }
        let mut g = Graph::new();
        let x = g.input(prepare(img));
        let y = self.forward(&mut g, store, x);
        Ok(DescriptorGrid::from_tensor(g.value(y), 0, role))
    }
}

/// Replicate-pad to a multiple of the stride and centre values on zero.
pub fn prepare(img: &ImageTensor) -> Tensor {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let (ph, pw) = (h.div_ceil(STRIDE) * STRIDE, w.div_ceil(STRIDE) * STRIDE);
    let mut t = Tensor::zeros([1, c, ph, pw]);
    for ch in 0..c {
        for y in 0..ph {
            for x in 0..pw {
                t.set(0, ch, y, x, img.get(y.min(h - 1), x.min(w - 1), ch) - 0.5);
            }
        }
    }
    t
}

pub fn prepare_batch(imgs: &[&ImageTensor]) -> Tensor {
    let items: Vec<Tensor> = imgs.iter().map(|i| prepare(i)).collect();
    Tensor::stack(&items)
}

/// A strided dense grid of descriptors.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorGrid {
    pub h: usize,
    pub w: usize,
    pub d: usize,
    pub stride: usize,
    pub role: Role,
    /// Channel-major `[d, h·w]`.
    pub data: Vec<f32>,
}

impl DescriptorGrid {
    pub fn new(h: usize, w: usize, d: usize, stride: usize, role: Role, data: Vec<f32>) -> Result<Self> {
        if data.len() != h * w * d || stride == 0 {
            return Err(contract!("grid data length {} does not match {h}x{w}x{d}", data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(contract!("descriptor grid contains non-finite values"));
        }
        Ok(Self { h, w, d, stride, role, data })
    }

    pub fn from_tensor(t: &Tensor, item: usize, role: Role) -> Self {
        Self { h: t.h(), w: t.w(), d: t.c(), stride: STRIDE, role, data: t.item(item).to_vec() }
    }

    pub fn cells(&self) -> usize {
        self.h * self.w
    }

    /// Descriptor of cell `(x, y)`.
    pub fn descriptor(&self, x: usize, y: usize) -> Vec<f32> {
        let n = self.cells();
        (0..self.d).map(|c| self.data[c * n + y * self.w + x]).collect()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec([1, self.d, self.h, self.w], self.data.clone())
    }
}

/// Concatenate the `(2r+1)²` neighbourhood of every cell (zeros outside),
/// neighbourhood blocks in row-major order.
pub fn patchify(grid: &DescriptorGrid, radius: usize) -> DescriptorGrid {
    let side = 2 * radius + 1;
    let (h, w, d, n) = (grid.h, grid.w, grid.d, grid.cells());
    let mut data = vec![0.0f32; side * side * d * n];
    for by in 0..side {
        for bx in 0..side {
            let blk = by * side + bx;
            for y in 0..h {
                let sy = y as isize + by as isize - radius as isize;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for x in 0..w {
                    let sx = x as isize + bx as isize - radius as isize;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let src = sy as usize * w + sx as usize;
                    for c in 0..d {
                        data[(blk * d + c) * n + y * w + x] = grid.data[c * n + src];
                    }
                }
            }
        }
    }
    DescriptorGrid { d: d * side * side, data, ..grid.clone() }
}

/// Per input cell, the best reference cell `[x, y]` and its score.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrespondenceField {
    pub h: usize,
    pub w: usize,
    pub ref_h: usize,
    pub ref_w: usize,
    pub targets: Vec<[usize; 2]>,
    pub scores: Vec<f64>,
}

impl CorrespondenceField {
    /// Displacement `p′ − p` as a `[1, 2, h, w]` tensor (x first), scaled by
    /// `factor`.
    pub fn displacement(&self, factor: f32) -> Tensor {
        let n = self.h * self.w;
        let mut t = Tensor::zeros([1, 2, self.h, self.w]);
        for (p, tg) in self.targets.iter().enumerate() {
            let (x, y) = (p % self.w, p / self.w);
            t.data_mut()[p] = (tg[0] as f32 - x as f32) * factor;
            t.data_mut()[n + p] = (tg[1] as f32 - y as f32) * factor;
        }
        t
    }
}

fn unit_columns(g: &DescriptorGrid) -> Vec<f64> {
    let x: Vec<f64> = g.data.iter().map(|&v| v as f64).collect();
    normalize_columns(&x, g.d, g.cells()).0
}

const MATCH_BLOCK: usize = 512;

/// Argmax of normalised dot products; ties go to the lowest row-major index.
pub fn match_descriptors(lr: &DescriptorGrid, reference: &DescriptorGrid) -> Result<CorrespondenceField> {
    if lr.d != reference.d {
        return Err(contract!("descriptor dims differ: {} vs {}", lr.d, reference.d));
    }
    if reference.cells() == 0 || lr.cells() == 0 {
        return Err(contract!("empty descriptor grid"));
    }
    let (n, m, d) = (lr.cells(), reference.cells(), lr.d);
    let a = unit_columns(lr);
    let b = unit_columns(reference);
    let mut targets = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n);
    let mut block = vec![0.0f64; MATCH_BLOCK.min(n) * m];
    let mut at = vec![0.0f64; MATCH_BLOCK.min(n) * d];
    for p0 in (0..n).step_by(MATCH_BLOCK) {
        let rows = MATCH_BLOCK.min(n - p0);
        // Rows p0..p0+rows of Aᵀ, contiguous.
        for r in 0..rows {
            for c in 0..d {
                at[r * d + c] = a[c * n + p0 + r];
            }
        }
        gemm(Mat::new(&at[..rows * d], rows, d), Mat::new(&b, d, m), 0.0, &mut block[..rows * m]);
        for r in 0..rows {
            let row = &block[r * m..(r + 1) * m];
            let (mut best, mut bi) = (row[0], 0);
            for (k, &s) in row.iter().enumerate().skip(1) {
                if s > best {
                    best = s;
                    bi = k;
                }
            }
            targets.push([bi % reference.w, bi / reference.w]);
            scores.push(best);
        }
    }
    Ok(CorrespondenceField { h: lr.h, w: lr.w, ref_h: reference.h, ref_w: reference.w, targets, scores })
}

/// Row-stochastic `N×M` softmax of normalised similarities over temperature.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationVolume {
    pub n: usize,
    pub m: usize,
    pub temperature: f64,
    pub data: Vec<f64>,
}

impl CorrelationVolume {
    pub fn row(&self, p: usize) -> &[f64] {
        &self.data[p * self.m..(p + 1) * self.m]
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32).collect()
    }
}

pub fn correlation_volume(a: &DescriptorGrid, b: &DescriptorGrid, temperature: f64) -> Result<CorrelationVolume> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Domain(format!("temperature must be positive, got {temperature}")));
    }
    if a.d != b.d {
        return Err(contract!("descriptor dims differ: {} vs {}", a.d, b.d));
    }
    let (n, m) = (a.cells(), b.cells());
    let data = crate::kernels::losses::correlation_softmax(&unit_columns(a), n, &unit_columns(b), m, a.d, temperature);
    Ok(CorrelationVolume { n, m, temperature, data })
}

/// Which lattice a matcher's input branch reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatcherKind {
    /// HR input against HR reference.
    Teacher,
    /// LR input (bicubic-upsampled ×4 before encoding, so its grid shares
    /// the teacher's lattice) against HR reference.
    Student,
}

impl MatcherKind {
    pub fn name(self) -> &'static str {
        match self {
            MatcherKind::Teacher => "teacher",
            MatcherKind::Student => "student",
        }
    }
}

/// Two encoders with the same architecture and separate weights.
#[derive(Clone, Debug)]
pub struct Matcher {
    pub cfg: EncoderConfig,
    pub kind: MatcherKind,
    pub input: Encoder,
    pub reference: Encoder,
    pub store: ParamStore,
}

impl Matcher {
    pub fn new(cfg: EncoderConfig, kind: MatcherKind, seed: u64) -> Self {
        let mut store = ParamStore::new();
        // Both branches start from the same weights and then train apart.
        let input = Encoder::new(&mut store, &mut Init::new(seed), "input", &cfg);
        let reference = Encoder::new(&mut store, &mut Init::new(seed), "ref", &cfg);
        Self { cfg, kind, input, reference, store }
    }

    pub fn architecture_id(&self) -> String {
        format!("{}-{}", self.kind.name(), self.cfg.architecture_id())
    }

    /// The image the input branch actually encodes.
    pub fn input_image(&self, img: &ImageTensor) -> ImageTensor {
        match self.kind {
            MatcherKind::Teacher => img.clone(),
            MatcherKind::Student => bicubic_upsample(img, SCALE),
        }
    }

    pub fn input_grid(&self, img: &ImageTensor) -> Result<DescriptorGrid> {
        let role = match self.kind {
            MatcherKind::Teacher => Role::Hr,
            MatcherKind::Student => Role::Lr,
        };
        self.input.extract(&self.store, &self.input_image(img), role)
    }

    pub fn ref_grid(&self, img: &ImageTensor) -> Result<DescriptorGrid> {
        self.reference.extract(&self.store, img, Role::Hr)
    }

    /// Correspondences from the input's grid to the reference grid using
    /// `radius` patch descriptors.
    pub fn correspond(&self, input: &ImageTensor, reference: &ImageTensor, radius: usize) -> Result<CorrespondenceField> {
        let a = patchify(&self.input_grid(input)?, radius);
        let b = patchify(&self.ref_grid(reference)?, radius);
        match_descriptors(&a, &b)
    }
}

/// Fixed-feature baseline: 4×4 mean-pooled colour, 3×3 patch, mean removed,
/// so that matching computes normalised cross-correlation.
pub fn raw_patch_grid(img: &ImageTensor, role: Role) -> DescriptorGrid {
    let (h, w) = (img.height().div_ceil(STRIDE), img.width().div_ceil(STRIDE));
    let c = img.channels();
    let n = h * w;
    let mut data = vec![0.0f32; c * n];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut s = 0.0;
                for dy in 0..STRIDE {
                    for dx in 0..STRIDE {
                        let (yy, xx) = ((y * STRIDE + dy).min(img.height() - 1), (x * STRIDE + dx).min(img.width() - 1));
                        s += img.get(yy, xx, ch);
                    }
                }
                data[ch * n + y * w + x] = s / (STRIDE * STRIDE) as f32;
            }
        }
    }
    let grid = DescriptorGrid { h, w, d: c, stride: STRIDE, role, data };
    let mut p = patchify(&grid, 1);
    for q in 0..n {
        let mean = (0..p.d).map(|k| p.data[k * n + q]).sum::<f32>() / p.d as f32;
        for k in 0..p.d {
            p.data[k * n + q] -= mean;
        }
    }
    p
}
