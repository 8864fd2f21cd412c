//! ×4 reference-based image super-resolution.
//!
//! A residual trunk on the LR input is refined at three scales (×1, ×2, ×4)
//! by texture transfer from reference features that are dynamically
//! aggregated around the matched correspondences; depth-to-space layers
//! upsample between scales and a bicubic global skip carries the colours.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::aggregation::{rescale_anchor, DynAgg};
use crate::contrastive::Batcher;
use crate::data::{bicubic_upsample, SCALE};
use crate::descriptor::{match_descriptors, prepare, raw_patch_grid, Encoder, Matcher, MatcherKind, Role};
use crate::error::{contract, Error, Result};
use crate::graph::{Graph, Var};
use crate::image::ImageTensor;
use crate::nn::{lr_factor, res_chain, run_chain, Adam, Conv2d, Init, ParamStore, ResBlock, LRELU};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SrConfig {
    pub channels: usize,
    pub trunk_blocks: usize,
    /// Residual blocks of the ×1, ×2 and ×4 transfer stages.
    pub level_blocks: [usize; 3],
    /// Reference feature channels at ×1, ×2 and ×4.
    pub ref_channels: [usize; 3],
    /// Aggregate with learned offsets; otherwise plain gather at `p₀`.
    pub dyn_agg: bool,
    /// Start each transfer's last convolution at zero.
    pub zero_init_transfer: bool,
    pub max_offset: f32,
    /// Patch radius used when matching at inference.
    pub match_radius: usize,
}

impl Default for SrConfig {
    fn default() -> Self {
        Self {
            channels: 64,
            trunk_blocks: 16,
            level_blocks: [16, 8, 4],
            ref_channels: [64, 64, 64],
            dyn_agg: true,
            zero_init_transfer: true,
            max_offset: crate::aggregation::MAX_OFFSET,
            match_radius: 1,
        }
    }
}

impl SrConfig {
    pub fn architecture_id(&self) -> String {
        let [a, b, c] = self.level_blocks;
        let [r1, r2, r3] = self.ref_channels;
        format!(
            "refsr-x4-c{}-t{}-l{a}.{b}.{c}-r{r1}.{r2}.{r3}-{}",
            self.channels,
            self.trunk_blocks,
            if self.dyn_agg { "dyn" } else { "gather" }
        )
    }
}

/// One texture-transfer stage: `F + Res(F ∥ R)`.
#[derive(Clone, Debug)]
pub struct Transfer {
    pub agg: DynAgg,
    pub fuse_in: Conv2d,
    pub blocks: Vec<ResBlock>,
    pub fuse_out: Conv2d,
}

impl Transfer {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, c: usize, cr: usize, blocks: usize, cfg: &SrConfig) -> Self {
        let mut agg = DynAgg::new(store, init, &format!("{name}.agg"), c, cr, cr);
        agg.max_offset = cfg.max_offset;
        let fuse_in = Conv2d::new(store, init, &format!("{name}.fuse_in"), c + cr, c, 3, 1, 1.0);
        let blocks = res_chain(store, init, &format!("{name}.res"), c, blocks);
        let fuse_out = if cfg.zero_init_transfer {
            Conv2d::zeros(store, &format!("{name}.fuse_out"), c, c, 3, 1)
        } else {
            Conv2d::new(store, init, &format!("{name}.fuse_out"), c, c, 3, 1, 0.1)
        };
        Self { agg, fuse_in, blocks, fuse_out }
    }

    /// The residual `Res(F ∥ R)`.
    pub fn residual(&self, g: &mut Graph, store: &ParamStore, f: Var, r: Var) -> Var {
        let x = g.concat(&[f, r]);
        let x = self.fuse_in.forward(g, store, x);
        let x = g.leaky_relu(x, LRELU);
        let x = run_chain(&self.blocks, g, store, x);
        self.fuse_out.forward(g, store, x)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, f: Var, r: Var) -> Var {
        let res = self.residual(g, store, f, r);
        g.add(f, res)
    }
}

/// Network inputs for a batch.
#[derive(Clone, Debug)]
pub struct SrInputs {
    /// `[n, 3, h, w]` LR in `[0, 1]`.
    pub lr: Tensor,
    /// Bicubic ×4 upsample of `lr`.
    pub skip: Tensor,
    /// Prepared reference `[n, 3, Hr, Wr]` (see [`prepare`]).
    pub reference: Tensor,
    /// `p′ − p` on the LR lattice, `[n, 2, h, w]`.
    pub anchor: Tensor,
}

impl SrInputs {
    pub fn stack(items: &[SrInputs]) -> Self {
        let f = |sel: fn(&SrInputs) -> &Tensor| Tensor::stack(&items.iter().map(|i| sel(i).clone()).collect::<Vec<_>>());
        Self { lr: f(|i| &i.lr), skip: f(|i| &i.skip), reference: f(|i| &i.reference), anchor: f(|i| &i.anchor) }
    }
}

#[derive(Clone, Debug)]
pub struct RefImageSr {
    pub cfg: SrConfig,
    pub store: ParamStore,
    head: Conv2d,
    trunk: Vec<ResBlock>,
    ref_heads: [Conv2d; 3],
    levels: [Transfer; 3],
    ups: [Conv2d; 2],
    out1: Conv2d,
    out2: Conv2d,
}

impl RefImageSr {
    pub fn new(cfg: SrConfig, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let mut init = Init::new(seed);
        let c = cfg.channels;
        let [r1, r2, r4] = cfg.ref_channels;
        let head = Conv2d::new(&mut store, &mut init, "head", 3, c, 3, 1, 1.0);
        let trunk = res_chain(&mut store, &mut init, "trunk", c, cfg.trunk_blocks);
        let ref_heads = [
            Conv2d::new(&mut store, &mut init, "ref.x4", 3, r4, 3, 1, 1.0),
            Conv2d::new(&mut store, &mut init, "ref.x2", r4, r2, 3, 2, 1.0),
            Conv2d::new(&mut store, &mut init, "ref.x1", r2, r1, 3, 2, 1.0),
        ];
        let levels = [
            Transfer::new(&mut store, &mut init, "level.x1", c, r1, cfg.level_blocks[0], &cfg),
            Transfer::new(&mut store, &mut init, "level.x2", c, r2, cfg.level_blocks[1], &cfg),
            Transfer::new(&mut store, &mut init, "level.x4", c, r4, cfg.level_blocks[2], &cfg),
        ];
        let ups = [
            Conv2d::new(&mut store, &mut init, "up.0", c, 4 * c, 3, 1, 1.0),
            Conv2d::new(&mut store, &mut init, "up.1", c, 4 * c, 3, 1, 1.0),
        ];
        let out1 = Conv2d::new(&mut store, &mut init, "out.0", c, c, 3, 1, 1.0);
        let out2 = Conv2d::new(&mut store, &mut init, "out.1", c, 3, 3, 1, 0.1);
        Self { cfg, store, head, trunk, ref_heads, levels, ups, out1, out2 }
    }

    /// Reference features at ×4, ×2 and ×1 (in that order).
    fn ref_pyramid(&self, g: &mut Graph, reference: Var) -> [Var; 3] {
        let s = &self.store;
        let r4 = self.ref_heads[0].forward(g, s, reference);
        let r4 = g.leaky_relu(r4, LRELU);
        let r2 = self.ref_heads[1].forward(g, s, r4);
        let r2 = g.leaky_relu(r2, LRELU);
        let r1 = self.ref_heads[2].forward(g, s, r2);
        let r1 = g.leaky_relu(r1, LRELU);
        [r4, r2, r1]
    }

    fn transfer(&self, g: &mut Graph, level: usize, f: Var, r: Var, anchor: &Tensor) -> Var {
        let t = &self.levels[level];
        let agg = if self.cfg.dyn_agg {
            t.agg.forward(g, &self.store, f, r, anchor)
        } else {
            let d = g.input(anchor.clone());
            g.displaced(r, d)
        };
        t.forward(g, &self.store, f, agg)
    }

    /// Zero the last convolution of every transfer stage, which removes the
    /// reference branch.
    pub fn zero_reference_branch(&mut self) {
        for t in &self.levels {
            for id in [t.fuse_out.w, t.fuse_out.b] {
                self.store.get_mut(id).value.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    /// SR output `[n, 3, 4h, 4w]` (unclamped). With `use_ref == false` the
    /// transfer stages are skipped.
    pub fn forward(&self, g: &mut Graph, inp: &SrInputs, use_ref: bool) -> Var {
        let s = &self.store;
        let shifted = inp.lr.map(|v| v - 0.5);
        let x = g.input(shifted);
        let f = self.head.forward(g, s, x);
        let f = g.leaky_relu(f, LRELU);
        let mut f = run_chain(&self.trunk, g, s, f);
        let pyr = if use_ref {
            let r = g.input(inp.reference.clone());
            Some(self.ref_pyramid(g, r))
        } else {
            None
        };
        for level in 0..3 {
            if let Some([r4, r2, r1]) = pyr {
                let r = [r1, r2, r4][level];
                let anchor = rescale_anchor(&inp.anchor, 1 << level);
                f = self.transfer(g, level, f, r, &anchor);
            }
            if level < 2 {
                let u = self.ups[level].forward(g, s, f);
                let u = g.pixel_shuffle(u, 2);
                f = g.leaky_relu(u, LRELU);
            }
        }
        let o = self.out1.forward(g, s, f);
        let o = g.leaky_relu(o, LRELU);
        let o = self.out2.forward(g, s, o);
        let skip = g.input(inp.skip.clone());
        g.add(o, skip)
    }
}

/// How correspondences are obtained for the reference branch.
#[derive(Clone, Copy, Debug)]
pub enum Correspondence<'a> {
    /// A trained LR–HR matcher.
    Learned(&'a Matcher),
    /// Fixed colour-patch NCC on the upsampled LR (no learned matching).
    RawPatches,
}

/// `p′ − p` on the LR lattice as `[1, 2, h, w]`.
pub fn anchor_for(lr: &ImageTensor, reference: &ImageTensor, corr: Correspondence<'_>, radius: usize) -> Result<Tensor> {
    let field = match corr {
        Correspondence::Learned(m) => {
            if m.kind != MatcherKind::Student {
                return Err(Error::Config("reference matching needs an LR-HR (student) matcher".into()));
            }
            m.correspond(lr, reference, radius)?
        }
        Correspondence::RawPatches => {
            let a = raw_patch_grid(&bicubic_upsample(lr, SCALE), Role::Lr);
            let b = raw_patch_grid(reference, Role::Hr);
            match_descriptors(&a, &b)?
        }
    };
    if (field.h, field.w) != (lr.height(), lr.width()) {
        return Err(contract!("matching lattice {}x{} differs from LR {}x{}", field.h, field.w, lr.height(), lr.width()));
    }
    Ok(field.displacement(1.0))
}

/// Inputs for one `(lr, reference)` pair.
pub fn sr_inputs(lr: &ImageTensor, reference: &ImageTensor, corr: Correspondence<'_>, radius: usize) -> Result<SrInputs> {
    Ok(SrInputs {
        lr: lr.to_tensor(),
        skip: bicubic_upsample(lr, SCALE).to_tensor(),
        reference: prepare(reference),
        anchor: anchor_for(lr, reference, corr, radius)?,
    })
}

/// Restore one image; the output is exactly 4× the input and clamped.
pub fn restore(model: &RefImageSr, matcher: Option<&Matcher>, lr: &ImageTensor, reference: &ImageTensor) -> Result<ImageTensor> {
    let m = matcher.ok_or_else(|| Error::Config("reference SR needs matcher weights".into()))?;
    let inp = sr_inputs(lr, reference, Correspondence::Learned(m), model.cfg.match_radius)?;
    restore_inputs(model, &inp, true)
}

pub fn restore_inputs(model: &RefImageSr, inp: &SrInputs, use_ref: bool) -> Result<ImageTensor> {
    let mut g = Graph::new();
    let y = model.forward(&mut g, inp, use_ref);
    Ok(ImageTensor::from_tensor(g.value(y), 0)?.clamped())
}

/// A scalar-per-sample critic `[n, 3, H, W] → [n, 1, 1, 1]`.
pub trait Critic {
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
    fn score(&self, g: &mut Graph, x: Var) -> Var;
}

/// Small strided convolutional critic with global average pooling.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub store: ParamStore,
    convs: [Conv2d; 3],
    head: Conv2d,
}

impl Discriminator {
    pub fn new(channels: usize, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let mut init = Init::new(seed);
        let c = channels;
        let convs = [
            Conv2d::new(&mut store, &mut init, "d.0", 3, c, 3, 2, 1.0),
            Conv2d::new(&mut store, &mut init, "d.1", c, 2 * c, 3, 2, 1.0),
            Conv2d::new(&mut store, &mut init, "d.2", 2 * c, 2 * c, 3, 2, 1.0),
        ];
        let head = Conv2d::new(&mut store, &mut init, "d.head", 2 * c, 1, 1, 1, 1.0);
        Self { store, convs, head }
    }
}

impl Critic for Discriminator {
    fn store(&self) -> &ParamStore {
        &self.store
    }
    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }
    fn score(&self, g: &mut Graph, mut x: Var) -> Var {
        for c in &self.convs {
            x = c.forward(g, &self.store, x);
            x = g.leaky_relu(x, 0.2);
        }
        let x = g.spatial_mean(x);
        self.head.forward(g, &self.store, x)
    }
}

/// Values of the adversarial objective on a batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AdvLosses {
    /// `−mean D(sr)`.
    pub generator: f32,
    /// `mean D(sr) − mean D(hr) + penalty`.
    pub critic: f32,
    /// `λ · mean (‖∇D(x̂)‖ − 1)²`.
    pub penalty: f32,
}

fn interpolate(sr: &Tensor, hr: &Tensor, eps: &[f32]) -> Tensor {
    let mut x = hr.clone();
    let il = sr.item_len();
    for (i, &e) in eps.iter().enumerate() {
        for (j, v) in x.item_mut(i).iter_mut().enumerate() {
            *v = e * sr.data()[i * il + j] + (1.0 - e) * *v;
        }
    }
    x
}

/// Per-sample input gradients of the critic at `x`.
fn critic_input_grads<C: Critic>(critic: &C, x: &Tensor) -> Tensor {
    let mut g = Graph::new();
    let xv = g.leaf(x.clone());
    let d = critic.score(&mut g, xv);
    g.backward(d);
    g.grad(xv).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()))
}

fn item_norms(t: &Tensor) -> Vec<f32> {
    (0..t.n()).map(|i| libm::sqrtf(t.item(i).iter().map(|v| v * v).sum())).collect()
}

/// Generator and critic losses with the gradient penalty at
/// `x̂ = ε·sr + (1 − ε)·hr` (one `ε` per sample).
pub fn adversarial_losses<C: Critic>(sr: &Tensor, hr: &Tensor, critic: &C, gp_weight: f32, eps: &[f32]) -> Result<AdvLosses> {
    if sr.shape() != hr.shape() || eps.len() != sr.n() {
        return Err(contract!("adversarial inputs disagree: {:?} vs {:?}, {} weights", sr.shape(), hr.shape(), eps.len()));
    }
    let mut g = Graph::new();
    let (a, b) = (g.input(sr.clone()), g.input(hr.clone()));
    let (da, db) = (critic.score(&mut g, a), critic.score(&mut g, b));
    let (ma, mb) = (g.mean(da), g.mean(db));
    let (fa, fb) = (g.scalar(ma), g.scalar(mb));
    let v = critic_input_grads(critic, &interpolate(sr, hr, eps));
    let norms = item_norms(&v);
    let penalty = gp_weight * norms.iter().map(|n| (n - 1.0) * (n - 1.0)).sum::<f32>() / norms.len() as f32;
    Ok(AdvLosses { generator: -fa, critic: fa - fb + penalty, penalty })
}

/// Step size of the directional finite difference used for the penalty's
/// parameter gradient.
pub const GP_FD_STEP: f32 = 1e-2;

/// Accumulate critic parameter gradients of `D(sr) − D(hr) + penalty`.
///
/// The penalty's parameter gradient needs `∂/∂θ ‖∇ₓD‖`. With `v = ∇ₓD` held
/// fixed this equals `∂/∂θ (v/‖v‖)·∇ₓD`, a directional derivative that is
/// evaluated as a central difference of `D` along `v/‖v‖`, then scaled.
pub fn critic_grads<C: Critic>(critic: &mut C, sr: &Tensor, hr: &Tensor, gp_weight: f32, eps: &[f32]) -> Result<AdvLosses> {
    let losses = adversarial_losses(sr, hr, critic, gp_weight, eps)?;
    let n = sr.n() as f32;
    let mut g = Graph::new();
    let (a, b) = (g.input(sr.clone()), g.input(hr.clone()));
    let (da, db) = (critic.score(&mut g, a), critic.score(&mut g, b));
    let diff = g.sub(da, db);
    let obj = g.mean(diff);
    g.backward(obj);
    critic.store_mut().accumulate(&g);

    let xhat = interpolate(sr, hr, eps);
    let v = critic_input_grads(critic, &xhat);
    let norms = item_norms(&v);
    let (mut plus, mut minus) = (xhat.clone(), xhat.clone());
    let mut weights = vec![0.0f32; sr.n()];
    for (i, &nv) in norms.iter().enumerate() {
        if nv < 1e-12 {
            continue;
        }
        // d/dθ λ(‖v‖−1)²/n = (2λ(‖v‖−1)/n) · d‖v‖/dθ
        weights[i] = 2.0 * gp_weight * (nv - 1.0) / n;
        for ((p, m), &dv) in plus.item_mut(i).iter_mut().zip(minus.item_mut(i).iter_mut()).zip(v.item(i)) {
            *p += GP_FD_STEP * dv / nv;
            *m -= GP_FD_STEP * dv / nv;
        }
    }
    if weights.iter().any(|&w| w != 0.0) {
        let mut g = Graph::new();
        let (p, m) = (g.input(plus), g.input(minus));
        let (dp, dm) = (critic.score(&mut g, p), critic.score(&mut g, m));
        let d = g.sub(dp, dm);
        let seed = Tensor::from_vec(g.value(d).shape(), weights.iter().map(|w| w / (2.0 * GP_FD_STEP)).collect());
        g.backward_with(d, seed);
        critic.store_mut().accumulate(&g);
    }
    Ok(losses)
}

/// Feature extractor of the perceptual loss.
#[derive(Clone, Debug)]
pub enum Extractor {
    /// Pixels themselves.
    Identity,
    /// A frozen encoder (by default the matcher's reference branch).
    Encoder(Encoder, ParamStore),
}

impl Extractor {
    pub fn from_matcher(m: &Matcher) -> Self {
        let mut store = m.store.clone();
        store.set_frozen(true);
        Extractor::Encoder(m.reference.clone(), store)
    }

    fn features(&self, g: &mut Graph, x: Var) -> Var {
        match self {
            Extractor::Identity => x,
            Extractor::Encoder(e, s) => {
                let shift = g.input(Tensor::full(g.value(x).shape(), -0.5));
                let x = g.add(x, shift);
                e.forward(g, s, x)
            }
        }
    }
}

/// Perceptual distance between `sr` and constant `hr` under `ex`.
pub fn perceptual_loss(g: &mut Graph, ex: &Extractor, sr: Var, hr: &Tensor) -> Var {
    let target = {
        let mut tg = Graph::new();
        let h = tg.input(hr.clone());
        let f = ex.features(&mut tg, h);
        tg.value(f).clone()
    };
    let f = ex.features(g, sr);
    g.perceptual(f, target)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SrTrainConfig {
    pub rec_weight: f32,
    pub per_weight: f32,
    pub adv_weight: f32,
    pub learning_rate: f32,
    pub critic_learning_rate: f32,
    /// Iterations trained with the reconstruction loss alone.
    pub rec_only_iters: usize,
    pub gp_weight: f32,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    /// Force `per_weight = adv_weight = 0` throughout.
    pub rec_only: bool,
    /// Decay the generator learning rate to 0 along a half cosine.
    pub cosine_decay: bool,
}

impl Default for SrTrainConfig {
    fn default() -> Self {
        Self {
            rec_weight: 1.0,
            per_weight: 1e-4,
            adv_weight: 1e-6,
            learning_rate: 1e-4,
            critic_learning_rate: 1e-4,
            rec_only_iters: 10_000,
            gp_weight: 10.0,
            batch_size: 8,
            steps: 20_000,
            seed: 0,
            rec_only: false,
            cosine_decay: false,
        }
    }
}

impl SrTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.rec_weight, self.per_weight, self.adv_weight, self.gp_weight].iter().all(|v| *v >= 0.0 && v.is_finite())
            && self.learning_rate > 0.0
            && self.critic_learning_rate > 0.0
            && self.batch_size >= 1;
        ok.then_some(()).ok_or_else(|| Error::Config(format!("invalid SR training config {self:?}")))
    }
}

/// A training example with its precomputed inputs and HR target.
#[derive(Clone, Debug)]
pub struct SrExample {
    pub inputs: SrInputs,
    pub hr: Tensor,
}

impl SrExample {
    pub fn new(lr: &ImageTensor, hr: &ImageTensor, reference: &ImageTensor, corr: Correspondence<'_>, radius: usize) -> Result<Self> {
        if (hr.height(), hr.width()) != (SCALE * lr.height(), SCALE * lr.width()) {
            return Err(contract!("HR {}x{} is not 4x LR {}x{}", hr.height(), hr.width(), lr.height(), lr.width()));
        }
        Ok(Self { inputs: sr_inputs(lr, reference, corr, radius)?, hr: hr.to_tensor() })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SrStepLog {
    pub rec: f32,
    pub per: f32,
    pub adv: f32,
    pub critic: f32,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SrTrainLog {
    pub steps: Vec<SrStepLog>,
    pub critic_updates: usize,
}

/// Train the SR network (the matcher is already frozen inside the
/// examples' anchors). Examples in a batch must share their shapes.
pub fn train_sr(
    model: &mut RefImageSr,
    critic: &mut Discriminator,
    extractor: &Extractor,
    data: &[SrExample],
    cfg: &SrTrainConfig,
) -> Result<SrTrainLog> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("no SR training examples".into()));
    }
    let copt = Adam::new(cfg.critic_learning_rate);
    let mut batcher = Batcher::new(data.len(), cfg.batch_size, cfg.seed ^ 0x5E);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xA11);
    let mut log = SrTrainLog::default();
    for step in 0..cfg.steps {
        let idx = batcher.next_batch();
        let inputs = SrInputs::stack(&idx.iter().map(|&i| data[i].inputs.clone()).collect::<Vec<_>>());
        let hr = Tensor::stack(&idx.iter().map(|&i| data[i].hr.clone()).collect::<Vec<_>>());
        let full = !cfg.rec_only && step >= cfg.rec_only_iters;
        let mut g = Graph::new();
        let sr = model.forward(&mut g, &inputs, true);
        let rec = g.l1(sr, hr.clone());
        let mut total = g.scale(rec, cfg.rec_weight);
        let mut entry = SrStepLog { rec: g.scalar(rec), ..Default::default() };
        if full && cfg.per_weight > 0.0 {
            let per = perceptual_loss(&mut g, extractor, sr, &hr);
            entry.per = g.scalar(per);
            let w = g.scale(per, cfg.per_weight);
            total = g.add(total, w);
        }
        if full && cfg.adv_weight > 0.0 {
            let d = critic.score(&mut g, sr);
            let md = g.mean(d);
            entry.adv = -g.scalar(md);
            let w = g.scale(md, -cfg.adv_weight);
            total = g.add(total, w);
        }
        if !g.scalar(total).is_finite() {
            return Err(Error::Diverged(format!("step {step}: non-finite SR loss {entry:?}")));
        }
        let sr_value = g.value(sr).clone();
        g.backward(total);
        model.store.accumulate(&g);
        model.store.adam_step(&Adam::new(cfg.learning_rate * lr_factor(cfg.cosine_decay, step, cfg.steps)));
        if full && cfg.adv_weight > 0.0 {
            let eps: Vec<f32> = (0..sr_value.n()).map(|_| rng.random::<f32>()).collect();
            critic.store.zero_grad();
            let l = critic_grads(critic, &sr_value, &hr, cfg.gp_weight, &eps)?;
            entry.critic = l.critic;
            if !critic.store.grads_finite() {
                return Err(Error::Diverged(format!("step {step}: non-finite critic gradient")));
            }
            critic.store.adam_step(&copt);
            log.critic_updates += 1;
        }
        log.steps.push(entry);
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SrConfig {
        SrConfig { channels: 4, trunk_blocks: 1, level_blocks: [1, 1, 1], ref_channels: [4, 4, 4], ..Default::default() }
    }

    #[test]
    fn output_is_four_times_input() {
        let model = RefImageSr::new(tiny(), 1);
        let lr = crate::data::procedural_texture(2, 6, 5);
        let reference = crate::data::procedural_texture(3, 20, 24);
        let inp = sr_inputs(&lr, &reference, Correspondence::RawPatches, 1).unwrap();
        let out = restore_inputs(&model, &inp, true).unwrap();
        assert_eq!((out.height(), out.width()), (24, 20));
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn missing_matcher_is_configuration_error() {
        let model = RefImageSr::new(tiny(), 1);
        let img = ImageTensor::zeros(4, 4, 3);
        assert!(matches!(restore(&model, None, &img, &img), Err(Error::Config(_))));
    }
}
