//! ×4 reference-based video super-resolution.
//!
//! Per-frame features are propagated forward and backward through the clip
//! with flow-warped hidden states. A reference branch aggregates reference
//! features around matched correspondences at the output lattice. The
//! upsampled input feature, both propagation branches and the reference
//! branch are attention-weighted and fused, and a bilinear upsample of the
//! frame is added as global skip.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::aggregation::{rescale_anchor, DynAgg};
use crate::contrastive::Batcher;
use crate::data::{bicubic_resize, bicubic_upsample, bilinear_resize, SCALE};
use crate::descriptor::{match_descriptors, prepare, raw_patch_grid, Matcher, MatcherKind, Role};
use crate::error::{contract, Error, Result};
use crate::flow::{lucas_kanade, FlowEstimator, FlowRefiner, LkConfig};
use crate::graph::{Graph, Var};
use crate::image::ImageTensor;
use crate::kernels::losses;
use crate::nn::{lr_factor, res_chain, run_chain, Adam, Conv2d, Init, ParamStore, ResBlock, LRELU};
use crate::tensor::Tensor;

/// Charbonnier `ε`.
pub const CHARBONNIER_EPS: f64 = 1e-8;

/// How reference features are aligned to each frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RefAlign {
    /// Learned LR–HR correspondences.
    Matching,
    /// Optical flow from the upsampled frame to the reference.
    Flow,
    /// Fixed colour-patch NCC (no learned matching).
    RawPatches,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VsrConfig {
    pub channels: usize,
    pub extract_blocks: usize,
    pub prop_blocks: usize,
    pub fusion_blocks: usize,
    pub attention: bool,
    pub dyn_agg: bool,
    pub align: RefAlign,
    /// Hidden width of the learned flow refinement; 0 disables it.
    pub flow_hidden: usize,
    pub match_radius: usize,
}

impl Default for VsrConfig {
    fn default() -> Self {
        Self {
            channels: 64,
            extract_blocks: 5,
            prop_blocks: 15,
            fusion_blocks: 2,
            attention: true,
            dyn_agg: true,
            align: RefAlign::Matching,
            flow_hidden: 16,
            match_radius: 1,
        }
    }
}

impl VsrConfig {
    pub fn architecture_id(&self) -> String {
        format!(
            "refvsr-x4-c{}-e{}-p{}-f{}-{}{}{}-fl{}",
            self.channels,
            self.extract_blocks,
            self.prop_blocks,
            self.fusion_blocks,
            if self.attention { "att" } else { "noatt" },
            if self.dyn_agg { "-dyn" } else { "-gather" },
            match self.align {
                RefAlign::Matching => "",
                RefAlign::Flow => "-flowalign",
                RefAlign::RawPatches => "-rawalign",
            },
            self.flow_hidden
        )
    }
}

/// Two ×2 depth-to-space stages.
#[derive(Clone, Debug)]
pub struct Upsampler {
    c1: Conv2d,
    c2: Conv2d,
}

impl Upsampler {
    fn new(store: &mut ParamStore, init: &mut Init, name: &str, c: usize) -> Self {
        Self {
            c1: Conv2d::new(store, init, &format!("{name}.0"), c, 4 * c, 3, 1, 1.0),
            c2: Conv2d::new(store, init, &format!("{name}.1"), c, 4 * c, 3, 1, 1.0),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let mut x = x;
        for c in [&self.c1, &self.c2] {
            let y = c.forward(g, store, x);
            let y = g.pixel_shuffle(y, 2);
            x = g.leaky_relu(y, LRELU);
        }
        x
    }
}

/// `mask = σ(conv(lrelu(conv(F̃ ∥ h̃))))`, last layer zero-initialised.
#[derive(Clone, Debug)]
pub struct AttentionHead {
    pub c1: Conv2d,
    pub c2: Conv2d,
}

impl AttentionHead {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, c: usize) -> Self {
        Self {
            c1: Conv2d::new(store, init, &format!("{name}.0"), 2 * c, c, 3, 1, 1.0),
            c2: Conv2d::zeros(store, &format!("{name}.1"), c, c, 3, 1),
        }
    }

    pub fn mask(&self, g: &mut Graph, store: &ParamStore, f_up: Var, h: Var) -> Var {
        let x = g.concat(&[f_up, h]);
        let x = self.c1.forward(g, store, x);
        let x = g.leaky_relu(x, LRELU);
        let x = self.c2.forward(g, store, x);
        g.sigmoid(x)
    }
}

/// `mask(F̃, h̃) ⊙ h̃`.
pub fn attention_fuse(g: &mut Graph, store: &ParamStore, head: &AttentionHead, f_up: Var, h: Var) -> Result<Var> {
    if g.value(f_up).shape() != g.value(h).shape() {
        return Err(contract!("attention inputs differ: {:?} vs {:?}", g.value(f_up).shape(), g.value(h).shape()));
    }
    let m = head.mask(g, store, f_up, h);
    Ok(g.mul(m, h))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Precomputed per-clip inputs, each entry batched over `n` clips.
#[derive(Clone, Debug)]
pub struct ClipInputs {
    /// Frames `[n, 3, h, w]` in `[0, 1]`.
    pub frames: Vec<Tensor>,
    /// Bilinear ×4 upsample of each frame.
    pub skip: Vec<Tensor>,
    /// Prepared reference `[n, 3, Hr, Wr]`.
    pub reference: Tensor,
    /// Per-frame reference displacement on the output lattice `[n, 2, 4h, 4w]`.
    pub anchors: Vec<Tensor>,
    /// Lucas–Kanade flow from frame `i` to `i − 1` (entry 0 unused, zeros).
    pub flow_fwd: Vec<Tensor>,
    /// Lucas–Kanade flow from frame `i` to `i + 1` (last entry unused).
    pub flow_bwd: Vec<Tensor>,
}

impl ClipInputs {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Batch clips of identical shape.
    pub fn stack(items: &[ClipInputs]) -> Self {
        let per = |sel: fn(&ClipInputs) -> &Vec<Tensor>| -> Vec<Tensor> {
            (0..sel(&items[0]).len()).map(|t| Tensor::stack(&items.iter().map(|c| sel(c)[t].clone()).collect::<Vec<_>>())).collect()
        };
        Self {
            frames: per(|c| &c.frames),
            skip: per(|c| &c.skip),
            reference: Tensor::stack(&items.iter().map(|c| c.reference.clone()).collect::<Vec<_>>()),
            anchors: per(|c| &c.anchors),
            flow_fwd: per(|c| &c.flow_fwd),
            flow_bwd: per(|c| &c.flow_bwd),
        }
    }

    /// Frames `t0..t0+len` cropped to the LR window `(y0, x0, h, w)`.
    pub fn window(&self, t0: usize, len: usize, y0: usize, x0: usize, h: usize, w: usize) -> Self {
        let s = SCALE;
        let lr = |v: &[Tensor]| v[t0..t0 + len].iter().map(|t| t.crop(y0, x0, h, w)).collect::<Vec<_>>();
        let hr = |v: &[Tensor]| v[t0..t0 + len].iter().map(|t| t.crop(s * y0, s * x0, s * h, s * w)).collect::<Vec<_>>();
        let mut anchors = hr(&self.anchors);
        // Anchors are relative to the output lattice, so cropping shifts the
        // absolute target; add the crop offset back into the reference frame.
        for a in &mut anchors {
            let plane = a.h() * a.w();
            for b in 0..a.n() {
                let item = a.item_mut(b);
                item[..plane].iter_mut().for_each(|v| *v += (s * x0) as f32);
                item[plane..].iter_mut().for_each(|v| *v += (s * y0) as f32);
            }
        }
        let mut flow_fwd = lr(&self.flow_fwd);
        let mut flow_bwd = lr(&self.flow_bwd);
        flow_fwd[0] = Tensor::zeros(flow_fwd[0].shape());
        let last = flow_bwd.len() - 1;
        flow_bwd[last] = Tensor::zeros(flow_bwd[last].shape());
        Self { frames: lr(&self.frames), skip: hr(&self.skip), reference: self.reference.clone(), anchors, flow_fwd, flow_bwd }
    }
}

/// Reference alignment source for [`clip_inputs`].
#[derive(Clone, Copy, Debug)]
pub enum RefSource<'a> {
    Matcher(&'a Matcher),
    Flow,
    RawPatches,
    /// No reference alignment (anchors are zero).
    None,
}

fn flows(frames: &[ImageTensor], lk: &LkConfig, dir: Direction) -> Result<Vec<Tensor>> {
    let n = frames.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let j = match dir {
            Direction::Forward => i.checked_sub(1),
            Direction::Backward => (i + 1 < n).then_some(i + 1),
        };
        out.push(match j {
            Some(j) => lucas_kanade(&frames[i], &frames[j], lk)?.to_tensor(),
            None => Tensor::zeros([1, 2, frames[i].height(), frames[i].width()]),
        });
    }
    Ok(out)
}

/// Precompute frame tensors, skips, flows and reference anchors of one clip.
pub fn clip_inputs(frames: &[ImageTensor], reference: &ImageTensor, source: RefSource<'_>, radius: usize, lk: &LkConfig) -> Result<ClipInputs> {
    let first = frames.first().ok_or_else(|| Error::Config("a clip needs at least one frame".into()))?;
    let (h, w, c) = (first.height(), first.width(), first.channels());
    if frames.iter().any(|f| (f.height(), f.width(), f.channels()) != (h, w, c)) {
        return Err(Error::Config("clip frames differ in shape".into()));
    }
    let (oh, ow) = (SCALE * h, SCALE * w);
    let mut reference = reference.clone();
    let mut anchors = Vec::with_capacity(frames.len());
    match source {
        RefSource::Matcher(m) => {
            if m.kind != MatcherKind::Student {
                return Err(Error::Config("reference matching needs an LR-HR (student) matcher".into()));
            }
            for f in frames {
                let field = m.correspond(f, &reference, radius)?;
                anchors.push(rescale_anchor(&field.displacement(1.0), SCALE));
            }
        }
        RefSource::Flow => {
            reference = bicubic_resize(&reference, oh, ow);
            for f in frames {
                anchors.push(lucas_kanade(&bicubic_upsample(f, SCALE), &reference, lk)?.to_tensor());
            }
        }
        RefSource::RawPatches => {
            let b = raw_patch_grid(&reference, Role::Hr);
            for f in frames {
                let field = match_descriptors(&raw_patch_grid(&bicubic_upsample(f, SCALE), Role::Lr), &b)?;
                anchors.push(rescale_anchor(&field.displacement(1.0), SCALE));
            }
        }
        RefSource::None => anchors.resize(frames.len(), Tensor::zeros([1, 2, oh, ow])),
    }
    Ok(ClipInputs {
        frames: frames.iter().map(|f| f.to_tensor()).collect(),
        skip: frames.iter().map(|f| bilinear_resize(f, oh, ow).to_tensor()).collect(),
        reference: prepare(&reference),
        anchors,
        flow_fwd: flows(frames, lk, Direction::Forward)?,
        flow_bwd: flows(frames, lk, Direction::Backward)?,
    })
}

#[derive(Clone, Debug)]
pub struct RefVideoSr {
    pub cfg: VsrConfig,
    pub store: ParamStore,
    pub flow: FlowEstimator,
    extract_head: Conv2d,
    extract: Vec<ResBlock>,
    prop_in: [Conv2d; 2],
    prop: [Vec<ResBlock>; 2],
    ref_head: Conv2d,
    agg: DynAgg,
    ups: [Upsampler; 3],
    att: [AttentionHead; 3],
    fuse_in: Conv2d,
    fuse: Vec<ResBlock>,
    out: Conv2d,
}

impl RefVideoSr {
    pub fn new(cfg: VsrConfig, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let mut init = Init::new(seed);
        let c = cfg.channels;
        let s = &mut store;
        let i = &mut init;
        let extract_head = Conv2d::new(s, i, "extract.head", 3, c, 3, 1, 1.0);
        let extract = res_chain(s, i, "extract.res", c, cfg.extract_blocks);
        let prop_in = [
            Conv2d::new(s, i, "prop.fwd.in", 2 * c, c, 3, 1, 1.0),
            Conv2d::new(s, i, "prop.bwd.in", 2 * c, c, 3, 1, 1.0),
        ];
        let prop = [res_chain(s, i, "prop.fwd.res", c, cfg.prop_blocks), res_chain(s, i, "prop.bwd.res", c, cfg.prop_blocks)];
        let ref_head = Conv2d::new(s, i, "ref.head", 3, c, 3, 1, 1.0);
        let agg = DynAgg::new(s, i, "ref.agg", c, c, c);
        let ups = [Upsampler::new(s, i, "up.input", c), Upsampler::new(s, i, "up.fwd", c), Upsampler::new(s, i, "up.bwd", c)];
        let att = [AttentionHead::new(s, i, "att.fwd", c), AttentionHead::new(s, i, "att.bwd", c), AttentionHead::new(s, i, "att.ref", c)];
        let fuse_in = Conv2d::new(s, i, "fuse.in", 4 * c, c, 3, 1, 1.0);
        let fuse = res_chain(s, i, "fuse.res", c, cfg.fusion_blocks);
        let out = Conv2d::new(s, i, "fuse.out", c, 3, 3, 1, 0.1);
        let refiner = (cfg.flow_hidden > 0).then(|| FlowRefiner::new(s, i, "flow", cfg.flow_hidden));
        let flow = FlowEstimator::new(LkConfig::default(), refiner);
        Self { cfg, store, flow, extract_head, extract, prop_in, prop, ref_head, agg, ups, att, fuse_in, fuse, out }
    }

    /// Prefix of the reference-branch parameters.
    pub const REF_PREFIX: &'static str = "ref.";
    /// Prefix of the flow-refinement parameters.
    pub const FLOW_PREFIX: &'static str = "flow.";

    fn features(&self, g: &mut Graph, frame: &Tensor) -> Var {
        let x = g.input(frame.map(|v| v - 0.5));
        let f = self.extract_head.forward(g, &self.store, x);
        let f = g.leaky_relu(f, LRELU);
        run_chain(&self.extract, g, &self.store, f)
    }

    fn flow_var(&self, g: &mut Graph, inp: &ClipInputs, i: usize, j: usize, lk: &Tensor) -> Result<Var> {
        match &self.flow.refiner {
            Some(r) => r.forward(g, &self.store, &inp.frames[i], &inp.frames[j], lk),
            None => Ok(g.input(lk.clone())),
        }
    }

    /// Hidden states of one propagation direction, in frame order.
    pub fn propagate(&self, g: &mut Graph, inp: &ClipInputs, feats: &[Var], dir: Direction) -> Result<Vec<Var>> {
        let n = feats.len();
        let (k, order): (usize, Vec<usize>) = match dir {
            Direction::Forward => (0, (0..n).collect()),
            Direction::Backward => (1, (0..n).rev().collect()),
        };
        let mut hidden: Vec<Option<Var>> = vec![None; n];
        let mut prev: Option<(usize, Var)> = None;
        for &i in &order {
            let warped = match prev {
                Some((j, h)) => {
                    let lk = if k == 0 { &inp.flow_fwd[i] } else { &inp.flow_bwd[i] };
                    let f = self.flow_var(g, inp, i, j, lk)?;
                    g.displaced(h, f)
                }
                None => g.input(Tensor::zeros(g.value(feats[i]).shape())),
            };
            let x = g.concat(&[feats[i], warped]);
            let x = self.prop_in[k].forward(g, &self.store, x);
            let x = g.leaky_relu(x, LRELU);
            let h = run_chain(&self.prop[k], g, &self.store, x);
            hidden[i] = Some(h);
            prev = Some((i, h));
        }
        Ok(hidden.into_iter().map(|h| h.expect("every frame visited")).collect())
    }

    /// Reference features, shared by every frame of a clip.
    pub fn reference_features(&self, g: &mut Graph, inp: &ClipInputs) -> Var {
        let r = g.input(inp.reference.clone());
        let r = self.ref_head.forward(g, &self.store, r);
        g.leaky_relu(r, LRELU)
    }

    /// Aggregated reference feature `r` on the output lattice of frame `i`.
    pub fn reference_branch(&self, g: &mut Graph, inp: &ClipInputs, r: Var, f_up: Var, i: usize) -> Var {
        if self.cfg.dyn_agg {
            self.agg.forward(g, &self.store, f_up, r, &inp.anchors[i])
        } else {
            let d = g.input(inp.anchors[i].clone());
            g.displaced(r, d)
        }
    }

    fn weighted(&self, g: &mut Graph, head: usize, f_up: Var, h: Var) -> Result<Var> {
        if self.cfg.attention {
            attention_fuse(g, &self.store, &self.att[head], f_up, h)
        } else {
            Ok(h)
        }
    }

    /// Output frames `[n, 3, 4h, 4w]` (unclamped). Without `use_ref` the
    /// reference slot of the fusion input holds zeros.
    pub fn forward(&self, g: &mut Graph, inp: &ClipInputs, use_ref: bool) -> Result<Vec<Var>> {
        if inp.is_empty() {
            return Err(Error::Config("a clip needs at least one frame".into()));
        }
        let feats: Vec<Var> = inp.frames.iter().map(|f| self.features(g, f)).collect();
        let fwd = self.propagate(g, inp, &feats, Direction::Forward)?;
        let bwd = self.propagate(g, inp, &feats, Direction::Backward)?;
        let r = use_ref.then(|| self.reference_features(g, inp));
        let mut outs = Vec::with_capacity(feats.len());
        for i in 0..feats.len() {
            let s = &self.store;
            let f_up = self.ups[0].forward(g, s, feats[i]);
            let hf = self.ups[1].forward(g, s, fwd[i]);
            let hb = self.ups[2].forward(g, s, bwd[i]);
            let af = self.weighted(g, 0, f_up, hf)?;
            let ab = self.weighted(g, 1, f_up, hb)?;
            let ar = if let Some(r) = r {
                let hr = self.reference_branch(g, inp, r, f_up, i);
                self.weighted(g, 2, f_up, hr)?
            } else {
                g.input(Tensor::zeros(g.value(f_up).shape()))
            };
            let x = g.concat(&[f_up, af, ab, ar]);
            let x = self.fuse_in.forward(g, s, x);
            let x = g.leaky_relu(x, LRELU);
            let x = run_chain(&self.fuse, g, s, x);
            let y = self.out.forward(g, s, x);
            let skip = g.input(inp.skip[i].clone());
            outs.push(g.add(y, skip));
        }
        Ok(outs)
    }

    /// Hidden states of one direction as plain tensors (inspection helper).
    pub fn hidden_states(&self, inp: &ClipInputs, dir: Direction) -> Result<Vec<Tensor>> {
        let mut g = Graph::new();
        let feats: Vec<Var> = inp.frames.iter().map(|f| self.features(&mut g, f)).collect();
        let h = self.propagate(&mut g, inp, &feats, dir)?;
        Ok(h.iter().map(|&v| g.value(v).clone()).collect())
    }

    /// Zero the reference aggregation weights, which removes the branch.
    pub fn zero_reference_branch(&mut self) {
        self.store.get_mut(self.agg.weight).value.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Restore every frame of `inp` (batch item 0), clamped to `[0, 1]`.
pub fn restore_inputs(model: &RefVideoSr, inp: &ClipInputs, use_ref: bool) -> Result<Vec<ImageTensor>> {
    let mut g = Graph::new();
    let outs = model.forward(&mut g, inp, use_ref)?;
    outs.iter().map(|&v| Ok(ImageTensor::from_tensor(g.value(v), 0)?.clamped())).collect()
}

/// Restore a clip against one reference image.
pub fn restore_clip(model: &RefVideoSr, matcher: Option<&Matcher>, clip: &[ImageTensor], reference: &ImageTensor) -> Result<Vec<ImageTensor>> {
    let source = match model.cfg.align {
        RefAlign::Flow => RefSource::Flow,
        RefAlign::RawPatches => RefSource::RawPatches,
        RefAlign::Matching => RefSource::Matcher(matcher.ok_or_else(|| Error::Config("reference VSR needs matcher weights".into()))?),
    };
    let inp = clip_inputs(clip, reference, source, model.cfg.match_radius, &model.flow.lk)?;
    restore_inputs(model, &inp, true)
}

/// `(1/N) Σ √((y − z)² + ε²)` over all frames, in double precision.
pub fn charbonnier_loss(pred: &[ImageTensor], gt: &[ImageTensor]) -> Result<f64> {
    if pred.len() != gt.len() || pred.iter().zip(gt).any(|(a, b)| a.data().len() != b.data().len()) {
        return Err(contract!("charbonnier inputs differ in shape"));
    }
    let a: Vec<f64> = pred.iter().flat_map(|f| f.data().iter().map(|&v| v as f64)).collect();
    let b: Vec<f64> = gt.iter().flat_map(|f| f.data().iter().map(|&v| v as f64)).collect();
    if a.is_empty() {
        return Err(contract!("charbonnier of empty clips"));
    }
    Ok(losses::charbonnier(&a, &b, CHARBONNIER_EPS, None, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VsrTrainConfig {
    pub learning_rate: f32,
    pub flow_learning_rate: f32,
    /// Iterations with the flow refinement frozen.
    pub flow_freeze_iters: usize,
    pub batch_size: usize,
    pub steps: usize,
    /// Frames per training window (0: whole clip).
    pub window: usize,
    /// LR side of training crops (0: whole frame).
    pub crop: usize,
    pub seed: u64,
    /// Decay the learning rate to 0 along a half cosine.
    pub cosine_decay: bool,
}

impl Default for VsrTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            flow_learning_rate: 2.5e-5,
            flow_freeze_iters: 5000,
            batch_size: 8,
            steps: 20_000,
            window: 0,
            crop: 16,
            seed: 0,
            cosine_decay: false,
        }
    }
}

impl VsrTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0 && self.flow_learning_rate >= 0.0 && self.batch_size >= 1;
        ok.then_some(()).ok_or_else(|| Error::Config(format!("invalid VSR training config {self:?}")))
    }
}

/// A training clip: inputs plus HR frames `[1, 3, 4h, 4w]`.
#[derive(Clone, Debug)]
pub struct VsrExample {
    pub inputs: ClipInputs,
    pub hr: Vec<Tensor>,
}

impl VsrExample {
    pub fn new(lr: &[ImageTensor], hr: &[ImageTensor], reference: &ImageTensor, source: RefSource<'_>, radius: usize, lk: &LkConfig) -> Result<Self> {
        if lr.len() != hr.len() {
            return Err(contract!("{} LR frames but {} HR frames", lr.len(), hr.len()));
        }
        for (l, h) in lr.iter().zip(hr) {
            if (h.height(), h.width()) != (SCALE * l.height(), SCALE * l.width()) {
                return Err(contract!("HR frame is not 4x its LR frame"));
            }
        }
        Ok(Self { inputs: clip_inputs(lr, reference, source, radius, lk)?, hr: hr.iter().map(|f| f.to_tensor()).collect() })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct VsrTrainLog {
    pub losses: Vec<f32>,
}

/// Train with the Charbonnier loss on random windows and crops. Clips must
/// share their shape.
pub fn train_vsr(model: &mut RefVideoSr, data: &[VsrExample], cfg: &VsrTrainConfig) -> Result<VsrTrainLog> {
    use rand::{Rng, SeedableRng};
    cfg.validate()?;
    let first = data.first().ok_or_else(|| Error::Config("no VSR training clips".into()))?;
    let (t, [_, _, h, w]) = (first.inputs.len(), first.inputs.frames[0].shape());
    if data.iter().any(|d| d.inputs.len() != t || d.inputs.frames[0].shape()[2..] != [h, w]) {
        return Err(Error::Config("VSR training clips must share length and size".into()));
    }
    let win = if cfg.window == 0 { t } else { cfg.window.min(t) };
    let (ch, cw) = if cfg.crop == 0 { (h, w) } else { (cfg.crop.min(h), cfg.crop.min(w)) };
    model.store.set_lr_scale_prefix(RefVideoSr::FLOW_PREFIX, cfg.flow_learning_rate / cfg.learning_rate);
    let mut batcher = Batcher::new(data.len(), cfg.batch_size, cfg.seed ^ 0x71D);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xC0);
    let mut log = VsrTrainLog::default();
    for step in 0..cfg.steps {
        model.store.set_frozen_prefix(RefVideoSr::FLOW_PREFIX, step < cfg.flow_freeze_iters);
        let idx = batcher.next_batch();
        let t0 = rng.random_range(0..=t - win);
        let (y0, x0) = (rng.random_range(0..=h - ch), rng.random_range(0..=w - cw));
        let items: Vec<ClipInputs> = idx.iter().map(|&i| data[i].inputs.window(t0, win, y0, x0, ch, cw)).collect();
        let inp = ClipInputs::stack(&items);
        let mut g = Graph::new();
        let outs = model.forward(&mut g, &inp, true)?;
        let mut total: Option<Var> = None;
        for (k, &o) in outs.iter().enumerate() {
            let target = Tensor::stack(
                &idx.iter().map(|&i| data[i].hr[t0 + k].crop(SCALE * y0, SCALE * x0, SCALE * ch, SCALE * cw)).collect::<Vec<_>>(),
            );
            let l = g.charbonnier(o, target, CHARBONNIER_EPS as f32);
            let l = g.scale(l, 1.0 / outs.len() as f32);
            total = Some(match total {
                Some(acc) => g.add(acc, l),
                None => l,
            });
        }
        let total = total.expect("non-empty window");
        let v = g.scalar(total);
        if !v.is_finite() {
            return Err(Error::Diverged(format!("step {step}: non-finite VSR loss")));
        }
        g.backward(total);
        model.store.accumulate(&g);
        model.store.adam_step(&Adam::new(cfg.learning_rate * lr_factor(cfg.cosine_decay, step, cfg.steps)));
        log.losses.push(v);
    }
    Ok(log)
}
