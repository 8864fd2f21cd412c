//! Supervised training of the matchers from homography-related pairs.
//!
//! The teacher matches HR input against HR reference with the triplet margin
//! loss only. The student matches the (upsampled) LR input against the HR
//! reference and additionally imitates the teacher's correlation volume.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::TrainPair;
use crate::descriptor::{correlation_volume, prepare, DescriptorGrid, Matcher, MatcherKind, Role, STRIDE};
use crate::error::{contract, Error, Result};
use crate::graph::{Graph, TripletTargets};
use crate::homography::Homography;
use crate::kernels::losses::TripletParams;
use crate::nn::Adam;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContrastiveConfig {
    pub margin: f64,
    /// L∞ exclusion radius in grid cells.
    pub threshold: f64,
    pub temperature: f64,
    pub kl_weight: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub steps: usize,
    pub seed: u64,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            margin: 1.0,
            threshold: 4.0,
            temperature: 0.15,
            kl_weight: 15.0,
            batch_size: 8,
            learning_rate: 1e-3,
            steps: 1000,
            seed: 0,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.margin > 0.0
            && self.threshold >= 0.0
            && self.temperature > 0.0
            && self.kl_weight >= 0.0
            && self.batch_size >= 1
            && self.learning_rate > 0.0;
        ok.then_some(()).ok_or_else(|| Error::Config(format!("invalid contrastive config {self:?}")))
    }

    pub fn triplet(&self) -> TripletParams {
        TripletParams { margin: self.margin, threshold: self.threshold }
    }
}

/// Ground-truth reference-grid coordinate of input cell `p = (x, y)`:
/// the cell centre `stride·p` in input pixels is mapped by `h` and divided by
/// the reference stride. `None` when it falls off the reference lattice.
pub fn gt_correspondence(p: (usize, usize), h: &Homography, stride: usize, ref_lattice: (usize, usize)) -> Option<(f64, f64)> {
    let s = stride as f64;
    let (u, v) = h.apply(p.0 as f64 * s, p.1 as f64 * s)?;
    let (gx, gy) = (u / s, v / s);
    let inside = gx >= -0.5 && gy >= -0.5 && gx < ref_lattice.1 as f64 - 0.5 && gy < ref_lattice.0 as f64 - 0.5;
    inside.then_some((gx, gy))
}

/// [`gt_correspondence`] for every cell of an `(h, w)` input lattice.
pub fn gt_map(lattice: (usize, usize), h: &Homography, ref_lattice: (usize, usize)) -> Vec<Option<(f64, f64)>> {
    (0..lattice.0 * lattice.1).map(|p| gt_correspondence((p % lattice.1, p / lattice.1), h, STRIDE, ref_lattice)).collect()
}

/// A pair ready for training: encoder inputs, ground truth and (for
/// distillation) the teacher's frozen descriptors.
pub struct PreparedPair {
    pub input: Tensor,
    pub reference: Tensor,
    pub gt: Vec<Option<(f64, f64)>>,
    pub teacher: Option<(DescriptorGrid, DescriptorGrid)>,
}

fn lattice_of(t: &Tensor) -> (usize, usize) {
    (t.h() / STRIDE, t.w() / STRIDE)
}

/// Prepare `pairs` for a matcher of `kind`; pairs without any valid
/// correspondence are dropped.
pub fn prepare_pairs(pairs: &[TrainPair], kind: MatcherKind, teacher: Option<&Matcher>) -> Result<Vec<PreparedPair>> {
    let mut out = Vec::with_capacity(pairs.len());
    for p in pairs {
        let input_img = match kind {
            MatcherKind::Teacher => p.hr_input.clone(),
            MatcherKind::Student => crate::data::bicubic_upsample(&p.lr_input, p.scale_factor),
        };
        let input = prepare(&input_img);
        let reference = prepare(&p.hr_ref);
        let gt = gt_map(lattice_of(&input), &p.homography, lattice_of(&reference));
        if gt.iter().all(Option::is_none) {
            continue;
        }
        let teacher = match teacher {
            Some(t) => {
                let a = t.input_grid(&p.hr_input)?;
                let b = t.ref_grid(&p.hr_ref)?;
                if (a.h, a.w) != lattice_of(&input) {
                    return Err(contract!(
                        "teacher lattice {}x{} differs from student lattice {:?}",
                        a.h,
                        a.w,
                        lattice_of(&input)
                    ));
                }
                Some((a, b))
            }
            None => None,
        };
        out.push(PreparedPair { input, reference, gt, teacher });
    }
    if out.is_empty() {
        return Err(Error::NoValidPoints("no training pair has a valid correspondence".into()));
    }
    Ok(out)
}

/// Loss terms of one step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepLoss {
    pub total: f32,
    pub margin: f32,
    pub kl: f32,
}

/// Forward and backward of `L_margin + α·L_kl` on a batch; gradients are
/// accumulated into the matcher's store.
pub fn loss_and_grads(matcher: &mut Matcher, batch: &[&PreparedPair], cfg: &ContrastiveConfig) -> Result<StepLoss> {
    let mut g = Graph::new();
    let xa = g.input(Tensor::stack(&batch.iter().map(|p| p.input.clone()).collect::<Vec<_>>()));
    let xb = g.input(Tensor::stack(&batch.iter().map(|p| p.reference.clone()).collect::<Vec<_>>()));
    let fa = matcher.input.forward(&mut g, &matcher.store, xa);
    let fb = matcher.reference.forward(&mut g, &matcher.store, xb);
    let gts: TripletTargets = batch.iter().map(|p| p.gt.clone()).collect();
    let margin = g.triplet(fa, fb, gts, cfg.triplet())?;
    let mut total = margin;
    let mut kl_val = 0.0;
    if cfg.kl_weight > 0.0 {
        let mut vols = Vec::with_capacity(batch.len());
        for p in batch {
            let (ta, tb) = p.teacher.as_ref().ok_or_else(|| Error::Config("distillation needs teacher descriptors".into()))?;
            vols.push(correlation_volume(ta, tb, cfg.temperature)?.to_f32());
        }
        let kl = g.corr_kl(fa, fb, vols, cfg.temperature as f32);
        kl_val = g.scalar(kl);
        let weighted = g.scale(kl, cfg.kl_weight as f32);
        total = g.add(margin, weighted);
    }
    let loss = StepLoss { total: g.scalar(total), margin: g.scalar(margin), kl: kl_val };
    if !loss.total.is_finite() {
        return Err(Error::Diverged(format!("non-finite matcher loss {loss:?}")));
    }
    g.backward(total);
    matcher.store.accumulate(&g);
    Ok(loss)
}

/// Per-step losses of a training run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub steps: Vec<StepLoss>,
}

/// Seeded epoch-shuffled batches.
pub struct Batcher {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
    batch: usize,
}

impl Batcher {
    pub fn new(len: usize, batch: usize, seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), order: (0..len).collect(), pos: len, batch: batch.min(len).max(1) }
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.batch);
        while out.len() < self.batch {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

fn run(matcher: &mut Matcher, data: &[PreparedPair], cfg: &ContrastiveConfig) -> Result<TrainLog> {
    let opt = Adam::new(cfg.learning_rate as f32);
    let mut batcher = Batcher::new(data.len(), cfg.batch_size, cfg.seed ^ 0xB47C);
    let mut log = TrainLog::default();
    for step in 0..cfg.steps {
        let idx = batcher.next_batch();
        let batch: Vec<&PreparedPair> = idx.iter().map(|&i| &data[i]).collect();
        let l = loss_and_grads(matcher, &batch, cfg).map_err(|e| match e {
            Error::Diverged(m) => Error::Diverged(format!("step {step}: {m}")),
            e => e,
        })?;
        if !matcher.store.grads_finite() {
            return Err(Error::Diverged(format!("step {step}: non-finite gradient, loss {l:?}")));
        }
        matcher.store.adam_step(&opt);
        log.steps.push(l);
    }
    Ok(log)
}

/// Train an HR–HR teacher with the margin loss only.
pub fn train_teacher(matcher: &mut Matcher, pairs: &[TrainPair], cfg: &ContrastiveConfig) -> Result<TrainLog> {
    cfg.validate()?;
    if matcher.kind != MatcherKind::Teacher {
        return Err(Error::Config("train_teacher needs a teacher matcher".into()));
    }
    let data = prepare_pairs(pairs, MatcherKind::Teacher, None)?;
    run(matcher, &data, &ContrastiveConfig { kl_weight: 0.0, ..*cfg })
}

/// Train an LR–HR student with `L_margin + α·L_kl` against a frozen teacher.
pub fn train_student(matcher: &mut Matcher, teacher: &Matcher, pairs: &[TrainPair], cfg: &ContrastiveConfig) -> Result<TrainLog> {
    cfg.validate()?;
    if matcher.kind != MatcherKind::Student {
        return Err(Error::Config("train_student needs a student matcher".into()));
    }
    if teacher.kind != MatcherKind::Teacher {
        return Err(Error::Config("distillation source must be a teacher matcher".into()));
    }
    let data = prepare_pairs(pairs, MatcherKind::Student, (cfg.kl_weight > 0.0).then_some(teacher))?;
    run(matcher, &data, cfg)
}

/// A student with the teacher's weights.
pub fn student_from_teacher(teacher: &Matcher) -> Matcher {
    Matcher { kind: MatcherKind::Student, ..teacher.clone() }
}

/// Mean KL from the teacher's correlation volume to the student's, over
/// pairs (held-out distillation quality).
pub fn mean_kl(teacher: &Matcher, student: &Matcher, pairs: &[TrainPair], temperature: f64) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::NoValidPoints("no pairs".into()));
    }
    let mut total = 0.0;
    for p in pairs {
        let t = correlation_volume(&teacher.input_grid(&p.hr_input)?, &teacher.ref_grid(&p.hr_ref)?, temperature)?;
        let s = correlation_volume(&student.input_grid(&p.lr_input)?, &student.ref_grid(&p.hr_ref)?, temperature)?;
        total += crate::kernels::losses::kl_rows(&t.data, &s.data, t.n);
    }
    Ok(total / pairs.len() as f64)
}

/// Descriptor grids of the input and reference as the matcher sees them.
pub fn grids(matcher: &Matcher, input: &crate::ImageTensor, reference: &crate::ImageTensor) -> Result<(DescriptorGrid, DescriptorGrid)> {
    let a = matcher.input_grid(input)?;
    let b = matcher.ref_grid(reference)?;
    debug_assert_eq!(b.role, Role::Hr);
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_translation() {
        let id = Homography::identity();
        assert_eq!(gt_correspondence((3, 2), &id, 4, (10, 10)), Some((3.0, 2.0)));
        let t = Homography::translation(4.0, 0.0);
        assert_eq!(gt_correspondence((3, 2), &t, 4, (10, 10)), Some((4.0, 2.0)));
        assert_eq!(gt_correspondence((9, 2), &t, 4, (10, 10)), None);
    }

    #[test]
    fn batcher_covers_each_epoch() {
        let mut b = Batcher::new(5, 5, 1);
        let mut first = b.next_batch();
        first.sort();
        assert_eq!(first, [0, 1, 2, 3, 4]);
    }
}
