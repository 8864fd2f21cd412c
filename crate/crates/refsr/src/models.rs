//! Networks to and from checkpoints.

use std::path::Path;

use refsr_core::descriptor::{EncoderConfig, Matcher, MatcherKind};
use refsr_core::image_sr::{restore_inputs, sr_inputs, Correspondence, Discriminator, RefImageSr};
use refsr_core::ImageTensor;
use refsr_core::video_sr::RefVideoSr;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, Module};
use crate::config::{CorrespondenceSource, SrArch, VsrArch};
use crate::{Failure, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatcherArch {
    kind: String,
    channels: [usize; 3],
    dim: usize,
}

pub fn matcher_module(role: &str, m: &Matcher, optimizer: bool) -> Module {
    let arch = MatcherArch { kind: m.kind.name().into(), channels: m.cfg.channels, dim: m.cfg.dim };
    Module::capture(role, m.architecture_id(), serde_json::to_value(arch).unwrap(), &m.store, optimizer)
}

fn arch_of<T: for<'de> Deserialize<'de>>(m: &Module) -> Result<T> {
    serde_json::from_value(m.meta.arch.clone()).map_err(|e| Failure::invalid(format!("{} module architecture: {e}", m.meta.role)))
}

pub fn matcher_from(m: &Module) -> Result<Matcher> {
    let a: MatcherArch = arch_of(m)?;
    let kind = match a.kind.as_str() {
        "teacher" => MatcherKind::Teacher,
        "student" => MatcherKind::Student,
        k => return Err(Failure::invalid(format!("unknown matcher kind {k:?}"))),
    };
    let mut out = Matcher::new(EncoderConfig { channels: a.channels, dim: a.dim }, kind, 0);
    m.restore(&mut out.store)?;
    Ok(out)
}

/// A matcher checkpoint of the expected kind; `what` names it in errors.
pub fn load_matcher(path: &Path, kind: MatcherKind, what: &str) -> Result<(Matcher, Checkpoint)> {
    let ck = Checkpoint::load(path, what)?;
    if ck.header.kind != kind.name() {
        return Err(Failure::invalid(format!("{} is a {} checkpoint, expected {what}", path.display(), ck.header.kind)));
    }
    let m = matcher_from(ck.module("matcher")?)?;
    Ok((m, ck))
}

pub fn sr_module(model: &RefImageSr, arch: &SrArch) -> Module {
    Module::capture("sr", model.cfg.architecture_id(), serde_json::to_value(arch).unwrap(), &model.store, true)
}

pub fn critic_module(d: &Discriminator, channels: usize) -> Module {
    Module::capture("critic", format!("critic-c{channels}"), serde_json::json!({ "channels": channels }), &d.store, true)
}

pub fn vsr_module(model: &RefVideoSr, arch: &VsrArch) -> Module {
    Module::capture("vsr", model.cfg.architecture_id(), serde_json::to_value(arch).unwrap(), &model.store, true)
}

/// An image SR checkpoint: network, its architecture and the bundled
/// matcher (absent when trained without learned correspondences).
pub struct ImageSrBundle {
    pub model: RefImageSr,
    pub arch: SrArch,
    pub matcher: Option<Matcher>,
    pub checkpoint: Checkpoint,
}

impl ImageSrBundle {
    /// Restore one LR image against `reference`.
    pub fn restore(&self, lr: &ImageTensor, reference: &ImageTensor) -> Result<ImageTensor> {
        let corr = match (&self.matcher, self.arch.correspondence) {
            (Some(m), _) => Correspondence::Learned(m),
            (None, CorrespondenceSource::RawPatches) => Correspondence::RawPatches,
            (None, CorrespondenceSource::Learned) => return Err(Failure::missing("student checkpoint", "the image SR checkpoint bundles no matcher")),
        };
        let inp = sr_inputs(lr, reference, corr, self.arch.match_radius)?;
        Ok(restore_inputs(&self.model, &inp, true)?)
    }
}

pub fn load_image_sr(path: &Path) -> Result<ImageSrBundle> {
    let ck = Checkpoint::load(path, "image SR checkpoint")?;
    if ck.header.kind != "image-sr" {
        return Err(Failure::invalid(format!("{} is a {} checkpoint, expected image-sr", path.display(), ck.header.kind)));
    }
    let sr = ck.module("sr")?;
    let arch: SrArch = arch_of(sr)?;
    let mut model = RefImageSr::new(arch.core(), 0);
    sr.restore(&mut model.store)?;
    let matcher = ck.modules.iter().find(|m| m.meta.role == "matcher").map(matcher_from).transpose()?;
    Ok(ImageSrBundle { model, arch, matcher, checkpoint: ck })
}

pub struct VideoSrBundle {
    pub model: RefVideoSr,
    pub arch: VsrArch,
    pub matcher: Option<Matcher>,
    pub checkpoint: Checkpoint,
}

pub fn load_video_sr(path: &Path) -> Result<VideoSrBundle> {
    let ck = Checkpoint::load(path, "video SR checkpoint")?;
    if ck.header.kind != "video-sr" {
        return Err(Failure::invalid(format!("{} is a {} checkpoint, expected video-sr", path.display(), ck.header.kind)));
    }
    let m = ck.module("vsr")?;
    let arch: VsrArch = arch_of(m)?;
    let mut model = RefVideoSr::new(arch.core(), 0);
    m.restore(&mut model.store)?;
    let matcher = ck.modules.iter().find(|m| m.meta.role == "matcher").map(matcher_from).transpose()?;
    Ok(VideoSrBundle { model, arch, matcher, checkpoint: ck })
}
