//! Flat TOML stage configurations.
//!
//! Every key is optional and defaults to the value shown by
//! `MatcherFile::default()` and friends; unknown keys are rejected. A
//! config's fingerprint is the SHA-256 of its canonical JSON form (fields in
//! declaration order), so it changes exactly when a resolved value changes.
//!
//! ```toml
//! # train-teacher / train-student / make-pairs
//! seed = 0
//! encoder_channels = [64, 128, 256]
//! descriptor_dim = 256
//! margin = 1.0
//! threshold = 4.0
//! temperature = 0.15
//! kl_weight = 15.0
//! batch_size = 8
//! learning_rate = 1e-3
//! steps = 1000
//! crop = 160
//! scale_min = 0.7
//! scale_max = 1.3
//! rot_min = 0.0
//! rot_max = 30.0
//! random_sign = true
//! jitter = 0.15
//! ```

use std::fmt;
use std::path::Path;

use refsr_core::contrastive::ContrastiveConfig;
use refsr_core::descriptor::EncoderConfig;
use refsr_core::homography::TransformConfig;
use refsr_core::image_sr::{SrConfig, SrTrainConfig};
use refsr_core::video_sr::{RefAlign, VsrConfig, VsrTrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::io::{read, sha256_hex};
use crate::{Failure, Result};

/// Ablation switches applied on top of a config file.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Student trained without the distillation term (`kl_weight = 0`).
    NoDistill,
    /// Plain gather at the matched position instead of learned offsets.
    NoDynAgg,
    /// Fixed colour-patch NCC correspondences instead of the learned matcher.
    NoContrastive,
    /// Video fusion without attention masks.
    NoAttention,
    /// Video reference aligned by optical flow instead of matching.
    FlowAlign,
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Preset::NoDistill => "no-distill",
            Preset::NoDynAgg => "no-dyn-agg",
            Preset::NoContrastive => "no-contrastive",
            Preset::NoAttention => "no-attention",
            Preset::FlowAlign => "flow-align",
        };
        f.write_str(s)
    }
}

fn not_applicable(p: Preset, stage: &str) -> Failure {
    Failure::invalid(format!("preset {p} does not apply to {stage}"))
}

/// Parse a TOML file; a missing file is a missing input.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = String::from_utf8(read(path, "config file")?).map_err(|_| Failure::invalid(format!("{}: not UTF-8", path.display())))?;
    parse(&text).map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))
}

pub fn parse<T: DeserializeOwned>(text: &str) -> std::result::Result<T, String> {
    toml::from_str(text).map_err(|e| e.to_string())
}

/// Canonical JSON of a resolved config.
pub fn canonical<T: Serialize>(cfg: &T) -> serde_json::Value {
    serde_json::to_value(cfg).expect("configs serialize")
}

pub fn fingerprint<T: Serialize>(cfg: &T) -> String {
    sha256_hex(&serde_json::to_vec(cfg).expect("configs serialize"))
}

/// Correspondence source of the SR reference branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrespondenceSource {
    Learned,
    RawPatches,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlignSource {
    Matching,
    Flow,
    RawPatches,
}

/// Matcher training and pair synthesis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatcherFile {
    pub seed: u64,
    pub encoder_channels: [usize; 3],
    pub descriptor_dim: usize,
    pub margin: f64,
    pub threshold: f64,
    pub temperature: f64,
    pub kl_weight: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub steps: usize,
    /// HR side of synthesized pairs.
    pub crop: usize,
    pub scale_min: f64,
    pub scale_max: f64,
    pub rot_min: f64,
    pub rot_max: f64,
    pub random_sign: bool,
    pub jitter: f64,
}

impl Default for MatcherFile {
    fn default() -> Self {
        let e = EncoderConfig::default();
        let c = ContrastiveConfig::default();
        let t = TransformConfig::default();
        Self {
            seed: 0,
            encoder_channels: e.channels,
            descriptor_dim: e.dim,
            margin: c.margin,
            threshold: c.threshold,
            temperature: c.temperature,
            kl_weight: c.kl_weight,
            batch_size: c.batch_size,
            learning_rate: c.learning_rate,
            steps: c.steps,
            crop: 160,
            scale_min: t.scale_min,
            scale_max: t.scale_max,
            rot_min: t.rot_min,
            rot_max: t.rot_max,
            random_sign: t.random_sign,
            jitter: t.jitter,
        }
    }
}

impl MatcherFile {
    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig { channels: self.encoder_channels, dim: self.descriptor_dim }
    }

    pub fn contrastive(&self) -> ContrastiveConfig {
        ContrastiveConfig {
            margin: self.margin,
            threshold: self.threshold,
            temperature: self.temperature,
            kl_weight: self.kl_weight,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            steps: self.steps,
            seed: self.seed,
        }
    }

    pub fn transform(&self) -> TransformConfig {
        TransformConfig {
            scale_min: self.scale_min,
            scale_max: self.scale_max,
            rot_min: self.rot_min,
            rot_max: self.rot_max,
            random_sign: self.random_sign,
            jitter: self.jitter,
        }
    }

    pub fn apply(&mut self, preset: Preset) -> Result<()> {
        match preset {
            Preset::NoDistill => self.kl_weight = 0.0,
            p => return Err(not_applicable(p, "matcher training")),
        }
        Ok(())
    }
}

/// Image SR architecture and training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SrFile {
    pub seed: u64,
    pub channels: usize,
    pub trunk_blocks: usize,
    pub level_blocks: [usize; 3],
    pub ref_channels: [usize; 3],
    pub dyn_agg: bool,
    pub zero_init_transfer: bool,
    pub max_offset: f32,
    pub match_radius: usize,
    pub correspondence: CorrespondenceSource,
    pub critic_channels: usize,
    pub rec_weight: f32,
    pub per_weight: f32,
    pub adv_weight: f32,
    pub learning_rate: f32,
    pub critic_learning_rate: f32,
    pub rec_only_iters: usize,
    pub gp_weight: f32,
    pub batch_size: usize,
    pub steps: usize,
    pub rec_only: bool,
    /// Decay the learning rate to 0 along a half cosine.
    pub cosine_decay: bool,
    /// HR side of the centre crop taken from every training pair
    /// (0: whole image; all pairs must then share a size).
    pub crop: usize,
}

impl Default for SrFile {
    fn default() -> Self {
        let a = SrConfig::default();
        let t = SrTrainConfig::default();
        Self {
            seed: 0,
            channels: a.channels,
            trunk_blocks: a.trunk_blocks,
            level_blocks: a.level_blocks,
            ref_channels: a.ref_channels,
            dyn_agg: a.dyn_agg,
            zero_init_transfer: a.zero_init_transfer,
            max_offset: a.max_offset,
            match_radius: a.match_radius,
            correspondence: CorrespondenceSource::Learned,
            critic_channels: 32,
            rec_weight: t.rec_weight,
            per_weight: t.per_weight,
            adv_weight: t.adv_weight,
            learning_rate: t.learning_rate,
            critic_learning_rate: t.critic_learning_rate,
            rec_only_iters: t.rec_only_iters,
            gp_weight: t.gp_weight,
            batch_size: t.batch_size,
            steps: t.steps,
            rec_only: t.rec_only,
            cosine_decay: t.cosine_decay,
            crop: 160,
        }
    }
}

impl SrFile {
    pub fn arch(&self) -> SrArch {
        SrArch {
            channels: self.channels,
            trunk_blocks: self.trunk_blocks,
            level_blocks: self.level_blocks,
            ref_channels: self.ref_channels,
            dyn_agg: self.dyn_agg,
            zero_init_transfer: self.zero_init_transfer,
            max_offset: self.max_offset,
            match_radius: self.match_radius,
            correspondence: self.correspondence,
        }
    }

    pub fn train(&self) -> SrTrainConfig {
        SrTrainConfig {
            rec_weight: self.rec_weight,
            per_weight: self.per_weight,
            adv_weight: self.adv_weight,
            learning_rate: self.learning_rate,
            critic_learning_rate: self.critic_learning_rate,
            rec_only_iters: self.rec_only_iters,
            gp_weight: self.gp_weight,
            batch_size: self.batch_size,
            steps: self.steps,
            seed: self.seed,
            rec_only: self.rec_only,
            cosine_decay: self.cosine_decay,
        }
    }

    pub fn apply(&mut self, preset: Preset) -> Result<()> {
        match preset {
            Preset::NoDynAgg => self.dyn_agg = false,
            Preset::NoContrastive => self.correspondence = CorrespondenceSource::RawPatches,
            p => return Err(not_applicable(p, "train-sr")),
        }
        Ok(())
    }
}

/// What a checkpoint needs to rebuild an image SR network.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SrArch {
    pub channels: usize,
    pub trunk_blocks: usize,
    pub level_blocks: [usize; 3],
    pub ref_channels: [usize; 3],
    pub dyn_agg: bool,
    pub zero_init_transfer: bool,
    pub max_offset: f32,
    pub match_radius: usize,
    pub correspondence: CorrespondenceSource,
}

impl SrArch {
    pub fn core(&self) -> SrConfig {
        SrConfig {
            channels: self.channels,
            trunk_blocks: self.trunk_blocks,
            level_blocks: self.level_blocks,
            ref_channels: self.ref_channels,
            dyn_agg: self.dyn_agg,
            zero_init_transfer: self.zero_init_transfer,
            max_offset: self.max_offset,
            match_radius: self.match_radius,
        }
    }
}

/// Video SR architecture and training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VsrFile {
    pub seed: u64,
    pub channels: usize,
    pub extract_blocks: usize,
    pub prop_blocks: usize,
    pub fusion_blocks: usize,
    pub attention: bool,
    pub dyn_agg: bool,
    pub align: AlignSource,
    pub flow_hidden: usize,
    pub match_radius: usize,
    pub learning_rate: f32,
    pub flow_learning_rate: f32,
    pub flow_freeze_iters: usize,
    pub batch_size: usize,
    pub steps: usize,
    /// Frames per training window (0: whole clip).
    pub window: usize,
    /// Decay the learning rate to 0 along a half cosine.
    pub cosine_decay: bool,
    /// HR side of training patches; a multiple of 4 (0: whole frame).
    pub patch: usize,
}

impl Default for VsrFile {
    fn default() -> Self {
        let a = VsrConfig::default();
        let t = VsrTrainConfig::default();
        Self {
            seed: 0,
            channels: a.channels,
            extract_blocks: a.extract_blocks,
            prop_blocks: a.prop_blocks,
            fusion_blocks: a.fusion_blocks,
            attention: a.attention,
            dyn_agg: a.dyn_agg,
            align: AlignSource::Matching,
            flow_hidden: a.flow_hidden,
            match_radius: a.match_radius,
            learning_rate: t.learning_rate,
            flow_learning_rate: t.flow_learning_rate,
            flow_freeze_iters: t.flow_freeze_iters,
            batch_size: t.batch_size,
            steps: t.steps,
            window: t.window,
            cosine_decay: t.cosine_decay,
            patch: 64,
        }
    }
}

impl VsrFile {
    pub fn arch(&self) -> VsrArch {
        VsrArch {
            channels: self.channels,
            extract_blocks: self.extract_blocks,
            prop_blocks: self.prop_blocks,
            fusion_blocks: self.fusion_blocks,
            attention: self.attention,
            dyn_agg: self.dyn_agg,
            align: self.align,
            flow_hidden: self.flow_hidden,
            match_radius: self.match_radius,
        }
    }

    pub fn train(&self) -> Result<VsrTrainConfig> {
        if self.patch % 4 != 0 {
            return Err(Failure::invalid(format!("patch {} is not a multiple of 4", self.patch)));
        }
        Ok(VsrTrainConfig {
            learning_rate: self.learning_rate,
            flow_learning_rate: self.flow_learning_rate,
            flow_freeze_iters: self.flow_freeze_iters,
            batch_size: self.batch_size,
            steps: self.steps,
            window: self.window,
            crop: self.patch / 4,
            seed: self.seed,
            cosine_decay: self.cosine_decay,
        })
    }

    pub fn apply(&mut self, preset: Preset) -> Result<()> {
        match preset {
            Preset::NoDynAgg => self.dyn_agg = false,
            Preset::NoContrastive => self.align = AlignSource::RawPatches,
            Preset::NoAttention => self.attention = false,
            Preset::FlowAlign => self.align = AlignSource::Flow,
            p => return Err(not_applicable(p, "train-vsr")),
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VsrArch {
    pub channels: usize,
    pub extract_blocks: usize,
    pub prop_blocks: usize,
    pub fusion_blocks: usize,
    pub attention: bool,
    pub dyn_agg: bool,
    pub align: AlignSource,
    pub flow_hidden: usize,
    pub match_radius: usize,
}

impl VsrArch {
    pub fn core(&self) -> VsrConfig {
        VsrConfig {
            channels: self.channels,
            extract_blocks: self.extract_blocks,
            prop_blocks: self.prop_blocks,
            fusion_blocks: self.fusion_blocks,
            attention: self.attention,
            dyn_agg: self.dyn_agg,
            align: match self.align {
                AlignSource::Matching => RefAlign::Matching,
                AlignSource::Flow => RefAlign::Flow,
                AlignSource::RawPatches => RefAlign::RawPatches,
            },
            flow_hidden: self.flow_hidden,
            match_radius: self.match_radius,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(parse::<MatcherFile>("").unwrap(), MatcherFile::default());
        assert_eq!(parse::<SrFile>("").unwrap(), SrFile::default());
        assert_eq!(parse::<VsrFile>("").unwrap(), VsrFile::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = parse::<MatcherFile>("margn = 2.0").unwrap_err();
        assert!(e.contains("margn"), "{e}");
    }

    #[test]
    fn fingerprint_tracks_values() {
        let a = MatcherFile::default();
        let mut b = a.clone();
        assert_eq!(fingerprint(&a), fingerprint(&b));
        b.apply(Preset::NoDistill).unwrap();
        assert_eq!(b.kl_weight, 0.0);
        assert_ne!(fingerprint(&a), fingerprint(&b));
    }

    #[test]
    fn presets() {
        let mut v = VsrFile::default();
        v.apply(Preset::FlowAlign).unwrap();
        v.apply(Preset::NoAttention).unwrap();
        assert_eq!((v.align, v.attention), (AlignSource::Flow, false));
        let mut s = SrFile::default();
        s.apply(Preset::NoContrastive).unwrap();
        assert_eq!(s.correspondence, CorrespondenceSource::RawPatches);
        assert!(s.apply(Preset::NoAttention).is_err());
        assert!(MatcherFile::default().apply(Preset::NoDynAgg).is_err());
        let t: VsrFile = parse("patch = 64\nbatch_size = 8\nalign = \"flow\"").unwrap();
        assert_eq!(t.train().unwrap().crop, 16);
        assert_eq!(t.align, AlignSource::Flow);
    }
}
