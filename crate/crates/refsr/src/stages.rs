//! One function per subcommand. Every stage writes its artifacts
//! atomically and then a run manifest next to them.
//!
//! Run manifest (`<artifact>.run.json`, or `run.json` inside an output
//! directory):
//!
//! ```text
//! {"stage", "command_line": [...], "seed", "config": {...}, "config_fingerprint",
//!  "inputs": {"<path>": "<sha256>"}, "artifacts": {"<path>": "<sha256>"}, "summary": {...}}
//! ```
//!
//! Input hashes cover referenced data: a dataset manifest contributes its
//! own hash and a `<manifest>#data` hash over every file it lists. An eval
//! report's hash excludes its volatile `run` field.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use refsr_core::contrastive::{train_student as core_train_student, train_teacher as core_train_teacher, ContrastiveConfig, TrainLog};
use refsr_core::data::{bicubic_downsample, Group, RescalePolicy, TrainPair, SCALE};
use refsr_core::descriptor::{Matcher, MatcherKind};
use refsr_core::image_sr::{train_sr as core_train_sr, Correspondence, Discriminator, Extractor, RefImageSr, SrExample};
use refsr_core::video_sr::{restore_clip, train_vsr as core_train_vsr, RefAlign, RefSource, RefVideoSr, VsrExample};
use refsr_core::ImageTensor;
use serde::Serialize;
use serde_json::{json, Value};

use crate::checkpoint::Checkpoint;
use crate::config::{self, CorrespondenceSource, MatcherFile, Preset, SrFile, VsrFile};
use crate::dataset::{self, Generated, Source};
use crate::eval::{evaluate, ChannelArg, Mode};
use crate::io::{atomic_write, frame_name, hash_file, list_frames, load_clip, load_png, save_clip, save_png, sha256_hex};
use crate::manifest::Manifest;
use crate::models::{critic_module, load_image_sr, load_matcher, load_video_sr, matcher_module, sr_module, vsr_module};
use crate::{Failure, Result};

/// The invocation being served, recorded verbatim in run manifests.
pub struct Ctx {
    pub command_line: Vec<String>,
}

#[derive(Serialize)]
pub struct RunManifest {
    pub stage: String,
    pub command_line: Vec<String>,
    pub seed: u64,
    pub config: Value,
    pub config_fingerprint: String,
    pub inputs: BTreeMap<String, String>,
    pub artifacts: BTreeMap<String, String>,
    pub summary: Value,
}

impl RunManifest {
    fn new<C: Serialize>(ctx: &Ctx, stage: &str, seed: u64, cfg: &C) -> Self {
        Self {
            stage: stage.into(),
            command_line: ctx.command_line.clone(),
            seed,
            config: config::canonical(cfg),
            config_fingerprint: config::fingerprint(cfg),
            inputs: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            summary: Value::Null,
        }
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), hash_file(path)?);
        Ok(())
    }

    fn dataset(&mut self, path: &Path, m: &Manifest) -> Result<()> {
        self.input(path)?;
        self.inputs.insert(format!("{}#data", path.display()), data_hash(m)?);
        Ok(())
    }

    fn artifact(&mut self, path: &Path) -> Result<()> {
        self.artifacts.insert(path.display().to_string(), hash_file(path)?);
        Ok(())
    }

    fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("run manifest serializes");
        bytes.push(b'\n');
        atomic_write(path, &bytes)
    }
}

/// `<file>.run.json` beside a file artifact.
pub fn run_path(artifact: &Path) -> PathBuf {
    let mut s = artifact.as_os_str().to_owned();
    s.push(".run.json");
    PathBuf::from(s)
}

/// Hash over every file a manifest references, in record order.
fn data_hash(m: &Manifest) -> Result<String> {
    let mut lines = String::new();
    for r in &m.records {
        for p in std::iter::once(&r.input_path).chain(&r.ref_paths) {
            let full = m.resolve(p);
            if full.is_dir() {
                for f in list_frames(&full)? {
                    lines += &format!("{p}/{} {}\n", f.file_name().unwrap_or_default().to_string_lossy(), hash_file(&f)?);
                }
            } else {
                lines += &format!("{p} {}\n", hash_file(&full)?);
            }
        }
    }
    Ok(sha256_hex(lines.as_bytes()))
}

fn load_dataset(path: &Path) -> Result<Manifest> {
    let m = Manifest::load(path)?;
    if m.records.is_empty() {
        return Err(Failure::missing("training records", format!("{} lists no records", path.display())));
    }
    m.check_paths()?;
    Ok(m)
}

fn training_pairs(m: &Manifest) -> Result<Vec<TrainPair>> {
    m.records
        .iter()
        .map(|r| {
            let homography = r.homography()?.ok_or_else(|| {
                Failure::invalid(format!("{}: no homography; matcher training needs pairs written by make-pairs", r.input_path))
            })?;
            let hr_input = load_png(&m.resolve(&r.input_path))?;
            let hr_ref = load_png(&m.resolve(r.first_ref()?))?;
            let lr_input = bicubic_downsample(&hr_input, SCALE)?;
            Ok(TrainPair { lr_input, hr_input, hr_ref, homography, scale_factor: SCALE })
        })
        .collect()
}

fn apply_presets<F: FnMut(Preset) -> Result<()>>(presets: &[Preset], mut f: F) -> Result<()> {
    presets.iter().try_for_each(|p| f(*p))
}

fn loss_summary(log: &TrainLog) -> Value {
    let first = log.steps.first().map(|s| s.total);
    let last = log.steps.last().map(|s| s.total);
    json!({ "steps": log.steps.len(), "first_loss": first, "last_loss": last })
}

fn write_generated(ctx: &Ctx, stage: &str, out: &Path, seed: u64, cfg: &impl Serialize, g: &Generated, summary: Value) -> Result<()> {
    let manifest_path = out.join("manifest.jsonl");
    g.manifest.save(&manifest_path)?;
    let mut run = RunManifest::new(ctx, stage, seed, cfg);
    for f in g.files.iter().chain(std::iter::once(&manifest_path)) {
        run.artifact(f)?;
    }
    run.summary = summary;
    run.save(&out.join("run.json"))?;
    println!("{stage}: {} record(s) in {}", g.manifest.records.len(), manifest_path.display());
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PairKind {
    /// Homography-warped image pairs for matcher training and image SR.
    Pairs,
    /// Translating clips whose first frame is the reference.
    Clips,
}

/// Synthesise training pairs or clips.
#[derive(Args, Debug, Clone)]
pub struct MakePairsArgs {
    /// Output directory; receives the images, manifest.jsonl and run.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of pairs or clips.
    #[arg(long, default_value_t = 500)]
    pub count: usize,
    /// What to generate.
    #[arg(long, value_enum, default_value_t = PairKind::Pairs)]
    pub kind: PairKind,
    /// Matcher config supplying crop and transformation ranges (pairs only).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory of PNG source images; procedural textures when absent.
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Side of procedural source textures (default: 3/2 of the crop).
    #[arg(long)]
    pub side: Option<usize>,
    /// HR crop side of pairs, overriding the config.
    #[arg(long)]
    pub crop: Option<usize>,
    /// Frames per clip (clips only).
    #[arg(long, default_value_t = 10)]
    pub frames: usize,
    /// LR frame side of clips (clips only).
    #[arg(long, default_value_t = 32)]
    pub lr_size: usize,
    /// Split tag written to the manifest.
    #[arg(long, default_value = "train")]
    pub split: String,
    /// Seed, overriding the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Serialize)]
struct MakePairsResolved<'a> {
    kind: PairKind,
    count: usize,
    crop: usize,
    side: usize,
    frames: usize,
    lr_size: usize,
    split: &'a str,
    source: Option<String>,
    matcher: &'a MatcherFile,
}

pub fn make_pairs(ctx: &Ctx, a: &MakePairsArgs) -> Result<()> {
    let mut cfg: MatcherFile = a.config.as_deref().map(config::load).transpose()?.unwrap_or_default();
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let crop = a.crop.unwrap_or(cfg.crop);
    let side = a.side.unwrap_or(crop + crop / 2);
    let resolved = MakePairsResolved {
        kind: a.kind,
        count: a.count,
        crop,
        side,
        frames: a.frames,
        lr_size: a.lr_size,
        split: &a.split,
        source: a.source.as_ref().map(|p| p.display().to_string()),
        matcher: &cfg,
    };
    let g = match a.kind {
        PairKind::Pairs => {
            let source = match &a.source {
                Some(d) => Source::from_dir(d)?,
                None => Source::Procedural(side),
            };
            dataset::make_pairs(&a.out, &source, a.count, &cfg.transform(), crop, cfg.seed, &a.split)?
        }
        PairKind::Clips => dataset::make_clips(&a.out, a.count, a.frames, a.lr_size, cfg.seed, &a.split)?,
    };
    write_generated(ctx, "make-pairs", &a.out, cfg.seed, &resolved, &g, Value::Null)
}

/// Build the transformation-group matching benchmark.
#[derive(Args, Debug, Clone)]
pub struct MakeBenchmarkArgs {
    /// Output directory; receives bench/<group>/, manifest.jsonl and run.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Pairs per group.
    #[arg(long, default_value_t = 30)]
    pub count: usize,
    /// Groups to build, comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "small,medium,large")]
    pub groups: Vec<String>,
    /// HR crop side.
    #[arg(long, default_value_t = 64)]
    pub crop: usize,
    /// Directory of PNG source images; procedural textures when absent.
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Side of procedural source textures (default: twice the crop).
    #[arg(long)]
    pub side: Option<usize>,
    /// Base seed for sampling transforms.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn make_benchmark(ctx: &Ctx, a: &MakeBenchmarkArgs) -> Result<()> {
    let groups = a.groups.iter().map(|g| Group::parse(g)).collect::<refsr_core::Result<Vec<_>>>()?;
    let side = a.side.unwrap_or(2 * a.crop);
    let source = match &a.source {
        Some(d) => Source::from_dir(d)?,
        None => Source::Procedural(side),
    };
    let g = dataset::make_benchmark(&a.out, &source, &groups, a.count, a.crop, a.seed)?;
    let cfg = json!({
        "groups": a.groups, "count": a.count, "crop": a.crop, "side": side,
        "source": a.source.as_ref().map(|p| p.display().to_string()),
    });
    write_generated(ctx, "make-benchmark", &a.out, a.seed, &cfg, &g, Value::Null)
}

/// Pair curated queries with selected references from a candidate pool.
#[derive(Args, Debug, Clone)]
pub struct AssembleArgs {
    /// Directory of query PNGs.
    #[arg(long)]
    pub queries: PathBuf,
    /// Directory of candidate reference PNGs.
    #[arg(long)]
    pub pool: PathBuf,
    /// Selection file: one `query candidate` pair of file names per line.
    #[arg(long)]
    pub selection: PathBuf,
    /// Output directory; receives inputs/, refs/, manifest.jsonl, assemble_report.json and run.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Allowed relative deviation of a reference's longer side from the query's.
    #[arg(long, default_value_t = 0.1)]
    pub tolerance: f64,
}

pub fn assemble(ctx: &Ctx, a: &AssembleArgs) -> Result<()> {
    let policy = RescalePolicy { tolerance: a.tolerance };
    let (g, report) = dataset::assemble_dataset(&a.queries, &a.pool, &a.selection, &a.out, &policy)?;
    let report_path = a.out.join("assemble_report.json");
    atomic_write(&report_path, &serde_json::to_vec_pretty(&report).expect("report serializes"))?;
    let mut files = g.files.clone();
    files.push(report_path);
    let cfg = json!({ "tolerance": a.tolerance });
    let summary = serde_json::to_value(&report).expect("report serializes");
    let mut run = RunManifest::new(ctx, "assemble-dataset", 0, &cfg);
    run.input(&a.selection)?;
    let manifest_path = a.out.join("manifest.jsonl");
    g.manifest.save(&manifest_path)?;
    for f in files.iter().chain(std::iter::once(&manifest_path)) {
        run.artifact(f)?;
    }
    run.summary = summary;
    run.save(&a.out.join("run.json"))?;
    println!("assemble-dataset: kept {}, dropped {} query(ies) without a selection", report.kept, report.dropped_count);
    Ok(())
}

/// Options shared by the training stages.
#[derive(Args, Debug, Clone)]
pub struct TrainCommon {
    /// Stage config (flat TOML); built-in defaults when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training manifest.
    #[arg(long)]
    pub data: PathBuf,
    /// Output checkpoint; its run manifest is written beside it.
    #[arg(long)]
    pub out: PathBuf,
    /// Ablation preset; may be repeated.
    #[arg(long, value_enum)]
    pub preset: Vec<Preset>,
    /// Seed, overriding the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

fn matcher_cfg(c: &TrainCommon) -> Result<MatcherFile> {
    let mut cfg: MatcherFile = c.config.as_deref().map(config::load).transpose()?.unwrap_or_default();
    apply_presets(&c.preset, |p| cfg.apply(p))?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn save_matcher(ctx: &Ctx, stage: &str, c: &TrainCommon, cfg: &MatcherFile, m: &Matcher, log: &TrainLog, extra: &[&Path]) -> Result<()> {
    let ck = Checkpoint::new(m.kind.name(), cfg.seed, config::canonical(cfg), config::fingerprint(cfg), vec![matcher_module("matcher", m, true)]);
    ck.save(&c.out)?;
    let mut run = RunManifest::new(ctx, stage, cfg.seed, cfg);
    run.dataset(&c.data, &Manifest::load(&c.data)?)?;
    for p in extra {
        run.input(p)?;
    }
    run.artifact(&c.out)?;
    run.summary = loss_summary(log);
    run.save(&run_path(&c.out))?;
    println!("{stage}: {} steps, final loss {:?}, wrote {}", log.steps.len(), log.steps.last().map(|s| s.total), c.out.display());
    Ok(())
}

/// Train the HR-HR teacher matcher.
#[derive(Args, Debug, Clone)]
pub struct TrainTeacherArgs {
    #[command(flatten)]
    pub common: TrainCommon,
}

pub fn train_teacher(ctx: &Ctx, a: &TrainTeacherArgs) -> Result<()> {
    let cfg = matcher_cfg(&a.common)?;
    let pairs = training_pairs(&load_dataset(&a.common.data)?)?;
    let mut m = Matcher::new(cfg.encoder(), MatcherKind::Teacher, cfg.seed);
    let ccfg: ContrastiveConfig = cfg.contrastive();
    let log = core_train_teacher(&mut m, &pairs, &ccfg)?;
    save_matcher(ctx, "train-teacher", &a.common, &cfg, &m, &log, &[])
}

/// Train the LR-HR student matcher, distilled from a teacher.
#[derive(Args, Debug, Clone)]
pub struct TrainStudentArgs {
    #[command(flatten)]
    pub common: TrainCommon,
    /// Teacher checkpoint written by train-teacher (required).
    #[arg(long)]
    pub teacher: Option<PathBuf>,
}

pub fn train_student(ctx: &Ctx, a: &TrainStudentArgs) -> Result<()> {
    let tpath = a.teacher.as_deref().ok_or_else(|| Failure::missing("teacher checkpoint", "pass --teacher <ckpt> from train-teacher"))?;
    let (teacher, _) = load_matcher(tpath, MatcherKind::Teacher, "teacher checkpoint")?;
    let cfg = matcher_cfg(&a.common)?;
    let pairs = training_pairs(&load_dataset(&a.common.data)?)?;
    let mut m = Matcher::new(cfg.encoder(), MatcherKind::Student, cfg.seed.wrapping_add(1));
    let log = core_train_student(&mut m, &teacher, &pairs, &cfg.contrastive())?;
    save_matcher(ctx, "train-student", &a.common, &cfg, &m, &log, &[tpath])
}

fn student_for(path: Option<&Path>, needed: bool) -> Result<Option<Matcher>> {
    match (path, needed) {
        (Some(p), _) => Ok(Some(load_matcher(p, MatcherKind::Student, "student checkpoint")?.0)),
        (None, true) => Err(Failure::missing("student checkpoint", "pass --matcher <ckpt> from train-student (or use --preset no-contrastive)")),
        (None, false) => Ok(None),
    }
}

fn center_crop(img: &ImageTensor, side: usize) -> Result<ImageTensor> {
    if img.height() < side || img.width() < side {
        return Err(Failure::invalid(format!("image {}x{} is smaller than the {side}x{side} training crop", img.height(), img.width())));
    }
    Ok(img.crop((img.height() - side) / 2, (img.width() - side) / 2, side, side)?)
}

/// Train the reference-based image SR network.
#[derive(Args, Debug, Clone)]
pub struct TrainSrArgs {
    #[command(flatten)]
    pub common: TrainCommon,
    /// Student checkpoint from train-student; required unless the no-contrastive preset is active.
    #[arg(long)]
    pub matcher: Option<PathBuf>,
}

pub fn train_sr(ctx: &Ctx, a: &TrainSrArgs) -> Result<()> {
    let c = &a.common;
    let mut cfg: SrFile = c.config.as_deref().map(config::load).transpose()?.unwrap_or_default();
    apply_presets(&c.preset, |p| cfg.apply(p))?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if cfg.crop == 0 || cfg.crop % SCALE != 0 {
        return Err(Failure::invalid(format!("crop {} is not a positive multiple of {SCALE}", cfg.crop)));
    }
    let student = student_for(a.matcher.as_deref(), cfg.correspondence == CorrespondenceSource::Learned)?;
    let m = load_dataset(&c.data)?;
    let arch = cfg.arch();
    let mut examples = Vec::with_capacity(m.records.len());
    for r in &m.records {
        let hr = center_crop(&load_png(&m.resolve(&r.input_path))?, cfg.crop)?;
        let reference = center_crop(&load_png(&m.resolve(r.first_ref()?))?, cfg.crop)?;
        let lr = bicubic_downsample(&hr, SCALE)?;
        let corr = match (&student, cfg.correspondence) {
            (Some(s), CorrespondenceSource::Learned) => Correspondence::Learned(s),
            _ => Correspondence::RawPatches,
        };
        examples.push(SrExample::new(&lr, &hr, &reference, corr, arch.match_radius)?);
    }
    let mut model = RefImageSr::new(arch.core(), cfg.seed);
    let mut critic = Discriminator::new(cfg.critic_channels, cfg.seed.wrapping_add(1));
    let extractor = match &student {
        Some(s) => Extractor::from_matcher(s),
        None => Extractor::Identity,
    };
    let log = core_train_sr(&mut model, &mut critic, &extractor, &examples, &cfg.train())?;
    let mut modules = vec![sr_module(&model, &arch), critic_module(&critic, cfg.critic_channels)];
    if let (Some(s), CorrespondenceSource::Learned) = (&student, cfg.correspondence) {
        modules.push(matcher_module("matcher", s, false));
    }
    Checkpoint::new("image-sr", cfg.seed, config::canonical(&cfg), config::fingerprint(&cfg), modules).save(&c.out)?;
    let mut run = RunManifest::new(ctx, "train-sr", cfg.seed, &cfg);
    run.dataset(&c.data, &m)?;
    if let Some(p) = &a.matcher {
        run.input(p)?;
    }
    run.artifact(&c.out)?;
    let last = log.steps.last().copied().unwrap_or_default();
    run.summary = json!({ "steps": log.steps.len(), "critic_updates": log.critic_updates, "last_rec": last.rec, "last_per": last.per, "last_adv": last.adv });
    run.save(&run_path(&c.out))?;
    println!("train-sr: {} steps, final reconstruction loss {}, wrote {}", log.steps.len(), last.rec, c.out.display());
    Ok(())
}

/// Train the reference-based video SR network.
#[derive(Args, Debug, Clone)]
pub struct TrainVsrArgs {
    #[command(flatten)]
    pub common: TrainCommon,
    /// Student checkpoint from train-student; required when the reference is aligned by matching.
    #[arg(long)]
    pub matcher: Option<PathBuf>,
}

pub fn train_vsr(ctx: &Ctx, a: &TrainVsrArgs) -> Result<()> {
    let c = &a.common;
    let mut cfg: VsrFile = c.config.as_deref().map(config::load).transpose()?.unwrap_or_default();
    apply_presets(&c.preset, |p| cfg.apply(p))?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    let tcfg = cfg.train()?;
    let arch = cfg.arch();
    let core_arch = arch.core();
    let student = student_for(a.matcher.as_deref(), core_arch.align == RefAlign::Matching)?;
    let m = load_dataset(&c.data)?;
    let model_seed = cfg.seed;
    let mut model = RefVideoSr::new(core_arch, model_seed);
    let mut examples = Vec::with_capacity(m.records.len());
    for r in &m.records {
        let hr = load_clip(&m.resolve(&r.input_path))?;
        let lr: Vec<ImageTensor> = hr.iter().map(|f| bicubic_downsample(f, SCALE)).collect::<refsr_core::Result<_>>()?;
        let reference = load_png(&m.resolve(r.first_ref()?))?;
        let source = match (core_arch.align, &student) {
            (RefAlign::Matching, Some(s)) => RefSource::Matcher(s),
            (RefAlign::Flow, _) => RefSource::Flow,
            _ => RefSource::RawPatches,
        };
        examples.push(VsrExample::new(&lr, &hr, &reference, source, arch.match_radius, &model.flow.lk)?);
    }
    let log = core_train_vsr(&mut model, &examples, &tcfg)?;
    let mut modules = vec![vsr_module(&model, &arch)];
    if let (Some(s), RefAlign::Matching) = (&student, core_arch.align) {
        modules.push(matcher_module("matcher", s, false));
    }
    Checkpoint::new("video-sr", cfg.seed, config::canonical(&cfg), config::fingerprint(&cfg), modules).save(&c.out)?;
    let mut run = RunManifest::new(ctx, "train-vsr", cfg.seed, &cfg);
    run.dataset(&c.data, &m)?;
    if let Some(p) = &a.matcher {
        run.input(p)?;
    }
    run.artifact(&c.out)?;
    run.summary = json!({ "steps": log.losses.len(), "first_loss": log.losses.first(), "last_loss": log.losses.last() });
    run.save(&run_path(&c.out))?;
    println!("train-vsr: {} steps, final loss {:?}, wrote {}", log.losses.len(), log.losses.last(), c.out.display());
    Ok(())
}

/// Super-resolve one LR image ×4 against a reference.
#[derive(Args, Debug, Clone)]
pub struct InferSrArgs {
    /// LR input PNG.
    #[arg(long)]
    pub lr: PathBuf,
    /// Reference PNG.
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Output PNG; its run manifest is written beside it.
    #[arg(long)]
    pub out: PathBuf,
    /// Image SR checkpoint from train-sr.
    #[arg(long)]
    pub weights: PathBuf,
}

pub fn infer_sr(ctx: &Ctx, a: &InferSrArgs) -> Result<()> {
    let b = load_image_sr(&a.weights)?;
    let lr = load_png(&a.lr)?;
    let reference = load_png(&a.reference)?;
    let sr = b.restore(&lr, &reference)?;
    save_png(&a.out, &sr)?;
    let h = &b.checkpoint.header;
    let mut run = RunManifest::new(ctx, "infer-sr", h.seed, &h.config);
    run.config_fingerprint = h.config_fingerprint.clone();
    for p in [&a.weights, &a.lr, &a.reference] {
        run.input(p)?;
    }
    run.artifact(&a.out)?;
    run.save(&run_path(&a.out))?;
    println!("infer-sr: {}x{} -> {}x{}, wrote {}", lr.width(), lr.height(), sr.width(), sr.height(), a.out.display());
    Ok(())
}

/// Super-resolve a clip directory of numbered LR frames ×4.
#[derive(Args, Debug, Clone)]
pub struct InferVsrArgs {
    /// Directory of LR frames named by frame number (0000.png, 0001.png, ...).
    #[arg(long)]
    pub clip: PathBuf,
    /// Reference PNG.
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Output directory for the restored frames and run.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Video SR checkpoint from train-vsr.
    #[arg(long)]
    pub weights: PathBuf,
}

pub fn infer_vsr(ctx: &Ctx, a: &InferVsrArgs) -> Result<()> {
    let b = load_video_sr(&a.weights)?;
    let frames = list_frames(&a.clip)?;
    let lr = load_clip(&a.clip)?;
    let reference = load_png(&a.reference)?;
    let needs_matcher = b.model.cfg.align == RefAlign::Matching;
    if needs_matcher && b.matcher.is_none() {
        return Err(Failure::missing("student checkpoint", "the video SR checkpoint bundles no matcher"));
    }
    let sr = restore_clip(&b.model, b.matcher.as_ref(), &lr, &reference)?;
    let written = save_clip(&a.out, &sr)?;
    let h = &b.checkpoint.header;
    let mut run = RunManifest::new(ctx, "infer-vsr", h.seed, &h.config);
    run.config_fingerprint = h.config_fingerprint.clone();
    run.input(&a.weights)?;
    run.input(&a.reference)?;
    for f in &frames {
        run.input(f)?;
    }
    for f in &written {
        run.artifact(f)?;
    }
    run.save(&a.out.join("run.json"))?;
    println!("infer-vsr: {} frame(s) written to {} ({} .. {})", sr.len(), a.out.display(), frame_name(0), frame_name(sr.len().saturating_sub(1)));
    Ok(())
}

/// Evaluate weights on a manifest and write a JSON report.
#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    /// Checkpoint (image-sr, video-sr, teacher or student), or `bicubic` for the upsampling baseline.
    #[arg(long)]
    pub weights: String,
    /// Manifest of the evaluation set.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Image pairs or clip directories.
    #[arg(long, value_enum)]
    pub mode: Mode,
    /// Channels PSNR/SSIM are computed on.
    #[arg(long, value_enum, default_value_t = ChannelArg::Y)]
    pub channel: ChannelArg,
    /// Output report (JSON).
    #[arg(long)]
    pub report: PathBuf,
    /// Directory for AEE/PSNR-by-group SVG plots.
    #[arg(long)]
    pub plots: Option<PathBuf>,
}

pub fn eval(ctx: &Ctx, a: &EvalArgs) -> Result<()> {
    let report = evaluate(&a.weights, &a.manifest, a.mode, a.channel)?;
    report.save(&a.report)?;
    let cfg = json!({ "mode": a.mode, "channel": a.channel, "weights": report.weights });
    let mut run = RunManifest::new(ctx, "eval", report.weights.seed.unwrap_or(0), &cfg);
    run.config_fingerprint = report.config_fingerprint.clone();
    run.dataset(&a.manifest, &Manifest::load(&a.manifest)?)?;
    if a.weights != "bicubic" {
        run.input(Path::new(&a.weights))?;
    }
    run.artifacts.insert(a.report.display().to_string(), report.content_hash());
    if let Some(dir) = &a.plots {
        for p in report.write_plots(dir)? {
            run.artifact(&p)?;
        }
    }
    run.summary = serde_json::to_value(&report.aggregate).expect("aggregate serializes");
    run.save(&run_path(&a.report))?;
    let agg = &report.aggregate;
    println!("eval: {} record(s); PSNR {:?} SSIM {:?} AEE {:?}; wrote {}", agg.count, agg.psnr, agg.ssim, agg.aee, a.report.display());
    Ok(())
}
