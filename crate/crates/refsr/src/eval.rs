//! Dataset-level evaluation and its JSON report.
//!
//! ```text
//! {
//!   "schema": "refsr-eval/1",
//!   "mode": "image" | "video",
//!   "channel": "Y" | "RGB",
//!   "weights": {"kind", "sha256", "seed", "config_fingerprint"},
//!   "manifest_sha256": "...",
//!   "config_fingerprint": "...",          // of mode, channel and weights
//!   "records": [{"input", "group"?, "similarity"?, "psnr"?, "ssim"?, "aee"?,
//!                "frames"?: [{"index", "psnr", "ssim"}], "skipped_first_frame"?}],
//!   "aggregate": {"count", "psnr"?, "ssim"?, "aee"?, "aee_count"},
//!   "groups": {"<group>": <aggregate>, ...},
//!   "run": {"timestamp", "wall_clock_s"}  // the only volatile field
//! }
//! ```
//!
//! PSNR of identical images is the string `"inf"`. Aggregates are arithmetic
//! means of the per-record values; a video record's values are means over
//! its evaluated frames. Records are grouped by `group`, else by
//! `similarity`, else under `all`.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use refsr_core::contrastive::gt_map;
use refsr_core::data::{bicubic_downsample, bicubic_upsample, SCALE};
use refsr_core::descriptor::{Matcher, MatcherKind};
use refsr_core::metrics::{aee, psnr, ssim, Channel};
use refsr_core::video_sr::restore_clip;
use refsr_core::ImageTensor;
use serde::{Serialize, Serializer};

use crate::io::{atomic_write, load_clip, load_png, read, sha256_hex};
use crate::manifest::{Manifest, Record, Similarity};
use crate::models::{load_image_sr, load_matcher, load_video_sr, ImageSrBundle, VideoSrBundle};
use crate::plot::bar_chart;
use crate::{Failure, Result};

pub const SCHEMA: &str = "refsr-eval/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Image,
    Video,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, clap::ValueEnum)]
pub enum ChannelArg {
    #[value(name = "Y")]
    #[serde(rename = "Y")]
    Y,
    #[value(name = "RGB")]
    #[serde(rename = "RGB")]
    Rgb,
}

impl ChannelArg {
    fn core(self) -> Channel {
        match self {
            ChannelArg::Y => Channel::Y,
            ChannelArg::Rgb => Channel::Rgb,
        }
    }
}

/// What `--weights` resolved to.
pub enum Weights {
    /// Bicubic upsampling of the LR input; no file.
    Bicubic,
    ImageSr(ImageSrBundle),
    VideoSr(VideoSrBundle),
    /// A teacher or student: correspondence accuracy only.
    Matcher(Matcher),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeightsInfo {
    pub kind: String,
    pub sha256: Option<String>,
    pub seed: Option<u64>,
    pub config_fingerprint: Option<String>,
}

/// `bicubic` selects the identity baseline; anything else is a checkpoint.
pub fn load_weights(spec: &str) -> Result<(Weights, WeightsInfo)> {
    if spec == "bicubic" {
        return Ok((Weights::Bicubic, WeightsInfo { kind: "bicubic".into(), sha256: None, seed: None, config_fingerprint: None }));
    }
    let path = Path::new(spec);
    let bytes = read(path, "weights checkpoint")?;
    let ck = crate::checkpoint::Checkpoint::from_bytes(&bytes)?;
    let info = WeightsInfo {
        kind: ck.header.kind.clone(),
        sha256: Some(sha256_hex(&bytes)),
        seed: Some(ck.header.seed),
        config_fingerprint: Some(ck.header.config_fingerprint.clone()),
    };
    let w = match ck.header.kind.as_str() {
        "image-sr" => Weights::ImageSr(load_image_sr(path)?),
        "video-sr" => Weights::VideoSr(load_video_sr(path)?),
        "teacher" => Weights::Matcher(load_matcher(path, MatcherKind::Teacher, "teacher checkpoint")?.0),
        "student" => Weights::Matcher(load_matcher(path, MatcherKind::Student, "student checkpoint")?.0),
        k => return Err(Failure::invalid(format!("{spec}: cannot evaluate a {k} checkpoint"))),
    };
    Ok((w, info))
}

fn ser_metric<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(x) if x.is_finite() => s.serialize_f64(*x),
        Some(x) if *x > 0.0 => s.serialize_str("inf"),
        Some(x) => s.serialize_str(&x.to_string()),
        None => s.serialize_none(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrameReport {
    pub index: usize,
    #[serde(serialize_with = "ser_metric")]
    pub psnr: Option<f64>,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RecordReport {
    pub input: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub similarity: Option<Similarity>,
    #[serde(serialize_with = "ser_metric", skip_serializing_if = "Option::is_none")]
    pub psnr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ssim: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aee: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frames: Option<Vec<FrameReport>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skipped_first_frame: Option<bool>,
}

impl RecordReport {
    fn bucket(&self) -> String {
        if let Some(g) = &self.group {
            return g.clone();
        }
        match self.similarity {
            Some(s) => serde_json::to_value(s).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
            None => "all".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Aggregate {
    pub count: usize,
    #[serde(serialize_with = "ser_metric", skip_serializing_if = "Option::is_none")]
    pub psnr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ssim: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aee: Option<f64>,
    pub aee_count: usize,
}

fn mean_of(vals: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = vals.flatten().collect();
    (!v.is_empty()).then(|| refsr_core::metrics::mean(&v))
}

impl Aggregate {
    pub fn of(records: &[&RecordReport]) -> Self {
        Self {
            count: records.len(),
            psnr: mean_of(records.iter().map(|r| r.psnr)),
            ssim: mean_of(records.iter().map(|r| r.ssim)),
            aee: mean_of(records.iter().map(|r| r.aee)),
            aee_count: records.iter().filter(|r| r.aee.is_some()).count(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunInfo {
    pub timestamp: u64,
    pub wall_clock_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub schema: String,
    pub mode: Mode,
    pub channel: ChannelArg,
    pub weights: WeightsInfo,
    pub manifest_sha256: String,
    pub config_fingerprint: String,
    pub records: Vec<RecordReport>,
    pub aggregate: Aggregate,
    pub groups: BTreeMap<String, Aggregate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run: Option<RunInfo>,
}

impl EvalReport {
    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("report serializes");
        out.push(b'\n');
        out
    }

    /// SHA-256 of the report without its volatile `run` field.
    pub fn content_hash(&self) -> String {
        sha256_hex(&EvalReport { run: None, ..self.clone() }.to_json())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_json())
    }

    /// `aee_by_group.svg` and `psnr_by_group.svg` for the metrics present.
    pub fn write_plots(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        let mut out = Vec::new();
        let series: [(&str, &str, &str, fn(&Aggregate) -> Option<f64>); 2] =
            [("aee_by_group.svg", "AEE by group", "AEE (LR pixels)", |a| a.aee), ("psnr_by_group.svg", "PSNR by group", "PSNR (dB)", |a| a.psnr)];
        for (file, title, axis, get) in series {
            let bars: Vec<(String, f64)> = self.groups.iter().filter_map(|(g, a)| get(a).map(|v| (g.clone(), v))).collect();
            if bars.is_empty() {
                continue;
            }
            let path = dir.join(file);
            atomic_write(&path, bar_chart(title, axis, &bars).as_bytes())?;
            out.push(path);
        }
        Ok(out)
    }
}

fn metric<T>(r: refsr_core::Result<T>, what: &str, input: &str) -> Result<T> {
    r.map_err(|e| Failure::Metric(format!("{what} of {input}: {e}")))
}

fn finite(v: f64, what: &str, input: &str) -> Result<f64> {
    if v.is_nan() {
        Err(Failure::Metric(format!("{what} of {input} is NaN")))
    } else {
        Ok(v)
    }
}

/// Crop to a multiple of the scale factor so LR/HR sizes agree.
fn fit(img: ImageTensor) -> Result<ImageTensor> {
    let (h, w) = (img.height() / SCALE * SCALE, img.width() / SCALE * SCALE);
    if h == 0 || w == 0 {
        return Err(Failure::invalid(format!("image {}x{} is smaller than the scale factor", img.height(), img.width())));
    }
    if (h, w) == (img.height(), img.width()) {
        Ok(img)
    } else {
        Ok(img.crop(0, 0, h, w)?)
    }
}

fn matcher_of(w: &Weights) -> Option<&Matcher> {
    match w {
        Weights::ImageSr(b) => b.matcher.as_ref(),
        Weights::VideoSr(b) => b.matcher.as_ref(),
        Weights::Matcher(m) => Some(m),
        Weights::Bicubic => None,
    }
}

fn load_ref(m: &Manifest, r: &Record) -> Result<ImageTensor> {
    load_png(&m.resolve(r.first_ref()?))
}

fn eval_image(w: &Weights, m: &Manifest, r: &Record, ch: Channel) -> Result<RecordReport> {
    let hr = fit(load_png(&m.resolve(&r.input_path))?)?;
    let lr = bicubic_downsample(&hr, SCALE)?;
    let mut rep = RecordReport {
        input: r.input_path.clone(),
        group: r.group.clone(),
        similarity: r.similarity,
        psnr: None,
        ssim: None,
        aee: None,
        frames: None,
        skipped_first_frame: None,
    };
    let sr = match w {
        Weights::Bicubic => Some(bicubic_upsample(&lr, SCALE)),
        Weights::ImageSr(b) => Some(b.restore(&lr, &load_ref(m, r)?)?),
        Weights::VideoSr(_) => return Err(Failure::invalid("video SR weights need --mode video")),
        Weights::Matcher(_) => None,
    };
    if let Some(sr) = sr {
        rep.psnr = Some(finite(metric(psnr(&sr, &hr, ch), "PSNR", &r.input_path)?, "PSNR", &r.input_path)?);
        rep.ssim = Some(finite(metric(ssim(&sr, &hr, ch), "SSIM", &r.input_path)?, "SSIM", &r.input_path)?);
    }
    if let (Some(matcher), Some(h)) = (matcher_of(w), r.homography()?) {
        let reference = load_ref(m, r)?;
        let input = match matcher.kind {
            MatcherKind::Teacher => &hr,
            MatcherKind::Student => &lr,
        };
        let field = matcher.correspond(input, &reference, 1)?;
        let gt = gt_map((field.h, field.w), &h, (field.ref_h, field.ref_w));
        rep.aee = Some(finite(metric(aee(&field, &gt), "AEE", &r.input_path)?, "AEE", &r.input_path)?);
    }
    Ok(rep)
}

/// True when `reference` is the clip's first frame (same file or same bytes).
fn is_first_frame(reference: &Path, first: &Path) -> Result<bool> {
    if let (Ok(a), Ok(b)) = (reference.canonicalize(), first.canonicalize()) {
        if a == b {
            return Ok(true);
        }
    }
    Ok(read(reference, "reference")? == read(first, "clip frame")?)
}

fn eval_video(w: &Weights, m: &Manifest, r: &Record, ch: Channel) -> Result<RecordReport> {
    let dir = m.resolve(&r.input_path);
    let frames = crate::io::list_frames(&dir)?;
    let hr: Vec<ImageTensor> = load_clip(&dir)?.into_iter().map(fit).collect::<Result<_>>()?;
    let lr: Vec<ImageTensor> = hr.iter().map(|f| bicubic_downsample(f, SCALE)).collect::<refsr_core::Result<_>>()?;
    let ref_path = r.first_ref().ok().map(|p| m.resolve(p));
    let skip = match &ref_path {
        Some(p) => is_first_frame(p, &frames[0])?,
        None => false,
    };
    let sr: Vec<ImageTensor> = match w {
        Weights::Bicubic => lr.iter().map(|f| bicubic_upsample(f, SCALE)).collect(),
        Weights::VideoSr(b) => restore_clip(&b.model, b.matcher.as_ref(), &lr, &load_ref(m, r)?)?,
        Weights::ImageSr(b) => {
            let reference = load_ref(m, r)?;
            lr.iter().map(|f| b.restore(f, &reference)).collect::<Result<_>>()?
        }
        Weights::Matcher(_) => return Err(Failure::invalid("matcher weights evaluate correspondences; use --mode image")),
    };
    let mut out = Vec::new();
    for (i, (s, h)) in sr.iter().zip(&hr).enumerate().skip(usize::from(skip)) {
        let name = format!("{} frame {i}", r.input_path);
        out.push(FrameReport {
            index: i,
            psnr: Some(finite(metric(psnr(s, h, ch), "PSNR", &name)?, "PSNR", &name)?),
            ssim: finite(metric(ssim(s, h, ch), "SSIM", &name)?, "SSIM", &name)?,
        });
    }
    if out.is_empty() {
        return Err(Failure::Metric(format!("{}: no frames left to evaluate", r.input_path)));
    }
    Ok(RecordReport {
        input: r.input_path.clone(),
        group: r.group.clone(),
        similarity: r.similarity,
        psnr: mean_of(out.iter().map(|f| f.psnr)),
        ssim: mean_of(out.iter().map(|f| Some(f.ssim))),
        aee: None,
        frames: Some(out),
        skipped_first_frame: Some(skip),
    })
}

#[derive(Serialize)]
struct Settings<'a> {
    mode: Mode,
    channel: ChannelArg,
    weights: &'a WeightsInfo,
}

/// Evaluate `weights` on every record of the manifest at `manifest_path`.
pub fn evaluate(weights: &str, manifest_path: &Path, mode: Mode, channel: ChannelArg) -> Result<EvalReport> {
    let start = Instant::now();
    let manifest_bytes = read(manifest_path, "manifest")?;
    let manifest = Manifest::load(manifest_path)?;
    if manifest.records.is_empty() {
        return Err(Failure::missing("manifest records", format!("{} lists no records", manifest_path.display())));
    }
    manifest.check_paths()?;
    let (w, info) = load_weights(weights)?;
    let ch = channel.core();
    let records = manifest
        .records
        .iter()
        .map(|r| match mode {
            Mode::Image => eval_image(&w, &manifest, r, ch),
            Mode::Video => eval_video(&w, &manifest, r, ch),
        })
        .collect::<Result<Vec<_>>>()?;
    let all: Vec<&RecordReport> = records.iter().collect();
    let mut buckets: BTreeMap<String, Vec<&RecordReport>> = BTreeMap::new();
    for r in &records {
        buckets.entry(r.bucket()).or_default().push(r);
    }
    let groups = buckets.into_iter().map(|(k, v)| (k, Aggregate::of(&v))).collect();
    let config_fingerprint = crate::config::fingerprint(&Settings { mode, channel, weights: &info });
    let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    Ok(EvalReport {
        schema: SCHEMA.into(),
        mode,
        channel,
        weights: info,
        manifest_sha256: sha256_hex(&manifest_bytes),
        config_fingerprint,
        aggregate: Aggregate::of(&all),
        records,
        groups,
        run: Some(RunInfo { timestamp, wall_clock_s: start.elapsed().as_secs_f64() }),
    })
}
