//! Degradation, procedural content, pair synthesis and benchmark specs.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{contract, Error, Result};
use crate::homography::{sample_homography, Homography, TransformConfig};
use crate::image::ImageTensor;
use crate::kernels::resample::{apply_separable, bicubic_taps, bilinear_taps, Taps1d};

/// Super-resolution factor used throughout.
pub const SCALE: usize = 4;

fn resample(img: &ImageTensor, ty: &Taps1d, tx: &Taps1d) -> ImageTensor {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let (oh, ow) = (ty.len(), tx.len());
    let mut out = ImageTensor::zeros(oh, ow, c);
    let mut plane = vec![0.0f64; h * w];
    let mut res = vec![0.0f64; oh * ow];
    for ch in 0..c {
        for (i, v) in plane.iter_mut().enumerate() {
            *v = img.data()[i * c + ch] as f64;
        }
        apply_separable(&plane, h, w, ty, tx, &mut res);
        for (i, &v) in res.iter().enumerate() {
            out.data_mut()[i * c + ch] = v as f32;
        }
    }
    out
}

/// Bicubic resize (`a = −0.5`, kernel stretched by the ratio when
/// shrinking, edge-clamped, rows normalised).
pub fn bicubic_resize(img: &ImageTensor, oh: usize, ow: usize) -> ImageTensor {
    resample(img, &bicubic_taps(img.height(), oh), &bicubic_taps(img.width(), ow))
}

/// Bilinear resize with half-pixel centres.
pub fn bilinear_resize(img: &ImageTensor, oh: usize, ow: usize) -> ImageTensor {
    resample(img, &bilinear_taps(img.height(), oh), &bilinear_taps(img.width(), ow))
}

/// Crop to the largest top-left window whose sides divide by `factor`.
pub fn crop_to_multiple(img: &ImageTensor, factor: usize) -> Result<ImageTensor> {
    let (h, w) = (img.height() / factor * factor, img.width() / factor * factor);
    if h == 0 || w == 0 {
        return Err(contract!("image {}x{} is smaller than factor {factor}", img.height(), img.width()));
    }
    img.crop(0, 0, h, w)
}

/// Bicubic ×`factor` downsampling after cropping to a multiple of `factor`.
pub fn bicubic_downsample(hr: &ImageTensor, factor: usize) -> Result<ImageTensor> {
    let hr = crop_to_multiple(hr, factor)?;
    Ok(bicubic_resize(&hr, hr.height() / factor, hr.width() / factor))
}

pub fn bicubic_upsample(lr: &ImageTensor, factor: usize) -> ImageTensor {
    bicubic_resize(lr, lr.height() * factor, lr.width() * factor)
}

/// Bilinear sample with edge clamping, channel `c`.
pub fn sample_clamped(img: &ImageTensor, x: f64, y: f64, c: usize) -> f32 {
    let (h, w) = (img.height(), img.width());
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (libm::floor(x) as usize, libm::floor(y) as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let g = |yy: usize, xx: usize| img.get(yy, xx, c) as f64;
    let v = (1.0 - fy) * ((1.0 - fx) * g(y0, x0) + fx * g(y0, x1)) + fy * ((1.0 - fx) * g(y1, x0) + fx * g(y1, x1));
    v as f32
}

/// Backward-warp `src` into an `oh × ow` view: output pixel `q` shows source
/// pixel `origin + H⁻¹(q)`, bilinearly sampled with edge clamping.
pub fn warp_homography(
    src: &ImageTensor,
    origin: (f64, f64),
    h: &Homography,
    oh: usize,
    ow: usize,
) -> Result<ImageTensor> {
    let inv = h.inverse()?;
    let c = src.channels();
    let mut out = ImageTensor::zeros(oh, ow, c);
    for y in 0..oh {
        for x in 0..ow {
            let (sx, sy) = inv.apply(x as f64, y as f64).unwrap_or((-1e9, -1e9));
            for ch in 0..c {
                out.set(y, x, ch, sample_clamped(src, origin.0 + sx, origin.1 + sy, ch));
            }
        }
    }
    Ok(out)
}

/// Smooth value noise: random lattice values every `cell` pixels blended
/// with a smoothstep.
fn value_noise(rng: &mut ChaCha8Rng, h: usize, w: usize, cell: usize) -> Vec<f32> {
    let (gh, gw) = (h / cell + 2, w / cell + 2);
    let lattice: Vec<f32> = (0..gh * gw).map(|_| rng.random::<f32>()).collect();
    let s = |t: f32| t * t * (3.0 - 2.0 * t);
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let (gy, gx) = (y / cell, x / cell);
            let fy = s((y % cell) as f32 / cell as f32);
            let fx = s((x % cell) as f32 / cell as f32);
            let l = |yy: usize, xx: usize| lattice[yy * gw + xx];
            let top = l(gy, gx) * (1.0 - fx) + l(gy, gx + 1) * fx;
            let bot = l(gy + 1, gx) * (1.0 - fx) + l(gy + 1, gx + 1) * fx;
            out[y * w + x] = top * (1.0 - fy) + bot * fy;
        }
    }
    out
}

/// A colourful, non-periodic procedural texture: multi-octave value noise
/// with a random colour mix, overlaid with a few flat-coloured discs and bars
/// for sharp edges. Values lie in `[0, 1]`.
pub fn procedural_texture(seed: u64, h: usize, w: usize) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e57_u64.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let octaves: Vec<Vec<f32>> = [24usize, 12, 6, 3].iter().map(|&c| value_noise(&mut rng, h, w, c)).collect();
    let amps = [0.45f32, 0.3, 0.17, 0.08];
    let mix: [[f32; 4]; 3] = core::array::from_fn(|_| core::array::from_fn(|_| rng.random::<f32>() * 2.0 - 1.0));
    let mut img = ImageTensor::zeros(h, w, 3);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            for (ch, row) in mix.iter().enumerate() {
                let v = 0.5 + 2.0 * (0..4).map(|o| amps[o] * (octaves[o][i] - 0.5) * row[o]).sum::<f32>();
                img.set(y, x, ch, v);
            }
        }
    }
    let shapes = 3 + (h * w / 2500).min(12);
    for _ in 0..shapes {
        let col: [f32; 3] = core::array::from_fn(|_| rng.random::<f32>());
        let (cx, cy) = (rng.random::<f32>() * w as f32, rng.random::<f32>() * h as f32);
        let r = 2.0 + rng.random::<f32>() * (h.min(w) as f32 / 6.0);
        let bar = rng.random::<bool>();
        let (ang_s, ang_c) = libm::sincosf(rng.random::<f32>() * core::f32::consts::PI);
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = (x as f32 - cx, y as f32 - cy);
                let inside = if bar {
                    (dx * ang_c + dy * ang_s).abs() < r && (-dx * ang_s + dy * ang_c).abs() < r * 0.35
                } else {
                    dx * dx + dy * dy < r * r
                };
                if inside {
                    for (ch, &cv) in col.iter().enumerate() {
                        let old = img.get(y, x, ch);
                        img.set(y, x, ch, 0.3 * old + 0.7 * cv);
                    }
                }
            }
        }
    }
    for v in img.data_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    img
}

/// One supervised matching example.
#[derive(Clone, Debug)]
pub struct TrainPair {
    /// Bicubic ×4 downsample of `hr_input`.
    pub lr_input: ImageTensor,
    pub hr_input: ImageTensor,
    /// Homography-warped view of the same content.
    pub hr_ref: ImageTensor,
    /// Maps `hr_input` pixels to `hr_ref` pixels.
    pub homography: Homography,
    pub scale_factor: usize,
}

/// Crop `crop × crop` from `hr` (centred jitter from the seed), warp it by a
/// random homography about the crop centre and downsample the input.
/// The warped view samples the full source, so content outside the crop
/// fills the reference where available.
pub fn make_homography_pair(hr: &ImageTensor, cfg: &TransformConfig, seed: u64, crop: usize) -> Result<TrainPair> {
    if hr.height() < crop || hr.width() < crop {
        return Err(Error::Config(alloc::format!(
            "pair synthesis needs an image of at least {crop}x{crop}, got {}x{}",
            hr.height(),
            hr.width()
        )));
    }
    if crop % SCALE != 0 {
        return Err(contract!("crop {crop} is not a multiple of {SCALE}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x2545_F491_4F6C_DD1D).wrapping_add(17));
    let y0 = rng.random_range(0..=hr.height() - crop);
    let x0 = rng.random_range(0..=hr.width() - crop);
    let hr_input = hr.crop(y0, x0, crop, crop)?;
    let homography = sample_homography(seed, cfg, crop)?.homography;
    let hr_ref = warp_homography(hr, (x0 as f64, y0 as f64), &homography, crop, crop)?;
    let lr_input = bicubic_downsample(&hr_input, SCALE)?;
    Ok(TrainPair { lr_input, hr_input, hr_ref, homography, scale_factor: SCALE })
}

/// Transformation-difficulty groups of the matching benchmark.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Group {
    Small,
    Medium,
    Large,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::Small, Group::Medium, Group::Large];

    pub fn name(self) -> &'static str {
        match self {
            Group::Small => "small",
            Group::Medium => "medium",
            Group::Large => "large",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "small" => Ok(Group::Small),
            "medium" => Ok(Group::Medium),
            "large" => Ok(Group::Large),
            _ => Err(Error::Config(alloc::format!("unknown group {s:?}; expected small, medium or large"))),
        }
    }
}

/// Scale and rotation ranges of one benchmark group.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransformBenchmarkSpec {
    pub group: Group,
    pub scale: (f64, f64),
    /// Rotation magnitude in degrees; the sign is random.
    pub rotation: (f64, f64),
    pub seed: u64,
}

impl TransformBenchmarkSpec {
    pub fn new(group: Group, seed: u64) -> Self {
        let (scale, rotation) = match group {
            Group::Small => ((0.95, 1.05), (0.0, 5.0)),
            Group::Medium => ((0.8, 1.25), (5.0, 20.0)),
            Group::Large => ((0.5, 2.0), (20.0, 45.0)),
        };
        Self { group, scale, rotation, seed }
    }

    /// The envelope `[0, max]` of scale deviation and rotation magnitude.
    pub fn envelope(&self) -> (f64, f64) {
        let dev = (1.0 - self.scale.0).max(self.scale.1 - 1.0);
        (dev, self.rotation.1)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.scale.0 > 0.0 && self.scale.0 <= self.scale.1 && self.rotation.0 >= 0.0 && self.rotation.0 <= self.rotation.1;
        ok.then_some(()).ok_or_else(|| Error::Config(alloc::format!("invalid benchmark spec {self:?}")))
    }

    /// Draw the transform of record `index`. Scale is log-uniform.
    pub fn draw(&self, index: u64) -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ self.group as u64);
        let (l0, l1) = (libm::log(self.scale.0), libm::log(self.scale.1));
        let s = libm::exp(l0 + (l1 - l0) * rng.random::<f64>());
        let mut r = self.rotation.0 + (self.rotation.1 - self.rotation.0) * rng.random::<f64>();
        if rng.random::<bool>() {
            r = -r;
        }
        (s, r)
    }
}

/// A benchmark example: the reference is a scaled and rotated view of the
/// input's own HR content.
#[derive(Clone, Debug)]
pub struct BenchmarkPair {
    pub hr_input: ImageTensor,
    pub lr_input: ImageTensor,
    pub hr_ref: ImageTensor,
    pub homography: Homography,
    pub scale: f64,
    pub rotation_deg: f64,
}

/// Build record `index` of a benchmark from source `src`, using the centred
/// `crop × crop` window as input.
pub fn benchmark_pair(src: &ImageTensor, spec: &TransformBenchmarkSpec, index: u64, crop: usize) -> Result<BenchmarkPair> {
    spec.validate()?;
    if src.height() < crop || src.width() < crop {
        return Err(Error::Config(alloc::format!("benchmark needs at least {crop}x{crop} sources")));
    }
    let (y0, x0) = ((src.height() - crop) / 2, (src.width() - crop) / 2);
    let hr_input = src.crop(y0, x0, crop, crop)?;
    let (scale, rotation_deg) = spec.draw(index);
    let c = (crop as f64 - 1.0) / 2.0;
    let homography = Homography::similarity(scale, rotation_deg, c, c);
    let hr_ref = warp_homography(src, (x0 as f64, y0 as f64), &homography, crop, crop)?;
    let lr_input = bicubic_downsample(&hr_input, SCALE)?;
    Ok(BenchmarkPair { hr_input, lr_input, hr_ref, homography, scale, rotation_deg })
}

/// Rescaling of curated references to the input's scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RescalePolicy {
    /// Accepted relative deviation of the max dimension.
    pub tolerance: f64,
}

impl Default for RescalePolicy {
    fn default() -> Self {
        Self { tolerance: 0.1 }
    }
}

impl RescalePolicy {
    /// Bicubic-resize `reference` so its larger side equals `target_max`,
    /// unless it is already within tolerance. Aspect ratio is preserved.
    pub fn apply(&self, reference: &ImageTensor, target_max: usize) -> ImageTensor {
        let cur = reference.height().max(reference.width()) as f64;
        let ratio = target_max as f64 / cur;
        if (ratio - 1.0).abs() <= self.tolerance {
            return reference.clone();
        }
        let oh = (libm::round(reference.height() as f64 * ratio) as usize).max(1);
        let ow = (libm::round(reference.width() as f64 * ratio) as usize).max(1);
        bicubic_resize(reference, oh, ow)
    }
}

/// A translating procedural clip: frame `t` is the `h × w` window at
/// `origin + t·velocity` of a larger texture (bilinear for subpixel motion).
pub fn procedural_clip(seed: u64, frames: usize, h: usize, w: usize, velocity: (f64, f64)) -> Vec<ImageTensor> {
    let margin = 8 + libm::ceil(frames as f64 * velocity.0.abs().max(velocity.1.abs())) as usize;
    let tex = procedural_texture(seed, h + 2 * margin, w + 2 * margin);
    (0..frames)
        .map(|t| {
            let (ox, oy) = (margin as f64 + velocity.0 * t as f64, margin as f64 + velocity.1 * t as f64);
            let ox = ox.min((w + 2 * margin - w) as f64);
            let oy = oy.min((h + 2 * margin - h) as f64);
            ImageTensor::from_fn(h, w, 3, |y, x, c| sample_clamped(&tex, ox + x as f64, oy + y as f64, c))
        })
        .collect()
}
