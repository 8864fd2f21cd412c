//! Planar homographies: DLT solve, sampling and point mapping.
//!
//! Points are `(x, y)` pixel coordinates with pixel centres on integers.

use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A 3×3 projective map normalised so `m[2][2] == 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Homography {
    pub m: [[f64; 3]; 3],
}

impl Default for Homography {
    fn default() -> Self {
        Self::identity()
    }
}

impl Homography {
    pub fn identity() -> Self {
        Self { m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self { m: [[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]] }
    }

    /// Scale by `s` and rotate by `deg` degrees (counter-clockwise in a
    /// y-down image) about `(cx, cy)`.
    pub fn similarity(s: f64, deg: f64, cx: f64, cy: f64) -> Self {
        let (sn, cs) = libm::sincos(deg * PI / 180.0);
        let (a, b) = (s * cs, s * sn);
        // p' = A (p − c) + c
        Self { m: [[a, b, cx - a * cx - b * cy], [-b, a, cy + b * cx - a * cy], [0.0, 0.0, 1.0]] }
    }

    /// Normalise a raw matrix; fails when it is singular or `m[2][2] ≈ 0`.
    pub fn from_matrix(m: [[f64; 3]; 3]) -> Result<Self> {
        if libm::fabs(m[2][2]) < 1e-15 {
            return Err(Error::Degenerate("homography has a vanishing bottom-right entry".into()));
        }
        let s = m[2][2];
        let h = Self { m: m.map(|r| r.map(|v| v / s)) };
        if !h.m.iter().flatten().all(|v| v.is_finite()) || libm::fabs(h.det()) <= 1e-12 {
            return Err(Error::Degenerate("homography is singular".into()));
        }
        Ok(h)
    }

    pub fn det(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn inverse(&self) -> Result<Self> {
        let m = &self.m;
        let d = self.det();
        if libm::fabs(d) <= 1e-12 {
            return Err(Error::Degenerate("homography is singular".into()));
        }
        let adj = [
            [
                m[1][1] * m[2][2] - m[1][2] * m[2][1],
                m[0][2] * m[2][1] - m[0][1] * m[2][2],
                m[0][1] * m[1][2] - m[0][2] * m[1][1],
            ],
            [
                m[1][2] * m[2][0] - m[1][0] * m[2][2],
                m[0][0] * m[2][2] - m[0][2] * m[2][0],
                m[0][2] * m[1][0] - m[0][0] * m[1][2],
            ],
            [
                m[1][0] * m[2][1] - m[1][1] * m[2][0],
                m[0][1] * m[2][0] - m[0][0] * m[2][1],
                m[0][0] * m[1][1] - m[0][1] * m[1][0],
            ],
        ];
        Self::from_matrix(adj.map(|r| r.map(|v| v / d)))
    }

    /// `self ∘ other` (apply `other` first).
    pub fn compose(&self, other: &Homography) -> Result<Self> {
        let mut r = [[0.0; 3]; 3];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.m[i][k] * other.m[k][j]).sum();
            }
        }
        Self::from_matrix(r)
    }

    /// Map a point; `None` when it lands on the line at infinity.
    pub fn apply(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let m = &self.m;
        let w = m[2][0] * x + m[2][1] * y + m[2][2];
        if libm::fabs(w) < 1e-12 {
            return None;
        }
        let u = (m[0][0] * x + m[0][1] * y + m[0][2]) / w;
        let v = (m[1][0] * x + m[1][1] * y + m[1][2]) / w;
        (u.is_finite() && v.is_finite()).then_some((u, v))
    }

    /// Solve the homography taking `src[i]` to `dst[i]` (direct linear
    /// transform with `h33 = 1`, Gaussian elimination with partial pivoting).
    pub fn from_correspondences(src: &[(f64, f64); 4], dst: &[(f64, f64); 4]) -> Result<Self> {
        for pts in [src, dst] {
            for i in 0..4 {
                for j in i + 1..4 {
                    for k in j + 1..4 {
                        if collinear(pts[i], pts[j], pts[k]) {
                            return Err(Error::Degenerate("three of the four corners are collinear".into()));
                        }
                    }
                }
            }
        }
        let mut a = [[0.0f64; 9]; 8];
        for i in 0..4 {
            let ((x, y), (u, v)) = (src[i], dst[i]);
            a[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, u];
            a[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, v];
        }
        for col in 0..8 {
            let piv = (col..8).max_by(|&i, &j| libm::fabs(a[i][col]).total_cmp(&libm::fabs(a[j][col]))).unwrap_or(col);
            if libm::fabs(a[piv][col]) < 1e-14 {
                return Err(Error::Degenerate("correspondence system is singular".into()));
            }
            a.swap(col, piv);
            for r in 0..8 {
                if r != col {
                    let f = a[r][col] / a[col][col];
                    for c in col..9 {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
        let h: [f64; 8] = core::array::from_fn(|i| a[i][8] / a[i][i]);
        Self::from_matrix([[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], 1.0]])
    }
}

fn collinear(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> bool {
    let cross = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
    let scale = 1.0 + libm::fabs(b.0 - a.0) + libm::fabs(b.1 - a.1) + libm::fabs(c.0 - a.0) + libm::fabs(c.1 - a.1);
    libm::fabs(cross) <= 1e-9 * scale * scale
}

/// Bounds for random homographies.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransformConfig {
    pub scale_min: f64,
    pub scale_max: f64,
    /// Magnitude range in degrees; the sign is drawn separately when
    /// `random_sign` is set.
    pub rot_min: f64,
    pub rot_max: f64,
    pub random_sign: bool,
    /// Max corner displacement as a fraction of the crop side.
    pub jitter: f64,
}

impl Default for TransformConfig {
    fn default() -> Self {
        Self { scale_min: 0.7, scale_max: 1.3, rot_min: 0.0, rot_max: 30.0, random_sign: true, jitter: 0.15 }
    }
}

impl TransformConfig {
    pub fn identity() -> Self {
        Self { scale_min: 1.0, scale_max: 1.0, rot_min: 0.0, rot_max: 0.0, random_sign: false, jitter: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.scale_min > 0.0
            && self.scale_min <= self.scale_max
            && self.rot_min >= 0.0
            && self.rot_min <= self.rot_max
            && (0.0..0.5).contains(&self.jitter)
            && [self.scale_max, self.rot_max].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(alloc::format!("invalid transform bounds {self:?}")))
        }
    }
}

/// What a sampled homography was built from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampledTransform {
    pub homography: Homography,
    pub scale: f64,
    pub rotation_deg: f64,
}

/// Random scale · rotation · corner jitter about the centre of a
/// `size × size` crop, solved from the four displaced corners.
/// Degenerate draws are retried; the error surfaces after 100 failures.
pub fn sample_homography(seed: u64, cfg: &TransformConfig, size: usize) -> Result<SampledTransform> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = (size as f64 - 1.0) / 2.0;
    let e = size as f64 - 1.0;
    let corners = [(0.0, 0.0), (e, 0.0), (e, e), (0.0, e)];
    for _ in 0..100 {
        let scale = draw(&mut rng, cfg.scale_min, cfg.scale_max);
        let mut rot = draw(&mut rng, cfg.rot_min, cfg.rot_max);
        if cfg.random_sign && rng.random::<bool>() {
            rot = -rot;
        }
        let sim = Homography::similarity(scale, rot, c, c);
        let j = cfg.jitter * size as f64;
        let mut dst = [(0.0, 0.0); 4];
        for (d, &(x, y)) in dst.iter_mut().zip(&corners) {
            let (jx, jy) = (draw(&mut rng, -j, j), draw(&mut rng, -j, j));
            let Some(p) = sim.apply(x + jx, y + jy) else { continue };
            *d = p;
        }
        if let Ok(h) = Homography::from_correspondences(&corners, &dst) {
            return Ok(SampledTransform { homography: h, scale, rotation_deg: rot });
        }
    }
    Err(Error::Degenerate("100 consecutive homography draws were degenerate".into()))
}

fn draw(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        lo + (hi - lo) * rng.random::<f64>()
    } else {
        lo
    }
}
