//! Depth-to-space rearrangement.

use crate::real::Real;

/// `[c·r², h, w] → [c, h·r, w·r]` with
/// `out[c, y·r + i, x·r + j] = in[c·r² + i·r + j, y, x]`.
pub fn depth_to_space<F: Copy>(input: &[F], c: usize, h: usize, w: usize, r: usize, out: &mut [F]) {
    let (oh, ow) = (h * r, w * r);
    for ch in 0..c {
        for i in 0..r {
            for j in 0..r {
                let src = &input[((ch * r + i) * r + j) * h * w..][..h * w];
                for y in 0..h {
                    for x in 0..w {
                        out[(ch * oh + y * r + i) * ow + x * r + j] = src[y * w + x];
                    }
                }
            }
        }
    }
}

/// Inverse of [`depth_to_space`]: `[c, h·r, w·r] → [c·r², h, w]`.
pub fn space_to_depth<F: Copy>(input: &[F], c: usize, h: usize, w: usize, r: usize, out: &mut [F]) {
    let (ih, iw) = (h * r, w * r);
    for ch in 0..c {
        for i in 0..r {
            for j in 0..r {
                let dst = &mut out[((ch * r + i) * r + j) * h * w..][..h * w];
                for y in 0..h {
                    for x in 0..w {
                        dst[y * w + x] = input[(ch * ih + y * r + i) * iw + x * r + j];
                    }
                }
            }
        }
    }
}

/// Accumulating adjoint of [`depth_to_space`].
pub fn depth_to_space_backward<F: Real>(dout: &[F], c: usize, h: usize, w: usize, r: usize, din: &mut [F]) {
    let (oh, ow) = (h * r, w * r);
    for ch in 0..c {
        for i in 0..r {
            for j in 0..r {
                let dst = &mut din[((ch * r + i) * r + j) * h * w..][..h * w];
                for y in 0..h {
                    for x in 0..w {
                        dst[y * w + x] = dst[y * w + x] + dout[(ch * oh + y * r + i) * ow + x * r + j];
                    }
                }
            }
        }
    }
}
