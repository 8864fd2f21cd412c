//! Separable linear resampling: bicubic (a = −0.5, antialiased when
//! shrinking) and bilinear (half-pixel centers).

use alloc::vec;
use alloc::vec::Vec;

use crate::real::Real;

/// Cubic-convolution coefficient.
pub const BICUBIC_A: f64 = -0.5;

/// Cubic convolution kernel with `a = -0.5`.
pub fn cubic(x: f64) -> f64 {
    let a = BICUBIC_A;
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// Sparse 1-D resampling matrix: for each output index, `(input index, weight)`.
pub type Taps1d = Vec<Vec<(usize, f64)>>;

/// Bicubic weights for `in_len → out_len`. Output sample `i` is centred at
/// input coordinate `(i + 0.5)·in/out − 0.5`. When shrinking, the kernel is
/// stretched by `in/out` (antialiasing). Border taps clamp to the edge and
/// every row is normalised to sum to one.
pub fn bicubic_taps(in_len: usize, out_len: usize) -> Taps1d {
    let ratio = in_len as f64 / out_len as f64;
    let stretch = ratio.max(1.0);
    let support = 2.0 * stretch;
    (0..out_len)
        .map(|i| {
            let center = (i as f64 + 0.5) * ratio - 0.5;
            let lo = libm::floor(center - support) as isize;
            let hi = libm::ceil(center + support) as isize;
            let mut row: Vec<(usize, f64)> = Vec::new();
            let mut total = 0.0;
            for j in lo..=hi {
                let wgt = cubic((center - j as f64) / stretch);
                if wgt == 0.0 {
                    continue;
                }
                let jj = j.clamp(0, in_len as isize - 1) as usize;
                total += wgt;
                match row.iter_mut().find(|(k, _)| *k == jj) {
                    Some(e) => e.1 += wgt,
                    None => row.push((jj, wgt)),
                }
            }
            for e in row.iter_mut() {
                e.1 /= total;
            }
            row
        })
        .collect()
}

/// Bilinear weights for `in_len → out_len` with half-pixel centres; source
/// coordinates below zero clamp to zero.
pub fn bilinear_taps(in_len: usize, out_len: usize) -> Taps1d {
    let ratio = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|i| {
            let src = ((i as f64 + 0.5) * ratio - 0.5).max(0.0);
            let i0 = (libm::floor(src) as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            let f = src - i0 as f64;
            if i1 == i0 {
                vec![(i0, 1.0)]
            } else {
                vec![(i0, 1.0 - f), (i1, f)]
            }
        })
        .collect()
}

/// Apply separable taps to one `h×w` plane, producing `ty.len() × tx.len()`.
pub fn apply_separable<F: Real>(plane: &[F], h: usize, w: usize, ty: &Taps1d, tx: &Taps1d, out: &mut [F]) {
    let ow = tx.len();
    let mut rows = vec![F::zero(); h * ow];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for (x, taps) in tx.iter().enumerate() {
            rows[y * ow + x] = taps.iter().fold(F::zero(), |s, &(j, wt)| s + F::of(wt) * src[j]);
        }
    }
    for (y, taps) in ty.iter().enumerate() {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().fold(F::zero(), |s, &(j, wt)| s + F::of(wt) * rows[j * ow + x]);
        }
    }
}

/// Accumulating adjoint of [`apply_separable`].
pub fn apply_separable_adjoint<F: Real>(dout: &[F], h: usize, w: usize, ty: &Taps1d, tx: &Taps1d, dplane: &mut [F]) {
    let ow = tx.len();
    let mut rows = vec![F::zero(); h * ow];
    for (y, taps) in ty.iter().enumerate() {
        for x in 0..ow {
            let g = dout[y * ow + x];
            for &(j, wt) in taps {
                rows[j * ow + x] = rows[j * ow + x] + F::of(wt) * g;
            }
        }
    }
    for y in 0..h {
        for (x, taps) in tx.iter().enumerate() {
            let g = rows[y * ow + x];
            for &(j, wt) in taps {
                dplane[y * w + j] = dplane[y * w + j] + F::of(wt) * g;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_kernel_values() {
        assert_eq!(cubic(0.0), 1.0);
        assert_eq!(cubic(1.0), 0.0);
        assert_eq!(cubic(2.0), 0.0);
        assert!((cubic(0.5) - 0.5625).abs() < 1e-15);
        assert!((cubic(1.5) + 0.0625).abs() < 1e-15);
    }

    #[test]
    fn every_phase_sums_to_one() {
        for &(i, o) in &[(160, 40), (40, 160), (37, 11), (8, 8)] {
            for row in bicubic_taps(i, o) {
                let s: f64 = row.iter().map(|e| e.1).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
            for row in bilinear_taps(i, o) {
                let s: f64 = row.iter().map(|e| e.1).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }
}
