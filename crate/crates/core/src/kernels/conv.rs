//! 2-D convolution via im2col + gemm.

use alloc::vec;
use alloc::vec::Vec;

use crate::real::{gemm, Mat, Real};

/// Geometry of a square-kernel convolution over a batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.k) / self.stride + 1
    }
    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.k) / self.stride + 1
    }
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
    fn col_rows(&self) -> usize {
        self.cin * self.k * self.k
    }
}

/// Unfold one `[cin, h, w]` item into `[cin·k·k, oh·ow]` columns.
pub fn im2col<F: Real>(g: &ConvGeom, x: &[F], cols: &mut [F]) {
    let (oh, ow, k) = (g.out_h(), g.out_w(), g.k);
    let plane = oh * ow;
    for ci in 0..g.cin {
        let src = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let drow = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= g.h as isize {
                        drow.iter_mut().for_each(|v| *v = F::zero());
                        continue;
                    }
                    let srow = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize { F::zero() } else { srow[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back into `[cin, h, w]`.
pub fn col2im<F: Real>(g: &ConvGeom, cols: &[F], dx: &mut [F]) {
    let (oh, ow, k) = (g.out_h(), g.out_w(), g.k);
    let plane = oh * ow;
    for ci in 0..g.cin {
        let dst = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let drow = &mut dst[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            drow[ix as usize] = drow[ix as usize] + src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `out[n] = w · im2col(x[n]) + b`. `w` is `[cout, cin, k, k]`, `b` is `[cout]`.
pub fn conv2d_forward<F: Real>(g: &ConvGeom, x: &[F], w: &[F], b: Option<&[F]>, out: &mut [F]) {
    let plane = g.out_h() * g.out_w();
    let (in_len, out_len) = (g.cin * g.h * g.w, g.cout * plane);
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![F::zero(); g.col_rows() * plane] };
    for n in 0..g.n {
        let xi = &x[n * in_len..(n + 1) * in_len];
        let oi = &mut out[n * out_len..(n + 1) * out_len];
        let colv: &[F] = if g.is_pointwise() {
            xi
        } else {
            im2col(g, xi, &mut cols);
            &cols
        };
        gemm(Mat::new(w, g.cout, g.col_rows()), Mat::new(colv, g.col_rows(), plane), F::zero(), oi);
        if let Some(b) = b {
            for (co, &bv) in b.iter().enumerate() {
                oi[co * plane..(co + 1) * plane].iter_mut().for_each(|v| *v = *v + bv);
            }
        }
    }
}

/// Accumulate input, weight and bias gradients of [`conv2d_forward`].
pub fn conv2d_backward<F: Real>(
    g: &ConvGeom,
    x: &[F],
    w: &[F],
    dout: &[F],
    mut dx: Option<&mut [F]>,
    mut dw: Option<&mut [F]>,
    mut db: Option<&mut [F]>,
) {
    let plane = g.out_h() * g.out_w();
    let (in_len, out_len) = (g.cin * g.h * g.w, g.cout * plane);
    let rows = g.col_rows();
    let mut cols = vec![F::zero(); if g.is_pointwise() { 0 } else { rows * plane }];
    let mut dcols = vec![F::zero(); if dx.is_some() && !g.is_pointwise() { rows * plane } else { 0 }];
    for n in 0..g.n {
        let xi = &x[n * in_len..(n + 1) * in_len];
        let di = &dout[n * out_len..(n + 1) * out_len];
        if let Some(db) = db.as_deref_mut() {
            for co in 0..g.cout {
                let s: F = di[co * plane..(co + 1) * plane].iter().copied().sum();
                db[co] = db[co] + s;
            }
        }
        if let Some(dw) = dw.as_deref_mut() {
            let colv: &[F] = if g.is_pointwise() {
                xi
            } else {
                im2col(g, xi, &mut cols);
                &cols
            };
            // dW += dY · colsᵀ
            gemm(Mat::new(di, g.cout, plane), Mat::t(colv, plane, rows), F::one(), dw);
        }
        if let Some(dx) = dx.as_deref_mut() {
            let dxi = &mut dx[n * in_len..(n + 1) * in_len];
            if g.is_pointwise() {
                gemm(Mat::t(w, rows, g.cout), Mat::new(di, g.cout, plane), F::one(), dxi);
            } else {
                gemm(Mat::t(w, rows, g.cout), Mat::new(di, g.cout, plane), F::zero(), &mut dcols);
                col2im(g, &dcols, dxi);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(g: &ConvGeom, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
        let (oh, ow) = (g.out_h(), g.out_w());
        let mut out = vec![0.0; g.n * g.cout * oh * ow];
        for n in 0..g.n {
            for co in 0..g.cout {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut s = b[co];
                        for ci in 0..g.cin {
                            for ky in 0..g.k {
                                for kx in 0..g.k {
                                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < g.h && (ix as usize) < g.w {
                                        s += w[((co * g.cin + ci) * g.k + ky) * g.k + kx]
                                            * x[((n * g.cin + ci) * g.h + iy as usize) * g.w + ix as usize];
                                    }
                                }
                            }
                        }
                        out[((n * g.cout + co) * oh + oy) * ow + ox] = s;
                    }
                }
            }
        }
        out
    }

    fn pseudo(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            })
            .collect()
    }

    #[test]
    fn forward_matches_naive_for_strides_and_pointwise() {
        for &(k, stride, pad) in &[(3, 1, 1), (3, 2, 1), (1, 1, 0), (3, 1, 0)] {
            let g = ConvGeom { n: 2, cin: 3, h: 7, w: 6, cout: 4, k, stride, pad };
            let x = pseudo(g.n * g.cin * g.h * g.w, 1);
            let w = pseudo(g.cout * g.cin * k * k, 2);
            let b = pseudo(g.cout, 3);
            let mut out = vec![0.0; g.n * g.cout * g.out_h() * g.out_w()];
            conv2d_forward(&g, &x, &w, Some(&b), &mut out);
            let want = naive(&g, &x, &w, &b);
            for (a, b) in out.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // <conv(x), y> = <x, conv^T(y)> and the weight gradient is the
        // derivative of <conv(x), y> with respect to w (linear in w).
        let g = ConvGeom { n: 2, cin: 2, h: 5, w: 6, cout: 3, k: 3, stride: 2, pad: 1 };
        let x = pseudo(g.n * g.cin * g.h * g.w, 4);
        let w = pseudo(g.cout * g.cin * 9, 5);
        let y = pseudo(g.n * g.cout * g.out_h() * g.out_w(), 6);
        let mut out = vec![0.0; y.len()];
        conv2d_forward(&g, &x, &w, None, &mut out);
        let lhs: f64 = out.iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut dx = vec![0.0; x.len()];
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; g.cout];
        conv2d_backward(&g, &x, &w, &y, Some(&mut dx), Some(&mut dw), Some(&mut db));
        let rhs_x: f64 = dx.iter().zip(&x).map(|(a, b)| a * b).sum();
        let rhs_w: f64 = dw.iter().zip(&w).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs_x).abs() < 1e-10);
        assert!((lhs - rhs_w).abs() < 1e-10);
        let ysum: f64 = y.iter().sum();
        assert!((db.iter().sum::<f64>() - ysum).abs() < 1e-10);
    }
}
