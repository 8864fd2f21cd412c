//! Bilinear sampling with zero padding outside the grid.

use crate::real::Real;

/// The four bilinear neighbours of a fractional coordinate, with weights and
/// weight derivatives. Out-of-bounds neighbours have `idx == None`.
#[derive(Clone, Copy, Debug)]
pub struct Taps<F> {
    pub idx: [Option<usize>; 4],
    pub w: [F; 4],
    pub dwx: [F; 4],
    pub dwy: [F; 4],
}

impl<F: Real> Taps<F> {
    /// Neighbours of `(x, y)` on an `h×w` plane (x is the column).
    #[inline]
    pub fn new(x: F, y: F, h: usize, w: usize) -> Self {
        let (xf, yf) = (x.f64(), y.f64());
        let none = Taps { idx: [None; 4], w: [F::zero(); 4], dwx: [F::zero(); 4], dwy: [F::zero(); 4] };
        // Coordinates more than one cell outside have no in-bounds neighbour.
        if !(xf > -1.0 && yf > -1.0 && xf < w as f64 && yf < h as f64) {
            return none;
        }
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (ix, iy) = (x0.f64() as isize, y0.f64() as isize);
        let one = F::one();
        let pos = [(ix, iy), (ix + 1, iy), (ix, iy + 1), (ix + 1, iy + 1)];
        let wts = [(one - fx) * (one - fy), fx * (one - fy), (one - fx) * fy, fx * fy];
        let dwx = [-(one - fy), one - fy, -fy, fy];
        let dwy = [-(one - fx), -fx, one - fx, fx];
        let mut t = none;
        for j in 0..4 {
            let (px, py) = pos[j];
            if px >= 0 && py >= 0 && (px as usize) < w && (py as usize) < h {
                t.idx[j] = Some(py as usize * w + px as usize);
                t.w[j] = wts[j];
                t.dwx[j] = dwx[j];
                t.dwy[j] = dwy[j];
            }
        }
        t
    }

    #[inline]
    pub fn sample(&self, plane: &[F]) -> F {
        let mut s = F::zero();
        for j in 0..4 {
            if let Some(i) = self.idx[j] {
                s = s + self.w[j] * plane[i];
            }
        }
        s
    }

    /// `(∂/∂x, ∂/∂y)` of [`Taps::sample`].
    #[inline]
    pub fn grad(&self, plane: &[F]) -> (F, F) {
        let (mut gx, mut gy) = (F::zero(), F::zero());
        for j in 0..4 {
            if let Some(i) = self.idx[j] {
                gx = gx + self.dwx[j] * plane[i];
                gy = gy + self.dwy[j] * plane[i];
            }
        }
        (gx, gy)
    }

    #[inline]
    pub fn scatter(&self, plane: &mut [F], g: F) {
        for j in 0..4 {
            if let Some(i) = self.idx[j] {
                plane[i] = plane[i] + self.w[j] * g;
            }
        }
    }
}

/// Sample every channel of `feat` (`[c, h, w]`) at `(x, y)` into `out`.
pub fn bilinear_sample<F: Real>(feat: &[F], c: usize, h: usize, w: usize, x: F, y: F, out: &mut [F]) {
    let t = Taps::new(x, y, h, w);
    for (ch, o) in out.iter_mut().enumerate().take(c) {
        *o = t.sample(&feat[ch * h * w..(ch + 1) * h * w]);
    }
}

/// Shapes for [`displaced_forward`]: source `[c, hs, ws]`, displacement and
/// output lattice `h×w`.
#[derive(Clone, Copy, Debug)]
pub struct DisplacedGeom {
    pub c: usize,
    pub hs: usize,
    pub ws: usize,
    pub h: usize,
    pub w: usize,
}

/// `out(c, y, x) = src_c(x + disp_x(y, x), y + disp_y(y, x))`.
///
/// `disp` is `[2, h, w]` with channel 0 the x displacement.
pub fn displaced_forward<F: Real>(g: &DisplacedGeom, src: &[F], disp: &[F], out: &mut [F]) {
    let (hw, shw) = (g.h * g.w, g.hs * g.ws);
    for y in 0..g.h {
        for x in 0..g.w {
            let p = y * g.w + x;
            let t = Taps::new(F::of(x as f64) + disp[p], F::of(y as f64) + disp[hw + p], g.hs, g.ws);
            for ch in 0..g.c {
                out[ch * hw + p] = t.sample(&src[ch * shw..(ch + 1) * shw]);
            }
        }
    }
}

/// Accumulate source and displacement gradients of [`displaced_forward`].
pub fn displaced_backward<F: Real>(
    g: &DisplacedGeom,
    src: &[F],
    disp: &[F],
    dout: &[F],
    mut dsrc: Option<&mut [F]>,
    mut ddisp: Option<&mut [F]>,
) {
    let (hw, shw) = (g.h * g.w, g.hs * g.ws);
    for y in 0..g.h {
        for x in 0..g.w {
            let p = y * g.w + x;
            let t = Taps::new(F::of(x as f64) + disp[p], F::of(y as f64) + disp[hw + p], g.hs, g.ws);
            let (mut gx, mut gy) = (F::zero(), F::zero());
            for ch in 0..g.c {
                let go = dout[ch * hw + p];
                if let Some(ds) = dsrc.as_deref_mut() {
                    t.scatter(&mut ds[ch * shw..(ch + 1) * shw], go);
                }
                if ddisp.is_some() {
                    let (sx, sy) = t.grad(&src[ch * shw..(ch + 1) * shw]);
                    gx = gx + go * sx;
                    gy = gy + go * sy;
                }
            }
            if let Some(dd) = ddisp.as_deref_mut() {
                dd[p] = dd[p] + gx;
                dd[hw + p] = dd[hw + p] + gy;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integer_coordinate_is_exact() {
        let feat = [1.0f64, 2.0, 3.0, 4.0];
        let mut out = [0.0];
        bilinear_sample(&feat, 1, 2, 2, 1.0, 0.0, &mut out);
        assert_eq!(out[0], 2.0);
        bilinear_sample(&feat, 1, 2, 2, -10.0, -10.0, &mut out);
        assert_eq!(out[0], 0.0);
    }

    #[test]
    fn four_term_expansion() {
        let (x00, x01, x10, x11) = (0.3f64, -1.2, 2.5, 0.7);
        let feat = [x00, x01, x10, x11];
        let mut out = [0.0];
        bilinear_sample(&feat, 1, 2, 2, 0.25, 0.75, &mut out);
        let want = 0.75 * 0.25 * x00 + 0.25 * 0.25 * x01 + 0.75 * 0.75 * x10 + 0.25 * 0.75 * x11;
        assert!((out[0] - want).abs() < 1e-12);
    }

    #[test]
    fn partially_outside_uses_zero_padding() {
        let feat = [4.0f64];
        let mut out = [0.0];
        bilinear_sample(&feat, 1, 1, 1, -0.5, 0.0, &mut out);
        assert!((out[0] - 2.0).abs() < 1e-12);
    }
}
