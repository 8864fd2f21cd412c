//! Loss kernels with analytic gradients.
//!
//! Descriptor planes are channel-major `[d, n]` (the natural layout of a
//! network output `[d, h, w]`), so descriptor `p` is the strided column
//! `x[c·n + p]`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::{gemm, Mat, Real};

/// Clamp applied to student probabilities before the logarithm in the KL loss.
pub const KL_CLAMP: f64 = 1e-12;

/// Mean absolute difference; adds `scale · ∂/∂a` into `da`.
pub fn l1<F: Real>(a: &[F], b: &[F], da: Option<&mut [F]>, scale: F) -> F {
    assert_eq!(a.len(), b.len());
    let n = F::of(a.len() as f64);
    let s: F = a.iter().zip(b).map(|(&x, &y)| (x - y).abs()).sum();
    if let Some(da) = da {
        let g = scale / n;
        for ((d, &x), &y) in da.iter_mut().zip(a).zip(b) {
            let diff = x - y;
            if diff > F::zero() {
                *d = *d + g;
            } else if diff < F::zero() {
                *d = *d - g;
            }
        }
    }
    s / n
}

/// Mean of `sqrt((a − b)² + eps²)`.
pub fn charbonnier<F: Real>(a: &[F], b: &[F], eps: F, da: Option<&mut [F]>, scale: F) -> F {
    assert_eq!(a.len(), b.len());
    let n = F::of(a.len() as f64);
    let e2 = eps * eps;
    let s: F = a.iter().zip(b).map(|(&x, &y)| ((x - y) * (x - y) + e2).sqrt()).sum();
    if let Some(da) = da {
        let g = scale / n;
        for ((d, &x), &y) in da.iter_mut().zip(a).zip(b) {
            let diff = x - y;
            *d = *d + g * diff / (diff * diff + e2).sqrt();
        }
    }
    s / n
}

/// Feature-space perceptual distance, averaged over the batch:
/// `(1/V) Σ_c ‖a_c − b_c‖_F` per item with `V = c·hw`. `b` is the target.
pub fn perceptual<F: Real>(a: &[F], b: &[F], n: usize, c: usize, hw: usize, da: Option<&mut [F]>, scale: F) -> F {
    assert_eq!(a.len(), n * c * hw);
    let vol = F::of((c * hw) as f64);
    let mut total = F::zero();
    let mut norms = vec![F::zero(); n * c];
    for (i, nm) in norms.iter_mut().enumerate() {
        let (sa, sb) = (&a[i * hw..(i + 1) * hw], &b[i * hw..(i + 1) * hw]);
        *nm = sa.iter().zip(sb).map(|(&x, &y)| (x - y) * (x - y)).sum::<F>().sqrt();
        total = total + *nm;
    }
    if let Some(da) = da {
        let g = scale / (vol * F::of(n as f64));
        for (i, &nm) in norms.iter().enumerate() {
            if nm == F::zero() {
                continue;
            }
            for j in i * hw..(i + 1) * hw {
                da[j] = da[j] + g * (a[j] - b[j]) / nm;
            }
        }
    }
    total / (vol * F::of(n as f64))
}

/// Hyperparameters of the triplet margin ranking loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TripletParams {
    pub margin: f64,
    /// L∞ exclusion radius in grid cells.
    pub threshold: f64,
}

/// Which image the hardest negative came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Negative {
    /// A reference descriptor compared against the input descriptor.
    Reference(usize),
    /// An input descriptor compared against the reference descriptor.
    Input(usize),
}

/// Per-point breakdown of the triplet loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TripletTerm {
    /// Input cell (row-major).
    pub p: usize,
    /// Reference cell nearest to the ground-truth target.
    pub q: usize,
    pub pos: f64,
    pub neg: f64,
    pub negative: Negative,
}

/// Lattice shape `(h, w)`.
pub type Lattice = (usize, usize);

/// Positive and hardest-negative distances for every valid input cell.
///
/// `gt[p]` is the real-valued target `(x, y)` in reference-grid cells or
/// `None`. A target is valid when its nearest cell lies on the reference
/// lattice. The first negative term searches reference cells outside the L∞
/// ball of radius `threshold` around the target, the second searches input
/// cells outside the ball around `p`. Ties resolve to the lowest row-major
/// index, and to the reference term when both terms are equal.
pub fn triplet_terms<F: Real>(
    input: &[F],
    in_lat: Lattice,
    reference: &[F],
    ref_lat: Lattice,
    d: usize,
    gt: &[Option<(f64, f64)>],
    params: &TripletParams,
) -> Result<Vec<TripletTerm>> {
    let (n, m) = (in_lat.0 * in_lat.1, ref_lat.0 * ref_lat.1);
    assert_eq!(input.len(), d * n);
    assert_eq!(reference.len(), d * m);
    assert_eq!(gt.len(), n);
    let sq = |x: &[F], cnt: usize| -> Vec<f64> {
        (0..cnt).map(|p| (0..d).map(|c| x[c * cnt + p].f64() * x[c * cnt + p].f64()).sum()).collect()
    };
    let (na, nb) = (sq(input, n), sq(reference, m));
    let mut cross = vec![F::zero(); n * m];
    gemm(Mat::t(input, n, d), Mat::new(reference, d, m), F::zero(), &mut cross);
    let dist_ir = |p: usize, k: usize| na[p] + nb[k] - 2.0 * cross[p * m + k].f64();
    let t = params.threshold;
    let mut terms = Vec::new();
    for (p, target) in gt.iter().enumerate() {
        let Some((tx, ty)) = *target else { continue };
        let (qx, qy) = (libm::round(tx), libm::round(ty));
        if !(qx >= 0.0 && qy >= 0.0 && qx < ref_lat.1 as f64 && qy < ref_lat.0 as f64) {
            continue;
        }
        let q = qy as usize * ref_lat.1 + qx as usize;
        let pos = dist_ir(p, q);
        let mut best: Option<(f64, Negative)> = None;
        for k in 0..m {
            let (kx, ky) = ((k % ref_lat.1) as f64, (k / ref_lat.1) as f64);
            if (kx - tx).abs().max((ky - ty).abs()) > t {
                let dk = dist_ir(p, k);
                if best.is_none_or(|(b, _)| dk < b) {
                    best = Some((dk, Negative::Reference(k)));
                }
            }
        }
        let (px, py) = ((p % in_lat.1) as f64, (p / in_lat.1) as f64);
        for k in 0..n {
            let (kx, ky) = ((k % in_lat.1) as f64, (k / in_lat.1) as f64);
            if (kx - px).abs().max((ky - py).abs()) > t {
                let dk = nb[q] + na[k] - 2.0 * cross[k * m + q].f64();
                if best.is_none_or(|(b, _)| dk < b) {
                    best = Some((dk, Negative::Input(k)));
                }
            }
        }
        let Some((neg, negative)) = best else {
            return Err(Error::Domain(alloc::format!(
                "threshold T = {t} excludes every negative for input cell {p}"
            )));
        };
        terms.push(TripletTerm { p, q, pos, neg, negative });
    }
    if terms.is_empty() {
        return Err(Error::NoValidPoints("no ground-truth correspondence falls inside the reference".into()));
    }
    Ok(terms)
}

/// `mean_p max(0, m + Pos(p) − Neg(p))`; accumulates `scale · ∂/∂·` into the
/// optional gradient buffers. Gradients through the hardest negative flow to
/// the single selected minimiser.
#[allow(clippy::too_many_arguments)]
pub fn triplet_margin<F: Real>(
    input: &[F],
    in_lat: Lattice,
    reference: &[F],
    ref_lat: Lattice,
    d: usize,
    gt: &[Option<(f64, f64)>],
    params: &TripletParams,
    mut d_input: Option<&mut [F]>,
    mut d_reference: Option<&mut [F]>,
    scale: F,
) -> Result<F> {
    let terms = triplet_terms(input, in_lat, reference, ref_lat, d, gt, params)?;
    let (n, m) = (in_lat.0 * in_lat.1, ref_lat.0 * ref_lat.1);
    let inv = 1.0 / terms.len() as f64;
    let g = scale * F::of(inv);
    let two = F::of(2.0);
    let mut total = 0.0;
    for t in &terms {
        let l = params.margin + t.pos - t.neg;
        if l <= 0.0 {
            continue;
        }
        total += l;
        for c in 0..d {
            let a = input[c * n + t.p];
            let b = reference[c * m + t.q];
            // + Pos
            if let Some(di) = d_input.as_deref_mut() {
                di[c * n + t.p] = di[c * n + t.p] + g * two * (a - b);
            }
            if let Some(dr) = d_reference.as_deref_mut() {
                dr[c * m + t.q] = dr[c * m + t.q] - g * two * (a - b);
            }
            // − Neg
            match t.negative {
                Negative::Reference(k) => {
                    let f = reference[c * m + k];
                    if let Some(di) = d_input.as_deref_mut() {
                        di[c * n + t.p] = di[c * n + t.p] - g * two * (a - f);
                    }
                    if let Some(dr) = d_reference.as_deref_mut() {
                        dr[c * m + k] = dr[c * m + k] + g * two * (a - f);
                    }
                }
                Negative::Input(k) => {
                    let f = input[c * n + k];
                    if let Some(dr) = d_reference.as_deref_mut() {
                        dr[c * m + t.q] = dr[c * m + t.q] - g * two * (b - f);
                    }
                    if let Some(di) = d_input.as_deref_mut() {
                        di[c * n + k] = di[c * n + k] + g * two * (b - f);
                    }
                }
            }
        }
    }
    Ok(F::of(total * inv) * scale)
}

/// L2-normalise each of the `n` columns of a `[d, n]` plane. Zero columns
/// stay zero. Returns the normalised plane and the original norms.
pub fn normalize_columns<F: Real>(x: &[F], d: usize, n: usize) -> (Vec<F>, Vec<F>) {
    let mut norms = vec![F::zero(); n];
    for c in 0..d {
        for p in 0..n {
            norms[p] = norms[p] + x[c * n + p] * x[c * n + p];
        }
    }
    norms.iter_mut().for_each(|v| *v = v.sqrt());
    let mut out = vec![F::zero(); d * n];
    for c in 0..d {
        for p in 0..n {
            if norms[p] > F::zero() {
                out[c * n + p] = x[c * n + p] / norms[p];
            }
        }
    }
    (out, norms)
}

/// Backward of [`normalize_columns`]: accumulate `∂/∂x` given `∂/∂x̂`.
fn normalize_columns_backward<F: Real>(xhat: &[F], norms: &[F], dxhat: &[F], d: usize, n: usize, dx: &mut [F]) {
    let mut dots = vec![F::zero(); n];
    for c in 0..d {
        for p in 0..n {
            dots[p] = dots[p] + xhat[c * n + p] * dxhat[c * n + p];
        }
    }
    for c in 0..d {
        for p in 0..n {
            if norms[p] > F::zero() {
                let i = c * n + p;
                dx[i] = dx[i] + (dxhat[i] - xhat[i] * dots[p]) / norms[p];
            }
        }
    }
}

/// Row-wise temperature softmax of normalised dot products, `N×M`.
pub fn correlation_softmax<F: Real>(a_hat: &[F], n: usize, b_hat: &[F], m: usize, d: usize, tau: F) -> Vec<F> {
    let mut z = vec![F::zero(); n * m];
    gemm(Mat::t(a_hat, n, d), Mat::new(b_hat, d, m), F::zero(), &mut z);
    for row in z.chunks_mut(m) {
        let mx = row.iter().fold(F::neg_infinity(), |a, &b| a.max(b / tau));
        let mut s = F::zero();
        for v in row.iter_mut() {
            *v = (*v / tau - mx).exp();
            s = s + *v;
        }
        row.iter_mut().for_each(|v| *v = *v / s);
    }
    z
}

/// `(1/N) Σ_p Σ_k T_pk · log(T_pk / max(S_pk, 1e-12))`.
pub fn kl_rows<F: Real>(teacher: &[F], student: &[F], n: usize) -> F {
    let clamp = F::of(KL_CLAMP);
    let mut s = F::zero();
    for (&t, &q) in teacher.iter().zip(student) {
        if t > F::zero() {
            s = s + t * (t.ln() - q.max(clamp).ln());
        }
    }
    s / F::of(n as f64)
}

/// Distillation loss between a constant teacher volume and the student
/// volume built from `[d, n]` input and `[d, m]` reference descriptors.
#[allow(clippy::too_many_arguments)]
pub fn correlation_kl<F: Real>(
    teacher: &[F],
    input: &[F],
    n: usize,
    reference: &[F],
    m: usize,
    d: usize,
    tau: F,
    d_input: Option<&mut [F]>,
    d_reference: Option<&mut [F]>,
    scale: F,
) -> F {
    assert_eq!(teacher.len(), n * m);
    let (ih, inorm) = normalize_columns(input, d, n);
    let (rh, rnorm) = normalize_columns(reference, d, m);
    let s = correlation_softmax(&ih, n, &rh, m, d, tau);
    let loss = kl_rows(teacher, &s, n);
    if d_input.is_none() && d_reference.is_none() {
        return loss * scale;
    }
    let clamp = F::of(KL_CLAMP);
    let inv_n = scale / F::of(n as f64);
    // dz = S ⊙ (dS − ⟨S, dS⟩) / τ with dS = −T / S where S is unclamped.
    let mut dz = vec![F::zero(); n * m];
    for p in 0..n {
        let (srow, trow) = (&s[p * m..(p + 1) * m], &teacher[p * m..(p + 1) * m]);
        let ds: Vec<F> = srow
            .iter()
            .zip(trow)
            .map(|(&q, &t)| if q > clamp { -inv_n * t / q } else { F::zero() })
            .collect();
        let dot: F = srow.iter().zip(&ds).map(|(&q, &g)| q * g).sum();
        for k in 0..m {
            dz[p * m + k] = srow[k] * (ds[k] - dot) / tau;
        }
    }
    if let Some(di) = d_input {
        // d â = B̂ · dzᵀ  ([d, n])
        let mut dah = vec![F::zero(); d * n];
        gemm(Mat::new(&rh, d, m), Mat::t(&dz, m, n), F::zero(), &mut dah);
        normalize_columns_backward(&ih, &inorm, &dah, d, n, di);
    }
    if let Some(dr) = d_reference {
        let mut dbh = vec![F::zero(); d * m];
        gemm(Mat::new(&ih, d, n), Mat::new(&dz, n, m), F::zero(), &mut dbh);
        normalize_columns_backward(&rh, &rnorm, &dbh, d, m, dr);
    }
    loss * scale
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charbonnier_at_zero_is_eps() {
        let a = [0.25f64; 4];
        assert_eq!(charbonnier(&a, &a, 1e-8, None, 1.0), 1e-8);
    }

    #[test]
    fn l1_constant_offset() {
        let a = [0.5f64, 0.2, 0.9];
        let b: Vec<f64> = a.iter().map(|v| v + 0.1).collect();
        assert!((l1(&b, &a, None, 1.0) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn kl_of_identical_volumes_is_zero() {
        let t = [0.2f64, 0.3, 0.5, 0.1, 0.1, 0.8];
        assert_eq!(kl_rows(&t, &t, 2), 0.0);
    }

    #[test]
    fn too_large_threshold_is_reported() {
        let x = [0.0f64, 1.0, 2.0, 3.0];
        let gt = [Some((0.0, 0.0)), None, None, None];
        let err = triplet_terms(&x, (2, 2), &x, (2, 2), 1, &gt, &TripletParams { margin: 1.0, threshold: 5.0 });
        assert!(matches!(err, Err(Error::Domain(msg)) if msg.contains("T = 5")));
    }
}
