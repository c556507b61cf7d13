//! im2col convolution kernels shared by the forward and backward passes.

use super::scalar::{matmul, Scalar};

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn plane_out(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unrolls one image `[cin, h, w]` into rows of `col`, row `r` starting at
/// `r * ld`. With `ld = oh*ow` that is a dense `[cin*kh*kw, oh*ow]` matrix;
/// a larger `ld` places the image as a column block of a batch matrix.
fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, col: &mut [T], ld: usize) {
    let p = g.plane_out();
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut col[row * ld..row * ld + p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let out_row = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    if g.stride == 1 {
                        // valid ox range: 0 <= ox + kj - pad < w
                        let (lo, hi) = valid_span(g, kj);
                        out_row[..lo].fill(T::zero());
                        out_row[hi..].fill(T::zero());
                        let start = lo + kj - g.pad;
                        out_row[lo..hi].copy_from_slice(&src[start..start + (hi - lo)]);
                    } else {
                        for (ox, o) in out_row.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                            *o = if ix < 0 || ix >= g.w as isize {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Output columns `lo..hi` whose stride-1 input column `ox + kj - pad` is inside the row.
fn valid_span(g: &ConvGeom, kj: usize) -> (usize, usize) {
    let lo = g.pad.saturating_sub(kj).min(g.ow);
    let hi = (g.w + g.pad).saturating_sub(kj).min(g.ow).max(lo);
    (lo, hi)
}

/// Scatter-adds the rows of `col` (row stride `ld`) back onto an image
/// gradient `[cin, h, w]`.
fn col2im<T: Scalar>(col: &[T], g: &ConvGeom, dx: &mut [T], ld: usize) {
    let p = g.plane_out();
    for c in 0..g.cin {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &col[row * ld..row * ld + p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let in_row = &src[oy * g.ow..(oy + 1) * g.ow];
                    if g.stride == 1 {
                        let (lo, hi) = valid_span(g, kj);
                        let start = lo + kj - g.pad;
                        dst[start..start + (hi - lo)]
                            .iter_mut()
                            .zip(&in_row[lo..hi])
                            .for_each(|(d, &v)| *d += v);
                        continue;
                    }
                    for (ox, &v) in in_row.iter().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Large pointwise planes are multiplied in place, one image at a time;
/// everything else is unrolled into one `[k, n*oh*ow]` matrix so the whole
/// batch goes through a single product.
fn batched(g: &ConvGeom) -> bool {
    !g.is_pointwise() || g.plane_out() < 1024
}

/// `[n, c, p]` -> `[c, n*p]`, or back with `inverse`.
fn swap_batch<T: Scalar>(src: &[T], dst: &mut [T], n: usize, c: usize, p: usize, inverse: bool) {
    for i in 0..n {
        for ch in 0..c {
            let a = (i * c + ch) * p;
            let b = ch * n * p + i * p;
            if inverse {
                dst[a..a + p].copy_from_slice(&src[b..b + p]);
            } else {
                dst[b..b + p].copy_from_slice(&src[a..a + p]);
            }
        }
    }
}

fn batch_cols<T: Scalar>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let (k, p, np) = (g.k(), g.plane_out(), g.n * g.plane_out());
    let plane_in = g.cin * g.h * g.w;
    let mut col = vec![T::zero(); k * np];
    for i in 0..g.n {
        im2col(&x[i * plane_in..(i + 1) * plane_in], g, &mut col[i * p..], np);
    }
    col
}

pub(crate) fn forward<T: Scalar>(x: &[T], weight: &[T], bias: Option<&[T]>, g: &ConvGeom) -> Vec<T> {
    let (k, p) = (g.k(), g.plane_out());
    let mut out = vec![T::zero(); g.n * g.cout * p];
    if batched(g) {
        let col = batch_cols(x, g);
        let mut wide = vec![T::zero(); g.cout * g.n * p];
        matmul(weight, false, &col, false, &mut wide, g.cout, k, g.n * p, false);
        swap_batch(&wide, &mut out, g.n, g.cout, p, true);
    } else {
        for i in 0..g.n {
            let xi = &x[i * g.cin * p..(i + 1) * g.cin * p];
            let oi = &mut out[i * g.cout * p..(i + 1) * g.cout * p];
            matmul(weight, false, xi, false, oi, g.cout, k, p, false);
        }
    }
    if let Some(b) = bias {
        for (r, row) in out.chunks_exact_mut(p).enumerate() {
            let bv = b[r % g.cout];
            row.iter_mut().for_each(|v| *v += bv);
        }
    }
    out
}

/// Accumulates input, weight and bias gradients for one convolution.
pub(crate) fn backward<T: Scalar>(
    x: &[T],
    weight: &[T],
    gout: &[T],
    g: &ConvGeom,
    dx: Option<&mut [T]>,
    dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    let (k, p) = (g.k(), g.plane_out());
    let plane_in = g.cin * g.h * g.w;
    if let Some(db) = db {
        for (r, row) in gout.chunks_exact(p).enumerate() {
            db[r % g.cout] += row.iter().copied().sum::<T>();
        }
    }
    if batched(g) {
        let np = g.n * p;
        let mut gwide = vec![T::zero(); g.cout * np];
        swap_batch(gout, &mut gwide, g.n, g.cout, p, false);
        if let Some(dw) = dw {
            // dW[cout,k] += gout[cout,np] * col[k,np]^T
            let col = batch_cols(x, g);
            matmul(&gwide, false, &col, true, dw, g.cout, np, k, true);
        }
        if let Some(dx) = dx {
            let mut dcol = vec![T::zero(); k * np];
            matmul(weight, true, &gwide, false, &mut dcol, k, g.cout, np, false);
            for i in 0..g.n {
                col2im(&dcol[i * p..], g, &mut dx[i * plane_in..(i + 1) * plane_in], np);
            }
        }
        return;
    }
    // large pointwise planes: per image, no unrolling
    let (mut dx, mut dw) = (dx, dw);
    for i in 0..g.n {
        let gi = &gout[i * g.cout * p..(i + 1) * g.cout * p];
        if let Some(dw) = dw.as_deref_mut() {
            matmul(gi, false, &x[i * plane_in..(i + 1) * plane_in], true, dw, g.cout, p, k, true);
        }
        if let Some(dx) = dx.as_deref_mut() {
            matmul(weight, true, gi, false, &mut dx[i * plane_in..(i + 1) * plane_in], k, g.cout, p, true);
        }
    }
}
