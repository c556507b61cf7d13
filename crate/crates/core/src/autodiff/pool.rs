use super::Scalar;

/// Max-pool over `[n*c]` planes. Returns values and, per output cell, the flat
/// input index of the first (row-major) maximum.
pub(crate) fn maxpool_forward<T: Scalar>(
    x: &[T],
    planes: usize,
    (h, w): (usize, usize),
    (oh, ow): (usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
) -> (Vec<T>, Vec<usize>) {
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut arg = Vec::with_capacity(planes * oh * ow);
    for pl in 0..planes {
        let base = pl * h * w;
        for oy in 0..oh {
            let y0 = (oy * stride) as isize - pad as isize;
            for ox in 0..ow {
                let x0 = (ox * stride) as isize - pad as isize;
                let mut best = T::neg_infinity();
                let mut best_idx = usize::MAX;
                for dy in 0..k as isize {
                    let iy = y0 + dy;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for dx in 0..k as isize {
                        let ix = x0 + dx;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let idx = base + iy as usize * w + ix as usize;
                        let v = x[idx];
                        if best_idx == usize::MAX || v > best {
                            best = v;
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                arg.push(best_idx);
            }
        }
    }
    (out, arg)
}

/// Source index along one axis for nearest-neighbour resampling.
#[inline]
pub(crate) fn nearest_src(dst: usize, src_len: usize, dst_len: usize) -> usize {
    (dst * src_len / dst_len).min(src_len - 1)
}

pub(crate) fn resize_forward<T: Scalar>(
    x: &[T],
    planes: usize,
    (h, w): (usize, usize),
    (oh, ow): (usize, usize),
) -> Vec<T> {
    let mut out = Vec::with_capacity(planes * oh * ow);
    let cols: Vec<usize> = (0..ow).map(|ox| nearest_src(ox, w, ow)).collect();
    for pl in 0..planes {
        let plane = &x[pl * h * w..(pl + 1) * h * w];
        for oy in 0..oh {
            let row = &plane[nearest_src(oy, h, oh) * w..][..w];
            out.extend(cols.iter().map(|&c| row[c]));
        }
    }
    out
}

pub(crate) fn resize_backward<T: Scalar>(
    gout: &[T],
    dx: &mut [T],
    planes: usize,
    (h, w): (usize, usize),
    (oh, ow): (usize, usize),
) {
    let cols: Vec<usize> = (0..ow).map(|ox| nearest_src(ox, w, ow)).collect();
    for pl in 0..planes {
        let plane = &mut dx[pl * h * w..(pl + 1) * h * w];
        let gplane = &gout[pl * oh * ow..(pl + 1) * oh * ow];
        for oy in 0..oh {
            let sy = nearest_src(oy, h, oh);
            let grow = &gplane[oy * ow..(oy + 1) * ow];
            for (&c, &g) in cols.iter().zip(grow) {
                plane[sy * w + c] += g;
            }
        }
    }
}
