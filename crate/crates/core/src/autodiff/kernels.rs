//! Slice-level forward and backward kernels. Shapes are validated by the tape.

use super::Real;

pub(crate) fn fc_forward<T: Real>(x: &[T], w: &[T], b: &[T]) -> Vec<T> {
    let n_in = x.len();
    b.iter()
        .zip(w.chunks_exact(n_in))
        .map(|(&bias, row)| bias + row.iter().zip(x).map(|(&a, &c)| a * c).sum::<T>())
        .collect()
}

/// Returns `(dx, dw, db)`.
pub(crate) fn fc_backward<T: Real>(x: &[T], w: &[T], g: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
    let n_in = x.len();
    let mut dx = vec![T::zero(); n_in];
    let mut dw = vec![T::zero(); w.len()];
    for (o, (&go, row)) in g.iter().zip(w.chunks_exact(n_in)).enumerate() {
        let drow = &mut dw[o * n_in..(o + 1) * n_in];
        for i in 0..n_in {
            drow[i] = go * x[i];
            dx[i] = dx[i] + row[i] * go;
        }
    }
    (dx, dw, g.to_vec())
}

/// Valid index range `[lo, hi)` of output positions whose input `pos + off` is inside `[0, n)`.
#[inline]
fn span(n: usize, off: isize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = (n as isize - off).clamp(0, n as isize) as usize;
    (lo, hi.max(lo))
}

/// 3×3 cross-correlation, stride 1, zero padding 1.
pub(crate) fn conv3x3_forward<T: Real>(
    x: &[T],
    k: &[T],
    b: &[T],
    c_in: usize,
    h: usize,
    w: usize,
) -> Vec<T> {
    let c_out = b.len();
    let plane = h * w;
    let mut out = vec![T::zero(); c_out * plane];
    for co in 0..c_out {
        let dst = &mut out[co * plane..(co + 1) * plane];
        dst.iter_mut().for_each(|v| *v = b[co]);
        for ci in 0..c_in {
            let src = &x[ci * plane..(ci + 1) * plane];
            let taps = &k[(co * c_in + ci) * 9..(co * c_in + ci + 1) * 9];
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, y1) = span(h, dy);
                for kx in 0..3 {
                    let wt = taps[ky * 3 + kx];
                    if wt == T::zero() {
                        continue;
                    }
                    let dx = kx as isize - 1;
                    let (x0, x1) = span(w, dx);
                    let len = x1 - x0;
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let s = &src[sy * w + (x0 as isize + dx) as usize..][..len];
                        let d = &mut dst[y * w + x0..][..len];
                        for (o, &i) in d.iter_mut().zip(s) {
                            *o = *o + wt * i;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `(dx, dk, db)`; `dx` is skipped (empty) when `need_dx` is false.
pub(crate) fn conv3x3_backward<T: Real>(
    x: &[T],
    k: &[T],
    g: &[T],
    c_in: usize,
    h: usize,
    w: usize,
    need_dx: bool,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let plane = h * w;
    let c_out = g.len() / plane;
    let mut dx = if need_dx {
        vec![T::zero(); x.len()]
    } else {
        Vec::new()
    };
    let mut dk = vec![T::zero(); k.len()];
    let mut db = vec![T::zero(); c_out];
    for co in 0..c_out {
        let gp = &g[co * plane..(co + 1) * plane];
        db[co] = gp.iter().copied().sum();
        for ci in 0..c_in {
            let src = &x[ci * plane..(ci + 1) * plane];
            let base = (co * c_in + ci) * 9;
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, y1) = span(h, dy);
                for kx in 0..3 {
                    let dxo = kx as isize - 1;
                    let (x0, x1) = span(w, dxo);
                    let len = x1 - x0;
                    let wt = k[base + ky * 3 + kx];
                    let mut acc = T::zero();
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let soff = sy * w + (x0 as isize + dxo) as usize;
                        let s = &src[soff..][..len];
                        let gr = &gp[y * w + x0..][..len];
                        acc = acc + s.iter().zip(gr).map(|(&a, &b)| a * b).sum::<T>();
                        if need_dx && wt != T::zero() {
                            let d = &mut dx[ci * plane + soff..][..len];
                            for (o, &gv) in d.iter_mut().zip(gr) {
                                *o = *o + wt * gv;
                            }
                        }
                    }
                    dk[base + ky * 3 + kx] = acc;
                }
            }
        }
    }
    (dx, dk, db)
}

/// Per-channel valid cross-correlation with a fixed `ks × ks` kernel.
pub(crate) fn depthwise_valid_forward<T: Real>(
    x: &[T],
    kernel: &[T],
    ks: usize,
    c: usize,
    h: usize,
    w: usize,
) -> Vec<T> {
    let (oh, ow) = (h - ks + 1, w - ks + 1);
    let mut out = vec![T::zero(); c * oh * ow];
    for ch in 0..c {
        let src = &x[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for ky in 0..ks {
            for kx in 0..ks {
                let wt = kernel[ky * ks + kx];
                for y in 0..oh {
                    let s = &src[(y + ky) * w + kx..][..ow];
                    let d = &mut dst[y * ow..][..ow];
                    for (o, &i) in d.iter_mut().zip(s) {
                        *o = *o + wt * i;
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn depthwise_valid_backward<T: Real>(
    g: &[T],
    kernel: &[T],
    ks: usize,
    c: usize,
    h: usize,
    w: usize,
) -> Vec<T> {
    let (oh, ow) = (h - ks + 1, w - ks + 1);
    let mut dx = vec![T::zero(); c * h * w];
    for ch in 0..c {
        let gp = &g[ch * oh * ow..(ch + 1) * oh * ow];
        let d = &mut dx[ch * h * w..(ch + 1) * h * w];
        for ky in 0..ks {
            for kx in 0..ks {
                let wt = kernel[ky * ks + kx];
                for y in 0..oh {
                    let gr = &gp[y * ow..][..ow];
                    let dr = &mut d[(y + ky) * w + kx..][..ow];
                    for (o, &gv) in dr.iter_mut().zip(gr) {
                        *o = *o + wt * gv;
                    }
                }
            }
        }
    }
    dx
}

/// `[C·s², H, W] → [C, s·H, s·W]`, `out[c, s·y+dy, s·x+dx] = in[c·s² + dy·s + dx, y, x]`.
pub(crate) fn pixel_shuffle<T: Real>(x: &[T], c_in: usize, h: usize, w: usize, s: usize) -> Vec<T> {
    let c = c_in / (s * s);
    let (oh, ow) = (h * s, w * s);
    let mut out = vec![T::zero(); x.len()];
    for ch in 0..c {
        for dy in 0..s {
            for dx in 0..s {
                let src = &x[(ch * s * s + dy * s + dx) * h * w..][..h * w];
                for y in 0..h {
                    let orow = ch * oh * ow + (s * y + dy) * ow;
                    for xx in 0..w {
                        out[orow + s * xx + dx] = src[y * w + xx];
                    }
                }
            }
        }
    }
    out
}

/// Inverse permutation of [`pixel_shuffle`]; also its backward pass.
pub(crate) fn pixel_unshuffle<T: Real>(y: &[T], c: usize, oh: usize, ow: usize, s: usize) -> Vec<T> {
    let (h, w) = (oh / s, ow / s);
    let mut out = vec![T::zero(); y.len()];
    for ch in 0..c {
        for dy in 0..s {
            for dx in 0..s {
                let dst = &mut out[(ch * s * s + dy * s + dx) * h * w..][..h * w];
                for yy in 0..h {
                    let orow = ch * oh * ow + (s * yy + dy) * ow;
                    for xx in 0..w {
                        dst[yy * w + xx] = y[orow + s * xx + dx];
                    }
                }
            }
        }
    }
    out
}

#[inline]
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    // split by sign so exp never overflows
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn span_bounds() {
        assert_eq!(span(5, -1), (1, 5));
        assert_eq!(span(5, 1), (0, 4));
        assert_eq!(span(5, 0), (0, 5));
        assert_eq!(span(1, 1), (0, 0));
    }

    #[test]
    fn shuffle_unshuffle_inverse() {
        let x: Vec<f32> = (0..2 * 9 * 2 * 3).map(|i| i as f32).collect();
        let y = pixel_shuffle(&x, 18, 2, 3, 3);
        assert_eq!(pixel_unshuffle(&y, 2, 6, 9, 3), x);
    }

    #[test]
    fn sigmoid_saturates() {
        assert_eq!(sigmoid(40.0f32), 1.0);
        assert!(sigmoid(-40.0f32) >= 0.0 && sigmoid(-40.0f32) < 1e-17);
        assert_eq!(sigmoid(-1000.0f64), 0.0);
    }
}
