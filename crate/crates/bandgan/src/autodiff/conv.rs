//! Direct 2-D convolution kernels (forward and both backward passes) for
//! plain and transposed convolution.
//!
//! Layouts are NCHW for activations, (out_ch, in_ch, kh, kw) for conv
//! kernels and (in_ch, out_ch, kh, kw) for transposed-conv kernels. The
//! inner loops run over the contiguous width axis so they vectorize; every
//! output element is accumulated in a fixed order, which keeps results
//! bitwise reproducible (including under the batch-level parallelism below).

use rayon::prelude::*;

use super::scalar::Scalar;

/// Batch size at which the per-sample loops move onto the rayon pool.
const PAR_BATCH: usize = 4;

#[inline]
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[inline]
pub fn convt_out_dim(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    out_padding: usize,
) -> Option<usize> {
    let grown = (input - 1) * stride + kernel + out_padding;
    if grown < 2 * padding {
        return None;
    }
    Some(grown - 2 * padding)
}

/// Range of loop indices `i` in `[0, loop_len)` for which `i*stride + k - padding`
/// lands inside `[0, idx_len)`.
#[inline]
fn valid_span(
    stride: usize,
    padding: usize,
    k: usize,
    idx_len: usize,
    loop_len: usize,
) -> (usize, usize) {
    let lo = if padding > k {
        (padding - k).div_ceil(stride)
    } else {
        0
    };
    let top = idx_len as isize - 1 + padding as isize - k as isize;
    if top < 0 {
        return (0, 0);
    }
    let hi = (top as usize / stride + 1).min(loop_len);
    (lo.min(hi), hi)
}

struct ConvDims {
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    padding: usize,
}

/// y[oc,oy,ox] = sum over ic,ky,kx of w[oc,ic,ky,kx] * x[ic, oy*s+ky-p, ox*s+kx-p]
fn conv2d_sample<S: Scalar>(x: &[S], kern: &[S], out: &mut [S], d: &ConvDims) {
    for oc in 0..d.c_out {
        let wbase = oc * d.c_in * d.kh * d.kw;
        for oy in 0..d.oh {
            let orow = &mut out[(oc * d.oh + oy) * d.ow..][..d.ow];
            for ky in 0..d.kh {
                let iy = (oy * d.stride + ky) as isize - d.padding as isize;
                if iy < 0 || iy >= d.h as isize {
                    continue;
                }
                for ic in 0..d.c_in {
                    let xrow = &x[(ic * d.h + iy as usize) * d.w..][..d.w];
                    let wrow = &kern[wbase + (ic * d.kh + ky) * d.kw..][..d.kw];
                    for (kx, &wv) in wrow.iter().enumerate() {
                        let (lo, hi) = valid_span(d.stride, d.padding, kx, d.w, d.ow);
                        let mut ix = lo * d.stride + kx - d.padding;
                        for o in &mut orow[lo..hi] {
                            *o = *o + wv * xrow[ix];
                            ix += d.stride;
                        }
                    }
                }
            }
        }
    }
}

/// dx[ic,iy,ix] += sum over oc,ky,kx of w[oc,ic,ky,kx] * dy[oc,oy,ox]
fn conv2d_sample_dx<S: Scalar>(dy: &[S], kern: &[S], dx: &mut [S], d: &ConvDims) {
    for oc in 0..d.c_out {
        let wbase = oc * d.c_in * d.kh * d.kw;
        for oy in 0..d.oh {
            let dyrow = &dy[(oc * d.oh + oy) * d.ow..][..d.ow];
            for ky in 0..d.kh {
                let iy = (oy * d.stride + ky) as isize - d.padding as isize;
                if iy < 0 || iy >= d.h as isize {
                    continue;
                }
                for ic in 0..d.c_in {
                    let dxrow = &mut dx[(ic * d.h + iy as usize) * d.w..][..d.w];
                    let wrow = &kern[wbase + (ic * d.kh + ky) * d.kw..][..d.kw];
                    for (kx, &wv) in wrow.iter().enumerate() {
                        let (lo, hi) = valid_span(d.stride, d.padding, kx, d.w, d.ow);
                        let mut ix = lo * d.stride + kx - d.padding;
                        for &g in &dyrow[lo..hi] {
                            dxrow[ix] = dxrow[ix] + wv * g;
                            ix += d.stride;
                        }
                    }
                }
            }
        }
    }
}

/// dw[oc,ic,ky,kx] += sum over b,oy,ox of dy[b,oc,oy,ox] * x[b,ic,oy*s+ky-p,ox*s+kx-p]
fn conv2d_dw_for_oc<S: Scalar>(
    oc: usize,
    x: &[S],
    dy: &[S],
    dw_oc: &mut [S],
    batch: usize,
    d: &ConvDims,
) {
    let x_stride = d.c_in * d.h * d.w;
    let y_stride = d.c_out * d.oh * d.ow;
    for b in 0..batch {
        let xs = &x[b * x_stride..][..x_stride];
        let dys = &dy[b * y_stride..][..y_stride];
        for oy in 0..d.oh {
            let dyrow = &dys[(oc * d.oh + oy) * d.ow..][..d.ow];
            for ky in 0..d.kh {
                let iy = (oy * d.stride + ky) as isize - d.padding as isize;
                if iy < 0 || iy >= d.h as isize {
                    continue;
                }
                for ic in 0..d.c_in {
                    let xrow = &xs[(ic * d.h + iy as usize) * d.w..][..d.w];
                    let wrow = &mut dw_oc[(ic * d.kh + ky) * d.kw..][..d.kw];
                    for (kx, wv) in wrow.iter_mut().enumerate() {
                        let (lo, hi) = valid_span(d.stride, d.padding, kx, d.w, d.ow);
                        let mut ix = lo * d.stride + kx - d.padding;
                        let mut acc = S::zero();
                        for &g in &dyrow[lo..hi] {
                            acc = acc + g * xrow[ix];
                            ix += d.stride;
                        }
                        *wv = *wv + acc;
                    }
                }
            }
        }
    }
}

fn dims(
    x_shape: &[usize],
    k_shape: &[usize],
    stride: usize,
    padding: usize,
    transposed: bool,
    out_padding: usize,
) -> ConvDims {
    let (h, w) = (x_shape[2], x_shape[3]);
    let (kh, kw) = (k_shape[2], k_shape[3]);
    let (c_in, c_out) = if transposed {
        (k_shape[0], k_shape[1])
    } else {
        (k_shape[1], k_shape[0])
    };
    let (oh, ow) = if transposed {
        (
            convt_out_dim(h, kh, stride, padding, out_padding).unwrap(),
            convt_out_dim(w, kw, stride, padding, out_padding).unwrap(),
        )
    } else {
        (
            conv_out_dim(h, kh, stride, padding).unwrap(),
            conv_out_dim(w, kw, stride, padding).unwrap(),
        )
    };
    ConvDims {
        c_in,
        c_out,
        h,
        w,
        kh,
        kw,
        oh,
        ow,
        stride,
        padding,
    }
}

fn for_each_sample<S: Scalar>(
    batch: usize,
    input: &[S],
    in_stride: usize,
    out: &mut [S],
    out_stride: usize,
    f: impl Fn(&[S], &mut [S]) + Sync,
) {
    if batch >= PAR_BATCH {
        out.par_chunks_mut(out_stride)
            .enumerate()
            .for_each(|(b, o)| f(&input[b * in_stride..][..in_stride], o));
    } else {
        for (b, o) in out.chunks_mut(out_stride).enumerate() {
            f(&input[b * in_stride..][..in_stride], o);
        }
    }
}

pub fn conv2d_forward<S: Scalar>(
    x: &[S],
    x_shape: &[usize],
    kern: &[S],
    k_shape: &[usize],
    stride: usize,
    padding: usize,
) -> (Vec<S>, Vec<usize>) {
    let d = dims(x_shape, k_shape, stride, padding, false, 0);
    let batch = x_shape[0];
    let mut out = vec![S::zero(); batch * d.c_out * d.oh * d.ow];
    let (is, os) = (d.c_in * d.h * d.w, d.c_out * d.oh * d.ow);
    for_each_sample(batch, x, is, &mut out, os, |xs, o| {
        conv2d_sample(xs, kern, o, &d)
    });
    (out, vec![batch, d.c_out, d.oh, d.ow])
}

pub fn conv2d_backward<S: Scalar>(
    x: &[S],
    x_shape: &[usize],
    kern: &[S],
    k_shape: &[usize],
    dy: &[S],
    stride: usize,
    padding: usize,
) -> (Vec<S>, Vec<S>) {
    let d = dims(x_shape, k_shape, stride, padding, false, 0);
    let batch = x_shape[0];
    let (is, os) = (d.c_in * d.h * d.w, d.c_out * d.oh * d.ow);

    let mut dx = vec![S::zero(); x.len()];
    for_each_sample(batch, dy, os, &mut dx, is, |dys, o| {
        conv2d_sample_dx(dys, kern, o, &d)
    });

    let mut dw = vec![S::zero(); kern.len()];
    let oc_stride = d.c_in * d.kh * d.kw;
    if batch >= PAR_BATCH && d.c_out > 1 {
        dw.par_chunks_mut(oc_stride)
            .enumerate()
            .for_each(|(oc, dw_oc)| conv2d_dw_for_oc(oc, x, dy, dw_oc, batch, &d));
    } else {
        for (oc, dw_oc) in dw.chunks_mut(oc_stride).enumerate() {
            conv2d_dw_for_oc(oc, x, dy, dw_oc, batch, &d);
        }
    }
    (dx, dw)
}

/// y[oc, iy*s+ky-p, ix*s+kx-p] += x[ic,iy,ix] * w[ic,oc,ky,kx]
fn convt2d_sample<S: Scalar>(x: &[S], kern: &[S], out: &mut [S], d: &ConvDims) {
    for oc in 0..d.c_out {
        for ic in 0..d.c_in {
            let wblock = &kern[(ic * d.c_out + oc) * d.kh * d.kw..][..d.kh * d.kw];
            for iy in 0..d.h {
                let xrow = &x[(ic * d.h + iy) * d.w..][..d.w];
                for ky in 0..d.kh {
                    let oy = (iy * d.stride + ky) as isize - d.padding as isize;
                    if oy < 0 || oy >= d.oh as isize {
                        continue;
                    }
                    let orow = &mut out[(oc * d.oh + oy as usize) * d.ow..][..d.ow];
                    for kx in 0..d.kw {
                        let wv = wblock[ky * d.kw + kx];
                        let (lo, hi) = valid_span(d.stride, d.padding, kx, d.ow, d.w);
                        let mut ox = lo * d.stride + kx - d.padding;
                        for &xv in &xrow[lo..hi] {
                            orow[ox] = orow[ox] + wv * xv;
                            ox += d.stride;
                        }
                    }
                }
            }
        }
    }
}

/// dx[ic,iy,ix] = sum over oc,ky,kx of dy[oc, iy*s+ky-p, ix*s+kx-p] * w[ic,oc,ky,kx]
fn convt2d_sample_dx<S: Scalar>(dy: &[S], kern: &[S], dx: &mut [S], d: &ConvDims) {
    for ic in 0..d.c_in {
        for oc in 0..d.c_out {
            let wblock = &kern[(ic * d.c_out + oc) * d.kh * d.kw..][..d.kh * d.kw];
            for iy in 0..d.h {
                let dxrow = &mut dx[(ic * d.h + iy) * d.w..][..d.w];
                for ky in 0..d.kh {
                    let oy = (iy * d.stride + ky) as isize - d.padding as isize;
                    if oy < 0 || oy >= d.oh as isize {
                        continue;
                    }
                    let dyrow = &dy[(oc * d.oh + oy as usize) * d.ow..][..d.ow];
                    for kx in 0..d.kw {
                        let wv = wblock[ky * d.kw + kx];
                        let (lo, hi) = valid_span(d.stride, d.padding, kx, d.ow, d.w);
                        let mut ox = lo * d.stride + kx - d.padding;
                        for dst in &mut dxrow[lo..hi] {
                            *dst = *dst + wv * dyrow[ox];
                            ox += d.stride;
                        }
                    }
                }
            }
        }
    }
}

/// dw[ic,oc,ky,kx] += sum over b,iy,ix of x[b,ic,iy,ix] * dy[b,oc,iy*s+ky-p,ix*s+kx-p]
fn convt2d_dw_for_ic<S: Scalar>(
    ic: usize,
    x: &[S],
    dy: &[S],
    dw_ic: &mut [S],
    batch: usize,
    d: &ConvDims,
) {
    let x_stride = d.c_in * d.h * d.w;
    let y_stride = d.c_out * d.oh * d.ow;
    for b in 0..batch {
        let xs = &x[b * x_stride..][..x_stride];
        let dys = &dy[b * y_stride..][..y_stride];
        for oc in 0..d.c_out {
            for iy in 0..d.h {
                let xrow = &xs[(ic * d.h + iy) * d.w..][..d.w];
                for ky in 0..d.kh {
                    let oy = (iy * d.stride + ky) as isize - d.padding as isize;
                    if oy < 0 || oy >= d.oh as isize {
                        continue;
                    }
                    let dyrow = &dys[(d.oh * oc + oy as usize) * d.ow..][..d.ow];
                    let wrow = &mut dw_ic[(oc * d.kh + ky) * d.kw..][..d.kw];
                    for (kx, wv) in wrow.iter_mut().enumerate() {
                        let (lo, hi) = valid_span(d.stride, d.padding, kx, d.ow, d.w);
                        let mut ox = lo * d.stride + kx - d.padding;
                        let mut acc = S::zero();
                        for &xv in &xrow[lo..hi] {
                            acc = acc + xv * dyrow[ox];
                            ox += d.stride;
                        }
                        *wv = *wv + acc;
                    }
                }
            }
        }
    }
}

pub fn convt2d_forward<S: Scalar>(
    x: &[S],
    x_shape: &[usize],
    kern: &[S],
    k_shape: &[usize],
    stride: usize,
    padding: usize,
    out_padding: usize,
) -> (Vec<S>, Vec<usize>) {
    let d = dims(x_shape, k_shape, stride, padding, true, out_padding);
    let batch = x_shape[0];
    let mut out = vec![S::zero(); batch * d.c_out * d.oh * d.ow];
    let (is, os) = (d.c_in * d.h * d.w, d.c_out * d.oh * d.ow);
    for_each_sample(batch, x, is, &mut out, os, |xs, o| {
        convt2d_sample(xs, kern, o, &d)
    });
    (out, vec![batch, d.c_out, d.oh, d.ow])
}

pub fn convt2d_backward<S: Scalar>(
    x: &[S],
    x_shape: &[usize],
    kern: &[S],
    k_shape: &[usize],
    dy: &[S],
    stride: usize,
    padding: usize,
    out_padding: usize,
) -> (Vec<S>, Vec<S>) {
    let d = dims(x_shape, k_shape, stride, padding, true, out_padding);
    let batch = x_shape[0];
    let (is, os) = (d.c_in * d.h * d.w, d.c_out * d.oh * d.ow);

    let mut dx = vec![S::zero(); x.len()];
    for_each_sample(batch, dy, os, &mut dx, is, |dys, o| {
        convt2d_sample_dx(dys, kern, o, &d)
    });

    let mut dw = vec![S::zero(); kern.len()];
    let ic_stride = d.c_out * d.kh * d.kw;
    if batch >= PAR_BATCH && d.c_in > 1 {
        dw.par_chunks_mut(ic_stride)
            .enumerate()
            .for_each(|(ic, dw_ic)| convt2d_dw_for_ic(ic, x, dy, dw_ic, batch, &d));
    } else {
        for (ic, dw_ic) in dw.chunks_mut(ic_stride).enumerate() {
            convt2d_dw_for_ic(ic, x, dy, dw_ic, batch, &d);
        }
    }
    (dx, dw)
}
