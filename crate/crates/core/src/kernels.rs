//! Low-level numeric kernels: GEMM-backed matrix multiply, image/column
//! transforms, convolutions, pooling, and broadcasting arithmetic.
//!
//! Everything here is deterministic. Batch-parallel loops only write disjoint
//! output ranges, and shared accumulations (weight gradients) are reduced in a
//! fixed chunk order that depends solely on the batch size, never on thread
//! scheduling.

use crate::scalar::Scalar;
use rayon::prelude::*;

/// Number of fixed partial buffers used when reducing weight gradients over a
/// batch. A constant (rather than the thread count) keeps summation order, and
/// therefore float rounding, identical across machines and runs.
const ACC_CHUNKS: usize = 8;

/// Output extent of a convolution along one axis: `floor((i + 2p - k)/s) + 1`.
/// Returns `None` when the kernel does not fit or the stride is zero.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || kernel == 0 || input + 2 * pad < kernel {
        return None;
    }
    Some((input + 2 * pad - kernel) / stride + 1)
}

/// Output extent of a transposed convolution along one axis:
/// `(i - 1)*s + k - 2p`. Returns `None` when the result would be non-positive.
pub fn tconv_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || kernel == 0 || input == 0 {
        return None;
    }
    let grown = (input - 1) * stride + kernel;
    if grown <= 2 * pad {
        return None;
    }
    Some(grown - 2 * pad)
}

/// `out = a @ b` for row-major `a: [m,k]`, `b: [k,n]`, `out: [m,n]`.
/// With `accumulate` the product is added onto the existing contents.
pub fn matmul<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize, accumulate: bool, out: &mut [S]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let beta = if accumulate { S::one() } else { S::zero() };
    unsafe {
        S::gemm(
            m, k, n,
            S::one(),
            a.as_ptr(), k as isize, 1,
            b.as_ptr(), n as isize, 1,
            beta,
            out.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// `out = a @ b^T` for row-major `a: [m,k]`, `b: [n,k]`, `out: [m,n]`.
pub fn matmul_nt<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize, accumulate: bool, out: &mut [S]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    let beta = if accumulate { S::one() } else { S::zero() };
    unsafe {
        S::gemm(
            m, k, n,
            S::one(),
            a.as_ptr(), k as isize, 1,
            b.as_ptr(), 1, k as isize,
            beta,
            out.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// `out = a^T @ b` for row-major `a: [k,m]`, `b: [k,n]`, `out: [m,n]`.
pub fn matmul_tn<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize, accumulate: bool, out: &mut [S]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let beta = if accumulate { S::one() } else { S::zero() };
    unsafe {
        S::gemm(
            m, k, n,
            S::one(),
            a.as_ptr(), 1, m as isize,
            b.as_ptr(), n as isize, 1,
            beta,
            out.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// Unpack the convolution receptive fields of one `[c,h,w]` image into a
/// `[c*kh*kw, ho*wo]` matrix. Padding positions read as zero. Row index order
/// is `(channel, di, dj)`, matching a `[cout, cin, kh, kw]` kernel flattened
/// over its last three axes.
#[allow(clippy::too_many_arguments)]
pub fn im2col<S: Scalar>(
    img: &[S],
    c: usize, h: usize, w: usize,
    kh: usize, kw: usize,
    stride: usize, pad: usize,
    ho: usize, wo: usize,
    col: &mut [S],
) {
    debug_assert_eq!(img.len(), c * h * w);
    debug_assert_eq!(col.len(), c * kh * kw * ho * wo);
    let mut idx = 0;
    for ch in 0..c {
        let plane = &img[ch * h * w..(ch + 1) * h * w];
        for di in 0..kh {
            for dj in 0..kw {
                for oi in 0..ho {
                    let ii = (oi * stride + di) as isize - pad as isize;
                    if ii < 0 || ii >= h as isize {
                        for slot in &mut col[idx..idx + wo] {
                            *slot = S::zero();
                        }
                        idx += wo;
                        continue;
                    }
                    let row = &plane[ii as usize * w..(ii as usize + 1) * w];
                    for oj in 0..wo {
                        let jj = (oj * stride + dj) as isize - pad as isize;
                        col[idx] = if jj >= 0 && jj < w as isize {
                            row[jj as usize]
                        } else {
                            S::zero()
                        };
                        idx += 1;
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add a `[c*kh*kw, ho*wo]` matrix back into a
/// `[c,h,w]` image. The image buffer is accumulated into, not cleared.
#[allow(clippy::too_many_arguments)]
pub fn col2im<S: Scalar>(
    col: &[S],
    c: usize, h: usize, w: usize,
    kh: usize, kw: usize,
    stride: usize, pad: usize,
    ho: usize, wo: usize,
    img: &mut [S],
) {
    debug_assert_eq!(img.len(), c * h * w);
    debug_assert_eq!(col.len(), c * kh * kw * ho * wo);
    let mut idx = 0;
    for ch in 0..c {
        let plane = &mut img[ch * h * w..(ch + 1) * h * w];
        for di in 0..kh {
            for dj in 0..kw {
                for oi in 0..ho {
                    let ii = (oi * stride + di) as isize - pad as isize;
                    if ii < 0 || ii >= h as isize {
                        idx += wo;
                        continue;
                    }
                    let row = &mut plane[ii as usize * w..(ii as usize + 1) * w];
                    for oj in 0..wo {
                        let jj = (oj * stride + dj) as isize - pad as isize;
                        if jj >= 0 && jj < w as isize {
                            row[jj as usize] += col[idx];
                        }
                        idx += 1;
                    }
                }
            }
        }
    }
}

/// Contiguous batch ranges used for deterministic gradient reduction.
fn batch_chunks(n: usize) -> Vec<(usize, usize)> {
    if n == 0 {
        return Vec::new();
    }
    let size = n.div_ceil(ACC_CHUNKS);
    (0..n.div_ceil(size))
        .map(|i| (i * size, ((i + 1) * size).min(n)))
        .collect()
}

/// Forward convolution. `x: [n,cin,h,w]`, `wgt: [cout,cin,kh,kw]`, output
/// `[n,cout,ho,wo]` returned together with `(ho, wo)`. Dimensions must already
/// satisfy [`conv_out_dim`].
#[allow(clippy::too_many_arguments)]
pub fn conv2d_forward<S: Scalar>(
    x: &[S],
    n: usize, cin: usize, h: usize, w: usize,
    wgt: &[S],
    cout: usize, kh: usize, kw: usize,
    stride: usize, pad: usize,
) -> (Vec<S>, usize, usize) {
    let ho = conv_out_dim(h, kh, stride, pad).expect("conv dims pre-validated");
    let wo = conv_out_dim(w, kw, stride, pad).expect("conv dims pre-validated");
    let ckk = cin * kh * kw;
    let mut y = vec![S::zero(); n * cout * ho * wo];
    x.par_chunks(cin * h * w)
        .zip(y.par_chunks_mut(cout * ho * wo))
        .for_each(|(xi, yi)| {
            let mut col = vec![S::zero(); ckk * ho * wo];
            im2col(xi, cin, h, w, kh, kw, stride, pad, ho, wo, &mut col);
            matmul(wgt, &col, cout, ckk, ho * wo, false, yi);
        });
    (y, ho, wo)
}

/// Gradients of [`conv2d_forward`] with respect to the input and the kernel.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<S: Scalar>(
    x: &[S],
    dy: &[S],
    n: usize, cin: usize, h: usize, w: usize,
    wgt: &[S],
    cout: usize, kh: usize, kw: usize,
    stride: usize, pad: usize,
    ho: usize, wo: usize,
) -> (Vec<S>, Vec<S>) {
    let ckk = cin * kh * kw;
    let mut dx = vec![S::zero(); n * cin * h * w];
    dy.par_chunks(cout * ho * wo)
        .zip(dx.par_chunks_mut(cin * h * w))
        .for_each(|(dyi, dxi)| {
            let mut dcol = vec![S::zero(); ckk * ho * wo];
            matmul_tn(wgt, dyi, ckk, cout, ho * wo, false, &mut dcol);
            col2im(&dcol, cin, h, w, kh, kw, stride, pad, ho, wo, dxi);
        });

    let mut dw = vec![S::zero(); cout * ckk];
    let partials: Vec<Vec<S>> = batch_chunks(n)
        .into_par_iter()
        .map(|(lo, hi)| {
            let mut part = vec![S::zero(); cout * ckk];
            let mut col = vec![S::zero(); ckk * ho * wo];
            for i in lo..hi {
                let xi = &x[i * cin * h * w..(i + 1) * cin * h * w];
                let dyi = &dy[i * cout * ho * wo..(i + 1) * cout * ho * wo];
                im2col(xi, cin, h, w, kh, kw, stride, pad, ho, wo, &mut col);
                matmul_nt(dyi, &col, cout, ho * wo, ckk, true, &mut part);
            }
            part
        })
        .collect();
    for part in partials {
        for (acc, p) in dw.iter_mut().zip(part) {
            *acc += p;
        }
    }
    (dx, dw)
}

/// Forward transposed convolution. `x: [n,cin,h,w]`, `wgt: [cin,cout,kh,kw]`,
/// output `[n,cout,ho,wo]` with `ho = (h-1)*stride + kh - 2*pad`.
#[allow(clippy::too_many_arguments)]
pub fn tconv2d_forward<S: Scalar>(
    x: &[S],
    n: usize, cin: usize, h: usize, w: usize,
    wgt: &[S],
    cout: usize, kh: usize, kw: usize,
    stride: usize, pad: usize,
) -> (Vec<S>, usize, usize) {
    let ho = tconv_out_dim(h, kh, stride, pad).expect("tconv dims pre-validated");
    let wo = tconv_out_dim(w, kw, stride, pad).expect("tconv dims pre-validated");
    let ckk = cout * kh * kw;
    let mut y = vec![S::zero(); n * cout * ho * wo];
    x.par_chunks(cin * h * w)
        .zip(y.par_chunks_mut(cout * ho * wo))
        .for_each(|(xi, yi)| {
            // col[(co,di,dj), (i,j)] = sum_ci wgt[ci,co,di,dj] * x[ci,i,j],
            // then each input site (i,j) scatters its kernel patch onto the
            // output at (i*stride - pad + di, j*stride - pad + dj).
            let mut col = vec![S::zero(); ckk * h * w];
            matmul_tn(wgt, xi, ckk, cin, h * w, false, &mut col);
            col2im(&col, cout, ho, wo, kh, kw, stride, pad, h, w, yi);
        });
    (y, ho, wo)
}

/// Gradients of [`tconv2d_forward`] with respect to the input and the kernel.
#[allow(clippy::too_many_arguments)]
pub fn tconv2d_backward<S: Scalar>(
    x: &[S],
    dy: &[S],
    n: usize, cin: usize, h: usize, w: usize,
    wgt: &[S],
    cout: usize, kh: usize, kw: usize,
    stride: usize, pad: usize,
    ho: usize, wo: usize,
) -> (Vec<S>, Vec<S>) {
    let ckk = cout * kh * kw;
    let mut dx = vec![S::zero(); n * cin * h * w];
    dy.par_chunks(cout * ho * wo)
        .zip(dx.par_chunks_mut(cin * h * w))
        .for_each(|(dyi, dxi)| {
            let mut colg = vec![S::zero(); ckk * h * w];
            im2col(dyi, cout, ho, wo, kh, kw, stride, pad, h, w, &mut colg);
            matmul(wgt, &colg, cin, ckk, h * w, false, dxi);
        });

    let mut dw = vec![S::zero(); cin * ckk];
    let partials: Vec<Vec<S>> = batch_chunks(n)
        .into_par_iter()
        .map(|(lo, hi)| {
            let mut part = vec![S::zero(); cin * ckk];
            let mut colg = vec![S::zero(); ckk * h * w];
            for i in lo..hi {
                let xi = &x[i * cin * h * w..(i + 1) * cin * h * w];
                let dyi = &dy[i * cout * ho * wo..(i + 1) * cout * ho * wo];
                im2col(dyi, cout, ho, wo, kh, kw, stride, pad, h, w, &mut colg);
                matmul_nt(xi, &colg, cin, h * w, ckk, true, &mut part);
            }
            part
        })
        .collect();
    for part in partials {
        for (acc, p) in dw.iter_mut().zip(part) {
            *acc += p;
        }
    }
    (dx, dw)
}

/// Max pooling over `[n,c,h,w]` with square window `k` and stride `s`, no
/// padding. Returns the pooled values, the flat input index of each maximum
/// (first occurrence wins on ties), and `(ho, wo)`.
pub fn maxpool2d_forward<S: Scalar>(
    x: &[S],
    n: usize, c: usize, h: usize, w: usize,
    k: usize, s: usize,
) -> (Vec<S>, Vec<usize>, usize, usize) {
    let ho = conv_out_dim(h, k, s, 0).expect("pool dims pre-validated");
    let wo = conv_out_dim(w, k, s, 0).expect("pool dims pre-validated");
    let mut y = vec![S::zero(); n * c * ho * wo];
    let mut arg = vec![0usize; n * c * ho * wo];
    y.par_chunks_mut(ho * wo)
        .zip(arg.par_chunks_mut(ho * wo))
        .enumerate()
        .for_each(|(plane_idx, (yp, ap))| {
            let base = plane_idx * h * w;
            let plane = &x[base..base + h * w];
            for oi in 0..ho {
                for oj in 0..wo {
                    let mut best = plane[oi * s * w + oj * s];
                    let mut best_at = oi * s * w + oj * s;
                    for di in 0..k {
                        for dj in 0..k {
                            let at = (oi * s + di) * w + (oj * s + dj);
                            if plane[at] > best {
                                best = plane[at];
                                best_at = at;
                            }
                        }
                    }
                    yp[oi * wo + oj] = best;
                    ap[oi * wo + oj] = base + best_at;
                }
            }
        });
    (y, arg, ho, wo)
}

/// Gradient of [`maxpool2d_forward`]: route each output gradient back to the
/// recorded argmax position.
pub fn maxpool2d_backward<S: Scalar>(dy: &[S], arg: &[usize], input_len: usize) -> Vec<S> {
    let mut dx = vec![S::zero(); input_len];
    for (g, &at) in dy.iter().zip(arg) {
        dx[at] += *g;
    }
    dx
}

/// Shape of the result of broadcasting `a` against `b` (right-aligned, each
/// axis must match or be 1). `None` when the shapes are incompatible.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return None;
        };
    }
    Some(out)
}

/// Row-major strides for reading an operand of shape `shape` as if it had the
/// broadcast shape `out`: broadcast axes get stride zero.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let offset = rank - shape.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1usize;
    for i in (0..shape.len()).rev() {
        let stride = if shape[i] == 1 { 0 } else { acc };
        strides[offset + i] = stride;
        acc *= shape[i];
    }
    strides
}

/// Apply `f` elementwise under broadcasting. Returns the result values; the
/// result shape is `broadcast_shape(ashape, bshape)`, which the caller has
/// already validated.
pub fn broadcast_apply<S: Scalar>(
    a: &[S], ashape: &[usize],
    b: &[S], bshape: &[usize],
    oshape: &[usize],
    f: impl Fn(S, S) -> S,
) -> Vec<S> {
    if ashape == bshape {
        return a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect();
    }
    let n: usize = oshape.iter().product();
    let rank = oshape.len();
    let sa = broadcast_strides(ashape, oshape);
    let sb = broadcast_strides(bshape, oshape);
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    for _ in 0..n {
        out.push(f(a[oa], b[ob]));
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            oa += sa[ax];
            ob += sb[ax];
            if idx[ax] < oshape[ax] {
                break;
            }
            idx[ax] = 0;
            oa -= sa[ax] * oshape[ax];
            ob -= sb[ax] * oshape[ax];
        }
    }
    out
}

/// Sum `grad` (of shape `gshape`) down to `tshape`, the shape of an operand
/// that was broadcast up to `gshape`. Inverse of stretching along size-1 and
/// missing leading axes.
pub fn reduce_to_shape<S: Scalar>(grad: &[S], gshape: &[usize], tshape: &[usize]) -> Vec<S> {
    if gshape == tshape {
        return grad.to_vec();
    }
    let target_len: usize = tshape.iter().product();
    let mut out = vec![S::zero(); target_len];
    let rank = gshape.len();
    let st = broadcast_strides(tshape, gshape);
    let mut idx = vec![0usize; rank];
    let mut ot = 0usize;
    for &g in grad {
        out[ot] += g;
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            ot += st[ax];
            if idx[ax] < gshape[ax] {
                break;
            }
            idx[ax] = 0;
            ot -= st[ax] * gshape[ax];
        }
    }
    out
}
