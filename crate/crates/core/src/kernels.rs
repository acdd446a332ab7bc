//! Array kernels behind the graph operations.
//!
//! Pure functions over flat row-major buffers. Convolution kernels
//! parallelize over independent output slices with rayon; each output
//! element is accumulated in a fixed sequential order, so results are
//! bitwise deterministic regardless of thread count.

use rayon::prelude::*;

use crate::tensor::Scalar;

/// Geometry of a 2D convolution, padding already resolved to a count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.pad - self.k_h) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.pad - self.k_w) / self.stride + 1
    }
}

/// out[b,oc,oy,ox] = bias[oc] + sum_{ic,ky,kx} x[...] * w[oc,ic,ky,kx]
pub fn conv2d_forward<S: Scalar>(x: &[S], w: &[S], bias: &[S], g: ConvGeom) -> Vec<S> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut out = vec![S::zero(); g.batch * g.out_ch * oh * ow];
    out.par_chunks_mut(oh * ow)
        .enumerate()
        .for_each(|(chunk, o)| {
            let b = chunk / g.out_ch;
            let oc = chunk % g.out_ch;
            o.fill(bias[oc]);
            for ic in 0..g.in_ch {
                let xs = &x[(b * g.in_ch + ic) * g.in_h * g.in_w..][..g.in_h * g.in_w];
                for ky in 0..g.k_h {
                    for kx in 0..g.k_w {
                        let wv = w[((oc * g.in_ch + ic) * g.k_h + ky) * g.k_w + kx];
                        if wv == S::zero() {
                            continue;
                        }
                        for oy in 0..oh {
                            let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                            if iy < 0 || iy >= g.in_h as isize {
                                continue;
                            }
                            let xrow = &xs[iy as usize * g.in_w..][..g.in_w];
                            let orow = &mut o[oy * ow..][..ow];
                            if g.stride == 1 {
                                // ox + kx - pad in [0, in_w)
                                let lo = g.pad.saturating_sub(kx);
                                let hi = (g.in_w + g.pad - kx).min(ow);
                                let off = lo + kx - g.pad;
                                for (ov, xv) in
                                    orow[lo..hi].iter_mut().zip(&xrow[off..off + hi - lo])
                                {
                                    *ov = *ov + wv * *xv;
                                }
                            } else {
                                for (ox, ov) in orow.iter_mut().enumerate() {
                                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                    if ix >= 0 && ix < g.in_w as isize {
                                        *ov = *ov + wv * xrow[ix as usize];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
    out
}

/// Gradient of conv2d with respect to its input.
pub fn conv2d_grad_input<S: Scalar>(grad: &[S], w: &[S], g: ConvGeom) -> Vec<S> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut dx = vec![S::zero(); g.batch * g.in_ch * g.in_h * g.in_w];
    dx.par_chunks_mut(g.in_h * g.in_w)
        .enumerate()
        .for_each(|(chunk, d)| {
            let b = chunk / g.in_ch;
            let ic = chunk % g.in_ch;
            for oc in 0..g.out_ch {
                let gs = &grad[(b * g.out_ch + oc) * oh * ow..][..oh * ow];
                for ky in 0..g.k_h {
                    for kx in 0..g.k_w {
                        let wv = w[((oc * g.in_ch + ic) * g.k_h + ky) * g.k_w + kx];
                        if wv == S::zero() {
                            continue;
                        }
                        for oy in 0..oh {
                            let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                            if iy < 0 || iy >= g.in_h as isize {
                                continue;
                            }
                            let drow = &mut d[iy as usize * g.in_w..][..g.in_w];
                            let grow = &gs[oy * ow..][..ow];
                            if g.stride == 1 {
                                let lo = g.pad.saturating_sub(kx);
                                let hi = (g.in_w + g.pad - kx).min(ow);
                                let off = lo + kx - g.pad;
                                for (dv, gv) in
                                    drow[off..off + hi - lo].iter_mut().zip(&grow[lo..hi])
                                {
                                    *dv = *dv + wv * *gv;
                                }
                            } else {
                                for (ox, gv) in grow.iter().enumerate() {
                                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                    if ix >= 0 && ix < g.in_w as isize {
                                        drow[ix as usize] = drow[ix as usize] + wv * *gv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
    dx
}

/// Gradients of conv2d with respect to the kernel and bias.
pub fn conv2d_grad_params<S: Scalar>(grad: &[S], x: &[S], g: ConvGeom) -> (Vec<S>, Vec<S>) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut dw = vec![S::zero(); g.out_ch * g.in_ch * g.k_h * g.k_w];
    dw.par_chunks_mut(g.in_ch * g.k_h * g.k_w)
        .enumerate()
        .for_each(|(oc, dwoc)| {
            for b in 0..g.batch {
                let gs = &grad[(b * g.out_ch + oc) * oh * ow..][..oh * ow];
                for ic in 0..g.in_ch {
                    let xs = &x[(b * g.in_ch + ic) * g.in_h * g.in_w..][..g.in_h * g.in_w];
                    for ky in 0..g.k_h {
                        for kx in 0..g.k_w {
                            let mut acc = S::zero();
                            for oy in 0..oh {
                                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                if iy < 0 || iy >= g.in_h as isize {
                                    continue;
                                }
                                let xrow = &xs[iy as usize * g.in_w..][..g.in_w];
                                let grow = &gs[oy * ow..][..ow];
                                if g.stride == 1 {
                                    let lo = g.pad.saturating_sub(kx);
                                    let hi = (g.in_w + g.pad - kx).min(ow);
                                    let off = lo + kx - g.pad;
                                    for (gv, xv) in
                                        grow[lo..hi].iter().zip(&xrow[off..off + hi - lo])
                                    {
                                        acc = acc + *gv * *xv;
                                    }
                                } else {
                                    for (ox, gv) in grow.iter().enumerate() {
                                        let ix =
                                            (ox * g.stride + kx) as isize - g.pad as isize;
                                        if ix >= 0 && ix < g.in_w as isize {
                                            acc = acc + *gv * xrow[ix as usize];
                                        }
                                    }
                                }
                            }
                            let idx = (ic * g.k_h + ky) * g.k_w + kx;
                            dwoc[idx] = dwoc[idx] + acc;
                        }
                    }
                }
            }
        });

    let mut db = vec![S::zero(); g.out_ch];
    for b in 0..g.batch {
        for (oc, dbv) in db.iter_mut().enumerate() {
            let gs = &grad[(b * g.out_ch + oc) * oh * ow..][..oh * ow];
            for gv in gs {
                *dbv = *dbv + *gv;
            }
        }
    }
    (dw, db)
}

/// Transposed convolution with kernel 2x2 and stride 2: doubles spatial dims.
/// Kernel layout is (out_ch, in_ch, 2, 2).
pub fn convt2_forward<S: Scalar>(
    x: &[S],
    w: &[S],
    bias: &[S],
    batch: usize,
    in_ch: usize,
    out_ch: usize,
    h: usize,
    wd: usize,
) -> Vec<S> {
    let (oh, ow) = (2 * h, 2 * wd);
    let mut out = vec![S::zero(); batch * out_ch * oh * ow];
    out.par_chunks_mut(oh * ow)
        .enumerate()
        .for_each(|(chunk, o)| {
            let b = chunk / out_ch;
            let oc = chunk % out_ch;
            o.fill(bias[oc]);
            for ic in 0..in_ch {
                let xs = &x[(b * in_ch + ic) * h * wd..][..h * wd];
                for ky in 0..2 {
                    for kx in 0..2 {
                        let wv = w[((oc * in_ch + ic) * 2 + ky) * 2 + kx];
                        for y in 0..h {
                            let xrow = &xs[y * wd..][..wd];
                            let orow = &mut o[(2 * y + ky) * ow..][..ow];
                            for (xv, ochunk) in xrow.iter().zip(orow.chunks_mut(2)) {
                                ochunk[kx] = ochunk[kx] + wv * *xv;
                            }
                        }
                    }
                }
            }
        });
    out
}

pub fn convt2_grad_input<S: Scalar>(
    grad: &[S],
    w: &[S],
    batch: usize,
    in_ch: usize,
    out_ch: usize,
    h: usize,
    wd: usize,
) -> Vec<S> {
    let ow = 2 * wd;
    let mut dx = vec![S::zero(); batch * in_ch * h * wd];
    dx.par_chunks_mut(h * wd).enumerate().for_each(|(chunk, d)| {
        let b = chunk / in_ch;
        let ic = chunk % in_ch;
        for oc in 0..out_ch {
            let gs = &grad[(b * out_ch + oc) * 2 * h * ow..][..2 * h * ow];
            for ky in 0..2 {
                for kx in 0..2 {
                    let wv = w[((oc * in_ch + ic) * 2 + ky) * 2 + kx];
                    for y in 0..h {
                        let grow = &gs[(2 * y + ky) * ow..][..ow];
                        let drow = &mut d[y * wd..][..wd];
                        for (dv, gchunk) in drow.iter_mut().zip(grow.chunks(2)) {
                            *dv = *dv + wv * gchunk[kx];
                        }
                    }
                }
            }
        }
    });
    dx
}

pub fn convt2_grad_params<S: Scalar>(
    grad: &[S],
    x: &[S],
    batch: usize,
    in_ch: usize,
    out_ch: usize,
    h: usize,
    wd: usize,
) -> (Vec<S>, Vec<S>) {
    let ow = 2 * wd;
    let mut dw = vec![S::zero(); out_ch * in_ch * 4];
    dw.par_chunks_mut(in_ch * 4).enumerate().for_each(|(oc, dwoc)| {
        for b in 0..batch {
            let gs = &grad[(b * out_ch + oc) * 2 * h * ow..][..2 * h * ow];
            for ic in 0..in_ch {
                let xs = &x[(b * in_ch + ic) * h * wd..][..h * wd];
                for ky in 0..2 {
                    for kx in 0..2 {
                        let mut acc = S::zero();
                        for y in 0..h {
                            let xrow = &xs[y * wd..][..wd];
                            let grow = &gs[(2 * y + ky) * ow..][..ow];
                            for (xv, gchunk) in xrow.iter().zip(grow.chunks(2)) {
                                acc = acc + *xv * gchunk[kx];
                            }
                        }
                        let idx = (ic * 2 + ky) * 2 + kx;
                        dwoc[idx] = dwoc[idx] + acc;
                    }
                }
            }
        }
    });

    let mut db = vec![S::zero(); out_ch];
    for b in 0..batch {
        for (oc, dbv) in db.iter_mut().enumerate() {
            let gs = &grad[(b * out_ch + oc) * 2 * h * ow..][..2 * h * ow];
            for gv in gs {
                *dbv = *dbv + *gv;
            }
        }
    }
    (dw, db)
}

/// 2x2 average pooling with stride 2 over (slices, h, w) flat layout.
pub fn avg_pool2_forward<S: Scalar>(x: &[S], slices: usize, h: usize, w: usize) -> Vec<S> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = S::of_f64(0.25);
    let mut out = vec![S::zero(); slices * oh * ow];
    for s in 0..slices {
        let xs = &x[s * h * w..][..h * w];
        let os = &mut out[s * oh * ow..][..oh * ow];
        for oy in 0..oh {
            let r0 = &xs[2 * oy * w..][..w];
            let r1 = &xs[(2 * oy + 1) * w..][..w];
            for ox in 0..ow {
                os[oy * ow + ox] =
                    (r0[2 * ox] + r0[2 * ox + 1] + r1[2 * ox] + r1[2 * ox + 1]) * quarter;
            }
        }
    }
    out
}

pub fn avg_pool2_grad<S: Scalar>(grad: &[S], slices: usize, h: usize, w: usize) -> Vec<S> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = S::of_f64(0.25);
    let mut dx = vec![S::zero(); slices * h * w];
    for s in 0..slices {
        let gs = &grad[s * oh * ow..][..oh * ow];
        let ds = &mut dx[s * h * w..][..h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let gv = gs[oy * ow + ox] * quarter;
                ds[2 * oy * w + 2 * ox] = gv;
                ds[2 * oy * w + 2 * ox + 1] = gv;
                ds[(2 * oy + 1) * w + 2 * ox] = gv;
                ds[(2 * oy + 1) * w + 2 * ox + 1] = gv;
            }
        }
    }
    dx
}

/// Edge-repeating mirror index: ... 1 0 | 0 1 2 ... | n-1 n-2 ...
fn reflect_index(j: isize, n: usize) -> usize {
    let n = n as isize;
    let m = j.rem_euclid(2 * n);
    (if m < n { m } else { 2 * n - 1 - m }) as usize
}

/// Reflective padding of every (h, w) slice by `pad` on each side.
pub fn pad_reflect_forward<S: Scalar>(x: &[S], slices: usize, h: usize, w: usize, pad: usize) -> Vec<S> {
    let (oh, ow) = (h + 2 * pad, w + 2 * pad);
    let mut out = vec![S::zero(); slices * oh * ow];
    for s in 0..slices {
        let xs = &x[s * h * w..][..h * w];
        let os = &mut out[s * oh * ow..][..oh * ow];
        for oy in 0..oh {
            let iy = reflect_index(oy as isize - pad as isize, h);
            for ox in 0..ow {
                let ix = reflect_index(ox as isize - pad as isize, w);
                os[oy * ow + ox] = xs[iy * w + ix];
            }
        }
    }
    out
}

pub fn pad_reflect_grad<S: Scalar>(grad: &[S], slices: usize, h: usize, w: usize, pad: usize) -> Vec<S> {
    let (oh, ow) = (h + 2 * pad, w + 2 * pad);
    let mut dx = vec![S::zero(); slices * h * w];
    for s in 0..slices {
        let gs = &grad[s * oh * ow..][..oh * ow];
        let ds = &mut dx[s * h * w..][..h * w];
        for oy in 0..oh {
            let iy = reflect_index(oy as isize - pad as isize, h);
            for ox in 0..ow {
                let ix = reflect_index(ox as isize - pad as isize, w);
                ds[iy * w + ix] = ds[iy * w + ix] + gs[oy * ow + ox];
            }
        }
    }
    dx
}

/// 2D matmul: a (m,k) @ b (k,n) -> (m,n).
pub fn matmul<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut out = vec![S::zero(); m * n];
    for i in 0..m {
        let arow = &a[i * k..][..k];
        let orow = &mut out[i * n..][..n];
        for (p, av) in arow.iter().enumerate() {
            if *av == S::zero() {
                continue;
            }
            let brow = &b[p * n..][..n];
            for (ov, bv) in orow.iter_mut().zip(brow) {
                *ov = *ov + *av * *bv;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct sliding-window accumulation, the independent oracle for conv2d.
    fn conv2d_naive(x: &[f64], w: &[f64], bias: &[f64], g: ConvGeom) -> Vec<f64> {
        let (oh, ow) = (g.out_h(), g.out_w());
        let mut out = vec![0.0; g.batch * g.out_ch * oh * ow];
        for b in 0..g.batch {
            for oc in 0..g.out_ch {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = bias[oc];
                        for ic in 0..g.in_ch {
                            for ky in 0..g.k_h {
                                for kx in 0..g.k_w {
                                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                    if iy >= 0
                                        && iy < g.in_h as isize
                                        && ix >= 0
                                        && ix < g.in_w as isize
                                    {
                                        acc += x[((b * g.in_ch + ic) * g.in_h
                                            + iy as usize)
                                            * g.in_w
                                            + ix as usize]
                                            * w[((oc * g.in_ch + ic) * g.k_h + ky) * g.k_w
                                                + kx];
                                    }
                                }
                            }
                        }
                        out[((b * g.out_ch + oc) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    fn pseudo_random(n: usize, seed: u64) -> Vec<f64> {
        // xorshift; good enough for kernel oracles
        let mut s = seed.wrapping_add(0x9e3779b97f4a7c15);
        (0..n)
            .map(|_| {
                s ^= s << 13;
                s ^= s >> 7;
                s ^= s << 17;
                (s % 1000) as f64 / 500.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn conv2d_matches_naive_oracle() {
        for (stride, pad) in [(1, 1), (1, 0), (2, 1)] {
            let g = ConvGeom {
                batch: 2,
                in_ch: 3,
                out_ch: 4,
                in_h: 8,
                in_w: 8,
                k_h: 3,
                k_w: 3,
                stride,
                pad,
            };
            let x = pseudo_random(g.batch * g.in_ch * g.in_h * g.in_w, 1);
            let w = pseudo_random(g.out_ch * g.in_ch * 9, 2);
            let b = pseudo_random(g.out_ch, 3);
            let fast = conv2d_forward(&x, &w, &b, g);
            let slow = conv2d_naive(&x, &w, &b, g);
            for (a, e) in fast.iter().zip(slow.iter()) {
                assert!((a - e).abs() < 1e-6, "stride={stride} pad={pad}");
            }
        }
    }

    #[test]
    fn conv2d_one_by_one_identity() {
        // 1x1 kernel that is the identity over channels
        let g = ConvGeom {
            batch: 1,
            in_ch: 2,
            out_ch: 2,
            in_h: 4,
            in_w: 4,
            k_h: 1,
            k_w: 1,
            stride: 1,
            pad: 0,
        };
        let x = pseudo_random(32, 7);
        let w = vec![1.0, 0.0, 0.0, 1.0];
        let b = vec![0.0, 0.0];
        assert_eq!(conv2d_forward(&x, &w, &b, g), x);
    }

    #[test]
    fn conv2d_all_ones_interior_sum() {
        // 3x3 all-ones kernel, constant input, valid padding: every output is 9c
        let c = 0.37_f64;
        let g = ConvGeom {
            batch: 1,
            in_ch: 1,
            out_ch: 1,
            in_h: 6,
            in_w: 6,
            k_h: 3,
            k_w: 3,
            stride: 1,
            pad: 0,
        };
        let out = conv2d_forward(&vec![c; 36], &vec![1.0; 9], &[0.0], g);
        assert_eq!(out.len(), 16);
        for v in out {
            assert!((v - 9.0 * c).abs() < 1e-12);
        }
    }

    #[test]
    fn convt2_doubles_and_single_contribution() {
        // each output pixel receives exactly one contribution for k=2, s=2
        let c = 0.25_f64;
        let out = convt2_forward(&vec![c; 16], &vec![1.0; 4], &[0.0], 1, 1, 1, 4, 4);
        assert_eq!(out.len(), 64);
        for v in out {
            assert!((v - c).abs() < 1e-12);
        }
    }

    #[test]
    fn convt2_equals_conv_input_grad() {
        // transpose conv forward == gradient-of-conv2d oracle:
        // conv with stride 2 kernel 2 maps (h) -> (h/2); its input gradient
        // given upstream grad y equals convt2(y) with the matching kernel.
        let (in_ch, out_ch, h) = (3, 2, 4);
        let y = pseudo_random(in_ch * h * h, 11); // plays the conv output grad
        let w = pseudo_random(out_ch * in_ch * 4, 12); // (out_ch_t=out_ch, in_ch_t=in_ch)
        let t = convt2_forward(&y, &w, &vec![0.0; out_ch], 1, in_ch, out_ch, h, h);

        // conv with kernel (oc_conv=in_ch, ic_conv=out_ch): input (out_ch, 2h, 2h) -> (in_ch, h, h)
        let g = ConvGeom {
            batch: 1,
            in_ch: out_ch,
            out_ch: in_ch,
            in_h: 2 * h,
            in_w: 2 * h,
            k_h: 2,
            k_w: 2,
            stride: 2,
            pad: 0,
        };
        // remap w (oc_t, ic_t, ky, kx) -> w_conv (oc_conv=ic_t, ic_conv=oc_t, ky, kx)
        let mut wc = vec![0.0; w.len()];
        for oct in 0..out_ch {
            for ict in 0..in_ch {
                for kk in 0..4 {
                    wc[(ict * out_ch + oct) * 4 + kk] = w[(oct * in_ch + ict) * 4 + kk];
                }
            }
        }
        let dx = conv2d_grad_input(&y, &wc, g);
        for (a, e) in t.iter().zip(dx.iter()) {
            assert!((a - e).abs() < 1e-6);
        }
    }

    #[test]
    fn avg_pool_block_mean() {
        let x = vec![1.0, 2.0, 3.0, 4.0];
        let out = avg_pool2_forward(&x, 1, 2, 2);
        assert_eq!(out, vec![2.5]);
    }

    #[test]
    fn reflect_padding_edges() {
        // row [a b c] padded by 2 -> [b a | a b c | c b]
        let x = vec![1.0, 2.0, 3.0];
        let out = pad_reflect_forward(&x, 1, 1, 3, 2);
        let row: Vec<f64> = out[2 * 7..][..7].to_vec();
        assert_eq!(row, vec![2.0, 1.0, 1.0, 2.0, 3.0, 3.0, 2.0]);
    }

    #[test]
    fn matmul_small_case() {
        let a = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]; // 3x2
        assert_eq!(matmul(&a, &b, 2, 3, 2), vec![58.0, 64.0, 139.0, 154.0]);
    }
}
