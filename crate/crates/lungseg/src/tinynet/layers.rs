//! Network primitives with exact forward and backward passes.
//!
//! Every operation here is bit-deterministic regardless of thread count:
//! rayon parallelism always splits over disjoint output planes or
//! channels, and the accumulation order inside each output element is
//! fixed.

use rayon::prelude::*;

use super::tensor::Tensor4;

/// Batch-norm epsilon.
pub const BN_EPS: f64 = 1e-5;
/// Running-statistics update momentum.
pub const BN_MOMENTUM: f64 = 0.1;

// ---------------------------------------------------------------------------
// Convolution (odd kernel, same padding, stride 1)
// ---------------------------------------------------------------------------

/// Copy a plane into a zero-padded (h+2) x (w+2) buffer.
fn pad_plane(src: &[f64], h: usize, w: usize, dst: &mut [f64]) {
    debug_assert_eq!(dst.len(), (h + 2) * (w + 2));
    let pw = w + 2;
    for y in 0..h {
        dst[(y + 1) * pw + 1..(y + 1) * pw + 1 + w].copy_from_slice(&src[y * w..(y + 1) * w]);
    }
}

/// Zero-padded input planes for one batch item, all channels.
fn padded_planes(input: &Tensor4, ni: usize) -> Vec<f64> {
    let (_, ic, h, w) = input.shape();
    let mut padded = vec![0.0f64; ic * (h + 2) * (w + 2)];
    for c in 0..ic {
        pad_plane(
            input.plane(ni, c),
            h,
            w,
            &mut padded[c * (h + 2) * (w + 2)..(c + 1) * (h + 2) * (w + 2)],
        );
    }
    padded
}

/// Forward convolution. `weight` has shape [out_ch, in_ch, k, k] with k in
/// {1, 3}; output spatial size equals input (zero padding k/2).
pub fn conv2d_forward(input: &Tensor4, weight: &Tensor4) -> Tensor4 {
    let (n, ic, h, w) = input.shape();
    let (oc, wic, k, k2) = weight.shape();
    assert_eq!(ic, wic, "conv2d channel mismatch");
    assert_eq!(k, k2, "conv2d kernel must be square");
    assert!(k == 1 || k == 3, "conv2d supports 1x1 and 3x3 kernels");
    let mut out = Tensor4::zeros(n, oc, h, w);
    if k == 1 {
        out.data
            .par_chunks_mut(h * w)
            .enumerate()
            .for_each(|(plane, out_plane)| {
                let ni = plane / oc;
                let o = plane % oc;
                for c in 0..ic {
                    let coef = weight.data[o * ic + c];
                    for (a, &b) in out_plane.iter_mut().zip(input.plane(ni, c)) {
                        *a += coef * b;
                    }
                }
            });
        return out;
    }
    // 3x3: zero-pad each batch item's input once, then run an
    // unconditional nine-tap stencil for every output element.
    out.data
        .par_chunks_mut(oc * h * w)
        .enumerate()
        .for_each(|(ni, out_batch)| {
            let padded = padded_planes(input, ni);
            let pw = w + 2;
            let psz = (h + 2) * pw;
            for o in 0..oc {
                let out_plane = &mut out_batch[o * h * w..(o + 1) * h * w];
                for c in 0..ic {
                    let kb = (o * ic + c) * 9;
                    let kn = &weight.data[kb..kb + 9];
                    let (k00, k01, k02) = (kn[0], kn[1], kn[2]);
                    let (k10, k11, k12) = (kn[3], kn[4], kn[5]);
                    let (k20, k21, k22) = (kn[6], kn[7], kn[8]);
                    let pp = &padded[c * psz..(c + 1) * psz];
                    for y in 0..h {
                        let r0 = &pp[y * pw..y * pw + w + 2];
                        let r1 = &pp[(y + 1) * pw..(y + 1) * pw + w + 2];
                        let r2 = &pp[(y + 2) * pw..(y + 2) * pw + w + 2];
                        let orow = &mut out_plane[y * w..(y + 1) * w];
                        for x in 0..w {
                            orow[x] += k00 * r0[x]
                                + k01 * r0[x + 1]
                                + k02 * r0[x + 2]
                                + k10 * r1[x]
                                + k11 * r1[x + 1]
                                + k12 * r1[x + 2]
                                + k20 * r2[x]
                                + k21 * r2[x + 1]
                                + k22 * r2[x + 2];
                        }
                    }
                }
            }
        });
    out
}

/// out[y][x] += coef * src[y+dy][x+dx] over the valid overlap.

/// sum over valid overlap of a[y][x] * b[y+dy][x+dx].

/// Backward convolution: gradients w.r.t. input and weight.
pub fn conv2d_backward(
    input: &Tensor4,
    weight: &Tensor4,
    grad_out: &Tensor4,
) -> (Tensor4, Tensor4) {
    let (n, ic, h, w) = input.shape();
    let (oc, _, k, _) = weight.shape();

    // grad_input is the convolution of grad_out with the kernel flipped
    // spatially and transposed in channels: reuse the fast forward path.
    let mut flipped = Tensor4::zeros(ic, oc, k, k);
    for o in 0..oc {
        for c in 0..ic {
            for ky in 0..k {
                for kx in 0..k {
                    flipped.data[((c * oc + o) * k + (k - 1 - ky)) * k + (k - 1 - kx)] =
                        weight.data[((o * ic + c) * k + ky) * k + kx];
                }
            }
        }
    }
    let grad_input = conv2d_forward(grad_out, &flipped);

    // Weight gradients: pad every input plane once (shared read-only),
    // then one unconditional pass per (o, c, n) accumulating all k*k taps.
    let psz = (h + 2) * (w + 2);
    let mut padded_all = vec![0.0f64; n * ic * psz];
    for ni in 0..n {
        for c in 0..ic {
            pad_plane(
                input.plane(ni, c),
                h,
                w,
                &mut padded_all[(ni * ic + c) * psz..(ni * ic + c + 1) * psz],
            );
        }
    }
    let mut grad_weight = Tensor4::zeros(oc, ic, k, k);
    grad_weight
        .data
        .par_chunks_mut(ic * k * k)
        .enumerate()
        .for_each(|(o, gw_block)| {
            let pw = w + 2;
            for c in 0..ic {
                let gw = &mut gw_block[c * k * k..(c + 1) * k * k];
                if k == 3 {
                    let (mut a0, mut a1, mut a2) = (0.0f64, 0.0f64, 0.0f64);
                    let (mut a3, mut a4, mut a5) = (0.0f64, 0.0f64, 0.0f64);
                    let (mut a6, mut a7, mut a8) = (0.0f64, 0.0f64, 0.0f64);
                    for ni in 0..n {
                        let pp = &padded_all[(ni * ic + c) * psz..(ni * ic + c + 1) * psz];
                        let gout_plane = grad_out.plane(ni, o);
                        for y in 0..h {
                            let r0 = &pp[y * pw..y * pw + w + 2];
                            let r1 = &pp[(y + 1) * pw..(y + 1) * pw + w + 2];
                            let r2 = &pp[(y + 2) * pw..(y + 2) * pw + w + 2];
                            let grow = &gout_plane[y * w..(y + 1) * w];
                            for x in 0..w {
                                let g = grow[x];
                                a0 += g * r0[x];
                                a1 += g * r0[x + 1];
                                a2 += g * r0[x + 2];
                                a3 += g * r1[x];
                                a4 += g * r1[x + 1];
                                a5 += g * r1[x + 2];
                                a6 += g * r2[x];
                                a7 += g * r2[x + 1];
                                a8 += g * r2[x + 2];
                            }
                        }
                    }
                    gw.copy_from_slice(&[a0, a1, a2, a3, a4, a5, a6, a7, a8]);
                } else {
                    // 1x1: plain dot product per channel pair.
                    let mut acc = 0.0;
                    for ni in 0..n {
                        let gout_plane = grad_out.plane(ni, o);
                        let in_plane = input.plane(ni, c);
                        for (&g, &v) in gout_plane.iter().zip(in_plane) {
                            acc += g * v;
                        }
                    }
                    gw[0] = acc;
                }
            }
        });
    (grad_input, grad_weight)
}

/// Add a per-channel bias (shape [1, c, 1, 1]) in place.
pub fn bias_add_forward(x: &mut Tensor4, bias: &Tensor4) {
    assert_eq!(bias.shape(), (1, x.c, 1, 1), "bias shape mismatch");
    let hw = x.h * x.w;
    for plane in 0..x.n * x.c {
        let b = bias.data[plane % x.c];
        for v in &mut x.data[plane * hw..(plane + 1) * hw] {
            *v += b;
        }
    }
}

/// Gradient of the per-channel bias: sum of grad_out over (n, h, w).
pub fn bias_backward(grad_out: &Tensor4) -> Tensor4 {
    let mut gb = Tensor4::zeros(1, grad_out.c, 1, 1);
    let hw = grad_out.h * grad_out.w;
    for plane in 0..grad_out.n * grad_out.c {
        let c = plane % grad_out.c;
        let mut acc = 0.0;
        for &v in &grad_out.data[plane * hw..(plane + 1) * hw] {
            acc += v;
        }
        gb.data[c] += acc;
    }
    gb
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

/// Values cached by the train-mode forward pass for the backward pass.
pub struct BnCache {
    pub xhat: Tensor4,
    pub inv_std: Vec<f64>,
}

/// Per-channel batch statistics from a train-mode forward pass; the caller
/// folds them into the running statistics.
pub struct BnBatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Fold batch statistics into a running-statistic tensor with momentum
/// [`BN_MOMENTUM`].
pub fn bn_update_running(running: &mut Tensor4, batch: &[f64]) {
    for (r, &b) in running.data.iter_mut().zip(batch) {
        *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
    }
}

/// Train-mode batch norm over (n, h, w) per channel, normalizing with the
/// biased (1/m) batch variance.
pub fn bn_forward_train(
    x: &Tensor4,
    gamma: &Tensor4,
    beta: &Tensor4,
) -> (Tensor4, BnCache, BnBatchStats) {
    let (n, c, h, w) = x.shape();
    let m = (n * h * w) as f64;
    let hw = h * w;
    let mut out = Tensor4::zeros(n, c, h, w);
    let mut xhat = Tensor4::zeros(n, c, h, w);
    let mut inv_std = vec![0.0; c];
    let mut means = vec![0.0; c];
    let mut vars = vec![0.0; c];

    let stats: Vec<(f64, f64)> = (0..c)
        .into_par_iter()
        .map(|ch| {
            let mut sum = 0.0;
            for ni in 0..n {
                for &v in x.plane(ni, ch) {
                    sum += v;
                }
            }
            let mean = sum / m;
            let mut var_acc = 0.0;
            for ni in 0..n {
                for &v in x.plane(ni, ch) {
                    let d = v - mean;
                    var_acc += d * d;
                }
            }
            (mean, var_acc / m)
        })
        .collect();
    for (ch, (mean, var)) in stats.into_iter().enumerate() {
        means[ch] = mean;
        vars[ch] = var;
        inv_std[ch] = 1.0 / (var + BN_EPS).sqrt();
    }

    out.data
        .par_chunks_mut(hw)
        .zip(xhat.data.par_chunks_mut(hw))
        .enumerate()
        .for_each(|(plane, (out_plane, xhat_plane))| {
            let ch = plane % c;
            let (mean, istd) = (means[ch], inv_std[ch]);
            let (g, b) = (gamma.data[ch], beta.data[ch]);
            let x_plane = &x.data[plane * hw..(plane + 1) * hw];
            for i in 0..hw {
                let xh = (x_plane[i] - mean) * istd;
                xhat_plane[i] = xh;
                out_plane[i] = g * xh + b;
            }
        });
    (
        out,
        BnCache { xhat, inv_std },
        BnBatchStats {
            mean: means,
            var: vars,
        },
    )
}

/// Eval-mode batch norm using the stored running statistics.
pub fn bn_forward_eval(
    x: &Tensor4,
    gamma: &Tensor4,
    beta: &Tensor4,
    running_mean: &Tensor4,
    running_var: &Tensor4,
) -> Tensor4 {
    let (n, c, h, w) = x.shape();
    let hw = h * w;
    let mut out = Tensor4::zeros(n, c, h, w);
    out.data
        .par_chunks_mut(hw)
        .enumerate()
        .for_each(|(plane, out_plane)| {
            let ch = plane % c;
            let istd = 1.0 / (running_var.data[ch] + BN_EPS).sqrt();
            let mean = running_mean.data[ch];
            let (g, b) = (gamma.data[ch], beta.data[ch]);
            let x_plane = &x.data[plane * hw..(plane + 1) * hw];
            for i in 0..hw {
                out_plane[i] = g * (x_plane[i] - mean) * istd + b;
            }
        });
    out
}

/// Backward through train-mode batch norm. Returns (grad_x, grad_gamma,
/// grad_beta).
pub fn bn_backward(
    cache: &BnCache,
    gamma: &Tensor4,
    grad_out: &Tensor4,
) -> (Tensor4, Tensor4, Tensor4) {
    let (n, c, h, w) = grad_out.shape();
    let m = (n * h * w) as f64;
    let hw = h * w;
    let mut grad_x = Tensor4::zeros(n, c, h, w);
    let mut grad_gamma = Tensor4::zeros(1, c, 1, 1);
    let mut grad_beta = Tensor4::zeros(1, c, 1, 1);

    // Per-channel sums of g and g*xhat (fixed n-then-pixel order).
    let sums: Vec<(f64, f64)> = (0..c)
        .into_par_iter()
        .map(|ch| {
            let mut s_g = 0.0;
            let mut s_gx = 0.0;
            for ni in 0..n {
                let go = grad_out.plane(ni, ch);
                let xh = cache.xhat.plane(ni, ch);
                for i in 0..hw {
                    s_g += go[i];
                    s_gx += go[i] * xh[i];
                }
            }
            (s_g, s_gx)
        })
        .collect();
    for (ch, &(s_g, s_gx)) in sums.iter().enumerate() {
        grad_beta.data[ch] = s_g;
        grad_gamma.data[ch] = s_gx;
    }

    grad_x
        .data
        .par_chunks_mut(hw)
        .enumerate()
        .for_each(|(plane, gx_plane)| {
            let ch = plane % c;
            let (s_g, s_gx) = sums[ch];
            let g = gamma.data[ch];
            let istd = cache.inv_std[ch];
            let go = &grad_out.data[plane * hw..(plane + 1) * hw];
            let xh = &cache.xhat.data[plane * hw..(plane + 1) * hw];
            for i in 0..hw {
                gx_plane[i] = g * istd / m * (m * go[i] - s_g - xh[i] * s_gx);
            }
        });
    (grad_x, grad_gamma, grad_beta)
}

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

pub fn relu_forward(x: &Tensor4) -> Tensor4 {
    let mut out = x.clone();
    for v in &mut out.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// ReLU backward with the g(0) = 0 subgradient convention, gated on the
/// forward output.
pub fn relu_backward(output: &Tensor4, grad_out: &Tensor4) -> Tensor4 {
    let mut grad = grad_out.clone();
    for (g, &o) in grad.data.iter_mut().zip(&output.data) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
    grad
}

// ---------------------------------------------------------------------------
// 2x2 max pooling, stride 2
// ---------------------------------------------------------------------------

pub struct PoolCache {
    /// Flat input-plane index of the max element, per output element.
    pub argmax: Vec<u32>,
    pub in_h: usize,
    pub in_w: usize,
}

pub fn maxpool2_forward(x: &Tensor4) -> (Tensor4, PoolCache) {
    let (n, c, h, w) = x.shape();
    assert!(h % 2 == 0 && w % 2 == 0, "maxpool needs even spatial dims");
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor4::zeros(n, c, oh, ow);
    let mut argmax = vec![0u32; n * c * oh * ow];
    out.data
        .par_chunks_mut(oh * ow)
        .zip(argmax.par_chunks_mut(oh * ow))
        .enumerate()
        .for_each(|(plane, (out_plane, am_plane))| {
            let ni = plane / c;
            let ch = plane % c;
            let xin = x.plane(ni, ch);
            for oy in 0..oh {
                for ox in 0..ow {
                    let (y, xcol) = (oy * 2, ox * 2);
                    // Fixed candidate order; first strict max wins.
                    let idx0 = y * w + xcol;
                    let candidates = [idx0, idx0 + 1, idx0 + w, idx0 + w + 1];
                    let mut best = candidates[0];
                    let mut best_v = xin[best];
                    for &cand in &candidates[1..] {
                        if xin[cand] > best_v {
                            best_v = xin[cand];
                            best = cand;
                        }
                    }
                    out_plane[oy * ow + ox] = best_v;
                    am_plane[oy * ow + ox] = best as u32;
                }
            }
        });
    (
        out,
        PoolCache {
            argmax,
            in_h: h,
            in_w: w,
        },
    )
}

pub fn maxpool2_backward(cache: &PoolCache, grad_out: &Tensor4) -> Tensor4 {
    let (n, c, oh, ow) = grad_out.shape();
    let (h, w) = (cache.in_h, cache.in_w);
    let mut grad_in = Tensor4::zeros(n, c, h, w);
    grad_in
        .data
        .par_chunks_mut(h * w)
        .enumerate()
        .for_each(|(plane, gi_plane)| {
            let go = &grad_out.data[plane * oh * ow..(plane + 1) * oh * ow];
            let am = &cache.argmax[plane * oh * ow..(plane + 1) * oh * ow];
            for i in 0..oh * ow {
                gi_plane[am[i] as usize] += go[i];
            }
        });
    grad_in
}

// ---------------------------------------------------------------------------
// 2x2 transposed convolution, stride 2 (exact 2x upsampling)
// ---------------------------------------------------------------------------

/// Forward transposed convolution. `weight` has shape [in_ch, out_ch, 2, 2];
/// output spatial dims are exactly twice the input's. Kernel 2 with stride 2
/// means windows never overlap.
pub fn deconv2x2_forward(input: &Tensor4, weight: &Tensor4) -> Tensor4 {
    let (n, ic, h, w) = input.shape();
    let (wic, oc, k, k2) = weight.shape();
    assert_eq!(ic, wic, "deconv channel mismatch");
    assert_eq!((k, k2), (2, 2), "deconv kernel must be 2x2");
    let (oh, ow) = (h * 2, w * 2);
    let mut out = Tensor4::zeros(n, oc, oh, ow);
    out.data
        .par_chunks_mut(oh * ow)
        .enumerate()
        .for_each(|(plane, out_plane)| {
            let ni = plane / oc;
            let o = plane % oc;
            for c in 0..ic {
                let xin = input.plane(ni, c);
                let kbase = (c * oc + o) * 4;
                for ky in 0..2 {
                    for kx in 0..2 {
                        let wv = weight.data[kbase + ky * 2 + kx];
                        for y in 0..h {
                            let orow = (y * 2 + ky) * ow;
                            let irow = y * w;
                            for x in 0..w {
                                out_plane[orow + x * 2 + kx] += wv * xin[irow + x];
                            }
                        }
                    }
                }
            }
        });
    out
}

pub fn deconv2x2_backward(
    input: &Tensor4,
    weight: &Tensor4,
    grad_out: &Tensor4,
) -> (Tensor4, Tensor4) {
    let (n, ic, h, w) = input.shape();
    let (_, oc, _, _) = weight.shape();
    let ow = w * 2;
    let mut grad_input = Tensor4::zeros(n, ic, h, w);
    grad_input
        .data
        .par_chunks_mut(h * w)
        .enumerate()
        .for_each(|(plane, gi_plane)| {
            let ni = plane / ic;
            let c = plane % ic;
            for o in 0..oc {
                let go = grad_out.plane(ni, o);
                let kbase = (c * oc + o) * 4;
                for ky in 0..2 {
                    for kx in 0..2 {
                        let wv = weight.data[kbase + ky * 2 + kx];
                        for y in 0..h {
                            let grow = (y * 2 + ky) * ow;
                            let irow = y * w;
                            for x in 0..w {
                                gi_plane[irow + x] += wv * go[grow + x * 2 + kx];
                            }
                        }
                    }
                }
            }
        });
    let mut grad_weight = Tensor4::zeros(ic, oc, 2, 2);
    grad_weight
        .data
        .par_chunks_mut(oc * 4)
        .enumerate()
        .for_each(|(c, gw_block)| {
            for o in 0..oc {
                for ky in 0..2 {
                    for kx in 0..2 {
                        let mut acc = 0.0;
                        for ni in 0..n {
                            let xin = input.plane(ni, c);
                            let go = grad_out.plane(ni, o);
                            for y in 0..h {
                                let grow = (y * 2 + ky) * ow;
                                let irow = y * w;
                                for x in 0..w {
                                    acc += xin[irow + x] * go[grow + x * 2 + kx];
                                }
                            }
                        }
                        gw_block[o * 4 + ky * 2 + kx] = acc;
                    }
                }
            }
        });
    (grad_input, grad_weight)
}

// ---------------------------------------------------------------------------
// Nearest-neighbor 2x upsampling (alternative upsampling path)
// ---------------------------------------------------------------------------

pub fn upsample_nearest2_forward(x: &Tensor4) -> Tensor4 {
    let (n, c, h, w) = x.shape();
    let mut out = Tensor4::zeros(n, c, h * 2, w * 2);
    let ow = w * 2;
    out.data
        .par_chunks_mut(h * 2 * ow)
        .enumerate()
        .for_each(|(plane, out_plane)| {
            let xin = &x.data[plane * h * w..(plane + 1) * h * w];
            for oy in 0..h * 2 {
                let srow = (oy / 2) * w;
                let orow = oy * ow;
                for ox in 0..ow {
                    out_plane[orow + ox] = xin[srow + ox / 2];
                }
            }
        });
    out
}

pub fn upsample_nearest2_backward(grad_out: &Tensor4) -> Tensor4 {
    let (n, c, oh, ow) = grad_out.shape();
    let (h, w) = (oh / 2, ow / 2);
    let mut grad_in = Tensor4::zeros(n, c, h, w);
    grad_in
        .data
        .par_chunks_mut(h * w)
        .enumerate()
        .for_each(|(plane, gi_plane)| {
            let go = &grad_out.data[plane * oh * ow..(plane + 1) * oh * ow];
            for y in 0..h {
                for x in 0..w {
                    // Fixed 4-term order.
                    let i0 = (y * 2) * ow + x * 2;
                    let i1 = i0 + 1;
                    let i2 = i0 + ow;
                    let i3 = i2 + 1;
                    gi_plane[y * w + x] = go[i0] + go[i1] + go[i2] + go[i3];
                }
            }
        });
    grad_in
}

// ---------------------------------------------------------------------------
// Channel concatenation
// ---------------------------------------------------------------------------

pub fn concat_channels(a: &Tensor4, b: &Tensor4) -> Tensor4 {
    assert_eq!(a.n, b.n, "concat batch mismatch");
    assert_eq!((a.h, a.w), (b.h, b.w), "concat spatial mismatch");
    let hw = a.h * a.w;
    let mut out = Tensor4::zeros(a.n, a.c + b.c, a.h, a.w);
    for ni in 0..a.n {
        for c in 0..a.c {
            let dst = (ni * out.c + c) * hw;
            out.data[dst..dst + hw].copy_from_slice(a.plane(ni, c));
        }
        for c in 0..b.c {
            let dst = (ni * out.c + a.c + c) * hw;
            out.data[dst..dst + hw].copy_from_slice(b.plane(ni, c));
        }
    }
    out
}

pub fn concat_backward(grad_out: &Tensor4, c_a: usize, c_b: usize) -> (Tensor4, Tensor4) {
    assert_eq!(grad_out.c, c_a + c_b, "concat grad channel mismatch");
    let hw = grad_out.h * grad_out.w;
    let mut ga = Tensor4::zeros(grad_out.n, c_a, grad_out.h, grad_out.w);
    let mut gb = Tensor4::zeros(grad_out.n, c_b, grad_out.h, grad_out.w);
    for ni in 0..grad_out.n {
        for c in 0..c_a {
            let dst = (ni * c_a + c) * hw;
            ga.data[dst..dst + hw].copy_from_slice(grad_out.plane(ni, c));
        }
        for c in 0..c_b {
            let dst = (ni * c_b + c) * hw;
            gb.data[dst..dst + hw].copy_from_slice(grad_out.plane(ni, c_a + c));
        }
    }
    (ga, gb)
}
