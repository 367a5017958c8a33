//! Raw forward/backward kernels. Every reduction runs in a fixed loop order, so
//! results are bitwise reproducible for a given precision.

use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub pad: usize,
    pub stride: usize,
}

impl ConvGeom {
    pub fn out_dim(&self, input: usize, kernel: usize) -> usize {
        (input + 2 * self.pad - kernel) / self.stride + 1
    }

    /// Output index range `[lo, hi)` whose taps at offset `k` land inside `[0, input)`.
    #[inline]
    fn valid_range(&self, k: usize, input: usize, out: usize) -> (usize, usize) {
        // i = o * stride + k - pad, need 0 <= i < input
        let lo = if k >= self.pad {
            0
        } else {
            (self.pad - k).div_ceil(self.stride)
        };
        let hi = if input + self.pad > k {
            ((input + self.pad - k - 1) / self.stride + 1).min(out)
        } else {
            0
        };
        (lo, hi.max(lo))
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geom: ConvGeom,
) -> Tensor<T> {
    let [n, cin, h, w] = input.shape();
    let [cout, _, kh, kw] = weight.shape();
    let oh = geom.out_dim(h, kh);
    let ow = geom.out_dim(w, kw);
    let mut out = Tensor::zeros([n, cout, oh, ow]);
    let x = input.data();
    let wt = weight.data();
    let plane = oh * ow;
    let s = geom.stride;
    let out_data = out.data_mut();
    for b in 0..n {
        for oc in 0..cout {
            let o = &mut out_data[(b * cout + oc) * plane..(b * cout + oc + 1) * plane];
            if let Some(bias) = bias {
                o.fill(bias.data()[oc]);
            }
            for ic in 0..cin {
                let xin = &x[(b * cin + ic) * h * w..(b * cin + ic + 1) * h * w];
                for ky in 0..kh {
                    let (y0, y1) = geom.valid_range(ky, h, oh);
                    for kx in 0..kw {
                        let (x0, x1) = geom.valid_range(kx, w, ow);
                        let wv = wt[((oc * cin + ic) * kh + ky) * kw + kx];
                        for oy in y0..y1 {
                            let iy = oy * s + ky - geom.pad;
                            let orow = &mut o[oy * ow + x0..oy * ow + x1];
                            if s == 1 {
                                let ix0 = x0 + kx - geom.pad;
                                let irow = &xin[iy * w + ix0..iy * w + ix0 + (x1 - x0)];
                                for (ov, &iv) in orow.iter_mut().zip(irow) {
                                    *ov += wv * iv;
                                }
                            } else {
                                for (j, ov) in orow.iter_mut().enumerate() {
                                    let ix = (x0 + j) * s + kx - geom.pad;
                                    *ov += wv * xin[iy * w + ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `(d_input, d_weight, d_bias)`; each is computed only when requested.
pub(crate) fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    geom: ConvGeom,
    want: (bool, bool, bool),
) -> (Option<Tensor<T>>, Option<Tensor<T>>, Option<Tensor<T>>) {
    let [n, cin, h, w] = input.shape();
    let [cout, _, kh, kw] = weight.shape();
    let [_, _, oh, ow] = grad_out.shape();
    let x = input.data();
    let wt = weight.data();
    let g = grad_out.data();
    let plane = oh * ow;
    let s = geom.stride;

    let d_input = want.0.then(|| {
        let mut dx = Tensor::zeros(input.shape());
        let dxd = dx.data_mut();
        for b in 0..n {
            for ic in 0..cin {
                let dplane = &mut dxd[(b * cin + ic) * h * w..(b * cin + ic + 1) * h * w];
                for oc in 0..cout {
                    let go = &g[(b * cout + oc) * plane..(b * cout + oc + 1) * plane];
                    for ky in 0..kh {
                        let (y0, y1) = geom.valid_range(ky, h, oh);
                        for kx in 0..kw {
                            let (x0, x1) = geom.valid_range(kx, w, ow);
                            let wv = wt[((oc * cin + ic) * kh + ky) * kw + kx];
                            for oy in y0..y1 {
                                let iy = oy * s + ky - geom.pad;
                                let grow = &go[oy * ow + x0..oy * ow + x1];
                                if s == 1 {
                                    let ix0 = x0 + kx - geom.pad;
                                    let drow = &mut dplane[iy * w + ix0..iy * w + ix0 + (x1 - x0)];
                                    for (dv, &gv) in drow.iter_mut().zip(grow) {
                                        *dv += wv * gv;
                                    }
                                } else {
                                    for (j, &gv) in grow.iter().enumerate() {
                                        let ix = (x0 + j) * s + kx - geom.pad;
                                        dplane[iy * w + ix] += wv * gv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    });

    let d_weight = want.1.then(|| {
        let mut dw = Tensor::zeros(weight.shape());
        let dwd = dw.data_mut();
        for oc in 0..cout {
            for ic in 0..cin {
                for ky in 0..kh {
                    let (y0, y1) = geom.valid_range(ky, h, oh);
                    for kx in 0..kw {
                        let (x0, x1) = geom.valid_range(kx, w, ow);
                        let mut acc = T::zero();
                        for b in 0..n {
                            let go = &g[(b * cout + oc) * plane..(b * cout + oc + 1) * plane];
                            let xin = &x[(b * cin + ic) * h * w..(b * cin + ic + 1) * h * w];
                            for oy in y0..y1 {
                                let iy = oy * s + ky - geom.pad;
                                let grow = &go[oy * ow + x0..oy * ow + x1];
                                if s == 1 {
                                    let ix0 = x0 + kx - geom.pad;
                                    let irow = &xin[iy * w + ix0..iy * w + ix0 + (x1 - x0)];
                                    for (&gv, &iv) in grow.iter().zip(irow) {
                                        acc += gv * iv;
                                    }
                                } else {
                                    for (j, &gv) in grow.iter().enumerate() {
                                        let ix = (x0 + j) * s + kx - geom.pad;
                                        acc += gv * xin[iy * w + ix];
                                    }
                                }
                            }
                        }
                        dwd[((oc * cin + ic) * kh + ky) * kw + kx] = acc;
                    }
                }
            }
        }
        dw
    });

    let d_bias = want.2.then(|| {
        let mut db = Tensor::zeros([1, cout, 1, 1]);
        for oc in 0..cout {
            let mut acc = T::zero();
            for b in 0..n {
                acc += g[(b * cout + oc) * plane..(b * cout + oc + 1) * plane]
                    .iter()
                    .copied()
                    .sum::<T>();
            }
            db.data_mut()[oc] = acc;
        }
        db
    });

    (d_input, d_weight, d_bias)
}

/// 2×2 max pooling; also returns the flat input index selected for each output
/// and the smallest gap between a window's maximum and its runner-up.
pub(crate) fn maxpool2_forward<T: Scalar>(input: &Tensor<T>) -> (Tensor<T>, Vec<usize>, T) {
    let [n, c, h, w] = input.shape();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros([n, c, oh, ow]);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    let mut min_gap = T::infinity();
    let x = input.data();
    let od = out.data_mut();
    let mut k = 0;
    for p in 0..n * c {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let idx = [
                    base + 2 * oy * w + 2 * ox,
                    base + 2 * oy * w + 2 * ox + 1,
                    base + (2 * oy + 1) * w + 2 * ox,
                    base + (2 * oy + 1) * w + 2 * ox + 1,
                ];
                let mut best = idx[0];
                for &i in &idx[1..] {
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                let runner = idx
                    .iter()
                    .filter(|&&i| i != best)
                    .map(|&i| x[i])
                    .fold(T::neg_infinity(), T::max);
                min_gap = min_gap.min(x[best] - runner);
                od[k] = x[best];
                argmax.push(best);
                k += 1;
            }
        }
    }
    (out, argmax, min_gap)
}

/// Output `[b][c][r*h+dy][r*w+dx] = input[b][c*r*r + dy*r + dx][h][w]`.
pub(crate) fn pixel_shuffle<T: Scalar>(input: &Tensor<T>, r: usize) -> Tensor<T> {
    let [n, c, h, w] = input.shape();
    let oc = c / (r * r);
    let mut out = Tensor::zeros([n, oc, h * r, w * r]);
    let x = input.data();
    let od = out.data_mut();
    let (oh, ow) = (h * r, w * r);
    for b in 0..n {
        for ch in 0..oc {
            for dy in 0..r {
                for dx in 0..r {
                    let src_c = ch * r * r + dy * r + dx;
                    let src = &x[(b * c + src_c) * h * w..(b * c + src_c + 1) * h * w];
                    let dst_base = (b * oc + ch) * oh * ow;
                    for y in 0..h {
                        for xx in 0..w {
                            od[dst_base + (y * r + dy) * ow + xx * r + dx] = src[y * w + xx];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Exact inverse of [`pixel_shuffle`].
pub(crate) fn pixel_unshuffle<T: Scalar>(input: &Tensor<T>, r: usize) -> Tensor<T> {
    let [n, c, oh, ow] = input.shape();
    let (h, w) = (oh / r, ow / r);
    let ic = c * r * r;
    let mut out = Tensor::zeros([n, ic, h, w]);
    let x = input.data();
    let od = out.data_mut();
    for b in 0..n {
        for ch in 0..c {
            for dy in 0..r {
                for dx in 0..r {
                    let dst_c = ch * r * r + dy * r + dx;
                    let dst_base = (b * ic + dst_c) * h * w;
                    let src_base = (b * c + ch) * oh * ow;
                    for y in 0..h {
                        for xx in 0..w {
                            od[dst_base + y * w + xx] = x[src_base + (y * r + dy) * ow + xx * r + dx];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Concatenate along the channel axis.
pub(crate) fn channel_concat<T: Scalar>(parts: &[&Tensor<T>]) -> Tensor<T> {
    let [n, _, h, w] = parts[0].shape();
    let total_c: usize = parts.iter().map(|p| p.channels()).sum();
    let mut data = Vec::with_capacity(n * total_c * h * w);
    for b in 0..n {
        for p in parts {
            let per = p.channels() * h * w;
            data.extend_from_slice(&p.data()[b * per..(b + 1) * per]);
        }
    }
    Tensor::from_vec([n, total_c, h, w], data).expect("concat shape")
}

/// Split a channel-concatenated gradient back into per-part gradients.
pub(crate) fn channel_split<T: Scalar>(grad: &Tensor<T>, channels: &[usize]) -> Vec<Tensor<T>> {
    let [n, total, h, w] = grad.shape();
    let hw = h * w;
    let mut outs: Vec<Vec<T>> = channels.iter().map(|c| Vec::with_capacity(n * c * hw)).collect();
    let g = grad.data();
    for b in 0..n {
        let mut off = b * total * hw;
        for (o, &c) in outs.iter_mut().zip(channels) {
            o.extend_from_slice(&g[off..off + c * hw]);
            off += c * hw;
        }
    }
    outs.into_iter()
        .zip(channels)
        .map(|(d, &c)| Tensor::from_vec([n, c, h, w], d).expect("split shape"))
        .collect()
}

pub(crate) fn broadcast_shape_ok(x: Shape, s: Shape) -> bool {
    s == [x[0], x[1], 1, 1]
}
