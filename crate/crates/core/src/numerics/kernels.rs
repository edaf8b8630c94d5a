//! Forward and backward kernels on raw tensors. The tape wires these together.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Stride-1 2D convolution geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl ConvSpec {
    pub const POINTWISE: ConvSpec = ConvSpec {
        padding: 0,
        dilation: 1,
        groups: 1,
    };

    pub fn same3x3(groups: usize) -> Self {
        ConvSpec {
            padding: 1,
            dilation: 1,
            groups,
        }
    }

    pub fn dilated3x3(groups: usize) -> Self {
        ConvSpec {
            padding: 2,
            dilation: 2,
            groups,
        }
    }
}

fn conv_out_shape(x: &Tensor, w: &Tensor, spec: ConvSpec) -> Result<[usize; 4]> {
    let [n, c_in, h, wd] = x.shape();
    let [c_out, cin_g, kh, kw] = w.shape();
    let g = spec.groups;
    if g == 0 || c_in % g != 0 || c_out % g != 0 || cin_g != c_in / g {
        return Err(Error::shape(
            "conv2d",
            format!(
                "input {:?}, weight {:?}, groups {g}",
                x.shape(),
                w.shape()
            ),
        ));
    }
    let span_h = spec.dilation * (kh - 1);
    let span_w = spec.dilation * (kw - 1);
    if h + 2 * spec.padding < span_h + 1 || wd + 2 * spec.padding < span_w + 1 {
        return Err(Error::shape("conv2d", "kernel larger than padded input"));
    }
    Ok([
        n,
        c_out,
        h + 2 * spec.padding - span_h,
        wd + 2 * spec.padding - span_w,
    ])
}

/// For a kernel offset `d` (input = output + d), the output range whose input is in bounds.
#[inline]
fn valid_range(d: isize, out_len: usize, in_len: usize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (in_len as isize - d).min(out_len as isize).max(0) as usize;
    (lo.min(hi), hi)
}

pub fn conv2d(x: &Tensor, w: &Tensor, spec: ConvSpec) -> Result<Tensor> {
    let out_shape = conv_out_shape(x, w, spec)?;
    let [n, c_in, h, wd] = x.shape();
    let [c_out, cin_g, kh, kw] = w.shape();
    let [_, _, ho, wo] = out_shape;
    let cout_g = c_out / spec.groups;
    let mut out = Tensor::zeros(out_shape);
    let xd = x.data();
    let wdat = w.data();
    let od = out.data_mut();
    for b in 0..n {
        for co in 0..c_out {
            let g = co / cout_g;
            let obase = (b * c_out + co) * ho * wo;
            for cig in 0..cin_g {
                let ci = g * cin_g + cig;
                let ibase = (b * c_in + ci) * h * wd;
                for ky in 0..kh {
                    let dy = (ky * spec.dilation) as isize - spec.padding as isize;
                    let (y0, y1) = valid_range(dy, ho, h);
                    for kx in 0..kw {
                        let dx = (kx * spec.dilation) as isize - spec.padding as isize;
                        let (x0, x1) = valid_range(dx, wo, wd);
                        let wv = wdat[((co * cin_g + cig) * kh + ky) * kw + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        for oy in y0..y1 {
                            let iy = (oy as isize + dy) as usize;
                            let orow = obase + oy * wo;
                            let irow = (ibase + iy * wd) as isize + dx;
                            for ox in x0..x1 {
                                od[orow + ox] += wv * xd[(irow + ox as isize) as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Returns `(grad_x, grad_w)`; `grad_x` is skipped when `need_x` is false.
pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    spec: ConvSpec,
    gout: &Tensor,
    need_x: bool,
    need_w: bool,
) -> (Option<Tensor>, Option<Tensor>) {
    let [n, c_in, h, wd] = x.shape();
    let [c_out, cin_g, kh, kw] = w.shape();
    let [_, _, ho, wo] = gout.shape();
    let cout_g = c_out / spec.groups;
    let mut gx = need_x.then(|| Tensor::zeros(x.shape()));
    let mut gw = need_w.then(|| Tensor::zeros(w.shape()));
    let xd = x.data();
    let wdat = w.data();
    let gd = gout.data();
    for b in 0..n {
        for co in 0..c_out {
            let g = co / cout_g;
            let obase = (b * c_out + co) * ho * wo;
            for cig in 0..cin_g {
                let ci = g * cin_g + cig;
                let ibase = (b * c_in + ci) * h * wd;
                for ky in 0..kh {
                    let dy = (ky * spec.dilation) as isize - spec.padding as isize;
                    let (y0, y1) = valid_range(dy, ho, h);
                    for kx in 0..kw {
                        let dx = (kx * spec.dilation) as isize - spec.padding as isize;
                        let (x0, x1) = valid_range(dx, wo, wd);
                        let widx = ((co * cin_g + cig) * kh + ky) * kw + kx;
                        let wv = wdat[widx];
                        let mut acc = 0.0;
                        for oy in y0..y1 {
                            let iy = (oy as isize + dy) as usize;
                            let orow = obase + oy * wo;
                            let irow = (ibase + iy * wd) as isize + dx;
                            if let Some(gx) = gx.as_mut() {
                                let gxd = gx.data_mut();
                                for ox in x0..x1 {
                                    gxd[(irow + ox as isize) as usize] += wv * gd[orow + ox];
                                }
                            }
                            if need_w {
                                for ox in x0..x1 {
                                    acc += gd[orow + ox] * xd[(irow + ox as isize) as usize];
                                }
                            }
                        }
                        if let Some(gw) = gw.as_mut() {
                            gw.data_mut()[widx] += acc;
                        }
                    }
                }
            }
        }
    }
    (gx, gw)
}

/// Adds a per-channel bias.
pub fn bias_add(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = x.shape();
    if bias.len() != c {
        return Err(Error::shape(
            "bias_add",
            format!("{c} channels, bias of {}", bias.len()),
        ));
    }
    let mut out = x.clone();
    let hw = h * w;
    let od = out.data_mut();
    for b in 0..n {
        for ch in 0..c {
            let bv = bias.data()[ch];
            for v in &mut od[(b * c + ch) * hw..(b * c + ch + 1) * hw] {
                *v += bv;
            }
        }
    }
    Ok(out)
}

/// Sums a tensor over batch and spatial axes, one value per channel.
pub fn channel_sums(t: &Tensor) -> Vec<f64> {
    let [n, c, _, _] = t.shape();
    let mut out = vec![0.0; c];
    for b in 0..n {
        for (ch, acc) in out.iter_mut().enumerate() {
            *acc += t.plane(b, ch).iter().sum::<f64>();
        }
    }
    out
}

/// 3x3, stride 1, zero padding 1, divisor always 9.
pub fn avg_pool3x3(x: &Tensor) -> Tensor {
    let [n, c, h, w] = x.shape();
    let mut out = Tensor::zeros(x.shape());
    for b in 0..n {
        for ch in 0..c {
            let src = x.plane(b, ch);
            let base = (b * c + ch) * h * w;
            let od = out.data_mut();
            for oy in 0..h {
                for ox in 0..w {
                    let mut acc = 0.0;
                    for iy in oy.saturating_sub(1)..(oy + 2).min(h) {
                        for ix in ox.saturating_sub(1)..(ox + 2).min(w) {
                            acc += src[iy * w + ix];
                        }
                    }
                    od[base + oy * w + ox] = acc / 9.0;
                }
            }
        }
    }
    out
}

pub fn avg_pool3x3_backward(gout: &Tensor) -> Tensor {
    // The operator is self-adjoint: each input feeds the same 3x3 window of outputs.
    avg_pool3x3(gout)
}

/// 2x2 max pooling with stride 2; also returns the flat argmax index per output.
pub fn max_pool2(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let [n, c, h, w] = x.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(
            "max_pool2",
            format!("spatial size {h}x{w} is not even"),
        ));
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Tensor::zeros([n, c, ho, wo]);
    let mut arg = Vec::with_capacity(n * c * ho * wo);
    let xd = x.data();
    let od = out.data_mut();
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                    od[((b * c + ch) * ho + oy) * wo + ox] = xd[best];
                    arg.push(best);
                }
            }
        }
    }
    Ok((out, arg))
}

/// Per-axis interpolation taps for 2x upsampling with half-pixel centers.
fn up2_taps(len: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * len)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear 2x upsampling, half-pixel-center convention, edge clamped.
pub fn bilinear_up2(x: &Tensor) -> Tensor {
    let [n, c, h, w] = x.shape();
    let ty = up2_taps(h);
    let tx = up2_taps(w);
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = Tensor::zeros([n, c, ho, wo]);
    for b in 0..n {
        for ch in 0..c {
            let src = x.plane(b, ch);
            let base = (b * c + ch) * ho * wo;
            let od = out.data_mut();
            for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                    let top = (1.0 - lx) * src[y0 * w + x0] + lx * src[y0 * w + x1];
                    let bot = (1.0 - lx) * src[y1 * w + x0] + lx * src[y1 * w + x1];
                    od[base + oy * wo + ox] = (1.0 - ly) * top + ly * bot;
                }
            }
        }
    }
    out
}

pub fn bilinear_up2_backward(gout: &Tensor, in_shape: [usize; 4]) -> Tensor {
    let [n, c, h, w] = in_shape;
    let ty = up2_taps(h);
    let tx = up2_taps(w);
    let wo = 2 * w;
    let mut gx = Tensor::zeros(in_shape);
    for b in 0..n {
        for ch in 0..c {
            let g = gout.plane(b, ch);
            let base = (b * c + ch) * h * w;
            let gd = gx.data_mut();
            for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                    let v = g[oy * wo + ox];
                    gd[base + y0 * w + x0] += (1.0 - ly) * (1.0 - lx) * v;
                    gd[base + y0 * w + x1] += (1.0 - ly) * lx * v;
                    gd[base + y1 * w + x0] += ly * (1.0 - lx) * v;
                    gd[base + y1 * w + x1] += ly * lx * v;
                }
            }
        }
    }
    gx
}

/// Batch statistics saved by the training-mode normalization forward.
#[derive(Clone, Debug)]
pub struct NormSaved {
    pub xhat: Tensor,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub const NORM_EPS: f64 = 1e-5;

/// Per-channel normalization with batch statistics followed by an affine map.
pub fn batch_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<(Tensor, NormSaved)> {
    let [n, c, h, w] = x.shape();
    if gamma.len() != c || beta.len() != c {
        return Err(Error::shape(
            "batch_norm",
            format!("{c} channels, affine of {}/{}", gamma.len(), beta.len()),
        ));
    }
    let m = (n * h * w) as f64;
    let hw = h * w;
    let mean: Vec<f64> = channel_sums(x).into_iter().map(|s| s / m).collect();
    let mut var = vec![0.0; c];
    for b in 0..n {
        for (ch, v) in var.iter_mut().enumerate() {
            *v += x
                .plane(b, ch)
                .iter()
                .map(|&e| (e - mean[ch]) * (e - mean[ch]))
                .sum::<f64>();
        }
    }
    for v in &mut var {
        *v /= m;
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
    let mut xhat = Tensor::zeros(x.shape());
    let mut out = Tensor::zeros(x.shape());
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            let (g, bt) = (gamma.data()[ch], beta.data()[ch]);
            for i in off..off + hw {
                let xh = (x.data()[i] - mean[ch]) * inv_std[ch];
                xhat.data_mut()[i] = xh;
                out.data_mut()[i] = g * xh + bt;
            }
        }
    }
    Ok((
        out,
        NormSaved {
            xhat,
            inv_std,
            mean,
            var,
        },
    ))
}

/// Returns `(grad_x, grad_gamma, grad_beta)`.
pub fn batch_norm_backward(
    saved: &NormSaved,
    gamma: &Tensor,
    gout: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let [n, c, h, w] = gout.shape();
    let hw = h * w;
    let m = (n * hw) as f64;
    let mut gbeta = vec![0.0; c];
    let mut ggamma = vec![0.0; c];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            for i in off..off + hw {
                gbeta[ch] += gout.data()[i];
                ggamma[ch] += gout.data()[i] * saved.xhat.data()[i];
            }
        }
    }
    let mut gx = Tensor::zeros(gout.shape());
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            let g = gamma.data()[ch];
            // dxhat = g * gout; sum(dxhat) = g * gbeta; sum(dxhat * xhat) = g * ggamma
            let k = g * saved.inv_std[ch] / m;
            for i in off..off + hw {
                gx.data_mut()[i] =
                    k * (m * gout.data()[i] - gbeta[ch] - saved.xhat.data()[i] * ggamma[ch]);
            }
        }
    }
    (gx, Tensor::vector(&ggamma), Tensor::vector(&gbeta))
}

/// Per channel `(gamma * inv_std, mean, inv_std)` for evaluation-mode normalization
/// `(x - mean) * inv_std * gamma + beta` with fixed statistics.
pub fn norm_eval_scale(mean: &[f64], var: &[f64], gamma: &Tensor) -> Vec<(f64, f64, f64)> {
    mean.iter()
        .zip(var)
        .zip(gamma.data())
        .map(|((&m, v), g)| {
            let inv = 1.0 / (v + NORM_EPS).sqrt();
            (g * inv, m, inv)
        })
        .collect()
}
