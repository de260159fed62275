//! Convolution, pooling, softmax and dense primitives with their backward passes.
//!
//! Convolutions are correlations (no kernel flip) over zero-padded input,
//! matching the usual deep-learning convention:
//! `Y[o][y][x] = Σ_{i,h,t} W[o][i][h][t] · X_pad[i][y·stride+h][x·stride+t]`.

use crate::error::{Error, Result};
use crate::tensor::{ConvWeights, Tensor};

/// Output extent of a padded strided window sweep.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Parameter("stride must be positive".into()));
    }
    let padded = input + 2 * padding;
    if padded < kernel {
        return Err(Error::dim("spatial", format!(">= {kernel} after padding"), padded));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Range of output indices `x` whose tap `x·stride + offset − pad` lands inside `[0, len)`.
#[inline]
fn valid_range(out_len: usize, len: usize, offset: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > offset {
        (pad - offset).div_ceil(stride)
    } else {
        0
    };
    let hi = if len + pad > offset {
        ((len - 1 + pad - offset) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Correlate one input plane with one kernel, accumulating into `out`.
#[allow(clippy::too_many_arguments)]
#[inline]
fn correlate_plane(
    src: &[f64],
    (h, w): (usize, usize),
    kernel: &[f64],
    (kh, kw): (usize, usize),
    out: &mut [f64],
    (oh, ow): (usize, usize),
    stride: usize,
    pad: usize,
) {
    for dy in 0..kh {
        let (y0, y1) = valid_range(oh, h, dy, stride, pad);
        for dx in 0..kw {
            let k = kernel[dy * kw + dx];
            if k == 0.0 {
                continue;
            }
            let (x0, x1) = valid_range(ow, w, dx, stride, pad);
            for y in y0..y1 {
                let iy = y * stride + dy - pad;
                let row = &src[iy * w..(iy + 1) * w];
                let orow = &mut out[y * ow..(y + 1) * ow];
                if stride == 1 {
                    let off = dx as isize - pad as isize;
                    let s = (x0 as isize + off) as usize;
                    for (o, &v) in orow[x0..x1].iter_mut().zip(&row[s..s + (x1 - x0)]) {
                        *o += k * v;
                    }
                } else {
                    for x in x0..x1 {
                        orow[x] += k * row[x * stride + dx - pad];
                    }
                }
            }
        }
    }
}

/// Backward of [`correlate_plane`]: accumulates the input gradient into `dsrc`
/// and returns nothing for the kernel; the kernel gradient is accumulated into `dkernel`.
#[allow(clippy::too_many_arguments)]
#[inline]
fn correlate_plane_backward(
    src: &[f64],
    dsrc: Option<&mut [f64]>,
    (h, w): (usize, usize),
    kernel: &[f64],
    dkernel: &mut [f64],
    (kh, kw): (usize, usize),
    dout: &[f64],
    (oh, ow): (usize, usize),
    stride: usize,
    pad: usize,
) {
    let mut dsrc = dsrc;
    for dy in 0..kh {
        let (y0, y1) = valid_range(oh, h, dy, stride, pad);
        for dx in 0..kw {
            let k = kernel[dy * kw + dx];
            let (x0, x1) = valid_range(ow, w, dx, stride, pad);
            let mut gk = 0.0;
            if x1 == x0 {
                continue;
            }
            let n = x1 - x0;
            for y in y0..y1 {
                let iy = y * stride + dy - pad;
                let drow = &dout[y * ow + x0..y * ow + x1];
                let ix0 = x0 * stride + dx - pad;
                let row = &src[iy * w..(iy + 1) * w];
                if stride == 1 {
                    let srow = &row[ix0..ix0 + n];
                    gk += drow.iter().zip(srow).map(|(a, b)| a * b).sum::<f64>();
                    if let Some(ds) = dsrc.as_deref_mut() {
                        if k != 0.0 {
                            for (d, &g) in ds[iy * w + ix0..iy * w + ix0 + n].iter_mut().zip(drow) {
                                *d += k * g;
                            }
                        }
                    }
                } else {
                    for (m, &g) in drow.iter().enumerate() {
                        gk += g * row[ix0 + m * stride];
                    }
                    if let Some(ds) = dsrc.as_deref_mut() {
                        if k != 0.0 {
                            let drow_in = &mut ds[iy * w..(iy + 1) * w];
                            for (m, &g) in drow.iter().enumerate() {
                                drow_in[ix0 + m * stride] += k * g;
                            }
                        }
                    }
                }
            }
            dkernel[dy * kw + dx] += gk;
        }
    }
}

/// Dense 2-D convolution of a `C_in×H×W` tensor.
pub fn conv2d(input: &Tensor, weights: &ConvWeights, stride: usize, padding: usize) -> Result<Tensor> {
    let (cin, h, w) = input.chw()?;
    if weights.in_channels() != cin {
        return Err(Error::dim("in_channels", weights.in_channels(), cin));
    }
    let (kh, kw) = (weights.kh(), weights.kw());
    let oh = conv_out_extent(h, kh, stride, padding).map_err(|e| rename_axis(e, "height"))?;
    let ow = conv_out_extent(w, kw, stride, padding).map_err(|e| rename_axis(e, "width"))?;
    let cout = weights.out_channels();
    let mut out = Tensor::zeros(&[cout, oh, ow]);
    let ksz = kh * kw;
    for o in 0..cout {
        let dst = out.channel_mut(o);
        for i in 0..cin {
            let kernel = &weights.data()[(o * cin + i) * ksz..(o * cin + i + 1) * ksz];
            correlate_plane(input.channel(i), (h, w), kernel, (kh, kw), dst, (oh, ow), stride, padding);
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to input and weights.
pub fn conv2d_backward(
    input: &Tensor,
    weights: &ConvWeights,
    stride: usize,
    padding: usize,
    grad_out: &Tensor,
) -> Result<(Tensor, ConvWeights)> {
    let (cin, h, w) = input.chw()?;
    let (kh, kw) = (weights.kh(), weights.kw());
    let cout = weights.out_channels();
    let oh = conv_out_extent(h, kh, stride, padding)?;
    let ow = conv_out_extent(w, kw, stride, padding)?;
    grad_out.expect_dims("grad_out", &[cout, oh, ow])?;
    let mut dx = Tensor::zeros(&[cin, h, w]);
    let mut dw = ConvWeights::zeros(cout, cin, kh, kw);
    let ksz = kh * kw;
    for o in 0..cout {
        let dout = grad_out.channel(o);
        for i in 0..cin {
            let range = (o * cin + i) * ksz..(o * cin + i + 1) * ksz;
            let kernel = &weights.data()[range.clone()];
            correlate_plane_backward(
                input.channel(i),
                Some(dx.channel_mut(i)),
                (h, w),
                kernel,
                &mut dw.data_mut()[range],
                (kh, kw),
                dout,
                (oh, ow),
                stride,
                padding,
            );
        }
    }
    Ok((dx, dw))
}

/// Per-channel correlation with one `kh×kw` kernel per channel (`kernels` is `C×kh×kw`).
pub fn depthwise_conv2d(input: &Tensor, kernels: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let (c, h, w) = input.chw()?;
    let (kc, kh, kw) = kernels.chw()?;
    if kc != c {
        return Err(Error::dim("channels", c, kc));
    }
    let oh = conv_out_extent(h, kh, stride, padding).map_err(|e| rename_axis(e, "height"))?;
    let ow = conv_out_extent(w, kw, stride, padding).map_err(|e| rename_axis(e, "width"))?;
    let mut out = Tensor::zeros(&[c, oh, ow]);
    for ch in 0..c {
        correlate_plane(
            input.channel(ch),
            (h, w),
            kernels.channel(ch),
            (kh, kw),
            out.channel_mut(ch),
            (oh, ow),
            stride,
            padding,
        );
    }
    Ok(out)
}

/// Gradients of [`depthwise_conv2d`] with respect to input and kernels.
pub fn depthwise_conv2d_backward(
    input: &Tensor,
    kernels: &Tensor,
    stride: usize,
    padding: usize,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let (c, h, w) = input.chw()?;
    let (kc, kh, kw) = kernels.chw()?;
    if kc != c {
        return Err(Error::dim("channels", c, kc));
    }
    let oh = conv_out_extent(h, kh, stride, padding)?;
    let ow = conv_out_extent(w, kw, stride, padding)?;
    grad_out.expect_dims("grad_out", &[c, oh, ow])?;
    let mut dx = Tensor::zeros(&[c, h, w]);
    let mut dk = Tensor::zeros(&[c, kh, kw]);
    for ch in 0..c {
        correlate_plane_backward(
            input.channel(ch),
            Some(dx.channel_mut(ch)),
            (h, w),
            kernels.channel(ch),
            dk.channel_mut(ch),
            (kh, kw),
            grad_out.channel(ch),
            (oh, ow),
            stride,
            padding,
        );
    }
    Ok((dx, dk))
}

fn rename_axis(e: Error, axis: &str) -> Error {
    match e {
        Error::Dimension { expected, actual, .. } => Error::Dimension {
            axis: axis.to_string(),
            expected,
            actual,
        },
        other => other,
    }
}

/// Mean of each channel over all spatial positions: `C×H×W → C`.
pub fn global_avg_pool(input: &Tensor) -> Result<Tensor> {
    if input.ndim() < 2 {
        return Err(Error::dim("ndim", ">= 2 (C×spatial)", input.ndim()));
    }
    let c = input.dims()[0];
    let plane: usize = input.dims()[1..].iter().product();
    if plane == 0 {
        return Err(Error::dim("spatial", "non-empty", 0));
    }
    let data = (0..c)
        .map(|ch| input.channel(ch).iter().sum::<f64>() / plane as f64)
        .collect();
    Tensor::new(&[c], data)
}

/// Spreads a pooled gradient uniformly back over the spatial positions.
pub fn global_avg_pool_backward(input_dims: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    let c = input_dims[0];
    grad_out.expect_dims("grad_out", &[c])?;
    let plane: usize = input_dims[1..].iter().product();
    let mut dx = Tensor::zeros(input_dims);
    for ch in 0..c {
        let g = grad_out.data()[ch] / plane as f64;
        dx.channel_mut(ch).fill(g);
    }
    Ok(dx)
}

/// Numerically stable softmax of a slice, in place.
pub fn softmax_slice(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Vector-Jacobian product of softmax: `dz = y ⊙ (dy − ⟨y, dy⟩)`.
pub fn softmax_slice_backward(y: &[f64], dy: &[f64], dz: &mut [f64]) {
    let dot: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
    for ((z, &yi), &gi) in dz.iter_mut().zip(y).zip(dy) {
        *z = yi * (gi - dot);
    }
}

fn axis_layout(dims: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= dims.len() {
        return Err(Error::dim("axis", format!("< {}", dims.len()), axis));
    }
    let outer: usize = dims[..axis].iter().product();
    let inner: usize = dims[axis + 1..].iter().product();
    Ok((outer, dims[axis], inner))
}

/// Softmax along `axis`, computed with max subtraction.
pub fn softmax(v: &Tensor, axis: usize) -> Result<Tensor> {
    let (outer, n, inner) = axis_layout(v.dims(), axis)?;
    let mut out = v.clone();
    let mut buf = vec![0.0; n];
    let data = out.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let base = o * n * inner + i;
            for (k, b) in buf.iter_mut().enumerate() {
                *b = data[base + k * inner];
            }
            softmax_slice(&mut buf);
            for (k, b) in buf.iter().enumerate() {
                data[base + k * inner] = *b;
            }
        }
    }
    Ok(out)
}

/// Gradient of a scalar loss w.r.t. softmax logits, given the softmax output `y`.
pub fn softmax_backward(y: &Tensor, grad_out: &Tensor, axis: usize) -> Result<Tensor> {
    if y.dims() != grad_out.dims() {
        return Err(Error::dim(
            "grad_out",
            format!("{:?}", y.dims()),
            format!("{:?}", grad_out.dims()),
        ));
    }
    let (outer, n, inner) = axis_layout(y.dims(), axis)?;
    let mut dz = Tensor::zeros(y.dims());
    for o in 0..outer {
        for i in 0..inner {
            let base = o * n * inner + i;
            let dot: f64 = (0..n)
                .map(|k| y.data()[base + k * inner] * grad_out.data()[base + k * inner])
                .sum();
            for k in 0..n {
                let idx = base + k * inner;
                dz.data_mut()[idx] = y.data()[idx] * (grad_out.data()[idx] - dot);
            }
        }
    }
    Ok(dz)
}

/// `out = W·in + b` for `W: M×N`.
pub fn fully_connected(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let [m, n] = weights.dims()[..] else {
        return Err(Error::dim("weights.ndim", 2, weights.ndim()));
    };
    input.expect_dims("input", &[n])?;
    bias.expect_dims("bias", &[m])?;
    let x = input.data();
    let data = (0..m)
        .map(|r| {
            let row = &weights.data()[r * n..(r + 1) * n];
            bias.data()[r] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect();
    Tensor::new(&[m], data)
}

/// Gradients of [`fully_connected`]: `(d_input, d_weights, d_bias)`.
pub fn fully_connected_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let [m, n] = weights.dims()[..] else {
        return Err(Error::dim("weights.ndim", 2, weights.ndim()));
    };
    input.expect_dims("input", &[n])?;
    grad_out.expect_dims("grad_out", &[m])?;
    let mut dx = Tensor::zeros(&[n]);
    let mut dw = Tensor::zeros(&[m, n]);
    for r in 0..m {
        let g = grad_out.data()[r];
        let row = &weights.data()[r * n..(r + 1) * n];
        for c in 0..n {
            dx.data_mut()[c] += row[c] * g;
            dw.data_mut()[r * n + c] = g * input.data()[c];
        }
    }
    Ok((dx, dw, grad_out.clone()))
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
