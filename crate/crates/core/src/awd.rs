//! Low-pass downsampling for noisy feature maps.
//!
//! Three families share one window geometry: output extent `ceil(H / s)`,
//! `(k − 1) / 2` rows/columns of reflect padding before the window and the
//! remainder after, so tap `((k − 1) / 2, (k − 1) / 2)` of output `(i, j)` is
//! input `(i·s, j·s)`.
//!
//! - [`downsample_fixed`]: strided, mean, Gaussian and bilateral baselines.
//! - [`spatial_variant_downsample`]: one softmax kernel per location, shared
//!   across channels.
//! - [`awd_forward`] / [`awd_backward`]: the adaptive weighted downsampling
//!   layer. Per channel `c` and location `(i, j)`:
//!
//! ```text
//! V[c,i,j] = L[c] · window(X[c], i, j)          (k² logits from k² taps)
//! T[c]     = softplus(fc2 · relu(fc1 · GP(X) + b1) + b2)
//! W[c,i,j] = softmax(V[c,i,j] · T[c])
//! Y[c,i,j] = Σ_m W[c,i,j][m] · window(X[c], i, j)[m]
//! ```

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{self, softmax_slice, softmax_slice_backward};
use crate::tensor::{ConvWeights, Tensor};

pub const SUPPORTED_KERNEL_SIZES: [usize; 4] = [2, 3, 4, 5];
pub const DEFAULT_REDUCTION: usize = 4;
pub const DEFAULT_STRIDE: usize = 2;

/// Strided window placement with reflect padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    pub kernel: usize,
    pub stride: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r as usize
}

fn axis_taps(len: usize, out: usize, k: usize, s: usize) -> Vec<usize> {
    let before = (k - 1) / 2;
    let mut taps = Vec::with_capacity(out * k);
    for o in 0..out {
        for p in 0..k {
            taps.push(reflect((o * s + p) as isize - before as isize, len));
        }
    }
    taps
}

impl Window {
    pub fn new(in_h: usize, in_w: usize, kernel: usize, stride: usize) -> Result<Self> {
        if kernel == 0 || stride == 0 {
            return Err(Error::Parameter("kernel size and stride must be positive".into()));
        }
        if kernel > in_h {
            return Err(Error::dim("height", format!(">= kernel size {kernel}"), in_h));
        }
        if kernel > in_w {
            return Err(Error::dim("width", format!(">= kernel size {kernel}"), in_w));
        }
        let out_h = in_h.div_ceil(stride);
        let out_w = in_w.div_ceil(stride);
        Ok(Self {
            kernel,
            stride,
            in_h,
            in_w,
            out_h,
            out_w,
            rows: axis_taps(in_h, out_h, kernel, stride),
            cols: axis_taps(in_w, out_w, kernel, stride),
        })
    }

    pub fn taps(&self) -> usize {
        self.kernel * self.kernel
    }

    /// Input row of tap `p` for output row `i`.
    #[inline]
    pub fn row(&self, i: usize, p: usize) -> usize {
        self.rows[i * self.kernel + p]
    }

    #[inline]
    pub fn col(&self, j: usize, q: usize) -> usize {
        self.cols[j * self.kernel + q]
    }

    /// Flat plane indices of the `k²` taps of output `(i, j)`, row-major over `(p, q)`.
    #[inline]
    pub fn gather_indices(&self, i: usize, j: usize, idx: &mut [usize]) {
        let k = self.kernel;
        for p in 0..k {
            let r = self.row(i, p) * self.in_w;
            for q in 0..k {
                idx[p * k + q] = r + self.col(j, q);
            }
        }
    }

    /// Tap index of the sample at `(i·s, j·s)`.
    pub fn anchor_tap(&self) -> usize {
        let a = (self.kernel - 1) / 2;
        a * self.kernel + a
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FixedFilter {
    /// Nearest-neighbour subsampling `X[::s, ::s]`.
    Strided,
    Mean,
    Gaussian { sigma: f64 },
    /// Range differences are normalized by the window's value range.
    Bilateral { sigma_s: f64, sigma_r: f64 },
}

impl FixedFilter {
    pub fn name(&self) -> &'static str {
        match self {
            FixedFilter::Strided => "strided",
            FixedFilter::Mean => "mean",
            FixedFilter::Gaussian { .. } => "gaussian",
            FixedFilter::Bilateral { .. } => "bilateral",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedFilterKind {
    pub filter: FixedFilter,
    pub kernel_size: usize,
    pub stride: usize,
}

impl FixedFilterKind {
    pub fn new(filter: FixedFilter, kernel_size: usize) -> Self {
        Self {
            filter,
            kernel_size,
            stride: DEFAULT_STRIDE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_size < 2 {
            return Err(Error::Parameter(format!("kernel size must be >= 2, got {}", self.kernel_size)));
        }
        if self.stride == 0 {
            return Err(Error::Parameter("stride must be positive".into()));
        }
        match self.filter {
            FixedFilter::Gaussian { sigma } if !(sigma > 0.0 && sigma.is_finite()) => {
                Err(Error::Parameter(format!("gaussian sigma must be positive, got {sigma}")))
            }
            FixedFilter::Bilateral { sigma_s, sigma_r }
                if !(sigma_s > 0.0 && sigma_r > 0.0 && sigma_s.is_finite() && sigma_r.is_finite()) =>
            {
                Err(Error::Parameter(format!(
                    "bilateral sigmas must be positive, got ({sigma_s}, {sigma_r})"
                )))
            }
            _ => Ok(()),
        }
    }
}

fn spatial_gaussian(k: usize, sigma: f64) -> Vec<f64> {
    let c = (k as f64 - 1.0) / 2.0;
    let mut w: Vec<f64> = (0..k * k)
        .map(|m| {
            let (p, q) = ((m / k) as f64 - c, (m % k) as f64 - c);
            (-(p * p + q * q) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Downsamples with a fixed low-pass kernel.
pub fn downsample_fixed(x: &Tensor, kind: &FixedFilterKind) -> Result<Tensor> {
    kind.validate()?;
    let (c, h, w) = x.chw()?;
    let win = Window::new(h, w, kind.kernel_size, kind.stride)?;
    let (oh, ow) = (win.out_h, win.out_w);
    let mut out = Tensor::zeros(&[c, oh, ow]);
    if let FixedFilter::Strided = kind.filter {
        for ch in 0..c {
            let src = x.channel(ch);
            let dst = out.channel_mut(ch);
            for i in 0..oh {
                for j in 0..ow {
                    dst[i * ow + j] = src[i * kind.stride * w + j * kind.stride];
                }
            }
        }
        return Ok(out);
    }
    let taps = win.taps();
    let fixed = match kind.filter {
        FixedFilter::Mean => vec![1.0 / taps as f64; taps],
        FixedFilter::Gaussian { sigma } => spatial_gaussian(kind.kernel_size, sigma),
        FixedFilter::Bilateral { sigma_s, .. } => spatial_gaussian(kind.kernel_size, sigma_s),
        FixedFilter::Strided => unreachable!(),
    };
    let anchor = win.anchor_tap();
    let mut idx = vec![0usize; taps];
    let mut weights = vec![0.0; taps];
    for ch in 0..c {
        let src = x.channel(ch);
        let dst = out.channel_mut(ch);
        for i in 0..oh {
            for j in 0..ow {
                win.gather_indices(i, j, &mut idx);
                let kernel: &[f64] = match kind.filter {
                    FixedFilter::Bilateral { sigma_r, .. } => {
                        let center = src[idx[anchor]];
                        let (lo, hi) = idx
                            .iter()
                            .map(|&n| src[n])
                            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
                        let range = hi - lo;
                        let mut sum = 0.0;
                        for m in 0..taps {
                            let d = if range > 0.0 { (src[idx[m]] - center) / range } else { 0.0 };
                            weights[m] = fixed[m] * (-(d * d) / (2.0 * sigma_r * sigma_r)).exp();
                            sum += weights[m];
                        }
                        weights.iter_mut().for_each(|v| *v /= sum);
                        &weights
                    }
                    _ => &fixed,
                };
                dst[i * ow + j] = idx.iter().zip(kernel).map(|(&n, &kw)| kw * src[n]).sum();
            }
        }
    }
    Ok(out)
}

/// Local logit generator for the spatial-variant filter: a `k²×C×k×k`
/// convolution over the reflect-padded window plus a per-tap bias.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialLogitGenerator {
    pub weights: ConvWeights,
    pub bias: Tensor,
}

impl SpatialLogitGenerator {
    pub fn zeros(channels: usize, kernel_size: usize) -> Self {
        let taps = kernel_size * kernel_size;
        Self {
            weights: ConvWeights::zeros(taps, channels, kernel_size, kernel_size),
            bias: Tensor::zeros(&[taps]),
        }
    }

    pub fn random<R: Rng + ?Sized>(channels: usize, kernel_size: usize, scale: f64, rng: &mut R) -> Self {
        let mut g = Self::zeros(channels, kernel_size);
        for v in g.weights.data_mut() {
            *v = scale * rng.sample::<f64, _>(StandardNormal);
        }
        g
    }

    pub fn kernel_size(&self) -> usize {
        self.weights.kh()
    }
}

/// Downsamples with one softmax-normalized kernel per location, shared across channels.
/// Returns the output and the `H'×W'×k²` kernels.
pub fn spatial_variant_downsample(x: &Tensor, gen: &SpatialLogitGenerator) -> Result<(Tensor, Tensor)> {
    let (c, h, w) = x.chw()?;
    let k = gen.weights.kh();
    if gen.weights.kw() != k {
        return Err(Error::Parameter("logit generator kernel must be square".into()));
    }
    let taps = k * k;
    if gen.weights.out_channels() != taps {
        return Err(Error::Parameter(format!(
            "logit generator emits {} maps, expected k² = {taps}",
            gen.weights.out_channels()
        )));
    }
    if gen.weights.in_channels() != c {
        return Err(Error::dim("channels", c, gen.weights.in_channels()));
    }
    gen.bias.expect_dims("bias", &[taps])?;
    let win = Window::new(h, w, k, DEFAULT_STRIDE)?;
    let (oh, ow) = (win.out_h, win.out_w);
    let mut out = Tensor::zeros(&[c, oh, ow]);
    let mut kernels = Tensor::zeros(&[oh, ow, taps]);
    let mut idx = vec![0usize; taps];
    for i in 0..oh {
        for j in 0..ow {
            win.gather_indices(i, j, &mut idx);
            let base = (i * ow + j) * taps;
            let logits = &mut kernels.data_mut()[base..base + taps];
            logits.copy_from_slice(gen.bias.data());
            for (m, l) in logits.iter_mut().enumerate() {
                for ch in 0..c {
                    let src = x.channel(ch);
                    let wk = &gen.weights.data()[(m * c + ch) * taps..(m * c + ch + 1) * taps];
                    *l += wk.iter().zip(&idx).map(|(a, &n)| a * src[n]).sum::<f64>();
                }
            }
            softmax_slice(logits);
            for ch in 0..c {
                let src = x.channel(ch);
                let v: f64 = logits.iter().zip(&idx).map(|(a, &n)| a * src[n]).sum();
                out.data_mut()[(ch * oh + i) * ow + j] = v;
            }
        }
    }
    Ok((out, kernels))
}

/// Learnable parameters of the adaptive weighted downsampling layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AwdParams {
    pub kernel_size: usize,
    pub stride: usize,
    pub reduction: usize,
    /// `C×k²×k×k`: for channel `c`, row `m` maps the `k²` window taps to logit `m`.
    pub local_logits: Tensor,
    /// `(C/r)×C`
    pub temp_fc1: Tensor,
    pub temp_fc1_bias: Tensor,
    /// `C×(C/r)`
    pub temp_fc2: Tensor,
    pub temp_fc2_bias: Tensor,
}

/// `softplus⁻¹(1)`: temperature bias giving `T = 1` when the MLP input is zero.
pub const UNIT_TEMPERATURE_BIAS: f64 = 0.541_324_854_612_918_1;

impl AwdParams {
    /// Zero local logits (mean filter at every location), unit temperature.
    pub fn mean_init(channels: usize, kernel_size: usize, reduction: usize) -> Result<Self> {
        if !SUPPORTED_KERNEL_SIZES.contains(&kernel_size) {
            return Err(Error::Parameter(format!(
                "kernel size {kernel_size} not in {SUPPORTED_KERNEL_SIZES:?}"
            )));
        }
        if reduction == 0 || !channels.is_multiple_of(reduction) {
            return Err(Error::Parameter(format!(
                "reduction ratio {reduction} must divide channel count {channels}"
            )));
        }
        let taps = kernel_size * kernel_size;
        let hidden = channels / reduction;
        Ok(Self {
            kernel_size,
            stride: DEFAULT_STRIDE,
            reduction,
            local_logits: Tensor::zeros(&[channels, taps, kernel_size, kernel_size]),
            temp_fc1: Tensor::zeros(&[hidden, channels]),
            temp_fc1_bias: Tensor::zeros(&[hidden]),
            temp_fc2: Tensor::zeros(&[channels, hidden]),
            temp_fc2_bias: Tensor::full(&[channels], UNIT_TEMPERATURE_BIAS),
        })
    }

    /// Gaussian-initialized weights with standard deviation `scale`.
    pub fn random<R: Rng + ?Sized>(
        channels: usize,
        kernel_size: usize,
        reduction: usize,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut p = Self::mean_init(channels, kernel_size, reduction)?;
        for t in [&mut p.local_logits, &mut p.temp_fc1, &mut p.temp_fc2] {
            for v in t.data_mut() {
                *v = scale * rng.sample::<f64, _>(StandardNormal);
            }
        }
        Ok(p)
    }

    pub fn channels(&self) -> usize {
        self.local_logits.dims()[0]
    }

    pub fn taps(&self) -> usize {
        self.kernel_size * self.kernel_size
    }

    pub fn tensors(&self) -> [&Tensor; 5] {
        [
            &self.local_logits,
            &self.temp_fc1,
            &self.temp_fc1_bias,
            &self.temp_fc2,
            &self.temp_fc2_bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 5] {
        [
            &mut self.local_logits,
            &mut self.temp_fc1,
            &mut self.temp_fc1_bias,
            &mut self.temp_fc2,
            &mut self.temp_fc2_bias,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        let k = self.kernel_size;
        if !SUPPORTED_KERNEL_SIZES.contains(&k) {
            return Err(Error::Parameter(format!("kernel size {k} not in {SUPPORTED_KERNEL_SIZES:?}")));
        }
        if self.reduction == 0 || !c.is_multiple_of(self.reduction) {
            return Err(Error::Parameter(format!(
                "reduction ratio {} must divide channel count {c}",
                self.reduction
            )));
        }
        let hidden = c / self.reduction;
        self.local_logits.expect_dims("local_logits", &[c, k * k, k, k])?;
        self.temp_fc1.expect_dims("temp_fc1", &[hidden, c])?;
        self.temp_fc1_bias.expect_dims("temp_fc1_bias", &[hidden])?;
        self.temp_fc2.expect_dims("temp_fc2", &[c, hidden])?;
        self.temp_fc2_bias.expect_dims("temp_fc2_bias", &[c])?;
        Ok(())
    }

    /// Hash of every parameter bit; ties caches to the parameters that built them.
    pub fn fingerprint(&self) -> u64 {
        fingerprint(self.tensors().into_iter())
    }
}

pub(crate) fn fingerprint<'a>(tensors: impl Iterator<Item = &'a Tensor>) -> u64 {
    let mut h = DefaultHasher::new();
    for t in tensors {
        t.dims().hash(&mut h);
        for v in t.data() {
            v.to_bits().hash(&mut h);
        }
    }
    h.finish()
}

/// Per-location, per-channel filter weights, `C×H'×W'×k²`.
#[derive(Debug, Clone, PartialEq)]
pub struct AwdWeights {
    pub weights: Tensor,
}

impl AwdWeights {
    pub fn taps(&self) -> usize {
        self.weights.dims()[3]
    }

    /// Largest deviation of any kernel from summing to 1, and the smallest weight.
    pub fn normalization_report(&self) -> (f64, f64) {
        let taps = self.taps();
        let mut worst = 0.0f64;
        let mut min = f64::INFINITY;
        for k in self.weights.data().chunks_exact(taps) {
            worst = worst.max((k.iter().sum::<f64>() - 1.0).abs());
            min = k.iter().copied().fold(min, f64::min);
        }
        (worst, min)
    }
}

/// `softmax(V · T_c)` for logits laid out `C×H'×W'×k²`.
pub fn temperature_softmax(logits: &Tensor, temperature: &[f64]) -> Result<AwdWeights> {
    if logits.ndim() != 4 {
        return Err(Error::dim("ndim", 4, logits.ndim()));
    }
    let c = logits.dims()[0];
    if temperature.len() != c {
        return Err(Error::dim("temperature", c, temperature.len()));
    }
    let taps = logits.dims()[3];
    let per_channel = logits.len() / c;
    let mut w = logits.clone();
    for (ch, chunk) in w.data_mut().chunks_exact_mut(per_channel).enumerate() {
        for kernel in chunk.chunks_exact_mut(taps) {
            kernel.iter_mut().for_each(|v| *v *= temperature[ch]);
            softmax_slice(kernel);
        }
    }
    Ok(AwdWeights { weights: w })
}

/// Intermediates of one [`awd_forward`] call.
#[derive(Debug, Clone)]
pub struct AwdCache {
    fingerprint: u64,
    window: Window,
    input: Tensor,
    /// Local logits `V`, `C×H'×W'×k²`.
    logits: Tensor,
    weights: Tensor,
    pooled: Tensor,
    hidden_pre: Tensor,
    hidden: Tensor,
    temp_pre: Tensor,
    temperature: Vec<f64>,
}

impl AwdCache {
    pub fn temperature(&self) -> &[f64] {
        &self.temperature
    }

    pub fn logits(&self) -> &Tensor {
        &self.logits
    }
}

/// Gradients with the same layout as [`AwdParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct AwdGrads {
    pub local_logits: Tensor,
    pub temp_fc1: Tensor,
    pub temp_fc1_bias: Tensor,
    pub temp_fc2: Tensor,
    pub temp_fc2_bias: Tensor,
}

impl AwdGrads {
    pub fn tensors(&self) -> [&Tensor; 5] {
        [
            &self.local_logits,
            &self.temp_fc1,
            &self.temp_fc1_bias,
            &self.temp_fc2,
            &self.temp_fc2_bias,
        ]
    }
    pub fn tensors_mut(&mut self) -> [&mut Tensor; 5] {
        [
            &mut self.local_logits,
            &mut self.temp_fc1,
            &mut self.temp_fc1_bias,
            &mut self.temp_fc2,
            &mut self.temp_fc2_bias,
        ]
    }
}

/// Temperature branch: `T = softplus(fc2 · relu(fc1 · g + b1) + b2)`.
fn temperature_mlp(params: &AwdParams, pooled: &Tensor) -> Result<(Tensor, Tensor, Tensor, Vec<f64>)> {
    let hidden_pre = ops::fully_connected(pooled, &params.temp_fc1, &params.temp_fc1_bias)?;
    let hidden = hidden_pre.map(ops::relu);
    let temp_pre = ops::fully_connected(&hidden, &params.temp_fc2, &params.temp_fc2_bias)?;
    let temperature = temp_pre.data().iter().map(|&v| ops::softplus(v)).collect();
    Ok((hidden_pre, hidden, temp_pre, temperature))
}

/// Adaptive weighted downsampling forward pass.
pub fn awd_forward(x: &Tensor, params: &AwdParams) -> Result<(Tensor, AwdWeights, AwdCache)> {
    params.validate()?;
    let (c, h, w) = x.chw()?;
    if c != params.channels() {
        return Err(Error::dim("channels", params.channels(), c));
    }
    let k = params.kernel_size;
    let taps = k * k;
    let win = Window::new(h, w, k, params.stride)?;
    let (oh, ow) = (win.out_h, win.out_w);

    let pooled = ops::global_avg_pool(x)?;
    let (hidden_pre, hidden, temp_pre, temperature) = temperature_mlp(params, &pooled)?;

    let mut logits = Tensor::zeros(&[c, oh, ow, taps]);
    let mut weights = Tensor::zeros(&[c, oh, ow, taps]);
    let mut y = Tensor::zeros(&[c, oh, ow]);
    let mut idx = vec![0usize; taps];
    let mut xs = vec![0.0; taps];
    let mut lt = vec![0.0; taps * taps];
    let plane_out = oh * ow * taps;
    let (ld, wd, yd) = (logits.data_mut(), weights.data_mut(), y.data_mut());
    for ch in 0..c {
        let src = x.channel(ch);
        let l = &params.local_logits.data()[ch * taps * taps..(ch + 1) * taps * taps];
        for m in 0..taps {
            for n in 0..taps {
                lt[n * taps + m] = l[m * taps + n];
            }
        }
        let t = temperature[ch];
        let lplane = &mut ld[ch * plane_out..(ch + 1) * plane_out];
        let wplane = &mut wd[ch * plane_out..(ch + 1) * plane_out];
        let yplane = &mut yd[ch * oh * ow..(ch + 1) * oh * ow];
        for (pos, ((v, wk), yv)) in lplane
            .chunks_exact_mut(taps)
            .zip(wplane.chunks_exact_mut(taps))
            .zip(yplane.iter_mut())
            .enumerate()
        {
            win.gather_indices(pos / ow, pos % ow, &mut idx);
            for (xv, &n) in xs.iter_mut().zip(&idx) {
                *xv = src[n];
            }
            for (col, &xn) in lt.chunks_exact(taps).zip(&xs) {
                for (vm, &a) in v.iter_mut().zip(col) {
                    *vm += a * xn;
                }
            }
            for (a, &b) in wk.iter_mut().zip(v.iter()) {
                *a = b * t;
            }
            softmax_slice(wk);
            *yv = wk.iter().zip(&xs).map(|(a, b)| a * b).sum();
        }
    }
    let out_weights = AwdWeights {
        weights: weights.clone(),
    };
    let cache = AwdCache {
        fingerprint: params.fingerprint(),
        window: win,
        input: x.clone(),
        logits,
        weights,
        pooled,
        hidden_pre,
        hidden,
        temp_pre,
        temperature,
    };
    Ok((y, out_weights, cache))
}

/// Exact gradients of [`awd_forward`] w.r.t. the input and all parameters.
///
/// Fails with a usage error if `params` changed since `cache` was produced.
pub fn awd_backward(params: &AwdParams, cache: &AwdCache, grad_out: &Tensor) -> Result<(Tensor, AwdGrads)> {
    if params.fingerprint() != cache.fingerprint {
        return Err(Error::Usage("stale AWD cache: parameters changed since forward".into()));
    }
    let win = &cache.window;
    let (c, h, w) = cache.input.chw()?;
    let (oh, ow) = (win.out_h, win.out_w);
    grad_out.expect_dims("grad_out", &[c, oh, ow])?;
    let taps = win.taps();
    let plane_out = oh * ow * taps;

    let mut dx = Tensor::zeros(&[c, h, w]);
    let mut d_local = Tensor::zeros(params.local_logits.dims());
    let mut d_temp = vec![0.0; c];
    let mut idx = vec![0usize; taps];
    let mut xs = vec![0.0; taps];
    let mut dxs = vec![0.0; taps];
    let mut dw = vec![0.0; taps];
    let mut dz = vec![0.0; taps];
    for ch in 0..c {
        let src = cache.input.channel(ch);
        let l = &params.local_logits.data()[ch * taps * taps..(ch + 1) * taps * taps];
        let dl = &mut d_local.data_mut()[ch * taps * taps..(ch + 1) * taps * taps];
        let dst = &mut dx.data_mut()[ch * h * w..(ch + 1) * h * w];
        let t = cache.temperature[ch];
        for i in 0..oh {
            for j in 0..ow {
                let g = grad_out.data()[(ch * oh + i) * ow + j];
                if g == 0.0 {
                    continue;
                }
                win.gather_indices(i, j, &mut idx);
                for (v, &n) in xs.iter_mut().zip(&idx) {
                    *v = src[n];
                }
                let base = ch * plane_out + (i * ow + j) * taps;
                let wk = &cache.weights.data()[base..base + taps];
                let v = &cache.logits.data()[base..base + taps];
                for m in 0..taps {
                    dw[m] = g * xs[m];
                    dxs[m] = g * wk[m];
                }
                softmax_slice_backward(wk, &dw, &mut dz);
                d_temp[ch] += dz.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
                for m in 0..taps {
                    let dv = dz[m] * t;
                    if dv == 0.0 {
                        continue;
                    }
                    let row = &l[m * taps..(m + 1) * taps];
                    let drow = &mut dl[m * taps..(m + 1) * taps];
                    for n in 0..taps {
                        drow[n] += dv * xs[n];
                        dxs[n] += dv * row[n];
                    }
                }
                for (&n, &d) in idx.iter().zip(&dxs) {
                    dst[n] += d;
                }
            }
        }
    }

    // temperature MLP
    let d_temp_pre = Tensor::new(
        &[c],
        d_temp
            .iter()
            .zip(cache.temp_pre.data())
            .map(|(d, &a)| d * ops::sigmoid(a))
            .collect(),
    )?;
    let (d_hidden, d_fc2, d_fc2_bias) = ops::fully_connected_backward(&cache.hidden, &params.temp_fc2, &d_temp_pre)?;
    let d_hidden_pre = d_hidden.zip_map(&cache.hidden_pre, |d, a| if a > 0.0 { d } else { 0.0 })?;
    let (d_pooled, d_fc1, d_fc1_bias) = ops::fully_connected_backward(&cache.pooled, &params.temp_fc1, &d_hidden_pre)?;
    let d_from_pool = ops::global_avg_pool_backward(&[c, h, w], &d_pooled)?;
    dx.axpy(1.0, &d_from_pool)?;

    Ok((
        dx,
        AwdGrads {
            local_logits: d_local,
            temp_fc1: d_fc1,
            temp_fc1_bias: d_fc1_bias,
            temp_fc2: d_fc2,
            temp_fc2_bias: d_fc2_bias,
        },
    ))
}

/// Any of the downsampling operators compared in the filter sweep.
#[derive(Debug, Clone, PartialEq)]
pub enum Downsampler {
    Fixed(FixedFilterKind),
    SpatialVariant(SpatialLogitGenerator),
    Awd(AwdParams),
}

impl Downsampler {
    pub fn name(&self) -> &'static str {
        match self {
            Downsampler::Fixed(kind) => kind.filter.name(),
            Downsampler::SpatialVariant(_) => "spatial_variant",
            Downsampler::Awd(_) => "awd",
        }
    }

    pub fn kernel_size(&self) -> usize {
        match self {
            Downsampler::Fixed(kind) => kind.kernel_size,
            Downsampler::SpatialVariant(gen) => gen.kernel_size(),
            Downsampler::Awd(p) => p.kernel_size,
        }
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Downsampler::Fixed(kind) => downsample_fixed(x, kind),
            Downsampler::SpatialVariant(gen) => Ok(spatial_variant_downsample(x, gen)?.0),
            Downsampler::Awd(p) => Ok(awd_forward(x, p)?.0),
        }
    }
}

/// Settings for the fixed filters in [`filter_sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepFilters {
    pub gaussian_sigma: f64,
    pub bilateral_sigma_s: f64,
    pub bilateral_sigma_r: f64,
    /// Standard deviation of the random spatial-variant and AWD parameters.
    pub learned_init_scale: f64,
}

impl Default for SweepFilters {
    fn default() -> Self {
        Self {
            gaussian_sigma: 1.0,
            bilateral_sigma_s: 1.0,
            bilateral_sigma_r: 0.5,
            learned_init_scale: 0.1,
        }
    }
}

/// Largest reduction ratio `≤ DEFAULT_REDUCTION` dividing `channels`.
pub fn fitting_reduction(channels: usize) -> usize {
    (1..=DEFAULT_REDUCTION).rev().find(|r| channels.is_multiple_of(*r)).unwrap_or(1)
}

/// The compared operators at one kernel size: strided, gaussian, bilateral,
/// mean, spatial-variant and AWD (the last two randomly initialized from `rng`).
pub fn filter_sweep<R: Rng + ?Sized>(
    channels: usize,
    kernel_size: usize,
    cfg: &SweepFilters,
    rng: &mut R,
) -> Result<Vec<Downsampler>> {
    let fixed = |filter| Downsampler::Fixed(FixedFilterKind::new(filter, kernel_size));
    Ok(vec![
        fixed(FixedFilter::Strided),
        fixed(FixedFilter::Gaussian {
            sigma: cfg.gaussian_sigma,
        }),
        fixed(FixedFilter::Bilateral {
            sigma_s: cfg.bilateral_sigma_s,
            sigma_r: cfg.bilateral_sigma_r,
        }),
        fixed(FixedFilter::Mean),
        Downsampler::SpatialVariant(SpatialLogitGenerator::random(
            channels,
            kernel_size,
            cfg.learned_init_scale,
            rng,
        )),
        Downsampler::Awd(AwdParams::random(
            channels,
            kernel_size,
            fitting_reduction(channels),
            cfg.learned_init_scale,
            rng,
        )?),
    ])
}

/// Per output location, the standard deviation of the `k²` weights averaged over channels.
pub fn weight_std_map(weights: &AwdWeights) -> Tensor {
    let d = weights.weights.dims();
    let (c, oh, ow, taps) = (d[0], d[1], d[2], d[3]);
    let mut map = Tensor::zeros(&[oh, ow]);
    for ch in 0..c {
        for loc in 0..oh * ow {
            let base = (ch * oh * ow + loc) * taps;
            let k = &weights.weights.data()[base..base + taps];
            let mean = k.iter().sum::<f64>() / taps as f64;
            let var = k.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / taps as f64;
            map.data_mut()[loc] += var.sqrt() / c as f64;
        }
    }
    map
}

/// Standard deviation of a one-hot kernel with `taps` entries: the largest
/// value [`weight_std_map`] can take.
pub fn one_hot_std(taps: usize) -> f64 {
    let n = taps as f64;
    (((1.0 - 1.0 / n).powi(2) + (n - 1.0) / (n * n)) / n).sqrt()
}
