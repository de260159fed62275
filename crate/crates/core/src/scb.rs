//! Smooth-oriented convolutional block.
//!
//! Training runs two branches and sums them:
//!
//! ```text
//! Y = conv3x3(X, W3) + depthwise3x3(conv1x1(X, W1), softmax(logits))
//! ```
//!
//! Each output channel's smoothing kernel is a softmax over its 9 taps, so it
//! is positive and sums to one. Because both branches are linear and bias-free,
//! the block folds exactly into a single 3×3 convolution:
//!
//! ```text
//! W'[o][i][h][t] = W3[o][i][h][t] + W1[o][i] · K[o][h][t]
//! ```

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::awd::fingerprint;
use crate::error::{Error, Result};
use crate::ops::{self, softmax_slice, softmax_slice_backward};
use crate::tensor::{ConvWeights, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SmoothInit {
    /// All logits equal: the 3×3 mean filter.
    #[default]
    Mean,
    /// Logits are the log of a normalized σ = 1 Gaussian.
    Gaussian,
}

impl SmoothInit {
    pub fn logits(self) -> [f64; 9] {
        match self {
            SmoothInit::Mean => [0.0; 9],
            SmoothInit::Gaussian => {
                let k = gaussian3x3(1.0);
                k.map(f64::ln)
            }
        }
    }
}

/// Normalized 3×3 Gaussian kernel.
pub fn gaussian3x3(sigma: f64) -> [f64; 9] {
    let mut k = [0.0; 9];
    for (m, v) in k.iter_mut().enumerate() {
        let (p, q) = ((m / 3) as f64 - 1.0, (m % 3) as f64 - 1.0);
        *v = (-(p * p + q * q) / (2.0 * sigma * sigma)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScbParams {
    /// `C2×C1×3×3` main branch.
    pub w3: ConvWeights,
    /// `C2×C1×1×1` auxiliary 1×1 convolution.
    pub w1: ConvWeights,
    /// `C2×3×3` per-output-channel logits of the smoothing kernel.
    pub sconv_logits: Tensor,
    pub init_kind: SmoothInit,
}

impl ScbParams {
    /// He-scaled Gaussian weights for both convolutions; smoothing logits from `init`.
    pub fn init<R: Rng + ?Sized>(in_channels: usize, out_channels: usize, init: SmoothInit, rng: &mut R) -> Self {
        let fan3 = (2.0 / (9 * in_channels) as f64).sqrt();
        let fan1 = (2.0 / in_channels as f64).sqrt();
        let w3 = (0..out_channels * in_channels * 9)
            .map(|_| fan3 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let w1 = (0..out_channels * in_channels)
            .map(|_| fan1 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let logits = init.logits();
        Self {
            w3: ConvWeights::new(out_channels, in_channels, 3, 3, w3).expect("consistent extents"),
            w1: ConvWeights::new(out_channels, in_channels, 1, 1, w1).expect("consistent extents"),
            sconv_logits: Tensor::from_fn(&[out_channels, 3, 3], |i| logits[i % 9]),
            init_kind: init,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.w3.in_channels()
    }

    pub fn out_channels(&self) -> usize {
        self.w3.out_channels()
    }

    pub fn validate(&self) -> Result<()> {
        let (c2, c1) = (self.out_channels(), self.in_channels());
        if self.w3.kh() != 3 || self.w3.kw() != 3 {
            return Err(Error::dim("w3 kernel", "3×3", format!("{}×{}", self.w3.kh(), self.w3.kw())));
        }
        self.w1.as_tensor().expect_dims("w1", &[c2, c1, 1, 1])?;
        self.sconv_logits.expect_dims("sconv_logits", &[c2, 3, 3])
    }

    pub fn fingerprint(&self) -> u64 {
        fingerprint([self.w3.as_tensor(), self.w1.as_tensor(), &self.sconv_logits].into_iter())
    }
}

/// Per-channel softmax over the 9 taps of `C×3×3` logits.
pub fn sconv_kernel(logits: &Tensor) -> Result<Tensor> {
    let (_, kh, kw) = logits.chw()?;
    let mut k = logits.clone();
    for chunk in k.data_mut().chunks_exact_mut(kh * kw) {
        softmax_slice(chunk);
    }
    Ok(k)
}

#[derive(Debug, Clone)]
pub struct ScbCache {
    fingerprint: u64,
    input: Tensor,
    branch: Tensor,
    kernel: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScbGrads {
    pub w3: ConvWeights,
    pub w1: ConvWeights,
    pub sconv_logits: Tensor,
}

/// Training-time two-branch forward pass (stride 1, padding 1).
pub fn scb_forward_train(x: &Tensor, params: &ScbParams) -> Result<(Tensor, ScbCache)> {
    params.validate()?;
    let mut y = ops::conv2d(x, &params.w3, 1, 1)?;
    let branch = ops::conv2d(x, &params.w1, 1, 0)?;
    let kernel = sconv_kernel(&params.sconv_logits)?;
    let smooth = ops::depthwise_conv2d(&branch, &kernel, 1, 1)?;
    y.axpy(1.0, &smooth)?;
    Ok((
        y,
        ScbCache {
            fingerprint: params.fingerprint(),
            input: x.clone(),
            branch,
            kernel,
        },
    ))
}

/// Exact gradients of [`scb_forward_train`]: `(dX, grads)`.
pub fn scb_backward(params: &ScbParams, cache: &ScbCache, grad_out: &Tensor) -> Result<(Tensor, ScbGrads)> {
    if params.fingerprint() != cache.fingerprint {
        return Err(Error::Usage("stale SCB cache: parameters changed since forward".into()));
    }
    let (mut dx, dw3) = ops::conv2d_backward(&cache.input, &params.w3, 1, 1, grad_out)?;
    let (d_branch, d_kernel) = ops::depthwise_conv2d_backward(&cache.branch, &cache.kernel, 1, 1, grad_out)?;
    let (dx1, dw1) = ops::conv2d_backward(&cache.input, &params.w1, 1, 0, &d_branch)?;
    dx.axpy(1.0, &dx1)?;
    let mut d_logits = Tensor::zeros(cache.kernel.dims());
    for ((y, dy), dz) in cache
        .kernel
        .data()
        .chunks_exact(9)
        .zip(d_kernel.data().chunks_exact(9))
        .zip(d_logits.data_mut().chunks_exact_mut(9))
    {
        softmax_slice_backward(y, dy, dz);
    }
    Ok((
        dx,
        ScbGrads {
            w3: dw3,
            w1: dw1,
            sconv_logits: d_logits,
        },
    ))
}

/// Inference kernel produced by [`fold`].
#[derive(Debug, Clone, PartialEq)]
pub struct FoldedConv {
    w_folded: ConvWeights,
}

impl FoldedConv {
    pub fn weights(&self) -> &ConvWeights {
        &self.w_folded
    }
}

/// Merges both training branches into one 3×3 kernel.
pub fn fold(params: &ScbParams) -> Result<FoldedConv> {
    params.validate()?;
    let kernel = sconv_kernel(&params.sconv_logits)?;
    let (c2, c1) = (params.out_channels(), params.in_channels());
    let mut w = params.w3.clone();
    for o in 0..c2 {
        let k = kernel.channel(o);
        for i in 0..c1 {
            let scale = params.w1.data()[o * c1 + i];
            let dst = &mut w.data_mut()[(o * c1 + i) * 9..(o * c1 + i + 1) * 9];
            for (d, &kv) in dst.iter_mut().zip(k) {
                *d += scale * kv;
            }
        }
    }
    Ok(FoldedConv { w_folded: w })
}

/// Single 3×3 convolution (stride 1, padding 1) with the folded kernel.
pub fn scb_forward_infer(x: &Tensor, folded: &FoldedConv) -> Result<Tensor> {
    ops::conv2d(x, &folded.w_folded, 1, 1)
}
