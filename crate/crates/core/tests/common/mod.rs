//! Shared instance generators and finite-difference checks for the
//! integration tests and the acceptance runner.
#![allow(dead_code)]

use lowlight::awd::{self, AwdParams};
use lowlight::dsl::{self, DslConfig, PairBatch, ToyNet};
use lowlight::gradcheck::{finite_diff_grad, finite_diff_grad_at, relative_error, relative_error_at};
use lowlight::scb::{self, ScbParams, SmoothInit};
use lowlight::{ops, ConvWeights, Tensor};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const EPS: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(dims: &[usize], r: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(dims, |_| r.sample(StandardNormal))
}

/// `Σ y ⊙ probe`, whose gradient w.r.t. `y` is `probe`.
pub fn dot(y: &Tensor, probe: &Tensor) -> f64 {
    y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
}

fn worst(errs: impl IntoIterator<Item = f64>) -> f64 {
    errs.into_iter().fold(0.0, f64::max)
}

/// Max relative error over input and weight gradients of one random conv2d.
pub fn conv2d_grad_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (cin, cout) = (r.gen_range(1..=3), r.gen_range(1..=3));
    let k = r.gen_range(1..=3);
    let stride = r.gen_range(1..=2);
    let pad = r.gen_range(0..=1);
    let (h, w) = (r.gen_range(k..k + 5), r.gen_range(k..k + 5));
    let x = randn(&[cin, h, w], &mut r);
    let wt = ConvWeights::from_tensor(randn(&[cout, cin, k, k], &mut r)).unwrap();
    let y = ops::conv2d(&x, &wt, stride, pad).unwrap();
    let probe = randn(y.dims(), &mut r);
    let (dx, dw) = ops::conv2d_backward(&x, &wt, stride, pad, &probe).unwrap();
    let nx = finite_diff_grad(|t| dot(&ops::conv2d(t, &wt, stride, pad).unwrap(), &probe), &x, EPS).unwrap();
    let nw = finite_diff_grad(
        |t| {
            let wt = ConvWeights::from_tensor(t.clone()).unwrap();
            dot(&ops::conv2d(&x, &wt, stride, pad).unwrap(), &probe)
        },
        wt.as_tensor(),
        EPS,
    )
    .unwrap();
    worst([
        relative_error(dx.data(), nx.data()),
        relative_error(dw.data(), nw.data()),
    ])
}

pub fn depthwise_grad_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let c = r.gen_range(1..=4);
    let k = r.gen_range(1..=3);
    let stride = r.gen_range(1..=2);
    let pad = r.gen_range(0..=1);
    let (h, w) = (r.gen_range(k..k + 5), r.gen_range(k..k + 5));
    let x = randn(&[c, h, w], &mut r);
    let kern = randn(&[c, k, k], &mut r);
    let y = ops::depthwise_conv2d(&x, &kern, stride, pad).unwrap();
    let probe = randn(y.dims(), &mut r);
    let (dx, dk) = ops::depthwise_conv2d_backward(&x, &kern, stride, pad, &probe).unwrap();
    let nx = finite_diff_grad(|t| dot(&ops::depthwise_conv2d(t, &kern, stride, pad).unwrap(), &probe), &x, EPS).unwrap();
    let nk = finite_diff_grad(|t| dot(&ops::depthwise_conv2d(&x, t, stride, pad).unwrap(), &probe), &kern, EPS).unwrap();
    worst([
        relative_error(dx.data(), nx.data()),
        relative_error(dk.data(), nk.data()),
    ])
}

pub fn softmax_grad_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let ndim = r.gen_range(1..=3);
    let dims: Vec<usize> = (0..ndim).map(|_| r.gen_range(1..=5)).collect();
    let axis = r.gen_range(0..ndim);
    let v = randn(&dims, &mut r).scale(3.0);
    let y = ops::softmax(&v, axis).unwrap();
    let probe = randn(&dims, &mut r);
    let analytic = ops::softmax_backward(&y, &probe, axis).unwrap();
    let numeric = finite_diff_grad(|t| dot(&ops::softmax(t, axis).unwrap(), &probe), &v, EPS).unwrap();
    relative_error(analytic.data(), numeric.data())
}

/// Input and all five parameter tensors of one random AWD layer.
pub fn awd_grad_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let c = [2, 4][r.gen_range(0..2)];
    let k = r.gen_range(2..=5);
    let (h, w) = (r.gen_range(k..k + 4), r.gen_range(k..k + 4));
    let params = AwdParams::random(c, k, 2, 0.5, &mut r).unwrap();
    let x = randn(&[c, h, w], &mut r);
    let (y, _, cache) = awd::awd_forward(&x, &params).unwrap();
    let probe = randn(y.dims(), &mut r);
    let (dx, grads) = awd::awd_backward(&params, &cache, &probe).unwrap();
    let loss = |x: &Tensor, p: &AwdParams| dot(&awd::awd_forward(x, p).unwrap().0, &probe);
    let mut errs = vec![relative_error(
        dx.data(),
        finite_diff_grad(|t| loss(t, &params), &x, EPS).unwrap().data(),
    )];
    for (i, g) in grads.tensors().into_iter().enumerate() {
        let base = params.tensors()[i].clone();
        let numeric = finite_diff_grad(
            |t| {
                let mut p = params.clone();
                *p.tensors_mut()[i] = t.clone();
                loss(&x, &p)
            },
            &base,
            EPS,
        )
        .unwrap();
        errs.push(relative_error(g.data(), numeric.data()));
    }
    worst(errs)
}

fn scb_tensor_mut(p: &mut ScbParams, i: usize) -> &mut Tensor {
    match i {
        0 => p.w3.as_tensor_mut(),
        1 => p.w1.as_tensor_mut(),
        _ => &mut p.sconv_logits,
    }
}

/// Input, both convolution weights and the smooth-kernel logits of one random SCB.
pub fn scb_grad_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (c1, c2) = (r.gen_range(1..=3), r.gen_range(1..=3));
    let (h, w) = (r.gen_range(3..=6), r.gen_range(3..=6));
    let mut params = ScbParams::init(c1, c2, SmoothInit::Gaussian, &mut r);
    for v in params.sconv_logits.data_mut() {
        *v += r.gen_range(-1.0..1.0);
    }
    let x = randn(&[c1, h, w], &mut r);
    let (y, cache) = scb::scb_forward_train(&x, &params).unwrap();
    let probe = randn(y.dims(), &mut r);
    let (dx, grads) = scb::scb_backward(&params, &cache, &probe).unwrap();
    let loss = |x: &Tensor, p: &ScbParams| dot(&scb::scb_forward_train(x, p).unwrap().0, &probe);
    let mut errs = vec![relative_error(
        dx.data(),
        finite_diff_grad(|t| loss(t, &params), &x, EPS).unwrap().data(),
    )];
    let analytic = [grads.w3.as_tensor(), grads.w1.as_tensor(), &grads.sconv_logits];
    for (i, g) in analytic.into_iter().enumerate() {
        let base = scb_tensor_mut(&mut params.clone(), i).clone();
        let numeric = finite_diff_grad(
            |t| {
                let mut p = params.clone();
                *scb_tensor_mut(&mut p, i) = t.clone();
                loss(&x, &p)
            },
            &base,
            EPS,
        )
        .unwrap();
        errs.push(relative_error(g.data(), numeric.data()));
    }
    worst(errs)
}

/// A 2-sample batch of random 8×8 clean images with a noisy copy.
pub fn micro_batch(r: &mut ChaCha8Rng, size: usize) -> PairBatch {
    let clean = Tensor::from_fn(&[2, 3, size, size], |_| r.gen_range(0.0..1.0));
    let noisy = Tensor::from_fn(&[2, 3, size, size], |i| clean.data()[i] + 0.1 * r.sample::<f64, _>(StandardNormal));
    PairBatch::new(clean, noisy, vec![r.gen_range(0..4), r.gen_range(0..4)]).unwrap()
}

/// Composite loss gradient on a random 2-sample batch, checked on up to
/// `coords_per_tensor` random coordinates of every parameter tensor.
pub fn dsl_grad_error(seed: u64, coords_per_tensor: usize) -> f64 {
    let mut r = rng(seed);
    let net = ToyNet::new(4, &mut r).unwrap();
    let batch = micro_batch(&mut r, 8);
    let cfg = DslConfig {
        alpha: r.gen_range(0.5..1.5),
        beta: r.gen_range(0.01..1.0),
        ..DslConfig::default()
    };
    let (_, grads) = dsl::dsl_loss(&net, &batch, &cfg).unwrap();
    let mut errs = Vec::new();
    for (i, g) in grads.tensors().into_iter().enumerate() {
        let base = net.tensors()[i].clone();
        let n = coords_per_tensor.min(base.len());
        let coords = sample(&mut r, base.len(), n).into_vec();
        let mut f = |t: &Tensor| {
            let mut m = net.clone();
            *m.tensors_mut()[i] = t.clone();
            dsl::dsl_loss(&m, &batch, &cfg).unwrap().0.total
        };
        let numeric = finite_diff_grad_at(&mut f, &base, EPS, coords.iter().copied()).unwrap();
        errs.push(relative_error_at(g, &numeric, &coords));
    }
    worst(errs)
}

use lowlight::noise::{self, NoiseParams};

/// `rows×cols` single-channel constant image pushed through the noise model (unclipped).
pub fn noise_field(level: f64, rows: usize, cols: usize, params: &NoiseParams) -> Tensor {
    let clean = Tensor::full(&[1, rows, cols], level);
    noise::noisy_values_unclipped(&clean, params, 0).unwrap()
}

pub fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0))
}

/// Covariance between horizontally adjacent pixel pairs `(2j, 2j+1)` of the same row,
/// with its Monte-Carlo standard error from per-row averages.
pub fn same_row_covariance(field: &Tensor) -> (f64, f64) {
    let (_, rows, cols) = field.chw().unwrap();
    let (mu, _) = mean_var(field.data());
    let per_row: Vec<f64> = (0..rows)
        .map(|y| {
            let r = &field.data()[y * cols..(y + 1) * cols];
            r.chunks_exact(2).map(|p| (p[0] - mu) * (p[1] - mu)).sum::<f64>() / (cols / 2) as f64
        })
        .collect();
    let (cov, var_rows) = mean_var(&per_row);
    (cov, (var_rows / rows as f64).sqrt())
}

/// Covariance between vertically adjacent rows `(2i, 2i+1)` at the same column.
pub fn cross_row_covariance(field: &Tensor) -> (f64, f64) {
    let (_, rows, cols) = field.chw().unwrap();
    let (mu, _) = mean_var(field.data());
    let d = field.data();
    let per_pair: Vec<f64> = (0..rows / 2)
        .map(|i| {
            (0..cols)
                .map(|x| (d[2 * i * cols + x] - mu) * (d[(2 * i + 1) * cols + x] - mu))
                .sum::<f64>()
                / cols as f64
        })
        .collect();
    let (cov, var) = mean_var(&per_pair);
    (cov, (var / per_pair.len() as f64).sqrt())
}
