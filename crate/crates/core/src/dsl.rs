//! Feature disturbance, disturbance-suppression loss and a toy paired trainer.
//!
//! The disturbance between clean and noisy inputs is the summed squared L2
//! distance between their monitored stage features. Training minimizes
//!
//! ```text
//! CE(f(x), y) + α·CE(f(x'), y) + β·Σ_i ‖f_i(x) − f_i(x')‖²
//! ```
//!
//! with gradients flowing into both the clean and the noisy path.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::awd::{self, filter_sweep, AwdCache, AwdGrads, AwdParams, Downsampler, SweepFilters};
use crate::error::{Error, Result};
use crate::isp::{IspParams, SrgbImage};
use crate::noise::{self, NoiseParams};
use crate::ops;
use crate::optim::sgd_step;
use crate::scb::{self, ScbCache, ScbGrads, ScbParams, SmoothInit};
use crate::tensor::{ConvWeights, Tensor};

/// Number of monitored feature stages in [`ToyNet`] (the two AWD outputs).
pub const NUM_STAGES: usize = 2;

/// `Σ_i ‖a_i − b_i‖²` over paired stage features.
pub fn disturbance(clean: &[Tensor], noisy: &[Tensor]) -> Result<f64> {
    if clean.len() != noisy.len() {
        return Err(Error::dim("stages", clean.len(), noisy.len()));
    }
    clean
        .iter()
        .zip(noisy)
        .enumerate()
        .map(|(i, (a, b))| {
            if a.dims() != b.dims() {
                return Err(Error::dim(
                    format!("stage {i}"),
                    format!("{:?}", a.dims()),
                    format!("{:?}", b.dims()),
                ));
            }
            Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DslConfig {
    /// Weight of the task loss on the noisy input.
    pub alpha: f64,
    /// Weight of the disturbance term.
    pub beta: f64,
    /// Monitored stages, 0-based indices into the network's stage outputs.
    pub stage_ids: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    pub seed: u64,
}

/// Per-step learning-rate multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine from the base rate down to zero over all steps.
    #[default]
    Cosine,
}

impl LrSchedule {
    pub fn factor(self, step: usize, total_steps: usize) -> f64 {
        match self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine => {
                0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total_steps.max(1) as f64).cos())
            }
        }
    }
}

impl Default for DslConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.01,
            stage_ids: vec![0, 1],
            epochs: 8,
            batch_size: 8,
            learning_rate: 0.4,
            lr_schedule: LrSchedule::default(),
            seed: 0,
        }
    }
}

impl DslConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) || !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Parameter(format!(
                "alpha and beta must be finite and >= 0, got ({}, {})",
                self.alpha, self.beta
            )));
        }
        if self.stage_ids.is_empty() {
            return Err(Error::Parameter("stage_ids must not be empty".into()));
        }
        if let Some(s) = self.stage_ids.iter().find(|&&s| s >= NUM_STAGES) {
            return Err(Error::Parameter(format!("stage id {s} out of range (network has {NUM_STAGES})")));
        }
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Parameter(format!("invalid learning rate {}", self.learning_rate)));
        }
        Ok(())
    }
}

/// `center → SCB(3→8) → ReLU → AWD → SCB(8→16) → ReLU → AWD → GAP → FC`.
///
/// `center` subtracts each input channel's spatial mean.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyNet {
    pub scb1: ScbParams,
    pub awd1: AwdParams,
    pub scb2: ScbParams,
    pub awd2: AwdParams,
    /// `classes×16`
    pub fc: Tensor,
    pub fc_bias: Tensor,
}

pub const TOY_WIDTHS: [usize; 3] = [3, 8, 16];
pub const TOY_AWD_KERNEL: usize = 3;
pub const TOY_AWD_REDUCTION: usize = 4;

impl ToyNet {
    pub fn new<R: Rng + ?Sized>(num_classes: usize, rng: &mut R) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Parameter(format!("need at least 2 classes, got {num_classes}")));
        }
        let [c0, c1, c2] = TOY_WIDTHS;
        let scb1 = ScbParams::init(c0, c1, SmoothInit::Mean, rng);
        let awd1 = AwdParams::random(c1, TOY_AWD_KERNEL, TOY_AWD_REDUCTION, 0.1, rng)?;
        let scb2 = ScbParams::init(c1, c2, SmoothInit::Mean, rng);
        let awd2 = AwdParams::random(c2, TOY_AWD_KERNEL, TOY_AWD_REDUCTION, 0.1, rng)?;
        let scale = (1.0 / c2 as f64).sqrt();
        let fc = Tensor::from_fn(&[num_classes, c2], |_| scale * rng.sample::<f64, _>(StandardNormal));
        Ok(Self {
            scb1,
            awd1,
            scb2,
            awd2,
            fc,
            fc_bias: Tensor::zeros(&[num_classes]),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.fc.dims()[0]
    }

    /// Every parameter tensor in a fixed order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v = vec![
            self.scb1.w3.as_tensor(),
            self.scb1.w1.as_tensor(),
            &self.scb1.sconv_logits,
        ];
        v.extend(self.awd1.tensors());
        v.extend([self.scb2.w3.as_tensor(), self.scb2.w1.as_tensor(), &self.scb2.sconv_logits]);
        v.extend(self.awd2.tensors());
        v.extend([&self.fc, &self.fc_bias]);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![
            self.scb1.w3.as_tensor_mut(),
            self.scb1.w1.as_tensor_mut(),
            &mut self.scb1.sconv_logits,
        ];
        v.extend(self.awd1.tensors_mut());
        v.extend([
            self.scb2.w3.as_tensor_mut(),
            self.scb2.w1.as_tensor_mut(),
            &mut self.scb2.sconv_logits,
        ]);
        v.extend(self.awd2.tensors_mut());
        v.extend([&mut self.fc, &mut self.fc_bias]);
        v
    }

    pub fn forward(&self, x: &Tensor) -> Result<NetForward> {
        let (a1, c_scb1) = scb::scb_forward_train(&center_channels(x)?, &self.scb1)?;
        let r1 = a1.map(ops::relu);
        let (f1, _, c_awd1) = awd::awd_forward(&r1, &self.awd1)?;
        let (a2, c_scb2) = scb::scb_forward_train(&f1, &self.scb2)?;
        let r2 = a2.map(ops::relu);
        let (f2, _, c_awd2) = awd::awd_forward(&r2, &self.awd2)?;
        let pooled = ops::global_avg_pool(&f2)?;
        let logits = ops::fully_connected(&pooled, &self.fc, &self.fc_bias)?;
        Ok(NetForward {
            stages: [f1, f2],
            logits,
            cache: NetCache {
                c_scb1,
                a1,
                c_awd1,
                c_scb2,
                a2,
                c_awd2,
                pooled,
            },
        })
    }

    /// Backpropagates a logit gradient plus optional gradients injected at each stage output.
    pub fn backward(
        &self,
        cache: &NetCache,
        d_logits: &Tensor,
        d_stages: &[Option<Tensor>; NUM_STAGES],
    ) -> Result<(Tensor, NetGrads)> {
        let (d_pooled, d_fc, d_fc_bias) = ops::fully_connected_backward(&cache.pooled, &self.fc, d_logits)?;
        let f2_dims = [
            self.awd2.channels(),
            cache.a2.dims()[1].div_ceil(2),
            cache.a2.dims()[2].div_ceil(2),
        ];
        let mut d_f2 = ops::global_avg_pool_backward(&f2_dims, &d_pooled)?;
        if let Some(g) = &d_stages[1] {
            d_f2.axpy(1.0, g)?;
        }
        let (d_r2, g_awd2) = awd::awd_backward(&self.awd2, &cache.c_awd2, &d_f2)?;
        let d_a2 = d_r2.zip_map(&cache.a2, |d, a| if a > 0.0 { d } else { 0.0 })?;
        let (mut d_f1, g_scb2) = scb::scb_backward(&self.scb2, &cache.c_scb2, &d_a2)?;
        if let Some(g) = &d_stages[0] {
            d_f1.axpy(1.0, g)?;
        }
        let (d_r1, g_awd1) = awd::awd_backward(&self.awd1, &cache.c_awd1, &d_f1)?;
        let d_a1 = d_r1.zip_map(&cache.a1, |d, a| if a > 0.0 { d } else { 0.0 })?;
        let (dx, g_scb1) = scb::scb_backward(&self.scb1, &cache.c_scb1, &d_a1)?;
        Ok((
            center_channels(&dx)?,
            NetGrads {
                scb1: g_scb1,
                awd1: g_awd1,
                scb2: g_scb2,
                awd2: g_awd2,
                fc: d_fc,
                fc_bias: d_fc_bias,
            },
        ))
    }
}

/// Subtracts the per-channel spatial mean; self-adjoint, so it is its own backward.
pub fn center_channels(x: &Tensor) -> Result<Tensor> {
    let (_, h, w) = x.chw()?;
    let mut out = x.clone();
    for plane in out.data_mut().chunks_mut(h * w) {
        let mean = plane.iter().sum::<f64>() / (h * w) as f64;
        plane.iter_mut().for_each(|v| *v -= mean);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct NetCache {
    c_scb1: ScbCache,
    a1: Tensor,
    c_awd1: AwdCache,
    c_scb2: ScbCache,
    a2: Tensor,
    c_awd2: AwdCache,
    pooled: Tensor,
}

#[derive(Debug, Clone)]
pub struct NetForward {
    /// Monitored stage features (the two AWD outputs).
    pub stages: [Tensor; NUM_STAGES],
    pub logits: Tensor,
    pub cache: NetCache,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetGrads {
    pub scb1: ScbGrads,
    pub awd1: AwdGrads,
    pub scb2: ScbGrads,
    pub awd2: AwdGrads,
    pub fc: Tensor,
    pub fc_bias: Tensor,
}

impl NetGrads {
    /// Same order as [`ToyNet::tensors`].
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v = vec![
            self.scb1.w3.as_tensor(),
            self.scb1.w1.as_tensor(),
            &self.scb1.sconv_logits,
        ];
        v.extend(self.awd1.tensors());
        v.extend([self.scb2.w3.as_tensor(), self.scb2.w1.as_tensor(), &self.scb2.sconv_logits]);
        v.extend(self.awd2.tensors());
        v.extend([&self.fc, &self.fc_bias]);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![
            self.scb1.w3.as_tensor_mut(),
            self.scb1.w1.as_tensor_mut(),
            &mut self.scb1.sconv_logits,
        ];
        v.extend(self.awd1.tensors_mut());
        v.extend([
            self.scb2.w3.as_tensor_mut(),
            self.scb2.w1.as_tensor_mut(),
            &mut self.scb2.sconv_logits,
        ]);
        v.extend(self.awd2.tensors_mut());
        v.extend([&mut self.fc, &mut self.fc_bias]);
        v
    }

    fn accumulate(&mut self, other: &NetGrads) -> Result<()> {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            dst.axpy(1.0, src)?;
        }
        Ok(())
    }
}

/// Paired clean/noisy samples, `B×3×H×W` each.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    pub clean: Tensor,
    pub noisy: Tensor,
    pub labels: Vec<usize>,
}

impl PairBatch {
    pub fn new(clean: Tensor, noisy: Tensor, labels: Vec<usize>) -> Result<Self> {
        if clean.ndim() != 4 {
            return Err(Error::dim("ndim", 4, clean.ndim()));
        }
        if clean.dims() != noisy.dims() {
            return Err(Error::dim(
                "noisy",
                format!("{:?}", clean.dims()),
                format!("{:?}", noisy.dims()),
            ));
        }
        if labels.len() != clean.dims()[0] {
            return Err(Error::dim("labels", clean.dims()[0], labels.len()));
        }
        Ok(Self { clean, noisy, labels })
    }

    /// Builds a batch from per-sample `C×H×W` tensors.
    pub fn from_samples(samples: Vec<(Tensor, Tensor, usize)>) -> Result<Self> {
        let Some((first, _, _)) = samples.first() else {
            return Err(Error::Data("empty batch".into()));
        };
        let dims = first.dims().to_vec();
        let mut clean = Vec::with_capacity(samples.len() * first.len());
        let mut noisy = Vec::with_capacity(samples.len() * first.len());
        let mut labels = Vec::with_capacity(samples.len());
        for (c, n, l) in &samples {
            c.expect_dims("clean sample", &dims)?;
            n.expect_dims("noisy sample", &dims)?;
            clean.extend_from_slice(c.data());
            noisy.extend_from_slice(n.data());
            labels.push(*l);
        }
        let mut full = vec![samples.len()];
        full.extend(&dims);
        Self::new(Tensor::new(&full, clean)?, Tensor::new(&full, noisy)?, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn slice(t: &Tensor, b: usize) -> Tensor {
        let dims = &t.dims()[1..];
        let n: usize = dims.iter().product();
        Tensor::new(dims, t.data()[b * n..(b + 1) * n].to_vec()).expect("consistent extents")
    }

    pub fn clean_sample(&self, b: usize) -> Tensor {
        Self::slice(&self.clean, b)
    }

    pub fn noisy_sample(&self, b: usize) -> Tensor {
        Self::slice(&self.noisy, b)
    }

    /// Sub-batch with the given sample indices.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        Self::from_samples(
            idx.iter()
                .map(|&b| (self.clean_sample(b), self.noisy_sample(b), self.labels[b]))
                .collect(),
        )
    }
}

fn cross_entropy(logits: &Tensor, label: usize) -> (f64, Tensor) {
    let mut p = logits.clone();
    ops::softmax_slice(p.data_mut());
    let loss = -p.data()[label].max(f64::MIN_POSITIVE).ln();
    p.data_mut()[label] -= 1.0;
    (loss, p)
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

/// Components of the batch-averaged loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub clean_ce: f64,
    pub noisy_ce: f64,
    pub disturbance: f64,
}

/// Batch-mean composite loss and its gradient w.r.t. every network parameter.
pub fn dsl_loss(net: &ToyNet, batch: &PairBatch, cfg: &DslConfig) -> Result<(LossBreakdown, NetGrads)> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let classes = net.num_classes();
    if let Some(l) = batch.labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Data(format!("label {l} out of range for {classes} classes")));
    }
    let inv_b = 1.0 / batch.len() as f64;
    let mut acc: Option<NetGrads> = None;
    let mut parts = LossBreakdown {
        total: 0.0,
        clean_ce: 0.0,
        noisy_ce: 0.0,
        disturbance: 0.0,
    };
    for b in 0..batch.len() {
        let label = batch.labels[b];
        let fc = net.forward(&batch.clean_sample(b))?;
        let fn_ = net.forward(&batch.noisy_sample(b))?;
        let (ce_c, d_c) = cross_entropy(&fc.logits, label);
        let (ce_n, d_n) = cross_entropy(&fn_.logits, label);

        let mut d_clean: [Option<Tensor>; NUM_STAGES] = Default::default();
        let mut d_noisy: [Option<Tensor>; NUM_STAGES] = Default::default();
        let mut dist = 0.0;
        for &s in &cfg.stage_ids {
            let diff = fc.stages[s].sub(&fn_.stages[s])?;
            dist += diff.sq_norm();
            if cfg.beta > 0.0 {
                let g = diff.scale(2.0 * cfg.beta * inv_b);
                d_noisy[s] = Some(match d_noisy[s].take() {
                    Some(prev) => prev.sub(&g)?,
                    None => g.scale(-1.0),
                });
                d_clean[s] = Some(match d_clean[s].take() {
                    Some(prev) => prev.add(&g)?,
                    None => g,
                });
            }
        }
        parts.clean_ce += ce_c * inv_b;
        parts.noisy_ce += ce_n * inv_b;
        parts.disturbance += dist * inv_b;

        let (_, gc) = net.backward(&fc.cache, &d_c.scale(inv_b), &d_clean)?;
        let (_, gn) = net.backward(&fn_.cache, &d_n.scale(cfg.alpha * inv_b), &d_noisy)?;
        match acc.as_mut() {
            None => {
                let mut g = gc;
                g.accumulate(&gn)?;
                acc = Some(g);
            }
            Some(a) => {
                a.accumulate(&gc)?;
                a.accumulate(&gn)?;
            }
        }
    }
    parts.total = parts.clean_ce + cfg.alpha * parts.noisy_ce + cfg.beta * parts.disturbance;
    Ok((parts, acc.expect("non-empty batch")))
}

/// Mean disturbance over a paired set at the given stages.
pub fn eval_disturbance(net: &ToyNet, pairs: &PairBatch, stage_ids: &[usize]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Data("empty evaluation set".into()));
    }
    if let Some(s) = stage_ids.iter().find(|&&s| s >= NUM_STAGES) {
        return Err(Error::Parameter(format!("stage id {s} out of range")));
    }
    let mut total = 0.0;
    for b in 0..pairs.len() {
        let fc = net.forward(&pairs.clean_sample(b))?;
        let fn_ = net.forward(&pairs.noisy_sample(b))?;
        let a: Vec<Tensor> = stage_ids.iter().map(|&s| fc.stages[s].clone()).collect();
        let n: Vec<Tensor> = stage_ids.iter().map(|&s| fn_.stages[s].clone()).collect();
        total += disturbance(&a, &n)?;
    }
    Ok(total / pairs.len() as f64)
}

/// Held-out evaluation of one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub clean_acc: f64,
    pub noisy_acc: f64,
    pub mean_disturbance: f64,
    pub loss: f64,
}

pub const METRICS_HEADER: [&str; 5] = ["epoch", "clean_acc", "noisy_acc", "mean_disturbance", "loss"];

/// Writes per-epoch metrics as CSV (header only when empty).
pub fn write_metrics_csv<W: Write>(w: W, metrics: &[EpochMetrics]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    wtr.write_record(METRICS_HEADER).map_err(csv_err)?;
    for m in metrics {
        wtr.write_record([
            m.epoch.to_string(),
            m.clean_acc.to_string(),
            m.noisy_acc.to_string(),
            m.mean_disturbance.to_string(),
            m.loss.to_string(),
        ])
        .map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Accuracy on clean and noisy inputs plus mean disturbance.
pub fn evaluate(net: &ToyNet, pairs: &PairBatch, stage_ids: &[usize]) -> Result<(f64, f64, f64)> {
    if pairs.is_empty() {
        return Err(Error::Data("empty evaluation set".into()));
    }
    let (mut ok_c, mut ok_n, mut dist) = (0usize, 0usize, 0.0);
    for b in 0..pairs.len() {
        let fc = net.forward(&pairs.clean_sample(b))?;
        let fn_ = net.forward(&pairs.noisy_sample(b))?;
        ok_c += usize::from(argmax(fc.logits.data()) == pairs.labels[b]);
        ok_n += usize::from(argmax(fn_.logits.data()) == pairs.labels[b]);
        for &s in stage_ids {
            dist += fc.stages[s].sub(&fn_.stages[s])?.sq_norm();
        }
    }
    let n = pairs.len() as f64;
    Ok((ok_c as f64 / n, ok_n as f64 / n, dist / n))
}

/// Trains a freshly initialized [`ToyNet`] with SGD; evaluates on `heldout` after each epoch.
pub fn train_toy(train: &PairBatch, heldout: &PairBatch, num_classes: usize, cfg: &DslConfig) -> Result<(ToyNet, Vec<EpochMetrics>)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    if heldout.is_empty() {
        return Err(Error::Data("empty held-out set".into()));
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order_rng.set_stream(1);
    let mut net = ToyNet::new(num_classes, &mut init_rng)?;
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let total_steps = cfg.epochs * train.len().div_ceil(cfg.batch_size);
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = train.select(chunk)?;
            let (loss, grads) = dsl_loss(&net, &batch, cfg)?;
            if !loss.total.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss at epoch {epoch}")));
            }
            let lr = cfg.learning_rate * cfg.lr_schedule.factor(step, total_steps);
            sgd_step(&mut net.tensors_mut(), &grads.tensors(), lr)?;
            step += 1;
            loss_sum += loss.total;
            batches += 1;
        }
        let (clean_acc, noisy_acc, mean_disturbance) = evaluate(&net, heldout, &cfg.stage_ids)?;
        metrics.push(EpochMetrics {
            epoch,
            clean_acc,
            noisy_acc,
            mean_disturbance,
            loss: loss_sum / batches as f64,
        });
    }
    Ok((net, metrics))
}

/// Synthetic colored-shapes classification data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShapesConfig {
    pub train_pairs: usize,
    pub heldout_pairs: usize,
    pub image_size: usize,
    pub seed: u64,
    /// Low-light factors sampled per image; empty uses `noise.low_light_factor`.
    pub low_light_factors: Vec<f64>,
    pub isp: IspParams,
    pub noise: NoiseParams,
}

impl Default for ShapesConfig {
    fn default() -> Self {
        Self {
            train_pairs: 800,
            heldout_pairs: 200,
            image_size: 32,
            seed: 0,
            low_light_factors: vec![10.0, 20.0, 30.0, 40.0, 50.0, 100.0],
            isp: IspParams::default(),
            noise: NoiseParams::default(),
        }
    }
}

pub const SHAPE_CLASSES: [&str; 4] = ["circle", "square", "triangle", "cross"];

/// Renders one sRGB image of shape class `label` on a textured background.
pub fn render_shape<R: Rng + ?Sized>(label: usize, size: usize, rng: &mut R) -> Result<SrgbImage> {
    if label >= SHAPE_CLASSES.len() {
        return Err(Error::Data(format!("shape label {label} out of range")));
    }
    let s = size as f64;
    let bg: [f64; 3] = [rng.gen_range(0.2..0.3), rng.gen_range(0.2..0.3), rng.gen_range(0.2..0.3)];
    let fg: [f64; 3] = [rng.gen_range(0.7..0.9), rng.gen_range(0.7..0.9), rng.gen_range(0.7..0.9)];
    let (fx, fy, phase): (f64, f64, f64) = (rng.gen_range(0.1..0.6), rng.gen_range(0.1..0.6), rng.gen_range(0.0..6.3));
    let r = rng.gen_range(0.29 * s..0.31 * s);
    let cx = rng.gen_range(r + 1.0..s - r - 1.0);
    let cy = rng.gen_range(r + 1.0..s - r - 1.0);
    let mut px = Tensor::zeros(&[3, size, size]);
    for y in 0..size {
        for x in 0..size {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            let inside = match label {
                0 => dx * dx + dy * dy <= r * r,
                1 => dx.abs() <= 0.8 * r && dy.abs() <= 0.8 * r,
                2 => dy >= -r && dy <= 0.7 * r && dx.abs() <= 0.6 * (dy + r),
                _ => {
                    let arm = 0.3 * r;
                    (dx.abs() <= arm && dy.abs() <= r) || (dy.abs() <= arm && dx.abs() <= r)
                }
            };
            let texture = 0.05 * (fx * x as f64 + fy * y as f64 + phase).sin();
            for c in 0..3 {
                let jitter = rng.gen_range(-0.03..0.03);
                let v = if inside { fg[c] } else { bg[c] + texture } + jitter;
                px.data_mut()[(c * size + y) * size + x] = v.clamp(0.0, 1.0);
            }
        }
    }
    SrgbImage::new(px, 8)
}

/// Renders and synthesizes `count` clean/noisy RAW pairs; sample `i` uses noise stream `first_id + i`.
pub fn shapes_pairs(cfg: &ShapesConfig, count: usize, first_id: u64, seed: u64) -> Result<PairBatch> {
    if count == 0 {
        return Err(Error::Data("requested an empty shapes set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(first_id);
    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let label = rng.gen_range(0..SHAPE_CLASSES.len());
        let img = render_shape(label, cfg.image_size, &mut rng)?;
        let mut noise_params = cfg.noise.clone();
        if !cfg.low_light_factors.is_empty() {
            noise_params.low_light_factor = *cfg.low_light_factors.choose(&mut rng).expect("non-empty");
        }
        let pair = noise::synthesize_lowlight_for(&img, &cfg.isp, &noise_params, first_id + i as u64)?;
        samples.push((pair.clean.into_pixels(), pair.noisy.into_pixels(), label));
    }
    PairBatch::from_samples(samples)
}

/// Training and held-out sets from one config.
pub fn shapes_dataset(cfg: &ShapesConfig) -> Result<(PairBatch, PairBatch)> {
    let train = shapes_pairs(cfg, cfg.train_pairs, 0, cfg.seed)?;
    let heldout = shapes_pairs(cfg, cfg.heldout_pairs, cfg.train_pairs as u64 + 1, cfg.seed)?;
    Ok((train, heldout))
}

/// Fixed random two-layer conv net used to compare downsamplers:
/// `f1 = down(relu(conv1(x)))`, `f2 = relu(conv2(f1))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeNet {
    pub conv1: ConvWeights,
    pub conv2: ConvWeights,
}

impl ProbeNet {
    pub fn random<R: Rng + ?Sized>(in_channels: usize, channels: usize, rng: &mut R) -> Result<Self> {
        let he = |fan_in: usize| (2.0 / fan_in as f64).sqrt();
        let mut draw = |o: usize, i: usize| {
            let std = he(9 * i);
            ConvWeights::new(o, i, 3, 3, (0..o * i * 9).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect())
        };
        Ok(Self {
            conv1: draw(channels, in_channels)?,
            conv2: draw(channels, channels)?,
        })
    }

    pub fn channels(&self) -> usize {
        self.conv1.out_channels()
    }

    pub fn stages(&self, x: &Tensor, down: &Downsampler) -> Result<[Tensor; 2]> {
        let a = ops::conv2d(x, &self.conv1, 1, 1)?.map(ops::relu);
        let f1 = down.apply(&a)?;
        let f2 = ops::conv2d(&f1, &self.conv2, 1, 1)?.map(ops::relu);
        Ok([f1, f2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DisturbanceConfig {
    pub trials: usize,
    pub channels: usize,
    pub image_size: usize,
    pub kernel_sizes: Vec<usize>,
    pub filters: SweepFilters,
    pub seed: u64,
    pub isp: IspParams,
    pub noise: NoiseParams,
}

impl Default for DisturbanceConfig {
    fn default() -> Self {
        Self {
            trials: 20,
            channels: 8,
            image_size: 32,
            kernel_sizes: vec![3],
            filters: SweepFilters::default(),
            seed: 0,
            isp: IspParams::default(),
            noise: NoiseParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceRow {
    pub trial: usize,
    pub filter: &'static str,
    pub kernel: usize,
    pub disturbance: f64,
}

/// For each trial: a fresh random [`ProbeNet`], one synthesized low-light pair,
/// and the disturbance of every swept downsampler at every kernel size.
pub fn disturbance_sweep(cfg: &DisturbanceConfig) -> Result<Vec<DisturbanceRow>> {
    if cfg.trials == 0 || cfg.channels == 0 || cfg.kernel_sizes.is_empty() {
        return Err(Error::Parameter("trials, channels and kernel_sizes must be non-empty".into()));
    }
    let mut rows = Vec::new();
    for trial in 0..cfg.trials {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(trial as u64);
        let net = ProbeNet::random(3, cfg.channels, &mut rng)?;
        let img = render_shape(trial % SHAPE_CLASSES.len(), cfg.image_size, &mut rng)?;
        let pair = noise::synthesize_lowlight_for(&img, &cfg.isp, &cfg.noise, trial as u64)?;
        for &k in &cfg.kernel_sizes {
            for down in filter_sweep(cfg.channels, k, &cfg.filters, &mut rng)? {
                let clean = net.stages(pair.clean.pixels(), &down)?;
                let noisy = net.stages(pair.noisy.pixels(), &down)?;
                rows.push(DisturbanceRow {
                    trial,
                    filter: down.name(),
                    kernel: k,
                    disturbance: disturbance(&clean, &noisy)?,
                });
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor {
        Tensor::new(&[v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn disturbance_examples() {
        let a = vec![t(&[1.0, 2.0]), t(&[0.5])];
        assert_eq!(disturbance(&a, &a).unwrap(), 0.0);
        assert_eq!(disturbance(&[t(&[1.0, 2.0])], &[t(&[1.0, 3.0])]).unwrap(), 1.0);
        let b = vec![t(&[0.0, 2.0]), t(&[2.5])];
        assert_eq!(disturbance(&a, &b).unwrap(), 5.0);
        assert_eq!(disturbance(&b, &a).unwrap(), 5.0);
        assert!(matches!(
            disturbance(&[t(&[1.0])], &[t(&[1.0, 2.0])]),
            Err(Error::Dimension { .. })
        ));
        assert!(disturbance(&a, &a[..1]).is_err());
    }

    fn tiny_batch(seed: u64, n: usize, size: usize) -> PairBatch {
        let cfg = ShapesConfig {
            image_size: size,
            ..ShapesConfig::default()
        };
        shapes_pairs(&cfg, n, 0, seed).unwrap()
    }

    #[test]
    fn identical_pairs_reduce_to_scaled_cross_entropy() {
        let b = tiny_batch(1, 3, 8);
        let same = PairBatch::new(b.clean.clone(), b.clean.clone(), b.labels.clone()).unwrap();
        let net = ToyNet::new(4, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let cfg = DslConfig {
            alpha: 0.7,
            ..DslConfig::default()
        };
        let (l, _) = dsl_loss(&net, &same, &cfg).unwrap();
        assert_eq!(l.disturbance, 0.0);
        assert!((l.total - 1.7 * l.clean_ce).abs() < 1e-12);
        assert_eq!(eval_disturbance(&net, &same, &[0, 1]).unwrap(), 0.0);
    }

    #[test]
    fn beta_zero_is_plain_paired_supervision() {
        let b = tiny_batch(2, 2, 8);
        let net = ToyNet::new(4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let cfg = DslConfig {
            beta: 0.0,
            ..DslConfig::default()
        };
        let (l, _) = dsl_loss(&net, &b, &cfg).unwrap();
        assert!((l.total - (l.clean_ce + l.noisy_ce)).abs() < 1e-12);
        assert!(l.disturbance > 0.0);
    }

    #[test]
    fn single_pair_eval_matches_disturbance() {
        let b = tiny_batch(3, 1, 8);
        let net = ToyNet::new(4, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let fc = net.forward(&b.clean_sample(0)).unwrap();
        let fn_ = net.forward(&b.noisy_sample(0)).unwrap();
        let d = disturbance(&fc.stages, &fn_.stages).unwrap();
        assert!((eval_disturbance(&net, &b, &[0, 1]).unwrap() - d).abs() < 1e-12);
    }

    #[test]
    fn label_out_of_range() {
        let mut b = tiny_batch(4, 2, 8);
        b.labels[1] = 7;
        let net = ToyNet::new(4, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert!(matches!(dsl_loss(&net, &b, &DslConfig::default()), Err(Error::Data(_))));
    }

    #[test]
    fn config_validation() {
        for cfg in [
            DslConfig { stage_ids: vec![], ..DslConfig::default() },
            DslConfig { stage_ids: vec![2], ..DslConfig::default() },
            DslConfig { beta: -1.0, ..DslConfig::default() },
            DslConfig { batch_size: 0, ..DslConfig::default() },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::Parameter(_))));
        }
        let err = serde_json::from_str::<DslConfig>(r#"{"alpha": 1, "gamma": 2}"#).unwrap_err();
        assert!(err.to_string().contains("gamma"));
    }

    #[test]
    fn zero_epochs_returns_initial_net() {
        let b = tiny_batch(5, 2, 8);
        let cfg = DslConfig {
            epochs: 0,
            seed: 9,
            ..DslConfig::default()
        };
        let (net, metrics) = train_toy(&b, &b, 4, &cfg).unwrap();
        assert!(metrics.is_empty());
        assert_eq!(net, ToyNet::new(4, &mut ChaCha8Rng::seed_from_u64(9)).unwrap());
        let mut out = Vec::new();
        write_metrics_csv(&mut out, &metrics).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "epoch,clean_acc,noisy_acc,mean_disturbance,loss\n");
    }

    #[test]
    fn empty_sets_are_data_errors() {
        let b = tiny_batch(6, 2, 8);
        let empty = PairBatch {
            clean: b.clean.clone(),
            noisy: b.noisy.clone(),
            labels: vec![],
        };
        let net = ToyNet::new(4, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(matches!(eval_disturbance(&net, &empty, &[0]), Err(Error::Data(_))));
        assert!(matches!(train_toy(&empty, &b, 4, &DslConfig::default()), Err(Error::Data(_))));
    }

    #[test]
    fn training_is_deterministic() {
        let b = tiny_batch(7, 6, 8);
        let cfg = DslConfig {
            epochs: 2,
            batch_size: 3,
            ..DslConfig::default()
        };
        let (n1, m1) = train_toy(&b, &b, 4, &cfg).unwrap();
        let (n2, m2) = train_toy(&b, &b, 4, &cfg).unwrap();
        assert_eq!(n1, n2);
        assert_eq!(m1, m2);
    }

    #[test]
    fn composite_gradient_matches_finite_differences() {
        let b = tiny_batch(8, 2, 8);
        let net = ToyNet::new(4, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let cfg = DslConfig {
            beta: 0.5,
            alpha: 0.8,
            ..DslConfig::default()
        };
        let (_, grads) = dsl_loss(&net, &b, &cfg).unwrap();
        let analytic: Vec<Tensor> = grads.tensors().into_iter().cloned().collect();
        for (k, g) in analytic.iter().enumerate() {
            let base = net.tensors()[k].clone();
            let numeric = crate::gradcheck::finite_diff_grad(
                |p| {
                    let mut n = net.clone();
                    *n.tensors_mut()[k] = p.clone();
                    dsl_loss(&n, &b, &cfg).unwrap().0.total
                },
                &base,
                1e-5,
            )
            .unwrap();
            let err = crate::gradcheck::relative_error(g.data(), numeric.data());
            assert!(err < 1e-4, "tensor {k}: {err}");
        }
    }

    #[test]
    fn shapes_render_all_classes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for label in 0..4 {
            let img = render_shape(label, 32, &mut rng).unwrap();
            assert_eq!(img.pixels().dims(), &[3, 32, 32]);
        }
        assert!(render_shape(4, 32, &mut rng).is_err());
    }
}
