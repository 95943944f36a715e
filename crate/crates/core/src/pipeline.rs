//! The toy segmentation network and its metric head.
//!
//! ```text
//! image [1,H,W] --conv1(3x3)+ReLU--> latent z [C,H,W]      (encoder f)
//!       z       --conv2(3x3)+ReLU--> hidden  [C,H,W]
//!       hidden  --conv3(1x1)-------> logits  [1,H,W]       (decoder g)
//!       logits  --sigmoid--> probs --area--> scalar        (metric h)
//! ```
//!
//! The reverse pass is written out by hand for this fixed architecture and
//! checked against finite differences in the tests.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibrate::Response;
use crate::error::{Error, Result};
use crate::numerics::conv::{conv_backward_input, conv_backward_params, conv_forward_raw, ConvGeometry};
use crate::numerics::{sigmoid, Tensor};
use crate::synthtask::Sample;

const K: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineParams {
    pub channels: usize,
    /// `[C, 1, 3, 3]`
    pub conv1_w: Tensor,
    pub conv1_b: Vec<f64>,
    /// `[C, C, 3, 3]`
    pub conv2_w: Tensor,
    pub conv2_b: Vec<f64>,
    /// `[1, C, 1, 1]`
    pub conv3_w: Tensor,
    pub conv3_b: f64,
}

impl PipelineParams {
    pub fn zeros(channels: usize) -> Self {
        Self {
            channels,
            conv1_w: Tensor::zeros(&[channels, 1, K, K]),
            conv1_b: vec![0.0; channels],
            conv2_w: Tensor::zeros(&[channels, channels, K, K]),
            conv2_b: vec![0.0; channels],
            conv3_w: Tensor::zeros(&[1, channels, 1, 1]),
            conv3_b: 0.0,
        }
    }

    /// He-normal weights, zero biases.
    pub fn init(channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut he = |shape: &[usize], fan_in: usize| {
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            Tensor::from_fn(shape, |_| normal.sample(&mut rng))
        };
        let conv1_w = he(&[channels, 1, K, K], K * K);
        let conv2_w = he(&[channels, channels, K, K], channels * K * K);
        let conv3_w = he(&[1, channels, 1, 1], channels);
        Self {
            channels,
            conv1_w,
            conv1_b: vec![0.0; channels],
            conv2_w,
            conv2_b: vec![0.0; channels],
            conv3_w,
            conv3_b: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data().iter().all(|v| v.is_finite()))
    }

    /// Parameters in a fixed order: conv1 w/b, conv2 w/b, conv3 w/b.
    pub fn tensors(&self) -> Vec<Tensor> {
        let c = self.channels;
        vec![
            self.conv1_w.clone(),
            Tensor::new(vec![c], self.conv1_b.clone()).expect("len c"),
            self.conv2_w.clone(),
            Tensor::new(vec![c], self.conv2_b.clone()).expect("len c"),
            self.conv3_w.clone(),
            Tensor::new(vec![1], vec![self.conv3_b]).expect("len 1"),
        ]
    }

    pub fn from_tensors(ts: &[Tensor]) -> Result<Self> {
        if ts.len() != 6 {
            return Err(Error::InvalidArgument(format!(
                "expected 6 parameter tensors, got {}",
                ts.len()
            )));
        }
        let c = ts[0].shape()[0];
        ts[0].ensure_shape(&[c, 1, K, K])?;
        ts[1].ensure_shape(&[c])?;
        ts[2].ensure_shape(&[c, c, K, K])?;
        ts[3].ensure_shape(&[c])?;
        ts[4].ensure_shape(&[1, c, 1, 1])?;
        ts[5].ensure_shape(&[1])?;
        let p = Self {
            channels: c,
            conv1_w: ts[0].clone(),
            conv1_b: ts[1].data().to_vec(),
            conv2_w: ts[2].clone(),
            conv2_b: ts[3].data().to_vec(),
            conv3_w: ts[4].clone(),
            conv3_b: ts[5].data()[0],
        };
        if !p.is_finite() {
            return Err(Error::InvalidArgument("non-finite parameter".into()));
        }
        Ok(p)
    }

    fn add_scaled(&mut self, a: f64, g: &PipelineParams) {
        let axpy = |x: &mut [f64], y: &[f64]| x.iter_mut().zip(y).for_each(|(x, y)| *x += a * y);
        axpy(self.conv1_w.data_mut(), g.conv1_w.data());
        axpy(&mut self.conv1_b, &g.conv1_b);
        axpy(self.conv2_w.data_mut(), g.conv2_w.data());
        axpy(&mut self.conv2_b, &g.conv2_b);
        axpy(self.conv3_w.data_mut(), g.conv3_w.data());
        self.conv3_b += a * g.conv3_b;
    }

    fn geometry(&self, layer: usize, h: usize, w: usize) -> ConvGeometry {
        let c = self.channels;
        match layer {
            1 => ConvGeometry {
                c_in: 1,
                c_out: c,
                k: K,
                h,
                w,
            },
            2 => ConvGeometry {
                c_in: c,
                c_out: c,
                k: K,
                h,
                w,
            },
            _ => ConvGeometry {
                c_in: c,
                c_out: 1,
                k: 1,
                h,
                w,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    /// Sum of foreground probabilities (differentiable).
    SoftArea,
    /// Number of pixels whose probability exceeds the threshold.
    HardArea,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSpec {
    pub kind: MetricKind,
    pub threshold: f64,
}

impl MetricSpec {
    pub fn soft() -> Self {
        Self {
            kind: MetricKind::SoftArea,
            threshold: 0.5,
        }
    }

    pub fn hard() -> Self {
        Self {
            kind: MetricKind::HardArea,
            threshold: 0.5,
        }
    }

    pub fn hard_at(threshold: f64) -> Result<Self> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::InvalidArgument(format!("threshold {threshold} outside (0, 1)")));
        }
        Ok(Self {
            kind: MetricKind::HardArea,
            threshold,
        })
    }

    pub fn from_probs(&self, probs: &[f64]) -> f64 {
        match self.kind {
            MetricKind::SoftArea => probs.iter().sum(),
            MetricKind::HardArea => probs.iter().filter(|&&p| p > self.threshold).count() as f64,
        }
    }

    pub fn from_logits(&self, logits: &[f64]) -> f64 {
        match self.kind {
            MetricKind::SoftArea => logits.iter().map(|&z| sigmoid(z)).sum(),
            MetricKind::HardArea => logits.iter().filter(|&&z| sigmoid(z) > self.threshold).count() as f64,
        }
    }
}

/// Output of the encoder, `ẑ = f(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentRep {
    pub values: Tensor,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub latent: LatentRep,
    pub logits: Tensor,
    pub probs: Tensor,
}

/// Where perturbations are applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tap {
    /// conv1 output (COMPASS-J).
    Latent,
    /// Pre-sigmoid logits (COMPASS-L).
    Logits,
}

fn image_dims(params: &PipelineParams, image: &Tensor) -> Result<(usize, usize)> {
    let (c, h, w) = image.dims3()?;
    if c != 1 {
        return Err(Error::ShapeMismatch {
            expected: vec![1, h, w],
            actual: image.shape().to_vec(),
        });
    }
    let _ = params;
    Ok((h, w))
}

fn latent_dims(params: &PipelineParams, latent: &Tensor) -> Result<(usize, usize)> {
    let (c, h, w) = latent.dims3()?;
    if c != params.channels {
        return Err(Error::ShapeMismatch {
            expected: vec![params.channels, h, w],
            actual: latent.shape().to_vec(),
        });
    }
    Ok((h, w))
}

fn relu_in_place(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

pub fn encode(params: &PipelineParams, image: &Tensor) -> Result<LatentRep> {
    let (h, w) = image_dims(params, image)?;
    let g = params.geometry(1, h, w);
    let mut cols = Vec::new();
    let mut z = conv_forward_raw(
        image.data(),
        params.conv1_w.data(),
        Some(&params.conv1_b),
        &g,
        &mut cols,
    );
    relu_in_place(&mut z);
    Ok(LatentRep {
        values: Tensor::new(vec![params.channels, h, w], z)?,
    })
}

/// Decoder `g`: latent to logits.
pub fn decode_logits(params: &PipelineParams, latent: &Tensor) -> Result<Tensor> {
    let (h, w) = latent_dims(params, latent)?;
    let mut cols = Vec::new();
    let mut hidden = conv_forward_raw(
        latent.data(),
        params.conv2_w.data(),
        Some(&params.conv2_b),
        &params.geometry(2, h, w),
        &mut cols,
    );
    relu_in_place(&mut hidden);
    let logits = conv_forward_raw(
        &hidden,
        params.conv3_w.data(),
        Some(&[params.conv3_b]),
        &params.geometry(3, h, w),
        &mut cols,
    );
    Tensor::new(vec![1, h, w], logits)
}

pub fn forward(params: &PipelineParams, image: &Tensor) -> Result<ForwardOutput> {
    let latent = encode(params, image)?;
    let logits = decode_logits(params, &latent.values)?;
    let probs = logits.map(sigmoid);
    Ok(ForwardOutput { latent, logits, probs })
}

/// `(h ∘ g)(latent)`: runs only the decoder and the metric.
pub fn decode_metric(params: &PipelineParams, latent: &Tensor, metric: &MetricSpec) -> Result<f64> {
    Ok(metric.from_logits(decode_logits(params, latent)?.data()))
}

/// Gradient of soft area with respect to the latent, evaluated at `latent`.
pub fn latent_jacobian(params: &PipelineParams, latent: &Tensor) -> Result<Tensor> {
    let (h, w) = latent_dims(params, latent)?;
    let g2 = params.geometry(2, h, w);
    let mut cols = Vec::new();
    let pre2 = conv_forward_raw(
        latent.data(),
        params.conv2_w.data(),
        Some(&params.conv2_b),
        &g2,
        &mut cols,
    );
    let mut hidden = pre2.clone();
    relu_in_place(&mut hidden);
    let logits = conv_forward_raw(
        &hidden,
        params.conv3_w.data(),
        Some(&[params.conv3_b]),
        &params.geometry(3, h, w),
        &mut cols,
    );
    let hw = h * w;
    let mut g_pre2 = vec![0.0; params.channels * hw];
    for c in 0..params.channels {
        let wc = params.conv3_w.data()[c];
        for p in 0..hw {
            if pre2[c * hw + p] > 0.0 {
                let s = sigmoid(logits[p]);
                g_pre2[c * hw + p] = wc * s * (1.0 - s);
            }
        }
    }
    let gz = conv_backward_input(&g_pre2, params.conv2_w.data(), &g2);
    Tensor::new(vec![params.channels, h, w], gz)
}

/// Exact gradient of the metric with respect to the chosen tap.
pub fn metric_jacobian(params: &PipelineParams, image: &Tensor, metric: &MetricSpec, tap: Tap) -> Result<Tensor> {
    if metric.kind != MetricKind::SoftArea {
        return Err(Error::NonDifferentiableMetric);
    }
    let out = forward(params, image)?;
    match tap {
        Tap::Logits => Ok(out.probs.map(|p| p * (1.0 - p))),
        Tap::Latent => latent_jacobian(params, &out.latent.values),
    }
}

/// Mean pixelwise binary cross-entropy over `samples`, and its gradient.
pub fn loss_and_gradient(params: &PipelineParams, samples: &[&Sample]) -> Result<(f64, PipelineParams)> {
    if samples.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let (h, w) = image_dims(params, &samples[0].image)?;
    for s in samples {
        s.image.ensure_shape(&[1, h, w])?;
        s.mask.ensure_shape(&[1, h, w])?;
    }
    let denom = (samples.len() * h * w) as f64;
    // Fixed-size chunks reduced in order keep the sum scheduling-independent.
    let partials: Vec<(f64, PipelineParams)> = samples
        .par_chunks(32)
        .map(|chunk| {
            let mut grad = PipelineParams::zeros(params.channels);
            let mut loss = 0.0;
            for s in chunk {
                loss += backprop_one(params, s, h, w, denom, &mut grad);
            }
            (loss, grad)
        })
        .collect();
    let mut total = PipelineParams::zeros(params.channels);
    let mut loss = 0.0;
    for (l, g) in &partials {
        loss += l;
        total.add_scaled(1.0, g);
    }
    Ok((loss / denom, total))
}

fn backprop_one(params: &PipelineParams, s: &Sample, h: usize, w: usize, denom: f64, grad: &mut PipelineParams) -> f64 {
    let c = params.channels;
    let hw = h * w;
    let (g1, g2, g3) = (
        params.geometry(1, h, w),
        params.geometry(2, h, w),
        params.geometry(3, h, w),
    );

    let mut cols1 = Vec::new();
    let pre1 = conv_forward_raw(
        s.image.data(),
        params.conv1_w.data(),
        Some(&params.conv1_b),
        &g1,
        &mut cols1,
    );
    let mut z = pre1.clone();
    relu_in_place(&mut z);
    let mut cols2 = Vec::new();
    let pre2 = conv_forward_raw(&z, params.conv2_w.data(), Some(&params.conv2_b), &g2, &mut cols2);
    let mut a2 = pre2.clone();
    relu_in_place(&mut a2);
    let mut scratch = Vec::new();
    let logits = conv_forward_raw(&a2, params.conv3_w.data(), Some(&[params.conv3_b]), &g3, &mut scratch);

    let mut loss = 0.0;
    let mut g_logit = vec![0.0; hw];
    for p in 0..hw {
        let zl = logits[p];
        let y = s.mask.data()[p];
        let softplus = if zl > 0.0 {
            zl + (-zl).exp().ln_1p()
        } else {
            zl.exp().ln_1p()
        };
        loss += softplus - y * zl;
        g_logit[p] = (sigmoid(zl) - y) / denom;
    }

    let mut gb3 = [0.0];
    conv_backward_params(&a2, &g_logit, &g3, grad.conv3_w.data_mut(), &mut gb3);
    grad.conv3_b += gb3[0];
    let mut g_pre2 = conv_backward_input(&g_logit, params.conv3_w.data(), &g3);
    for (g, &p) in g_pre2.iter_mut().zip(&pre2) {
        if p <= 0.0 {
            *g = 0.0;
        }
    }
    conv_backward_params(&cols2, &g_pre2, &g2, grad.conv2_w.data_mut(), &mut grad.conv2_b);
    let mut g_pre1 = conv_backward_input(&g_pre2, params.conv2_w.data(), &g2);
    for (g, &p) in g_pre1.iter_mut().zip(&pre1) {
        if p <= 0.0 {
            *g = 0.0;
        }
    }
    conv_backward_params(&cols1, &g_pre1, &g1, grad.conv1_w.data_mut(), &mut grad.conv1_b);
    debug_assert_eq!(g_pre1.len(), c * hw);
    loss
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Required final mean loss; checked only when `epochs > 0`.
    pub loss_threshold: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            epochs: 300,
            loss_threshold: Some(0.35),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Loss before each update, followed by the final loss.
    pub losses: Vec<f64>,
}

impl TrainReport {
    pub fn initial_loss(&self) -> f64 {
        self.losses[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.losses.last().expect("at least one entry")
    }
}

/// Full-batch gradient descent on pixelwise binary cross-entropy.
pub fn train(
    params0: &PipelineParams,
    train_set: &[&Sample],
    cfg: &TrainConfig,
) -> Result<(PipelineParams, TrainReport)> {
    if train_set.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let mut params = params0.clone();
    let mut losses = Vec::with_capacity(cfg.epochs + 1);
    for epoch in 0..cfg.epochs {
        let (loss, grad) = loss_and_gradient(&params, train_set)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, loss });
        }
        losses.push(loss);
        params.add_scaled(-cfg.lr, &grad);
        if !params.is_finite() {
            return Err(Error::Diverged { epoch, loss: f64::NAN });
        }
        if epoch % 50 == 0 {
            log::debug!("epoch {epoch}: loss {loss:.5}");
        }
    }
    let final_loss = if cfg.epochs == 0 {
        loss_and_gradient(&params, train_set)?.0
    } else {
        let (l, _) = loss_and_gradient(&params, train_set)?;
        if !l.is_finite() {
            return Err(Error::Diverged {
                epoch: cfg.epochs,
                loss: l,
            });
        }
        l
    };
    losses.push(final_loss);
    if cfg.epochs > 0 {
        if let Some(threshold) = cfg.loss_threshold {
            if final_loss >= threshold {
                return Err(Error::TrainingStalled {
                    loss: final_loss,
                    threshold,
                });
            }
        }
    }
    Ok((params, TrainReport { losses }))
}

/// `β ↦ (h∘g)(ẑ + βΔ)` for a latent-tap direction.
///
/// conv2 is affine, so its pre-activation along the line is
/// `conv2(ẑ) + β·conv2₀(Δ)`; both terms are computed once and each evaluation
/// only pays for the ReLU, the 1×1 conv3 and the metric.
#[derive(Debug, Clone)]
pub struct LatentLine {
    base: Vec<f64>,
    dir: Vec<f64>,
    w3: Vec<f64>,
    b3: f64,
    hw: usize,
    metric: MetricSpec,
}

impl LatentLine {
    pub fn new(params: &PipelineParams, latent: &Tensor, direction: &Tensor, metric: MetricSpec) -> Result<Self> {
        let (h, w) = latent_dims(params, latent)?;
        direction.ensure_shape(latent.shape())?;
        let g2 = params.geometry(2, h, w);
        let mut cols = Vec::new();
        let base = conv_forward_raw(
            latent.data(),
            params.conv2_w.data(),
            Some(&params.conv2_b),
            &g2,
            &mut cols,
        );
        let dir = conv_forward_raw(direction.data(), params.conv2_w.data(), None, &g2, &mut cols);
        Ok(Self {
            base,
            dir,
            w3: params.conv3_w.data().to_vec(),
            b3: params.conv3_b,
            hw: h * w,
            metric,
        })
    }

    pub fn logits_at(&self, beta: f64) -> Vec<f64> {
        let mut logits = vec![self.b3; self.hw];
        for (c, &wc) in self.w3.iter().enumerate() {
            let base = &self.base[c * self.hw..(c + 1) * self.hw];
            let dir = &self.dir[c * self.hw..(c + 1) * self.hw];
            for ((l, &b), &d) in logits.iter_mut().zip(base).zip(dir) {
                *l += wc * (b + beta * d).max(0.0);
            }
        }
        logits
    }

    pub fn metric(&self) -> MetricSpec {
        self.metric
    }

    pub fn with_metric(&self, metric: MetricSpec) -> Self {
        Self { metric, ..self.clone() }
    }
}

impl Response for LatentLine {
    fn metric_at(&self, beta: f64) -> f64 {
        self.metric.from_logits(&self.logits_at(beta))
    }
}

/// `β ↦ h(logits + β·1)`: a uniform logit shift.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitLine {
    logits: Vec<f64>,
    metric: MetricSpec,
}

impl LogitLine {
    pub fn new(logits: &Tensor, metric: MetricSpec) -> Self {
        Self {
            logits: logits.data().to_vec(),
            metric,
        }
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn with_metric(&self, metric: MetricSpec) -> Self {
        Self { metric, ..self.clone() }
    }
}

impl Response for LogitLine {
    fn metric_at(&self, beta: f64) -> f64 {
        match self.metric.kind {
            MetricKind::SoftArea => self.logits.iter().map(|&z| sigmoid(z + beta)).sum(),
            MetricKind::HardArea => self
                .logits
                .iter()
                .filter(|&&z| sigmoid(z + beta) > self.metric.threshold)
                .count() as f64,
        }
    }
}

/// Re-runs the full decoder at `ẑ + βΔ` for every evaluation. Slow; used as
/// an independent check on [`LatentLine`].
#[derive(Debug, Clone)]
pub struct DecodedLine<'a> {
    pub params: &'a PipelineParams,
    pub latent: &'a Tensor,
    pub direction: &'a Tensor,
    pub metric: MetricSpec,
}

impl Response for DecodedLine<'_> {
    fn metric_at(&self, beta: f64) -> f64 {
        let mut z = self.latent.clone();
        z.axpy(beta, self.direction).expect("shapes checked at construction");
        decode_metric(self.params, &z, &self.metric).unwrap_or(f64::NAN)
    }
}
