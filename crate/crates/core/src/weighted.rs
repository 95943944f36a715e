//! Weighted calibration under covariate shift.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibrate::{check_alpha, check_scores, CalibrationResult, ScoreMode, ScoreSet};
use crate::error::{Error, Result};
use crate::numerics::{logistic_fit, sym_eigendecomp, LogisticConfig, LogisticModel, Tensor};
use crate::pipeline::{encode, metric_jacobian, MetricSpec, PipelineParams, Tap};
use crate::subspace::channel_summarize;
use crate::synthtask::{ClassLabel, Sample};

/// `inf{β : Σ w_i 1{R_i ≤ β} / Σ w_j ≥ 1−α}` over the calibration weights.
pub fn weighted_quantile(scores: &[f64], weights: &[f64], alpha: f64) -> Result<f64> {
    weighted_quantile_with(scores, weights, alpha, None)
}

/// As [`weighted_quantile`]; `test_weight` adds that much mass at `+∞` to
/// the denominator (the conservative form).
pub fn weighted_quantile_with(scores: &[f64], weights: &[f64], alpha: f64, test_weight: Option<f64>) -> Result<f64> {
    check_scores(scores)?;
    check_alpha(alpha)?;
    if scores.len() != weights.len() {
        return Err(Error::CountMismatch(scores.len(), weights.len()));
    }
    for (index, &weight) in weights.iter().enumerate() {
        if !(weight >= 0.0) || !weight.is_finite() {
            return Err(Error::NegativeWeight { index, weight });
        }
    }
    let extra = test_weight.unwrap_or(0.0);
    if !(extra >= 0.0) || !extra.is_finite() {
        return Err(Error::NegativeWeight {
            index: scores.len(),
            weight: extra,
        });
    }
    let total: f64 = weights.iter().sum::<f64>() + extra;
    if !(total > 0.0) {
        return Err(Error::InvalidArgument("weights sum to zero".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let target = (1.0 - alpha) * (1.0 - 1e-12);
    let mut cum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let value = scores[order[i]];
        while i < order.len() && scores[order[i]] == value {
            cum += weights[order[i]];
            i += 1;
        }
        if cum / total >= target {
            return Ok(value);
        }
    }
    Ok(f64::INFINITY)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSource {
    ClassOracle,
    LatentClassifier,
    JacobianClassifier,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    pub weights: Vec<f64>,
    pub source: WeightSource,
    pub clip: Option<(f64, f64)>,
    /// Weights that hit a clip bound.
    pub clipped: usize,
}

impl WeightVector {
    pub fn clip_rate(&self) -> f64 {
        if self.weights.is_empty() {
            0.0
        } else {
            self.clipped as f64 / self.weights.len() as f64
        }
    }
}

/// `w_i = test_prev[class_i] / cal_prev[class_i]`.
pub fn class_oracle_weights(
    cal_labels: &[ClassLabel],
    cal_prev: [f64; 2],
    test_prev: [f64; 2],
) -> Result<WeightVector> {
    let mut weights = Vec::with_capacity(cal_labels.len());
    for label in cal_labels {
        let k = label.index();
        if !(cal_prev[k] > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "calibration prevalence of present class {} is zero",
                label.name()
            )));
        }
        if !(test_prev[k] >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "test prevalence of {} is negative",
                label.name()
            )));
        }
        weights.push(test_prev[k] / cal_prev[k]);
    }
    Ok(WeightVector {
        weights,
        source: WeightSource::ClassOracle,
        clip: None,
        clipped: 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RatioConfig {
    pub l2: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub clip_lo: f64,
    pub clip_hi: f64,
    /// Fraction of points held out for the AUC diagnostic.
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for RatioConfig {
    fn default() -> Self {
        let l = LogisticConfig::default();
        Self {
            l2: l.l2,
            tol: l.tol,
            max_iter: l.max_iter,
            clip_lo: 1e-3,
            clip_hi: 1e3,
            holdout_fraction: 0.3,
            seed: 0,
        }
    }
}

impl RatioConfig {
    fn logistic(&self) -> LogisticConfig {
        LogisticConfig {
            l2: self.l2,
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioDiagnostics {
    /// Cal-vs-test AUC on the held-out fold; `None` if a fold lacked a class.
    pub auc: Option<f64>,
    pub clip_rate: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Area under the ROC curve, ties counted half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let pos: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 1)
        .map(|(s, _)| *s)
        .collect();
    let neg: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 0)
        .map(|(s, _)| *s)
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut wins = 0.0;
    for p in &pos {
        for n in &neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    Some(wins / (pos.len() * neg.len()) as f64)
}

/// Affine map to zero mean and identity covariance (directions with
/// negligible variance dropped). Collinear summaries otherwise leave the
/// gradient-descent solver crawling along a narrow valley.
struct Whitener {
    mean: Vec<f64>,
    /// Rows are `v_k / sqrt(λ_k)`.
    rows: Vec<Vec<f64>>,
}

impl Whitener {
    fn fit(rows: &[&Vec<f64>]) -> Result<Self> {
        let d = rows[0].len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            mean.iter_mut().zip(r.iter()).for_each(|(m, v)| *m += v / n);
        }
        let mut cov = Tensor::zeros(&[d, d]);
        for r in rows {
            for i in 0..d {
                for j in 0..=i {
                    let v = cov.at2(i, j) + (r[i] - mean[i]) * (r[j] - mean[j]) / n;
                    cov.set2(i, j, v);
                }
            }
        }
        for i in 0..d {
            for j in 0..i {
                let v = cov.at2(i, j);
                cov.set2(j, i, v);
            }
        }
        let eig = sym_eigendecomp(&cov)?;
        let top = eig.values.first().copied().unwrap_or(0.0);
        let rows = (0..d)
            .filter(|&k| eig.values[k] > 1e-12 * top && eig.values[k] > 0.0)
            .map(|k| eig.vector(k).iter().map(|v| v / eig.values[k].sqrt()).collect())
            .collect();
        Ok(Self { mean, rows })
    }

    fn apply(&self, r: &[f64]) -> Vec<f64> {
        let centered: Vec<f64> = r.iter().zip(&self.mean).map(|(v, m)| v - m).collect();
        self.rows
            .iter()
            .map(|w| w.iter().zip(&centered).map(|(a, b)| a * b).sum())
            .collect()
    }
}

fn fit_classifier(rows: &[&Vec<f64>], labels: &[u8], cfg: &RatioConfig) -> Result<(Whitener, LogisticModel)> {
    let st = Whitener::fit(rows)?;
    if st.rows.is_empty() {
        return Err(Error::DegenerateClassification("features have no variance"));
    }
    let x: Vec<Vec<f64>> = rows.iter().map(|r| st.apply(r)).collect();
    let model = logistic_fit(&x, labels, &cfg.logistic())?;
    Ok((st, model))
}

/// Density-ratio weights for the calibration points from a logistic
/// classifier separating calibration (0) from test (1) features:
/// `w = p/(1−p) · n_cal/n_test`, clipped.
pub fn estimate_ratio_weights(
    cal: &[Vec<f64>],
    test: &[Vec<f64>],
    source: WeightSource,
    cfg: &RatioConfig,
) -> Result<(WeightVector, RatioDiagnostics)> {
    if cal.is_empty() {
        return Err(Error::Empty("calibration features"));
    }
    if test.is_empty() {
        return Err(Error::Empty("test features"));
    }
    if !(cfg.clip_lo > 0.0 && cfg.clip_lo < cfg.clip_hi) {
        return Err(Error::InvalidArgument(format!(
            "clip bounds ({}, {}) invalid",
            cfg.clip_lo, cfg.clip_hi
        )));
    }
    let rows: Vec<&Vec<f64>> = cal.iter().chain(test).collect();
    let labels: Vec<u8> = std::iter::repeat_n(0u8, cal.len())
        .chain(std::iter::repeat_n(1u8, test.len()))
        .collect();
    let (st, model) = fit_classifier(&rows, &labels, cfg)?;

    let prior = cal.len() as f64 / test.len() as f64;
    let mut clipped = 0;
    let weights: Vec<f64> = cal
        .iter()
        .map(|r| {
            // p/(1−p) = exp(decision), computed in log space to avoid 1−p underflow.
            let raw = st_decision(&st, &model, r).exp() * prior;
            let w = raw.clamp(cfg.clip_lo, cfg.clip_hi);
            if w != raw {
                clipped += 1;
            }
            w
        })
        .collect();

    let auc = if cfg.holdout_fraction > 0.0 && cfg.holdout_fraction < 1.0 {
        holdout_auc(&rows, &labels, cfg)
    } else {
        None
    };
    let wv = WeightVector {
        clip: Some((cfg.clip_lo, cfg.clip_hi)),
        clipped,
        source,
        weights,
    };
    let diag = RatioDiagnostics {
        auc,
        clip_rate: wv.clip_rate(),
        converged: model.converged,
        iterations: model.iterations,
    };
    Ok((wv, diag))
}

fn st_decision(st: &Whitener, model: &LogisticModel, r: &[f64]) -> f64 {
    model.decision(&st.apply(r))
}

fn holdout_auc(rows: &[&Vec<f64>], labels: &[u8], cfg: &RatioConfig) -> Option<f64> {
    let mut idx: Vec<usize> = (0..rows.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let n_hold = ((rows.len() as f64) * cfg.holdout_fraction).round() as usize;
    let (hold, fit) = idx.split_at(n_hold);
    let fit_rows: Vec<&Vec<f64>> = fit.iter().map(|&i| rows[i]).collect();
    let fit_labels: Vec<u8> = fit.iter().map(|&i| labels[i]).collect();
    let (st, model) = fit_classifier(&fit_rows, &fit_labels, cfg).ok()?;
    let scores: Vec<f64> = hold.iter().map(|&i| st_decision(&st, &model, rows[i])).collect();
    let hold_labels: Vec<u8> = hold.iter().map(|&i| labels[i]).collect();
    auc(&scores, &hold_labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Class,
    Latent,
    Jacobian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftFeatures {
    pub kind: FeatureKind,
    pub rows: Vec<Vec<f64>>,
}

/// Class one-hot, channel-summed latent, or channel-summed latent Jacobian.
pub fn build_shift_features(
    samples: &[&Sample],
    kind: FeatureKind,
    params: Option<&PipelineParams>,
) -> Result<ShiftFeatures> {
    let rows = match kind {
        FeatureKind::Class => samples
            .iter()
            .map(|s| {
                let mut v = vec![0.0; ClassLabel::ALL.len()];
                v[s.class_label.index()] = 1.0;
                v
            })
            .collect(),
        FeatureKind::Latent | FeatureKind::Jacobian => {
            let params =
                params.ok_or_else(|| Error::InvalidArgument("latent/jacobian features need a pipeline".into()))?;
            samples
                .par_iter()
                .map(|s| {
                    let t = if kind == FeatureKind::Latent {
                        encode(params, &s.image)?.values
                    } else {
                        metric_jacobian(params, &s.image, &MetricSpec::soft(), Tap::Latent)?
                    };
                    channel_summarize(&t)
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    Ok(ShiftFeatures { kind, rows })
}

/// Symmetric-score calibration at `β̂_w`.
pub fn calibrate_weighted(
    set: &ScoreSet,
    weights: &WeightVector,
    alpha: f64,
    conservative: bool,
) -> Result<CalibrationResult> {
    if set.mode != ScoreMode::Symmetric {
        return Err(Error::InvalidArgument(
            "weighted calibration expects symmetric scores".into(),
        ));
    }
    let test_weight = if conservative {
        Some(weights.weights.iter().cloned().fold(0.0, f64::max))
    } else {
        None
    };
    let beta = weighted_quantile_with(set.scores(), &weights.weights, alpha, test_weight)?;
    Ok(CalibrationResult {
        mode: ScoreMode::Symmetric,
        alpha_lo: alpha,
        alpha_hi: alpha,
        beta_lo: beta,
        beta_hi: beta,
        n: set.len(),
        quantile_index: None,
        weighted: true,
        too_small: beta.is_infinite(),
    })
}
