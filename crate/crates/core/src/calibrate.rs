//! Perturbation intervals, non-conformity scores and split-conformal
//! calibration.
//!
//! Everything here works against a [`Response`], the scalar map
//! `β ↦ m_x(β)` for one sample along one direction. Intervals are stored as
//! `[min, max]` of `m(−β)` and `m(+β)`, so flipping the direction leaves
//! every interval, score and calibrated radius unchanged.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Metric value as a function of the perturbation magnitude.
pub trait Response: Sync {
    fn metric_at(&self, beta: f64) -> f64;
}

impl<F: Fn(f64) -> f64 + Sync> Response for F {
    fn metric_at(&self, beta: f64) -> f64 {
        self(beta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationInterval {
    pub lo: f64,
    pub hi: f64,
    pub beta_lo: f64,
    pub beta_hi: f64,
    /// Set when the interval is the full metric range rather than a
    /// perturbation result.
    pub degenerate: bool,
}

impl PerturbationInterval {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, y: f64) -> bool {
        self.lo <= y && y <= self.hi
    }
}

fn check_finite(v: f64, beta: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteMetric { beta })
    }
}

/// `S_β = [min, max]` of `m(−β)` and `m(+β)`.
pub fn perturbed_interval<R: Response + ?Sized>(resp: &R, beta: f64) -> Result<PerturbationInterval> {
    if !(beta >= 0.0) || beta.is_infinite() {
        return Err(Error::InvalidArgument(format!(
            "perturbation magnitude {beta} must be finite and >= 0"
        )));
    }
    let a = check_finite(resp.metric_at(-beta), -beta)?;
    let b = check_finite(resp.metric_at(beta), beta)?;
    Ok(PerturbationInterval {
        lo: a.min(b),
        hi: a.max(b),
        beta_lo: beta,
        beta_hi: beta,
        degenerate: false,
    })
}

/// `[lower(β_lo), upper(β_hi)]` where `lower`/`upper` are the ends of
/// [`perturbed_interval`].
pub fn asymmetric_interval<R: Response + ?Sized>(resp: &R, beta_lo: f64, beta_hi: f64) -> Result<PerturbationInterval> {
    let lower = perturbed_interval(resp, beta_lo)?.lo;
    let upper = perturbed_interval(resp, beta_hi)?.hi;
    Ok(PerturbationInterval {
        lo: lower.min(upper),
        hi: lower.max(upper),
        beta_lo,
        beta_hi,
        degenerate: false,
    })
}

fn ends<R: Response + ?Sized>(resp: &R, beta: f64) -> (f64, f64) {
    let a = resp.metric_at(-beta);
    let b = resp.metric_at(beta);
    (a.min(b), a.max(b))
}

/// Which part of `S_β` a search has to bring `y` inside.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// `lower(β) <= y <= upper(β)`.
    Both,
    /// `lower(β) <= y`.
    Lower,
    /// `upper(β) >= y`.
    Upper,
}

fn covered<R: Response + ?Sized>(resp: &R, y: f64, beta: f64, side: Side) -> bool {
    let (lo, hi) = ends(resp, beta);
    match side {
        Side::Both => lo <= y && y <= hi,
        Side::Lower => lo <= y,
        Side::Upper => hi >= y,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMethod {
    Linear,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    pub method: SearchMethod,
    pub beta_range: f64,
    pub k_max: u32,
    /// Linear step; `beta_range / 1024` when absent.
    pub beta_step: Option<f64>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self::latent()
    }
}

impl SearchConfig {
    /// Defaults for latent-tap directions.
    pub fn latent() -> Self {
        Self {
            method: SearchMethod::Binary,
            beta_range: 20.0,
            k_max: 40,
            beta_step: None,
        }
    }

    /// Defaults for the logit shift.
    pub fn logits() -> Self {
        Self {
            beta_range: 15.0,
            ..Self::latent()
        }
    }

    pub fn step(&self) -> f64 {
        self.beta_step.unwrap_or(self.beta_range / 1024.0)
    }

    /// Worst-case gap between the returned score and the true infimum.
    pub fn resolution(&self) -> f64 {
        match self.method {
            SearchMethod::Linear => self.step(),
            SearchMethod::Binary => self.beta_range * 0.5f64.powi(self.k_max as i32),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta_range > 0.0 && self.beta_range.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "beta_range {} must be positive",
                self.beta_range
            )));
        }
        if self.k_max == 0 || self.k_max > 100 {
            return Err(Error::InvalidArgument(format!("k_max {} outside 1..=100", self.k_max)));
        }
        if let Some(s) = self.beta_step {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidArgument(format!("beta_step {s} must be positive")));
            }
        }
        Ok(())
    }
}

fn linear_search<R: Response + ?Sized>(resp: &R, y: f64, step: f64, beta_max: f64, side: Side) -> f64 {
    let n = (beta_max / step + 1e-9).floor() as u64;
    (0..=n)
        .map(|k| k as f64 * step)
        .find(|&beta| covered(resp, y, beta, side))
        .unwrap_or(f64::INFINITY)
}

fn binary_search<R: Response + ?Sized>(resp: &R, y: f64, beta_range: f64, k_max: u32, side: Side) -> f64 {
    if covered(resp, y, 0.0, side) {
        return 0.0;
    }
    if !covered(resp, y, beta_range, side) {
        return f64::INFINITY;
    }
    let (mut lo, mut hi) = (0.0, beta_range);
    for _ in 0..k_max {
        let mid = 0.5 * (lo + hi);
        if covered(resp, y, mid, side) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Smallest `k·β_step <= β_max` with `y ∈ S_{k·β_step}`, or `+∞`.
pub fn score_symmetric_linear<R: Response + ?Sized>(resp: &R, y: f64, beta_step: f64, beta_max: f64) -> f64 {
    linear_search(resp, y, beta_step, beta_max, Side::Both)
}

/// Bisection on `[0, β_range]` for `k_max` halvings; returns the upper end.
pub fn score_symmetric_binary<R: Response + ?Sized>(resp: &R, y: f64, beta_range: f64, k_max: u32) -> f64 {
    binary_search(resp, y, beta_range, k_max, Side::Both)
}

pub fn score_one_sided<R: Response + ?Sized>(resp: &R, y: f64, cfg: &SearchConfig, side: Side) -> f64 {
    match cfg.method {
        SearchMethod::Linear => linear_search(resp, y, cfg.step(), cfg.beta_range, side),
        SearchMethod::Binary => binary_search(resp, y, cfg.beta_range, cfg.k_max, side),
    }
}

pub fn score_symmetric<R: Response + ?Sized>(resp: &R, y: f64, cfg: &SearchConfig) -> f64 {
    score_one_sided(resp, y, cfg, Side::Both)
}

/// `(R_lo, R_hi)`: the magnitudes needed to bring the lower end below `y`
/// and the upper end above it.
pub fn score_asymmetric<R: Response + ?Sized>(resp: &R, y: f64, cfg: &SearchConfig) -> (f64, f64) {
    (
        score_one_sided(resp, y, cfg, Side::Lower),
        score_one_sided(resp, y, cfg, Side::Upper),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    Symmetric,
    Asymmetric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub mode: ScoreMode,
    /// Symmetric scores, or `R_lo` in asymmetric mode.
    pub lo: Vec<f64>,
    /// Equal to `lo` in symmetric mode.
    pub hi: Vec<f64>,
    pub search: SearchConfig,
}

impl ScoreSet {
    pub fn symmetric(scores: Vec<f64>, search: SearchConfig) -> Self {
        Self {
            mode: ScoreMode::Symmetric,
            hi: scores.clone(),
            lo: scores,
            search,
        }
    }

    pub fn asymmetric(lo: Vec<f64>, hi: Vec<f64>, search: SearchConfig) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::CountMismatch(lo.len(), hi.len()));
        }
        Ok(Self {
            mode: ScoreMode::Asymmetric,
            lo,
            hi,
            search,
        })
    }

    pub fn len(&self) -> usize {
        self.lo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lo.is_empty()
    }

    pub fn scores(&self) -> &[f64] {
        &self.lo
    }
}

/// Scores for every `(response, y)` pair, computed in parallel and returned
/// in input order.
pub fn compute_scores<R: Response>(
    responses: &[R],
    ys: &[f64],
    mode: ScoreMode,
    cfg: &SearchConfig,
) -> Result<ScoreSet> {
    if responses.len() != ys.len() {
        return Err(Error::CountMismatch(responses.len(), ys.len()));
    }
    cfg.validate()?;
    match mode {
        ScoreMode::Symmetric => {
            let s: Vec<f64> = responses
                .par_iter()
                .zip(ys)
                .map(|(r, &y)| score_symmetric(r, y, cfg))
                .collect();
            Ok(ScoreSet::symmetric(s, *cfg))
        }
        ScoreMode::Asymmetric => {
            let pairs: Vec<(f64, f64)> = responses
                .par_iter()
                .zip(ys)
                .map(|(r, &y)| score_asymmetric(r, y, cfg))
                .collect();
            let (lo, hi) = pairs.into_iter().unzip();
            ScoreSet::asymmetric(lo, hi, *cfg)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantile {
    pub value: f64,
    /// 1-based order statistic `k = ⌈(1−α)(n+1)⌉`.
    pub index: usize,
    /// `k > n`: the calibration set is too small for this `α`.
    pub too_small: bool,
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("alpha {alpha} outside (0, 1)")))
    }
}

pub(crate) fn check_scores(scores: &[f64]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::Empty("scores"));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan() || **s < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "score {s} is not a non-negative number"
        )));
    }
    Ok(())
}

/// The `⌈(1−α)(n+1)⌉`-th smallest score, or `+∞` when that exceeds `n`.
pub fn conformal_quantile(scores: &[f64], alpha: f64) -> Result<Quantile> {
    check_scores(scores)?;
    check_alpha(alpha)?;
    let n = scores.len();
    // Guard against (1−α)(n+1) landing a hair above an integer.
    let k = (((1.0 - alpha) * (n as f64 + 1.0)) - 1e-9).ceil().max(1.0) as usize;
    if k > n {
        return Ok(Quantile {
            value: f64::INFINITY,
            index: k,
            too_small: true,
        });
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(Quantile {
        value: sorted[k - 1],
        index: k,
        too_small: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub mode: ScoreMode,
    /// Miscoverage per side; both equal `α` in symmetric mode.
    pub alpha_lo: f64,
    pub alpha_hi: f64,
    /// Calibrated magnitudes; both equal `β̂` in symmetric mode.
    pub beta_lo: f64,
    pub beta_hi: f64,
    pub n: usize,
    /// Order statistics used (`None` for weighted calibration).
    pub quantile_index: Option<(usize, usize)>,
    pub weighted: bool,
    pub too_small: bool,
}

impl CalibrationResult {
    pub fn beta_hat(&self) -> f64 {
        self.beta_lo.max(self.beta_hi)
    }

    pub fn alpha(&self) -> f64 {
        match self.mode {
            ScoreMode::Symmetric => self.alpha_lo,
            ScoreMode::Asymmetric => self.alpha_lo + self.alpha_hi,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.beta_lo.is_finite() && self.beta_hi.is_finite()
    }
}

/// Target miscoverage: one `α`, or one per side for asymmetric scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaSpec {
    Symmetric(f64),
    Asymmetric { lo: f64, hi: f64 },
}

fn mode_matches(set: &ScoreSet, alpha: AlphaSpec) -> Result<()> {
    match (set.mode, alpha) {
        (ScoreMode::Symmetric, AlphaSpec::Symmetric(_)) | (ScoreMode::Asymmetric, AlphaSpec::Asymmetric { .. }) => {
            Ok(())
        }
        _ => Err(Error::InvalidArgument(
            "score mode and alpha specification disagree".into(),
        )),
    }
}

pub fn calibrate(set: &ScoreSet, alpha: AlphaSpec) -> Result<CalibrationResult> {
    mode_matches(set, alpha)?;
    match alpha {
        AlphaSpec::Symmetric(a) => {
            let q = conformal_quantile(&set.lo, a)?;
            Ok(CalibrationResult {
                mode: ScoreMode::Symmetric,
                alpha_lo: a,
                alpha_hi: a,
                beta_lo: q.value,
                beta_hi: q.value,
                n: set.len(),
                quantile_index: Some((q.index, q.index)),
                weighted: false,
                too_small: q.too_small,
            })
        }
        AlphaSpec::Asymmetric { lo, hi } => {
            let ql = conformal_quantile(&set.lo, lo)?;
            let qh = conformal_quantile(&set.hi, hi)?;
            Ok(CalibrationResult {
                mode: ScoreMode::Asymmetric,
                alpha_lo: lo,
                alpha_hi: hi,
                beta_lo: ql.value,
                beta_hi: qh.value,
                n: set.len(),
                quantile_index: Some((ql.index, qh.index)),
                weighted: false,
                too_small: ql.too_small || qh.too_small,
            })
        }
    }
}

/// Interval for a new sample. A non-finite radius yields `full_range`
/// flagged as degenerate.
pub fn predict_interval<R: Response + ?Sized>(
    resp: &R,
    cal: &CalibrationResult,
    full_range: (f64, f64),
) -> Result<PerturbationInterval> {
    if !cal.is_finite() {
        return Ok(PerturbationInterval {
            lo: full_range.0,
            hi: full_range.1,
            beta_lo: cal.beta_lo,
            beta_hi: cal.beta_hi,
            degenerate: true,
        });
    }
    match cal.mode {
        ScoreMode::Symmetric => perturbed_interval(resp, cal.beta_lo),
        ScoreMode::Asymmetric => asymmetric_interval(resp, cal.beta_lo, cal.beta_hi),
    }
}

/// Split-conformal margin on absolute residuals.
pub fn scp_calibrate(residuals: &[f64], alpha: f64) -> Result<Quantile> {
    conformal_quantile(residuals, alpha)
}

/// `[ŷ − margin, ŷ + margin]` clipped to `full_range`.
pub fn scp_interval(y_hat: f64, margin: f64, full_range: (f64, f64)) -> PerturbationInterval {
    if !margin.is_finite() {
        return PerturbationInterval {
            lo: full_range.0,
            hi: full_range.1,
            beta_lo: margin,
            beta_hi: margin,
            degenerate: true,
        };
    }
    PerturbationInterval {
        lo: (y_hat - margin).max(full_range.0),
        hi: (y_hat + margin).min(full_range.1),
        beta_lo: margin,
        beta_hi: margin,
        degenerate: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NestednessReport {
    pub ok: bool,
    /// Largest amount by which `S_{β_k}` sticks out of `S_{β_{k+1}}`.
    pub max_violation: f64,
    /// Consecutive grid pairs that are not nested.
    pub violations: usize,
}

/// Checks `S_{β_k} ⊆ S_{β_{k+1}}` for consecutive points of an ascending grid.
pub fn check_nestedness<R: Response + ?Sized>(resp: &R, grid: &[f64]) -> Result<NestednessReport> {
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument(
            "nestedness grid must be strictly ascending".into(),
        ));
    }
    let intervals: Vec<(f64, f64)> = grid.iter().map(|&b| ends(resp, b)).collect();
    let mut max_violation = 0.0f64;
    let mut violations = 0;
    for w in intervals.windows(2) {
        let breach = (w[1].0 - w[0].0).max(w[0].1 - w[1].1).max(0.0);
        if breach > 0.0 || breach.is_nan() {
            violations += 1;
        }
        max_violation = max_violation.max(breach);
    }
    Ok(NestednessReport {
        ok: violations == 0,
        max_violation,
        violations,
    })
}

/// Uniform grid `0, β_range/steps, …, β_range`.
pub fn uniform_grid(beta_range: f64, steps: usize) -> Vec<f64> {
    (0..=steps).map(|k| beta_range * k as f64 / steps as f64).collect()
}
