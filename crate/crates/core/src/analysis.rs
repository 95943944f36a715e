//! Repeated-split experiments, β sweeps and the score power-law fit.
//!
//! A [`Benchmark`] trains one pipeline per seed and caches, for every
//! held-out sample, its responses along the COMPASS-J and COMPASS-L
//! directions together with all non-conformity scores. Scores depend only
//! on the sample itself, so each resplit just recalibrates and re-evaluates
//! the test intervals.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::calibrate::{
    calibrate, predict_interval, score_asymmetric, score_symmetric, scp_interval, AlphaSpec, CalibrationResult,
    PerturbationInterval, Response, ScoreMode, ScoreSet, SearchConfig,
};
use crate::error::{Error, Result};
use crate::pipeline::{
    decode_logits, encode, latent_jacobian, train, LatentLine, LogitLine, MetricSpec, PipelineParams, TrainConfig,
    TrainReport,
};
use crate::subspace::{channel_summarize, direction_from_summary, fit_subspace_with, SensitiveSubspace};
use crate::synthtask::{
    generate_dataset, make_splits, prevalence, resplit_holdout, ClassLabel, Sample, SplitRatios, SplitSpec, Splits,
    TaskSpec,
};
use crate::weighted::{
    calibrate_weighted, class_oracle_weights, estimate_ratio_weights, RatioConfig, RatioDiagnostics, WeightSource,
    WeightVector,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    CompassJ,
    CompassL,
    Scp,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::CompassJ, Method::CompassL, Method::Scp];

    pub fn name(self) -> &'static str {
        match self {
            Method::CompassJ => "compass_j",
            Method::CompassL => "compass_l",
            Method::Scp => "scp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    None,
    ClassOracle,
    LatentClassifier,
    JacobianClassifier,
}

impl Weighting {
    pub const ALL: [Weighting; 4] = [
        Weighting::None,
        Weighting::ClassOracle,
        Weighting::LatentClassifier,
        Weighting::JacobianClassifier,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Weighting::None => "none",
            Weighting::ClassOracle => "class_oracle",
            Weighting::LatentClassifier => "latent_classifier",
            Weighting::JacobianClassifier => "jacobian_classifier",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    pub task: TaskSpec,
    pub n_samples: usize,
    pub ratios: SplitRatios,
    pub channels: usize,
    pub train: TrainConfig,
    /// Retained principal components `L`.
    pub components: usize,
    pub centered: bool,
    pub search_latent: SearchConfig,
    pub search_logits: SearchConfig,
    /// Foreground threshold for the reported (hard) area.
    pub threshold: f64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            task: TaskSpec::default(),
            n_samples: 2000,
            ratios: SplitRatios::default(),
            channels: 8,
            train: TrainConfig::default(),
            components: 1,
            centered: true,
            search_latent: SearchConfig::latent(),
            search_logits: SearchConfig::logits(),
            threshold: 0.5,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        SplitSpec::new(self.ratios, 0).validate()?;
        if self.n_samples < 4 {
            return Err(Error::InvalidArgument(format!(
                "n_samples {} is too small",
                self.n_samples
            )));
        }
        if self.channels == 0 {
            return Err(Error::InvalidArgument("channels must be positive".into()));
        }
        if self.components == 0 || self.components > self.channels {
            return Err(Error::InvalidArgument(format!(
                "components {} outside 1..={}",
                self.components, self.channels
            )));
        }
        if !(self.train.lr > 0.0) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        self.search_latent.validate()?;
        self.search_logits.validate()?;
        MetricSpec::hard_at(self.threshold)?;
        Ok(())
    }

    pub fn metric(&self) -> MetricSpec {
        MetricSpec::hard_at(self.threshold).unwrap_or_else(|_| MetricSpec::hard())
    }

    pub fn full_range(&self) -> (f64, f64) {
        (0.0, self.task.pixels() as f64)
    }
}

/// Per-sample scores, all measured on the hard area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleScores {
    pub j_sym: f64,
    pub j_lo: f64,
    pub j_hi: f64,
    pub l_sym: f64,
    pub l_lo: f64,
    pub l_hi: f64,
    /// `|y − ŷ|`.
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct HoldoutEntry {
    pub index: usize,
    pub class_label: ClassLabel,
    /// True area.
    pub y: f64,
    /// Predicted area.
    pub y_hat: f64,
    pub latent_line: LatentLine,
    pub logit_line: LogitLine,
    pub latent_features: Vec<f64>,
    pub jacobian_features: Vec<f64>,
    /// The COMPASS-J direction fell back to the ones direction.
    pub fallback: bool,
    pub scores: SampleScores,
}

impl HoldoutEntry {
    pub fn response(&self, method: Method) -> Option<&dyn Response> {
        match method {
            Method::CompassJ => Some(&self.latent_line),
            Method::CompassL => Some(&self.logit_line),
            Method::Scp => None,
        }
    }

    fn score(&self, method: Method, mode: ScoreMode) -> (f64, f64) {
        let s = &self.scores;
        match (method, mode) {
            (Method::CompassJ, ScoreMode::Symmetric) => (s.j_sym, s.j_sym),
            (Method::CompassJ, ScoreMode::Asymmetric) => (s.j_lo, s.j_hi),
            (Method::CompassL, ScoreMode::Symmetric) => (s.l_sym, s.l_sym),
            (Method::CompassL, ScoreMode::Asymmetric) => (s.l_lo, s.l_hi),
            (Method::Scp, _) => (s.residual, s.residual),
        }
    }
}

/// A trained pipeline with its fitted subspace and the per-sample cache for
/// every non-training sample.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub seed: u64,
    pub config: BenchmarkConfig,
    pub dataset: Vec<Sample>,
    pub train: Vec<usize>,
    pub params: PipelineParams,
    pub subspace: SensitiveSubspace,
    pub train_report: Option<TrainReport>,
    pub entries: Vec<HoldoutEntry>,
    position: Vec<Option<usize>>,
}

/// Jacobian channel summaries for the given samples.
pub fn jacobian_summaries(params: &PipelineParams, samples: &[&Sample]) -> Result<Vec<Vec<f64>>> {
    samples
        .par_iter()
        .map(|s| {
            let z = encode(params, &s.image)?;
            channel_summarize(&latent_jacobian(params, &z.values)?)
        })
        .collect()
}

impl Benchmark {
    /// Generates the dataset, splits off the training set, trains and caches.
    pub fn build(config: &BenchmarkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let dataset = generate_dataset(config.n_samples, &config.task, seed)?;
        let splits = make_splits(&dataset, &SplitSpec::new(config.ratios, seed))?;
        let train_set: Vec<&Sample> = splits.train.iter().map(|&i| &dataset[i]).collect();
        let init = PipelineParams::init(config.channels, seed);
        let (params, report) = train(&init, &train_set, &config.train)?;
        let mut bench = Self::from_parts(config, seed, dataset, splits.train, params)?;
        bench.train_report = Some(report);
        Ok(bench)
    }

    /// Builds the cache around already-trained parameters.
    pub fn from_parts(
        config: &BenchmarkConfig,
        seed: u64,
        dataset: Vec<Sample>,
        train: Vec<usize>,
        params: PipelineParams,
    ) -> Result<Self> {
        config.validate()?;
        if train.len() < 2 {
            return Err(Error::EmptyPartition("training set needs at least two samples"));
        }
        let train_set: Vec<&Sample> = train.iter().map(|&i| &dataset[i]).collect();
        let subspace = fit_subspace_with(
            &jacobian_summaries(&params, &train_set)?,
            config.components,
            config.centered,
        )?;
        Self::with_subspace(config, seed, dataset, train, params, subspace)
    }

    pub fn with_subspace(
        config: &BenchmarkConfig,
        seed: u64,
        dataset: Vec<Sample>,
        train: Vec<usize>,
        params: PipelineParams,
        subspace: SensitiveSubspace,
    ) -> Result<Self> {
        let mut in_train = vec![false; dataset.len()];
        for &i in &train {
            *in_train
                .get_mut(i)
                .ok_or_else(|| Error::InvalidArgument(format!("train index {i} out of range")))? = true;
        }
        let holdout: Vec<usize> = (0..dataset.len()).filter(|&i| !in_train[i]).collect();
        let entries = holdout
            .par_iter()
            .map(|&i| make_entry(config, &params, &subspace, &dataset[i], i))
            .collect::<Result<Vec<_>>>()?;
        let mut position = vec![None; dataset.len()];
        for (k, e) in entries.iter().enumerate() {
            position[e.index] = Some(k);
        }
        Ok(Self {
            seed,
            config: config.clone(),
            dataset,
            train,
            params,
            subspace,
            train_report: None,
            entries,
            position,
        })
    }

    pub fn holdout(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.index).collect()
    }

    pub fn entry(&self, index: usize) -> Result<&HoldoutEntry> {
        self.position
            .get(index)
            .copied()
            .flatten()
            .map(|k| &self.entries[k])
            .ok_or_else(|| Error::InvalidArgument(format!("sample {index} is not held out")))
    }

    fn entries_of(&self, idx: &[usize]) -> Result<Vec<&HoldoutEntry>> {
        idx.iter().map(|&i| self.entry(i)).collect()
    }

    /// Calibration / test partition of the held-out samples for split `k`.
    pub fn split(&self, spec: &SplitSpec) -> Result<Splits> {
        resplit_holdout(&self.dataset, &self.train, spec)
    }

    pub fn score_set(&self, cal: &[usize], method: Method, mode: ScoreMode) -> Result<ScoreSet> {
        let entries = self.entries_of(cal)?;
        let search = match method {
            Method::CompassL => self.config.search_logits,
            _ => self.config.search_latent,
        };
        let (lo, hi): (Vec<f64>, Vec<f64>) = entries.iter().map(|e| e.score(method, mode)).unzip();
        match mode {
            ScoreMode::Symmetric => Ok(ScoreSet::symmetric(lo, search)),
            ScoreMode::Asymmetric => ScoreSet::asymmetric(lo, hi, search),
        }
    }

    /// Weights for the calibration samples of one split.
    pub fn weights(
        &self,
        cal: &[usize],
        test: &[usize],
        weighting: Weighting,
        ratio: &RatioConfig,
    ) -> Result<Option<WeightVector>> {
        Ok(self
            .weights_with_diagnostics(cal, test, weighting, ratio)?
            .map(|(w, _)| w))
    }

    /// As [`Benchmark::weights`], with the classifier diagnostics for the
    /// ratio-based weightings.
    pub fn weights_with_diagnostics(
        &self,
        cal: &[usize],
        test: &[usize],
        weighting: Weighting,
        ratio: &RatioConfig,
    ) -> Result<Option<(WeightVector, Option<RatioDiagnostics>)>> {
        let cal_e = self.entries_of(cal)?;
        let test_e = self.entries_of(test)?;
        let feats = |es: &[&HoldoutEntry], jac: bool| -> Vec<Vec<f64>> {
            es.iter()
                .map(|e| {
                    if jac {
                        e.jacobian_features.clone()
                    } else {
                        e.latent_features.clone()
                    }
                })
                .collect()
        };
        let ratio_weights = |jac: bool, source| {
            estimate_ratio_weights(&feats(&cal_e, jac), &feats(&test_e, jac), source, ratio)
                .map(|(w, d)| Some((w, Some(d))))
        };
        match weighting {
            Weighting::None => Ok(None),
            Weighting::ClassOracle => {
                let labels: Vec<ClassLabel> = cal_e.iter().map(|e| e.class_label).collect();
                let w = class_oracle_weights(&labels, prevalence(&self.dataset, cal), prevalence(&self.dataset, test))?;
                Ok(Some((w, None)))
            }
            Weighting::LatentClassifier => ratio_weights(false, WeightSource::LatentClassifier),
            Weighting::JacobianClassifier => ratio_weights(true, WeightSource::JacobianClassifier),
        }
    }

    pub fn calibrate(
        &self,
        cal: &[usize],
        method: Method,
        alpha: AlphaSpec,
        weights: Option<&WeightVector>,
        conservative: bool,
    ) -> Result<CalibrationResult> {
        let mode = match alpha {
            AlphaSpec::Symmetric(_) => ScoreMode::Symmetric,
            AlphaSpec::Asymmetric { .. } => ScoreMode::Asymmetric,
        };
        let set = self.score_set(cal, method, mode)?;
        match (weights, alpha) {
            (None, _) => calibrate(&set, alpha),
            (Some(w), AlphaSpec::Symmetric(a)) => calibrate_weighted(&set, w, a, conservative),
            (Some(_), AlphaSpec::Asymmetric { .. }) => {
                Err(Error::InvalidArgument("weighted calibration is symmetric only".into()))
            }
        }
    }

    pub fn interval(&self, index: usize, method: Method, cal: &CalibrationResult) -> Result<PerturbationInterval> {
        let e = self.entry(index)?;
        let range = self.config.full_range();
        match e.response(method) {
            Some(r) => predict_interval(r, cal, range),
            None => Ok(scp_interval(e.y_hat, cal.beta_hat(), range)),
        }
    }

    pub fn intervals(
        &self,
        test: &[usize],
        method: Method,
        cal: &CalibrationResult,
    ) -> Result<Vec<PerturbationInterval>> {
        test.iter().map(|&i| self.interval(i, method, cal)).collect()
    }
}

fn make_entry(
    config: &BenchmarkConfig,
    params: &PipelineParams,
    subspace: &SensitiveSubspace,
    sample: &Sample,
    index: usize,
) -> Result<HoldoutEntry> {
    let metric = config.metric();
    let latent = encode(params, &sample.image)?.values;
    let logits = decode_logits(params, &latent)?;
    let (_, h, w) = latent.dims3()?;
    let jacobian_features = channel_summarize(&latent_jacobian(params, &latent)?)?;
    let direction = direction_from_summary(subspace, &jacobian_features, h, w)?;
    let latent_line = LatentLine::new(params, &latent, &direction.values, metric)?;
    let logit_line = LogitLine::new(&logits, metric);
    let y = sample.area;
    let y_hat = metric.from_logits(logits.data());
    let (j_lo, j_hi) = score_asymmetric(&latent_line, y, &config.search_latent);
    let (l_lo, l_hi) = score_asymmetric(&logit_line, y, &config.search_logits);
    let scores = SampleScores {
        j_sym: score_symmetric(&latent_line, y, &config.search_latent),
        j_lo,
        j_hi,
        l_sym: score_symmetric(&logit_line, y, &config.search_logits),
        l_lo,
        l_hi,
        residual: (y - y_hat).abs(),
    };
    Ok(HoldoutEntry {
        index,
        class_label: sample.class_label,
        y,
        y_hat,
        latent_line,
        logit_line,
        latent_features: channel_summarize(&latent)?,
        jacobian_features,
        fallback: direction.fallback,
        scores,
    })
}

/// Class whose held-out mass is split unevenly between calibration and test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftSpec {
    pub class: ClassLabel,
    pub cal_fraction: f64,
    pub test_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub benchmark: BenchmarkConfig,
    pub methods: Vec<Method>,
    pub alphas: Vec<f64>,
    /// `(α_lo, α_hi)` pairs for asymmetric COMPASS runs.
    pub asymmetric_alphas: Vec<(f64, f64)>,
    pub n_splits: usize,
    /// One pipeline is trained per seed.
    pub seeds: Vec<u64>,
    pub shift: Option<ShiftSpec>,
    pub weightings: Vec<Weighting>,
    pub ratio: RatioConfig,
    /// Adds the largest calibration weight at `+∞` in weighted quantiles.
    pub conservative_weights: bool,
    pub max_failure_rate: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            benchmark: BenchmarkConfig::default(),
            methods: Method::ALL.to_vec(),
            alphas: vec![0.05, 0.1, 0.15],
            asymmetric_alphas: Vec::new(),
            n_splits: 100,
            seeds: vec![0],
            shift: None,
            weightings: vec![Weighting::None],
            ratio: RatioConfig::default(),
            conservative_weights: false,
            max_failure_rate: 0.05,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.benchmark.validate()?;
        if self.methods.is_empty() {
            return Err(Error::InvalidArgument("no methods selected".into()));
        }
        if self.alphas.is_empty() && self.asymmetric_alphas.is_empty() {
            return Err(Error::InvalidArgument("no alpha levels given".into()));
        }
        for &a in &self.alphas {
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::InvalidArgument(format!("alpha {a} outside (0, 1)")));
            }
        }
        for &(lo, hi) in &self.asymmetric_alphas {
            if !(lo > 0.0 && hi > 0.0 && lo + hi < 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "asymmetric alphas ({lo}, {hi}) invalid"
                )));
            }
        }
        if self.n_splits == 0 {
            return Err(Error::InvalidArgument("n_splits must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidArgument("at least one seed is required".into()));
        }
        if self.weightings.is_empty() {
            return Err(Error::InvalidArgument("no weighting selected".into()));
        }
        if let Some(s) = &self.shift {
            self.split_spec(0, 0, Some(*s)).validate()?;
        }
        if !(0.0..=1.0).contains(&self.max_failure_rate) {
            return Err(Error::InvalidArgument("max_failure_rate outside [0, 1]".into()));
        }
        Ok(())
    }

    fn split_spec(&self, seed: u64, split: usize, shift: Option<ShiftSpec>) -> SplitSpec {
        let mixed = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(split as u64 + 1);
        let spec = SplitSpec::new(self.benchmark.ratios, mixed);
        match shift {
            Some(s) => spec.with_shift(s.class, s.cal_fraction, s.test_fraction),
            None => spec,
        }
    }

    /// Split specification used for split `split` of seed `seed`.
    pub fn split_spec_for(&self, seed: u64, split: usize) -> SplitSpec {
        self.split_spec(seed, split, self.shift)
    }
}

/// One method / weighting / α on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub seed: u64,
    pub split: usize,
    pub method: Method,
    pub mode: ScoreMode,
    pub weighting: Weighting,
    pub alpha_lo: f64,
    pub alpha_hi: f64,
    pub beta_lo: f64,
    pub beta_hi: f64,
    pub n_cal: usize,
    pub n_test: usize,
    pub coverage: f64,
    pub mean_width: f64,
    /// Test intervals replaced by the full metric range.
    pub degenerate: usize,
    pub clip_rate: f64,
    /// Held-out AUC of the cal-vs-test classifier, for ratio weightings.
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFailure {
    pub seed: u64,
    pub split: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: Method,
    pub mode: ScoreMode,
    pub weighting: Weighting,
    pub alpha_lo: f64,
    pub alpha_hi: f64,
    pub coverage_mean: f64,
    pub coverage_std: f64,
    pub width_mean: f64,
    pub width_std: f64,
    pub n_splits: usize,
    /// Splits with at least one degenerate interval.
    pub degenerate_splits: usize,
    pub clip_rate_mean: f64,
    /// Mean classifier AUC over the splits that report one.
    pub auc_mean: Option<f64>,
}

impl AggregateRow {
    /// Nominal coverage: `1 − α`, or `1 − (α_lo + α_hi)` for asymmetric rows.
    pub fn target(&self) -> f64 {
        match self.mode {
            ScoreMode::Symmetric => 1.0 - self.alpha_lo,
            ScoreMode::Asymmetric => 1.0 - self.alpha_lo - self.alpha_hi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub rows: Vec<AggregateRow>,
    pub records: Vec<SplitRecord>,
    pub failures: Vec<SplitFailure>,
    pub seeds: Vec<u64>,
    pub n_splits: usize,
}

impl ExperimentReport {
    pub fn row(&self, method: Method, weighting: Weighting, mode: ScoreMode, alpha_lo: f64) -> Option<&AggregateRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.weighting == weighting && r.mode == mode && r.alpha_lo == alpha_lo)
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Mean ± sample std per (method, mode, weighting, α), in first-seen order.
pub fn aggregate(records: &[SplitRecord]) -> Vec<AggregateRow> {
    let mut order: Vec<(Method, ScoreMode, Weighting, u64, u64)> = Vec::new();
    let mut groups: BTreeMap<(Method, ScoreMode, Weighting, u64, u64), Vec<&SplitRecord>> = BTreeMap::new();
    for r in records {
        let key = (
            r.method,
            r.mode,
            r.weighting,
            r.alpha_lo.to_bits(),
            r.alpha_hi.to_bits(),
        );
        let slot = groups.entry(key).or_default();
        if slot.is_empty() {
            order.push(key);
        }
        slot.push(r);
    }
    order
        .iter()
        .map(|key| {
            let g = &groups[key];
            let cov: Vec<f64> = g.iter().map(|r| r.coverage).collect();
            let wid: Vec<f64> = g.iter().map(|r| r.mean_width).collect();
            let (coverage_mean, coverage_std) = mean_std(&cov);
            let (width_mean, width_std) = mean_std(&wid);
            AggregateRow {
                method: key.0,
                mode: key.1,
                weighting: key.2,
                alpha_lo: f64::from_bits(key.3),
                alpha_hi: f64::from_bits(key.4),
                coverage_mean,
                coverage_std,
                width_mean,
                width_std,
                n_splits: g.len(),
                degenerate_splits: g.iter().filter(|r| r.degenerate > 0).count(),
                clip_rate_mean: g.iter().map(|r| r.clip_rate).sum::<f64>() / g.len() as f64,
                auc_mean: {
                    let aucs: Vec<f64> = g.iter().filter_map(|r| r.auc).collect();
                    (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64)
                },
            }
        })
        .collect()
}

fn run_split(bench: &Benchmark, cfg: &ExperimentConfig, split: usize) -> Result<Vec<SplitRecord>> {
    let spec = cfg.split_spec_for(bench.seed, split);
    let splits = bench.split(&spec)?;
    if cfg.shift.is_some() {
        for label in ClassLabel::ALL {
            let (c, t) = (
                prevalence(&bench.dataset, &splits.cal),
                prevalence(&bench.dataset, &splits.test),
            );
            if c[label.index()] == 0.0 || t[label.index()] == 0.0 {
                return Err(Error::ClassAbsent(label.name(), "a shifted partition"));
            }
        }
    }
    let test_y: Vec<f64> = splits
        .test
        .iter()
        .map(|&i| bench.entry(i).map(|e| e.y))
        .collect::<Result<_>>()?;
    let mut records = Vec::new();
    for &weighting in &cfg.weightings {
        let weighted = bench.weights_with_diagnostics(&splits.cal, &splits.test, weighting, &cfg.ratio)?;
        let clip_rate = weighted.as_ref().map_or(0.0, |(w, _)| w.clip_rate());
        let auc = weighted.as_ref().and_then(|(_, d)| d.and_then(|d| d.auc));
        let weights = weighted.map(|(w, _)| w);
        let mut alphas: Vec<AlphaSpec> = cfg.alphas.iter().map(|&a| AlphaSpec::Symmetric(a)).collect();
        if weighting == Weighting::None {
            alphas.extend(
                cfg.asymmetric_alphas
                    .iter()
                    .map(|&(lo, hi)| AlphaSpec::Asymmetric { lo, hi }),
            );
        }
        for &method in &cfg.methods {
            for &alpha in &alphas {
                if method == Method::Scp && matches!(alpha, AlphaSpec::Asymmetric { .. }) {
                    continue;
                }
                let cal = bench.calibrate(&splits.cal, method, alpha, weights.as_ref(), cfg.conservative_weights)?;
                let intervals = bench.intervals(&splits.test, method, &cal)?;
                let n = intervals.len() as f64;
                let hits = intervals.iter().zip(&test_y).filter(|(iv, &y)| iv.contains(y)).count();
                records.push(SplitRecord {
                    seed: bench.seed,
                    split,
                    method,
                    mode: cal.mode,
                    weighting,
                    alpha_lo: cal.alpha_lo,
                    alpha_hi: cal.alpha_hi,
                    beta_lo: cal.beta_lo,
                    beta_hi: cal.beta_hi,
                    n_cal: splits.cal.len(),
                    n_test: splits.test.len(),
                    coverage: hits as f64 / n,
                    mean_width: intervals.iter().map(|iv| iv.width()).sum::<f64>() / n,
                    degenerate: intervals.iter().filter(|iv| iv.degenerate).count(),
                    clip_rate,
                    auc,
                });
            }
        }
    }
    Ok(records)
}

/// Runs every split of `cfg` on an existing benchmark.
pub fn run_on_benchmark(bench: &Benchmark, cfg: &ExperimentConfig) -> (Vec<SplitRecord>, Vec<SplitFailure>) {
    let outcomes: Vec<Result<Vec<SplitRecord>>> = (0..cfg.n_splits)
        .into_par_iter()
        .map(|k| run_split(bench, cfg, k))
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (split, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(r) => records.extend(r),
            Err(e) => failures.push(SplitFailure {
                seed: bench.seed,
                split,
                message: e.to_string(),
            }),
        }
    }
    (records, failures)
}

/// Collects per-split records from the given benchmarks and aggregates them.
pub fn report_from(benches: &[&Benchmark], cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for b in benches {
        let (r, f) = run_on_benchmark(b, cfg);
        records.extend(r);
        failures.extend(f);
    }
    let total = benches.len() * cfg.n_splits;
    let rate = failures.len() as f64 / total.max(1) as f64;
    for f in &failures {
        log::warn!("seed {} split {} failed: {}", f.seed, f.split, f.message);
    }
    if rate > cfg.max_failure_rate {
        return Err(Error::TooManyFailures {
            rate,
            limit: cfg.max_failure_rate,
        });
    }
    Ok(ExperimentReport {
        rows: aggregate(&records),
        records,
        failures,
        seeds: benches.iter().map(|b| b.seed).collect(),
        n_splits: cfg.n_splits,
    })
}

/// Trains one pipeline per seed and runs all splits.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let benches = cfg
        .seeds
        .iter()
        .map(|&s| Benchmark::build(&cfg.benchmark, s))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Benchmark> = benches.iter().collect();
    report_from(&refs, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub beta: f64,
    pub area: f64,
    /// `(A_β − A_0)/A_0 · 100`.
    pub delta_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryReport {
    pub base_area: f64,
    pub points: Vec<TrajectoryPoint>,
    /// Area never decreases along the (sorted) grid.
    pub nondecreasing: bool,
    /// Consecutive grid pairs where the area drops.
    pub decreases: usize,
}

/// Relative area change along a signed β grid that contains 0.
pub fn beta_sweep<R: Response + ?Sized>(resp: &R, grid: &[f64]) -> Result<TrajectoryReport> {
    if !grid.contains(&0.0) {
        return Err(Error::InvalidArgument("sweep grid must contain 0".into()));
    }
    let base_area = resp.metric_at(0.0);
    if !(base_area > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "base area {base_area} must be positive"
        )));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    let points: Vec<TrajectoryPoint> = sorted
        .iter()
        .map(|&beta| {
            let area = if beta == 0.0 { base_area } else { resp.metric_at(beta) };
            TrajectoryPoint {
                beta,
                area,
                delta_pct: (area - base_area) / base_area * 100.0,
            }
        })
        .collect();
    let decreases = points.windows(2).filter(|w| w[1].area < w[0].area).count();
    Ok(TrajectoryReport {
        base_area,
        points,
        nondecreasing: decreases == 0,
        decreases,
    })
}

/// Signed `β` at which the area first reaches a relative change of
/// `target_pct` percent, by `iters` bisection steps on `[0, ±beta_range]`.
/// `None` when the end of the range falls short. The response is assumed
/// nondecreasing in `β`; the returned point lies on the reached side.
pub fn target_beta<R: Response + ?Sized>(
    resp: &R,
    target_pct: f64,
    beta_range: f64,
    iters: u32,
) -> Result<Option<f64>> {
    if !(beta_range > 0.0 && beta_range.is_finite()) || !target_pct.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "bad bisection range {beta_range} or target {target_pct}"
        )));
    }
    let base = resp.metric_at(0.0);
    if !(base > 0.0) {
        return Err(Error::InvalidArgument(format!("base area {base} must be positive")));
    }
    if target_pct == 0.0 {
        return Ok(Some(0.0));
    }
    let target = base * (1.0 + target_pct / 100.0);
    let sign = target_pct.signum();
    let reached = |b: f64| {
        let a = resp.metric_at(sign * b);
        if sign > 0.0 {
            a >= target
        } else {
            a <= target
        }
    };
    if !reached(beta_range) {
        return Ok(None);
    }
    let (mut lo, mut hi) = (0.0, beta_range);
    for _ in 0..iters {
        let mid = 0.5 * (lo + hi);
        if reached(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(sign * hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub n_points: usize,
    /// Pairs dropped because a score was zero (or not finite).
    pub excluded: usize,
}

/// OLS of `log(compass)` on `log(scp)` over pairs with both scores positive.
pub fn powerlaw_fit(scp: &[f64], compass: &[f64]) -> Result<PowerLawFit> {
    if scp.len() != compass.len() {
        return Err(Error::CountMismatch(scp.len(), compass.len()));
    }
    let pts: Vec<(f64, f64)> = scp
        .iter()
        .zip(compass)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0 && a.is_finite() && b.is_finite())
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 10 {
        return Err(Error::InvalidArgument(format!(
            "power-law fit needs at least 10 positive pairs, got {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("all baseline scores are equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok(PowerLawFit {
        slope,
        intercept,
        r2,
        n_points: pts.len(),
        excluded: scp.len() - pts.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankUniformity {
    /// Occurrences of each test rank `0..=n_cal`.
    pub counts: Vec<usize>,
    pub chi2: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Draws `n_cal + 1` scores from `pool` without replacement `reshuffles`
/// times and records the rank of the last one among the others (ties broken
/// uniformly). Under exchangeability the rank is uniform on `0..=n_cal`.
pub fn rank_uniformity(pool: &[f64], n_cal: usize, reshuffles: usize, seed: u64) -> Result<RankUniformity> {
    if n_cal == 0 || pool.len() < n_cal + 1 {
        return Err(Error::InvalidArgument(format!(
            "pool of {} cannot supply {} calibration scores plus a test score",
            pool.len(),
            n_cal
        )));
    }
    if reshuffles == 0 {
        return Err(Error::InvalidArgument("reshuffles must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0usize; n_cal + 1];
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    for _ in 0..reshuffles {
        let (chosen, _) = idx.partial_shuffle(&mut rng, n_cal + 1);
        let test = pool[chosen[n_cal]];
        let below = chosen[..n_cal].iter().filter(|&&i| pool[i] < test).count();
        let ties = chosen[..n_cal].iter().filter(|&&i| pool[i] == test).count();
        let rank = below + rng.random_range(0..=ties);
        counts[rank] += 1;
    }
    let expected = reshuffles as f64 / (n_cal + 1) as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let dof = n_cal;
    let dist = ChiSquared::new(dof as f64).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(RankUniformity {
        counts,
        chi2,
        dof,
        p_value: 1.0 - dist.cdf(chi2),
    })
}
