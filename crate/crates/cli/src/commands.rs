//! Subcommand implementations.

use std::path::PathBuf;

use compass_core::analysis::{
    beta_sweep, jacobian_summaries, powerlaw_fit, report_from, target_beta, Benchmark, HoldoutEntry, Method, Weighting,
};
use compass_core::calibrate::{
    calibrate, check_nestedness, predict_interval, score_asymmetric, score_symmetric, scp_interval, uniform_grid,
    AlphaSpec, CalibrationResult, PerturbationInterval, Response, ScoreMode, ScoreSet,
};
use compass_core::io::{
    export_logits, import_external_logits, read_dataset, read_params, write_container, write_dataset, write_params,
    write_subspace, write_tensor, ExternalCalibration,
};
use compass_core::pipeline::{train, PipelineParams};
use compass_core::subspace::fit_subspace_with;
use compass_core::synthtask::{generate_dataset, make_splits, prevalence, resplit_holdout, Sample, SplitSpec};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::workspace::{Keys, Workspace};

/// Per-sample logits and metric values from another model.
#[derive(Debug, Clone)]
pub struct ExternalInput {
    pub logits: PathBuf,
    pub metrics: PathBuf,
}

impl ExternalInput {
    fn load(&self) -> Result<ExternalCalibration, CliError> {
        Ok(import_external_logits(&self.logits, &self.metrics)?)
    }
}

#[derive(Debug, Serialize)]
struct SplitRow {
    index: usize,
    class: &'static str,
    area: f64,
    partition: &'static str,
}

#[derive(Debug, Serialize)]
struct LossRow {
    epoch: usize,
    loss: f64,
}

#[derive(Debug, Serialize)]
struct ScoreRow {
    index: usize,
    class: Option<&'static str>,
    y: f64,
    y_hat: f64,
    j_sym: Option<f64>,
    j_lo: Option<f64>,
    j_hi: Option<f64>,
    l_sym: f64,
    l_lo: f64,
    l_hi: f64,
    residual: f64,
}

#[derive(Debug, Serialize)]
struct WeightRow {
    weighting: Weighting,
    index: usize,
    weight: f64,
}

/// One calibrated radius; SCP rows carry the margin in `beta_*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub seed: u64,
    pub method: Method,
    pub mode: ScoreMode,
    pub weighting: Weighting,
    pub alpha_lo: f64,
    pub alpha_hi: f64,
    pub beta_lo: f64,
    pub beta_hi: f64,
    pub n_cal: usize,
    pub quantile_lo: Option<usize>,
    pub quantile_hi: Option<usize>,
    pub weighted: bool,
    pub too_small: bool,
}

impl CalibrationRow {
    fn new(seed: u64, method: Method, weighting: Weighting, c: &CalibrationResult) -> Self {
        Self {
            seed,
            method,
            mode: c.mode,
            weighting,
            alpha_lo: c.alpha_lo,
            alpha_hi: c.alpha_hi,
            beta_lo: c.beta_lo,
            beta_hi: c.beta_hi,
            n_cal: c.n,
            quantile_lo: c.quantile_index.map(|q| q.0),
            quantile_hi: c.quantile_index.map(|q| q.1),
            weighted: c.weighted,
            too_small: c.too_small,
        }
    }

    fn result(&self) -> CalibrationResult {
        CalibrationResult {
            mode: self.mode,
            alpha_lo: self.alpha_lo,
            alpha_hi: self.alpha_hi,
            beta_lo: self.beta_lo,
            beta_hi: self.beta_hi,
            n: self.n_cal,
            quantile_index: self.quantile_lo.zip(self.quantile_hi),
            weighted: self.weighted,
            too_small: self.too_small,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRow {
    pub method: Method,
    pub mode: ScoreMode,
    pub weighting: Weighting,
    pub alpha_lo: f64,
    pub alpha_hi: f64,
    pub index: usize,
    pub y: f64,
    pub y_hat: f64,
    pub lo: f64,
    pub hi: f64,
    pub covered: bool,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub method: Method,
    pub mode: ScoreMode,
    pub weighting: Weighting,
    pub alpha_lo: f64,
    pub alpha_hi: f64,
    pub n_test: usize,
    pub coverage: f64,
    pub mean_width: f64,
    pub degenerate: usize,
}

#[derive(Debug, Serialize)]
struct TrajectoryRow {
    index: usize,
    class: &'static str,
    beta: f64,
    area: f64,
    delta_pct: f64,
    /// Set on points located by bisection for a targeted change.
    target_pct: Option<f64>,
}

#[derive(Debug, Serialize)]
struct NestednessRow {
    index: usize,
    method: Method,
    ok: bool,
    max_violation: f64,
    violations: usize,
}

#[derive(Debug, Serialize)]
struct PowerLawRow {
    seed: u64,
    method: Method,
    slope: f64,
    intercept: f64,
    r2: f64,
    n_points: usize,
    excluded: usize,
}

#[derive(Debug, Serialize)]
struct ScorePairRow {
    seed: u64,
    index: usize,
    residual: f64,
    j_sym: f64,
    l_sym: f64,
}

fn dataset_for(ws: &Workspace, cfg: &RunConfig, seed: u64) -> Result<Vec<Sample>, CliError> {
    let key = Keys::new(cfg, seed).dataset;
    let reusable = ws
        .read_manifest("generate")
        .is_some_and(|m| m.keys.dataset == key && ws.exists("dataset.ctx"));
    if reusable {
        log::info!("reusing dataset.ctx");
        return Ok(read_dataset(ws.path("dataset.ctx"))?);
    }
    let b = &cfg.experiment.benchmark;
    Ok(generate_dataset(b.n_samples, &b.task, seed)?)
}

/// Loads the trained model for `seed` if the stored one matches the
/// configuration, otherwise trains from scratch. Returns whether it reused.
fn benchmark_for(ws: &Workspace, cfg: &RunConfig, seed: u64) -> Result<(Benchmark, bool), CliError> {
    let b = &cfg.experiment.benchmark;
    let key = Keys::new(cfg, seed).model;
    let reusable = ws
        .read_manifest("train")
        .is_some_and(|m| m.keys.model == key && ws.exists("params.ctx"));
    if reusable {
        let dataset = dataset_for(ws, cfg, seed)?;
        let params = read_params(ws.path("params.ctx"))?;
        let train_idx = make_splits(&dataset, &SplitSpec::new(b.ratios, seed))?.train;
        return Ok((Benchmark::from_parts(b, seed, dataset, train_idx, params)?, true));
    }
    log::info!("no matching trained model for seed {seed}; training");
    Ok((Benchmark::build(b, seed)?, false))
}

fn alpha_specs(cfg: &RunConfig, method: Method, weighting: Weighting) -> Vec<AlphaSpec> {
    let e = &cfg.experiment;
    let mut out: Vec<AlphaSpec> = e.alphas.iter().map(|&a| AlphaSpec::Symmetric(a)).collect();
    if weighting == Weighting::None && method != Method::Scp {
        out.extend(
            e.asymmetric_alphas
                .iter()
                .map(|&(lo, hi)| AlphaSpec::Asymmetric { lo, hi }),
        );
    }
    out
}

fn export(ws: &mut Workspace, params: &PipelineParams, samples: &[&Sample], stem: &str) -> Result<(), CliError> {
    let (logits, y) = export_logits(params, samples)?;
    let (lname, mname) = (format!("{stem}_logits.ctx"), format!("{stem}_metrics.ctx"));
    write_container(ws.path(&lname), &logits)?;
    write_tensor(ws.path(&mname), &y)?;
    ws.record(&lname)?;
    ws.record(&mname)
}

pub fn generate(ws: &mut Workspace, cfg: &RunConfig) -> Result<serde_json::Value, CliError> {
    let seed = cfg.seed();
    let b = &cfg.experiment.benchmark;
    let data = generate_dataset(b.n_samples, &b.task, seed)?;
    write_dataset(ws.path("dataset.ctx"), &data)?;
    ws.record("dataset.ctx")?;
    let train_idx = make_splits(&data, &SplitSpec::new(b.ratios, seed))?.train;
    let split = resplit_holdout(&data, &train_idx, &cfg.experiment.split_spec_for(seed, 0))?;
    let mut part = vec![""; data.len()];
    for (name, idx) in [("train", &split.train), ("cal", &split.cal), ("test", &split.test)] {
        for &i in idx {
            part[i] = name;
        }
    }
    let rows: Vec<SplitRow> = data
        .iter()
        .enumerate()
        .map(|(index, s)| SplitRow {
            index,
            class: s.class_label.name(),
            area: s.area,
            partition: if part[index].is_empty() { "unused" } else { part[index] },
        })
        .collect();
    ws.write_csv("splits.csv", &rows)?;
    Ok(json!({
        "n_samples": data.len(),
        "hard_prevalence": {
            "train": prevalence(&data, &split.train)[1],
            "cal": prevalence(&data, &split.cal)[1],
            "test": prevalence(&data, &split.test)[1],
        },
    }))
}

pub fn train_cmd(ws: &mut Workspace, cfg: &RunConfig) -> Result<serde_json::Value, CliError> {
    let seed = cfg.seed();
    let b = &cfg.experiment.benchmark;
    let data = dataset_for(ws, cfg, seed)?;
    let train_idx = make_splits(&data, &SplitSpec::new(b.ratios, seed))?.train;
    let train_set: Vec<&Sample> = train_idx.iter().map(|&i| &data[i]).collect();
    let (params, report) = train(&PipelineParams::init(b.channels, seed), &train_set, &b.train)?;
    write_params(ws.path("params.ctx"), &params)?;
    ws.record("params.ctx")?;
    let sub = fit_subspace_with(&jacobian_summaries(&params, &train_set)?, b.components, b.centered)?;
    write_subspace(ws.path("subspace.ctx"), &sub)?;
    ws.record("subspace.ctx")?;
    let rows: Vec<LossRow> = report
        .losses
        .iter()
        .enumerate()
        .map(|(epoch, &loss)| LossRow { epoch, loss })
        .collect();
    ws.write_csv("train_loss.csv", &rows)?;
    Ok(json!({
        "epochs": report.losses.len(),
        "initial_loss": report.initial_loss(),
        "final_loss": report.final_loss(),
        "eigenvalues": sub.eigenvalues,
        "explained_variance_ratio": sub.explained_variance_ratio(),
    }))
}

fn entry_score_row(e: &HoldoutEntry) -> ScoreRow {
    let s = &e.scores;
    ScoreRow {
        index: e.index,
        class: Some(e.class_label.name()),
        y: e.y,
        y_hat: e.y_hat,
        j_sym: Some(s.j_sym),
        j_lo: Some(s.j_lo),
        j_hi: Some(s.j_hi),
        l_sym: s.l_sym,
        l_lo: s.l_lo,
        l_hi: s.l_hi,
        residual: s.residual,
    }
}

fn margins_summary(rows: &[CalibrationRow]) -> serde_json::Value {
    rows.iter()
        .filter(|r| r.method == Method::Scp)
        .map(|r| json!({"weighting": r.weighting, "alpha": r.alpha_lo, "margin": r.beta_lo}))
        .collect()
}

pub fn calibrate_cmd(
    ws: &mut Workspace,
    cfg: &RunConfig,
    external: Option<&ExternalInput>,
) -> Result<serde_json::Value, CliError> {
    if let Some(ext) = external {
        return calibrate_external(ws, cfg, ext);
    }
    let seed = cfg.seed();
    let (bench, reused) = benchmark_for(ws, cfg, seed)?;
    let splits = bench.split(&cfg.experiment.split_spec_for(seed, 0))?;
    let entries = splits
        .cal
        .iter()
        .map(|&i| bench.entry(i))
        .collect::<compass_core::Result<Vec<_>>>()?;
    let score_rows: Vec<ScoreRow> = entries.iter().map(|e| entry_score_row(e)).collect();
    ws.write_csv("scores.csv", &score_rows)?;

    let mut rows = Vec::new();
    let mut weight_rows = Vec::new();
    let mut diagnostics = Vec::new();
    for &weighting in &cfg.experiment.weightings {
        let w = bench.weights_with_diagnostics(&splits.cal, &splits.test, weighting, &cfg.experiment.ratio)?;
        if let Some((wv, diag)) = &w {
            weight_rows.extend(splits.cal.iter().zip(&wv.weights).map(|(&index, &weight)| WeightRow {
                weighting,
                index,
                weight,
            }));
            diagnostics.push(json!({
                "weighting": weighting,
                "clip_rate": wv.clip_rate(),
                "auc": diag.and_then(|d| d.auc),
                "converged": diag.map(|d| d.converged),
            }));
        }
        for &method in &cfg.experiment.methods {
            for alpha in alpha_specs(cfg, method, weighting) {
                let c = bench.calibrate(
                    &splits.cal,
                    method,
                    alpha,
                    w.as_ref().map(|x| &x.0),
                    cfg.experiment.conservative_weights,
                )?;
                rows.push(CalibrationRow::new(seed, method, weighting, &c));
            }
        }
    }
    ws.write_csv("calibration.csv", &rows)?;
    if !weight_rows.is_empty() {
        ws.write_csv("weights.csv", &weight_rows)?;
    }
    let cal_samples: Vec<&Sample> = splits.cal.iter().map(|&i| &bench.dataset[i]).collect();
    export(ws, &bench.params, &cal_samples, "cal")?;
    Ok(json!({
        "source": "pipeline",
        "reused_model": reused,
        "n_cal": splits.cal.len(),
        "scp_margins": margins_summary(&rows),
        "weights": diagnostics,
    }))
}

fn calibrate_external(ws: &mut Workspace, cfg: &RunConfig, ext: &ExternalInput) -> Result<serde_json::Value, CliError> {
    let data = ext.load()?;
    let b = &cfg.experiment.benchmark;
    let metric = b.metric();
    let lines = data.lines(metric);
    let preds = data.predictions(metric);
    let search = b.search_logits;
    let score_rows: Vec<ScoreRow> = lines
        .iter()
        .zip(&data.y)
        .zip(&preds)
        .enumerate()
        .map(|(index, ((line, &y), &y_hat))| {
            let (l_lo, l_hi) = score_asymmetric(line, y, &search);
            ScoreRow {
                index,
                class: None,
                y,
                y_hat,
                j_sym: None,
                j_lo: None,
                j_hi: None,
                l_sym: score_symmetric(line, y, &search),
                l_lo,
                l_hi,
                residual: (y - y_hat).abs(),
            }
        })
        .collect();
    ws.write_csv("scores.csv", &score_rows)?;
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for &method in &cfg.experiment.methods {
        if method == Method::CompassJ {
            log::warn!("compass_j needs decoder internals; skipped for imported logits");
            skipped.push(method.name());
            continue;
        }
        for alpha in alpha_specs(cfg, method, Weighting::None) {
            let set = match (method, alpha) {
                (Method::Scp, _) => ScoreSet::symmetric(score_rows.iter().map(|r| r.residual).collect(), search),
                (_, AlphaSpec::Symmetric(_)) => {
                    ScoreSet::symmetric(score_rows.iter().map(|r| r.l_sym).collect(), search)
                }
                (_, AlphaSpec::Asymmetric { .. }) => ScoreSet::asymmetric(
                    score_rows.iter().map(|r| r.l_lo).collect(),
                    score_rows.iter().map(|r| r.l_hi).collect(),
                    search,
                )?,
            };
            rows.push(CalibrationRow::new(
                cfg.seed(),
                method,
                Weighting::None,
                &calibrate(&set, alpha)?,
            ));
        }
    }
    if cfg.experiment.weightings.iter().any(|w| *w != Weighting::None) {
        log::warn!("weightings need sample features; only unweighted calibration runs on imported logits");
    }
    ws.write_csv("calibration.csv", &rows)?;
    Ok(json!({
        "source": "external",
        "n_cal": data.len(),
        "scp_margins": margins_summary(&rows),
        "skipped_methods": skipped,
    }))
}

fn coverage_of(row: &CalibrationRow, ivs: &[IntervalRow]) -> CoverageRow {
    let n = ivs.len() as f64;
    CoverageRow {
        method: row.method,
        mode: row.mode,
        weighting: row.weighting,
        alpha_lo: row.alpha_lo,
        alpha_hi: row.alpha_hi,
        n_test: ivs.len(),
        coverage: ivs.iter().filter(|r| r.covered).count() as f64 / n,
        mean_width: ivs.iter().map(|r| r.hi - r.lo).sum::<f64>() / n,
        degenerate: ivs.iter().filter(|r| r.degenerate).count(),
    }
}

fn interval_row(row: &CalibrationRow, index: usize, y: f64, y_hat: f64, iv: &PerturbationInterval) -> IntervalRow {
    IntervalRow {
        method: row.method,
        mode: row.mode,
        weighting: row.weighting,
        alpha_lo: row.alpha_lo,
        alpha_hi: row.alpha_hi,
        index,
        y,
        y_hat,
        lo: iv.lo,
        hi: iv.hi,
        covered: iv.contains(y),
        degenerate: iv.degenerate,
    }
}

pub fn evaluate_cmd(
    ws: &mut Workspace,
    cfg: &RunConfig,
    external: Option<&ExternalInput>,
) -> Result<serde_json::Value, CliError> {
    let cal_rows: Vec<CalibrationRow> = ws.read_csv("calibration.csv")?;
    let mut intervals = Vec::new();
    let mut coverage = Vec::new();
    let source;
    if let Some(ext) = external {
        source = "external";
        let data = ext.load()?;
        let metric = cfg.experiment.benchmark.metric();
        let lines = data.lines(metric);
        let preds = data.predictions(metric);
        for row in &cal_rows {
            if row.method == Method::CompassJ {
                continue;
            }
            let cal = row.result();
            let mut ivs = Vec::with_capacity(data.len());
            for (i, line) in lines.iter().enumerate() {
                let range = (0.0, line.logits().len() as f64);
                let iv = match row.method {
                    Method::Scp => scp_interval(preds[i], cal.beta_hat(), range),
                    _ => predict_interval(line, &cal, range)?,
                };
                ivs.push(interval_row(row, i, data.y[i], preds[i], &iv));
            }
            coverage.push(coverage_of(row, &ivs));
            intervals.extend(ivs);
        }
    } else {
        source = "pipeline";
        let seed = cfg.seed();
        let (bench, _) = benchmark_for(ws, cfg, seed)?;
        let splits = bench.split(&cfg.experiment.split_spec_for(seed, 0))?;
        for row in &cal_rows {
            let cal = row.result();
            let ivs = bench
                .intervals(&splits.test, row.method, &cal)?
                .iter()
                .zip(&splits.test)
                .map(|(iv, &i)| {
                    let e = bench.entry(i)?;
                    Ok(interval_row(row, i, e.y, e.y_hat, iv))
                })
                .collect::<compass_core::Result<Vec<_>>>()?;
            coverage.push(coverage_of(row, &ivs));
            intervals.extend(ivs);
        }
        let test_samples: Vec<&Sample> = splits.test.iter().map(|&i| &bench.dataset[i]).collect();
        export(ws, &bench.params, &test_samples, "test")?;
    }
    ws.write_csv("intervals.csv", &intervals)?;
    ws.write_csv("coverage.csv", &coverage)?;
    Ok(json!({
        "source": source,
        "coverage": coverage
            .iter()
            .map(|c| json!({
                "method": c.method,
                "mode": c.mode,
                "weighting": c.weighting,
                "alpha_lo": c.alpha_lo,
                "coverage": c.coverage,
                "mean_width": c.mean_width,
            }))
            .collect::<Vec<_>>(),
    }))
}

pub fn sweep_cmd(ws: &mut Workspace, cfg: &RunConfig) -> Result<serde_json::Value, CliError> {
    let seed = cfg.seed();
    let sw = &cfg.sweep;
    let b = &cfg.experiment.benchmark;
    let (bench, _) = benchmark_for(ws, cfg, seed)?;
    let splits = bench.split(&cfg.experiment.split_spec_for(seed, 0))?;
    let range = b.search_latent.beta_range;
    let step = 2.0 * range / (sw.grid_points - 1) as f64;
    let mut rows = Vec::new();
    let mut nondecreasing = 0usize;
    let mut missed_targets = 0usize;
    for &i in splits.cal.iter().take(sw.samples) {
        let e = bench.entry(i)?;
        let mut grid: Vec<(f64, Option<f64>)> = (0..sw.grid_points).map(|k| (-range + k as f64 * step, None)).collect();
        grid.push((0.0, None));
        for &t in &sw.targets_pct {
            match target_beta(&e.latent_line, t, range, sw.bisection_steps)? {
                Some(beta) => grid.push((beta, Some(t))),
                None => missed_targets += 1,
            }
        }
        let betas: Vec<f64> = grid.iter().map(|g| g.0).collect();
        let report = beta_sweep(&e.latent_line, &betas)?;
        nondecreasing += usize::from(report.nondecreasing);
        let mut tagged = grid.clone();
        tagged.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (p, (_, target)) in report.points.iter().zip(&tagged) {
            rows.push(TrajectoryRow {
                index: i,
                class: e.class_label.name(),
                beta: p.beta,
                area: p.area,
                delta_pct: p.delta_pct,
                target_pct: *target,
            });
        }
    }
    ws.write_csv("trajectories.csv", &rows)?;

    let mut nest = Vec::new();
    for &i in splits.cal.iter().take(sw.nestedness_samples) {
        let e = bench.entry(i)?;
        for (method, resp, r) in [
            (
                Method::CompassJ,
                &e.latent_line as &dyn Response,
                b.search_latent.beta_range,
            ),
            (
                Method::CompassL,
                &e.logit_line as &dyn Response,
                b.search_logits.beta_range,
            ),
        ] {
            let rep = check_nestedness(resp, &uniform_grid(r, sw.nestedness_grid))?;
            nest.push(NestednessRow {
                index: i,
                method,
                ok: rep.ok,
                max_violation: rep.max_violation,
                violations: rep.violations,
            });
        }
    }
    ws.write_csv("nestedness.csv", &nest)?;
    Ok(json!({
        "swept": sw.samples.min(splits.cal.len()),
        "nondecreasing": nondecreasing,
        "missed_targets": missed_targets,
        "nestedness_checked": nest.len(),
        "nestedness_violations": nest.iter().filter(|r| !r.ok).count(),
    }))
}

pub fn analyze_cmd(ws: &mut Workspace, cfg: &RunConfig) -> Result<serde_json::Value, CliError> {
    let benches = cfg
        .experiment
        .seeds
        .iter()
        .map(|&s| benchmark_for(ws, cfg, s).map(|(b, _)| b))
        .collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<&Benchmark> = benches.iter().collect();
    let report = report_from(&refs, &cfg.experiment)?;
    ws.write_csv("records.csv", &report.records)?;
    ws.write_csv("summary.csv", &report.rows)?;
    if !report.failures.is_empty() {
        ws.write_csv("failures.csv", &report.failures)?;
    }
    let mut fits = Vec::new();
    let mut pairs = Vec::new();
    for bench in &benches {
        let residual: Vec<f64> = bench.entries.iter().map(|e| e.scores.residual).collect();
        for method in [Method::CompassJ, Method::CompassL] {
            let scores: Vec<f64> = bench
                .entries
                .iter()
                .map(|e| {
                    if method == Method::CompassJ {
                        e.scores.j_sym
                    } else {
                        e.scores.l_sym
                    }
                })
                .collect();
            let f = powerlaw_fit(&residual, &scores)?;
            fits.push(PowerLawRow {
                seed: bench.seed,
                method,
                slope: f.slope,
                intercept: f.intercept,
                r2: f.r2,
                n_points: f.n_points,
                excluded: f.excluded,
            });
        }
        pairs.extend(bench.entries.iter().map(|e| ScorePairRow {
            seed: bench.seed,
            index: e.index,
            residual: e.scores.residual,
            j_sym: e.scores.j_sym,
            l_sym: e.scores.l_sym,
        }));
    }
    ws.write_csv("powerlaw.csv", &fits)?;
    ws.write_csv("score_pairs.csv", &pairs)?;
    Ok(json!({
        "n_splits": report.n_splits,
        "failures": report.failures.len(),
        "rows": report
            .rows
            .iter()
            .map(|r| json!({
                "method": r.method,
                "mode": r.mode,
                "weighting": r.weighting,
                "alpha_lo": r.alpha_lo,
                "alpha_hi": r.alpha_hi,
                "coverage_mean": r.coverage_mean,
                "width_mean": r.width_mean,
                "clip_rate_mean": r.clip_rate_mean,
                "auc_mean": r.auc_mean,
            }))
            .collect::<Vec<_>>(),
        "powerlaw": fits
            .iter()
            .map(|f| json!({"seed": f.seed, "method": f.method, "slope": f.slope, "r2": f.r2}))
            .collect::<Vec<_>>(),
    }))
}
