//! Multi-trial experiment protocols and reports.
//!
//! Each trial derives its own seed from the experiment base seed, and the
//! mask, label split, parameter init, and dropout streams are derived
//! independently from the trial seed by role tags - so every method inside
//! a trial sees the identical mask and scaled data, and adding a method
//! never perturbs another method's randomness. Trials run in a work pool
//! and results are collected deterministically by (method, rate, trial).
//!
//! Protocols: imputation (train, evaluate MAE over unobserved cells, run
//! baselines on the identical mask), label prediction (with impute-then-
//! regress baselines), missing-rate sweeps, generalization to a disjoint
//! row split without retraining, and the three ablations (edge dropout,
//! aggregator, end-to-end vs two-stage).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Aggregator;
use crate::baselines::{knn_impute, linear_regression_fit_predict, mean_impute, BaselineResult};
use crate::dataset::{
    apply_scaler, load_csv, load_schema_json, make_synthetic, minmax_scale, sample_mask,
    split_labels, DataMatrix, MaskMatrix, SchemaSpec,
};
use crate::error::{GrapeError, Result};
use crate::graph::build_graph;
use crate::model::{impute_full, GrapeConfig};
use crate::rng::derive_seed;
use crate::training::{
    evaluate_label_mae, impute_then_predict, train_imputation, train_label_prediction,
    ProgressSender, Task, TrainConfig, TrainTrace,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source")]
pub enum DatasetSource {
    Csv {
        path: PathBuf,
        #[serde(default = "default_true")]
        has_header: bool,
        #[serde(default)]
        schema_path: Option<PathBuf>,
        /// Column holding the downstream label; excluded from the feature
        /// matrix.
        #[serde(default)]
        label_column: Option<usize>,
    },
    Synthetic {
        n: usize,
        m: usize,
        rank: usize,
        noise: f64,
        #[serde(default)]
        label: SyntheticLabel,
    },
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticLabel {
    #[default]
    RowSum,
    /// Sum of squared feature values per row (a nonlinear target).
    SumOfSquares,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Impute,
    Predict,
    Sweep,
    Generalize,
    AblateDropout,
    AblateAggregator,
    AblateEndToEnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub dataset: DatasetSource,
    pub dataset_name: String,
    pub protocol: Protocol,
    pub missing_rates: Vec<f64>,
    pub n_trials: usize,
    pub seed: u64,
    pub train: TrainConfig,
    /// Baseline identifiers: "mean", "knn".
    pub baselines: Vec<String>,
    pub knn_k: usize,
    /// Train fraction for label splits and the generalization row split.
    pub train_fraction: f64,
    pub output_dir: Option<PathBuf>,
    pub jobs: usize,
    /// Record per-phase wall clock in the report. Off by default so that
    /// identical seeded runs produce byte-identical reports.
    pub record_timing: bool,
    /// Write trial 0's imputed matrices (network and baselines) as CSV
    /// into the output directory.
    pub dump_imputed: bool,
}

impl ExperimentSpec {
    pub fn new(dataset: DatasetSource, name: impl Into<String>, protocol: Protocol) -> Self {
        Self {
            dataset,
            dataset_name: name.into(),
            protocol,
            missing_rates: vec![0.3],
            n_trials: 5,
            seed: 0,
            train: TrainConfig::desk_imputation(),
            baselines: vec!["mean".into(), "knn".into()],
            knn_k: 50,
            train_fraction: 0.7,
            output_dir: None,
            jobs: 1,
            record_timing: false,
            dump_imputed: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trials == 0 {
            return Err(GrapeError::InvalidArgument("n_trials must be >= 1".into()));
        }
        if self.missing_rates.is_empty() {
            return Err(GrapeError::InvalidArgument(
                "missing_rates must be non-empty".into(),
            ));
        }
        for &r in &self.missing_rates {
            if !(0.0..1.0).contains(&r) {
                return Err(GrapeError::InvalidArgument(format!(
                    "missing rate must be in [0, 1), got {r}"
                )));
            }
        }
        for b in &self.baselines {
            if b != "mean" && b != "knn" {
                return Err(GrapeError::InvalidArgument(format!(
                    "unknown baseline {b:?} (expected mean or knn)"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.train_fraction) || self.train_fraction == 0.0 {
            return Err(GrapeError::InvalidArgument(format!(
                "train_fraction must be in (0, 1), got {}",
                self.train_fraction
            )));
        }
        self.train.validate()
    }

    /// SHA-256 of the canonical JSON encoding, with the output location and
    /// worker count normalized away: they place and schedule the run but do
    /// not change what is computed.
    pub fn config_hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = None;
        canonical.jobs = 1;
        canonical.dump_imputed = false;
        let json = serde_json::to_string(&canonical).expect("spec serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub dataset: String,
    pub method: String,
    pub rate: f64,
    pub trial: usize,
    pub metric: String,
    /// `None` for degenerate cases (e.g. MAE with no unobserved cells).
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: String,
    pub rate: f64,
    pub metric: String,
    pub mean: Option<f64>,
    pub stddev: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub dataset: String,
    pub protocol: Protocol,
    pub config_hash: String,
    pub commit_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_times: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub meta: ReportMeta,
    pub rows: Vec<MetricRow>,
    pub aggregates: Vec<Aggregate>,
}

impl ExperimentReport {
    fn assemble(meta: ReportMeta, mut rows: Vec<MetricRow>) -> Self {
        rows.sort_by(|a, b| {
            a.method
                .cmp(&b.method)
                .then(a.rate.partial_cmp(&b.rate).expect("finite rates"))
                .then(a.metric.cmp(&b.metric))
                .then(a.trial.cmp(&b.trial))
        });
        let aggregates = compute_aggregates(&rows);
        Self {
            meta,
            rows,
            aggregates,
        }
    }

    /// Mean over trials for one (method, rate, metric) cell.
    pub fn aggregate_mean(&self, method: &str, rate: f64, metric: &str) -> Option<f64> {
        self.aggregates
            .iter()
            .find(|a| a.method == method && a.rate == rate && a.metric == metric)
            .and_then(|a| a.mean)
    }

    /// Flat CSV: dataset,method,rate,trial,metric,value.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("dataset,method,rate,trial,metric,value\n");
        for r in &self.rows {
            let value = r.value.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.dataset, r.method, r.rate, r.trial, r.metric, value
            ));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses a stored report and re-derives the aggregates from its rows,
    /// rejecting drift beyond 1e-12.
    pub fn load_json(text: &str) -> Result<Self> {
        let report: Self = serde_json::from_str(text)?;
        let recomputed = compute_aggregates(&report.rows);
        if recomputed.len() != report.aggregates.len() {
            return Err(GrapeError::InvalidArgument(
                "stored aggregates do not match rows".into(),
            ));
        }
        for (a, b) in report.aggregates.iter().zip(&recomputed) {
            let close = |x: Option<f64>, y: Option<f64>| match (x, y) {
                (Some(x), Some(y)) => (x - y).abs() <= 1e-12,
                (None, None) => true,
                _ => false,
            };
            if a.method != b.method
                || a.rate != b.rate
                || a.metric != b.metric
                || a.n != b.n
                || !close(a.mean, b.mean)
                || !close(a.stddev, b.stddev)
            {
                return Err(GrapeError::InvalidArgument(format!(
                    "stored aggregate for {}/{}/{} does not match its rows",
                    a.method, a.rate, a.metric
                )));
            }
        }
        Ok(report)
    }

    /// Writes report.json and report.csv into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.to_json()?)?;
        std::fs::write(dir.join("report.csv"), self.to_csv())?;
        Ok(())
    }
}

/// Population mean/stddev per (method, rate, metric), over trials with a
/// value present.
fn compute_aggregates(rows: &[MetricRow]) -> Vec<Aggregate> {
    let mut groups: BTreeMap<(String, String, String), Vec<f64>> = BTreeMap::new();
    for r in rows {
        let key = (
            r.method.clone(),
            format!("{:.12e}", r.rate),
            r.metric.clone(),
        );
        let entry = groups.entry(key).or_default();
        if let Some(v) = r.value {
            entry.push(v);
        }
    }
    groups
        .into_iter()
        .map(|((method, rate, metric), values)| {
            let n = values.len();
            let (mean, stddev) = if n == 0 {
                (None, None)
            } else {
                let mean = values.iter().sum::<f64>() / n as f64;
                let var =
                    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                (Some(mean), Some(var.sqrt()))
            };
            Aggregate {
                method,
                rate: rate.parse().expect("rate formats losslessly"),
                metric,
                mean,
                stddev,
                n,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MetricKind {
    Mae,
    Rmse,
    /// MAE divided by a reference MAE on the same region.
    NormalizedMae { baseline: f64 },
}

/// Error between two matrices over a region of cells.
pub fn compute_metrics(
    pred: &Array2<f64>,
    truth: &Array2<f64>,
    region: &[(usize, usize)],
    kind: MetricKind,
) -> Result<f64> {
    if region.is_empty() {
        return Err(GrapeError::InvalidArgument(
            "empty evaluation region".into(),
        ));
    }
    if pred.dim() != truth.dim() {
        return Err(GrapeError::Shape(format!(
            "prediction {:?} vs truth {:?}",
            pred.dim(),
            truth.dim()
        )));
    }
    let mae = || {
        region
            .iter()
            .map(|&(i, j)| (pred[(i, j)] - truth[(i, j)]).abs())
            .sum::<f64>()
            / region.len() as f64
    };
    Ok(match kind {
        MetricKind::Mae => mae(),
        MetricKind::Rmse => {
            let mse = region
                .iter()
                .map(|&(i, j)| {
                    let d = pred[(i, j)] - truth[(i, j)];
                    d * d
                })
                .sum::<f64>()
                / region.len() as f64;
            mse.sqrt()
        }
        MetricKind::NormalizedMae { baseline } => mae() / baseline,
    })
}

/// Resolved dataset: unscaled features plus optional labels.
pub struct ResolvedDataset {
    pub data: DataMatrix,
    pub labels: Option<Vec<f64>>,
}

pub fn resolve_dataset(source: &DatasetSource, seed: u64) -> Result<ResolvedDataset> {
    match source {
        DatasetSource::Csv {
            path,
            has_header,
            schema_path,
            label_column,
        } => {
            let schema = match schema_path {
                Some(p) => SchemaSpec::Explicit(load_schema_json(p)?),
                None => SchemaSpec::Infer,
            };
            let full = load_csv(path, schema, *has_header)?;
            match label_column {
                Some(label_col) => {
                    if *label_col >= full.n_cols() {
                        return Err(GrapeError::InvalidArgument(format!(
                            "label column {label_col} out of range for {} columns",
                            full.n_cols()
                        )));
                    }
                    let labels = full.values().column(*label_col).to_vec();
                    let keep: Vec<usize> =
                        (0..full.n_cols()).filter(|&j| j != *label_col).collect();
                    Ok(ResolvedDataset {
                        data: full.select_columns(&keep)?,
                        labels: Some(labels),
                    })
                }
                None => Ok(ResolvedDataset {
                    data: full,
                    labels: None,
                }),
            }
        }
        DatasetSource::Synthetic {
            n,
            m,
            rank,
            noise,
            label,
        } => {
            let (data, row_sums) = make_synthetic(*n, *m, *rank, *noise, seed)?;
            let labels = match label {
                SyntheticLabel::RowSum => row_sums,
                SyntheticLabel::SumOfSquares => (0..*n)
                    .map(|i| data.values().row(i).iter().map(|v| v * v).sum())
                    .collect(),
            };
            Ok(ResolvedDataset {
                data,
                labels: Some(labels),
            })
        }
    }
}

fn commit_id() -> String {
    std::process::Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

fn report_meta(spec: &ExperimentSpec, wall_times: Option<BTreeMap<String, f64>>) -> ReportMeta {
    ReportMeta {
        dataset: spec.dataset_name.clone(),
        protocol: spec.protocol,
        config_hash: spec.config_hash(),
        commit_id: commit_id(),
        wall_times,
    }
}

/// Per-trial seed: everything inside a trial derives from this by role.
pub fn trial_seed(base: u64, trial: usize) -> u64 {
    derive_seed(base, "trial", trial as u64)
}

/// Mask + observed-fit scaling for one trial; bit-identical inputs for
/// every method in the trial.
fn trial_data(data: &DataMatrix, rate: f64, t_seed: u64) -> Result<(DataMatrix, MaskMatrix)> {
    let mask = sample_mask(
        data.n_rows(),
        data.n_cols(),
        rate,
        derive_seed(t_seed, "mask", 0),
    )?;
    let scaled = minmax_scale(data, &mask)?;
    Ok((scaled, mask))
}

fn baseline_result(
    name: &str,
    scaled: &DataMatrix,
    mask: &MaskMatrix,
    knn_k: usize,
) -> Result<BaselineResult> {
    match name {
        "mean" => mean_impute(scaled, mask),
        "knn" => knn_impute(scaled, mask, knn_k),
        other => Err(GrapeError::InvalidArgument(format!(
            "unknown baseline {other:?}"
        ))),
    }
}

struct TrialOutput {
    trial: usize,
    rate: f64,
    /// (method, metric, value) triples.
    metrics: Vec<(String, String, Option<f64>)>,
    trace: TrainTrace,
}

impl TrialOutput {
    fn into_rows(self, dataset: &str, rows: &mut Vec<MetricRow>) {
        for (method, metric, value) in self.metrics {
            rows.push(MetricRow {
                dataset: dataset.to_string(),
                method,
                rate: self.rate,
                trial: self.trial,
                metric,
                value,
            });
        }
    }
}

/// One imputation trial: mask, scale, train, evaluate on unobserved cells,
/// run every baseline on the identical mask.
#[allow(clippy::too_many_arguments)]
fn imputation_trial(
    spec: &ExperimentSpec,
    data: &DataMatrix,
    rate: f64,
    trial: usize,
    grape_override: Option<&GrapeConfig>,
    dropout_override: Option<f64>,
    method_name: &str,
    with_baselines: bool,
    progress: Option<&ProgressSender>,
) -> Result<TrialOutput> {
    let t_seed = trial_seed(spec.seed, trial);
    let (scaled, mask) = trial_data(data, rate, t_seed)?;
    let mut config = spec.train.clone();
    config.task = Task::Imputation;
    config.seed = t_seed;
    if let Some(g) = grape_override {
        config.grape = g.clone();
    }
    if let Some(d) = dropout_override {
        config.edge_dropout = d;
    }

    let (params, trace) = train_imputation(&scaled, &mask, &config, progress)?;
    announce_trial(progress, trial, &trace);
    save_trial_checkpoint(spec, trial, &params, &config.grape)?;
    let graph = build_graph(&scaled, &mask)?;
    let imputed = impute_full(&params, &graph, &config.grape)?;
    if spec.dump_imputed && trial == 0 {
        if let Some(dir) = &spec.output_dir {
            std::fs::create_dir_all(dir)?;
            write_matrix_csv(&dir.join(format!("imputed_{method_name}.csv")), &imputed)?;
            for b in &spec.baselines {
                let result = baseline_result(b, &scaled, &mask, spec.knn_k)?;
                write_matrix_csv(&dir.join(format!("imputed_{b}.csv")), &result.imputed)?;
            }
        }
    }
    let region = mask.unobserved_entries();

    let mut metrics = Vec::new();
    if region.is_empty() {
        eprintln!("warning: missing rate {rate} leaves no unobserved cells; MAE reported as null");
        metrics.push((method_name.to_string(), "mae".into(), None));
        metrics.push((method_name.to_string(), "rmse".into(), None));
        if with_baselines {
            for b in &spec.baselines {
                metrics.push((b.clone(), "mae".into(), None));
                metrics.push((b.clone(), "rmse".into(), None));
            }
        }
    } else {
        let truth = scaled.values();
        let grape_mae = compute_metrics(&imputed, truth, &region, MetricKind::Mae)?;
        let grape_rmse = compute_metrics(&imputed, truth, &region, MetricKind::Rmse)?;
        metrics.push((method_name.to_string(), "mae".into(), Some(grape_mae)));
        metrics.push((method_name.to_string(), "rmse".into(), Some(grape_rmse)));
        if with_baselines {
            let mut mean_mae = None;
            let mut baseline_maes = Vec::new();
            for b in &spec.baselines {
                let result = baseline_result(b, &scaled, &mask, spec.knn_k)?;
                let mae = compute_metrics(&result.imputed, truth, &region, MetricKind::Mae)?;
                let rmse = compute_metrics(&result.imputed, truth, &region, MetricKind::Rmse)?;
                metrics.push((b.clone(), "mae".into(), Some(mae)));
                metrics.push((b.clone(), "rmse".into(), Some(rmse)));
                if b == "mean" {
                    mean_mae = Some(mae);
                }
                baseline_maes.push((b.clone(), mae));
            }
            if let Some(base) = mean_mae {
                metrics.push((
                    method_name.to_string(),
                    "normalized_mae".into(),
                    Some(grape_mae / base),
                ));
                for (b, mae) in baseline_maes {
                    metrics.push((b, "normalized_mae".into(), Some(mae / base)));
                }
            }
        }
    }
    Ok(TrialOutput {
        trial,
        rate,
        metrics,
        trace,
    })
}

/// Trial 0's trained model lands at `<run_dir>/model_final.ckpt`.
fn save_trial_checkpoint(
    spec: &ExperimentSpec,
    trial: usize,
    params: &crate::model::ModelParams,
    grape: &GrapeConfig,
) -> Result<()> {
    if trial == 0 {
        if let Some(dir) = &spec.output_dir {
            std::fs::create_dir_all(dir)?;
            crate::model::save_checkpoint(params, grape, dir.join("model_final.ckpt"))?;
        }
    }
    Ok(())
}

fn announce_trial(progress: Option<&ProgressSender>, trial: usize, trace: &TrainTrace) {
    if let (Some(tx), Some(last)) = (progress, trace.points.last()) {
        let _ = tx.send(crate::training::ProgressEvent {
            trial: Some(trial),
            epoch: last.epoch,
            train_loss: last.train_loss,
            test_metric: last.test_metric,
        });
    }
}

fn write_matrix_csv(path: &Path, matrix: &Array2<f64>) -> Result<()> {
    let mut out = String::new();
    for row in matrix.rows() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn wrap_trial_error<T>(trial: usize, result: Result<T>) -> Result<T> {
    result.map_err(|e| GrapeError::Trial {
        trial,
        source: Box::new(e),
    })
}

/// Runs a closure over (rate, trial) cells on a work pool of `spec.jobs`
/// threads, collecting results in deterministic (rate, trial) order. A
/// failed cell aborts the experiment with its trial attached.
fn run_cells<T: Send>(
    spec: &ExperimentSpec,
    rates: &[f64],
    work: impl Fn(f64, usize) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    let cells: Vec<(f64, usize)> = rates
        .iter()
        .flat_map(|&r| (0..spec.n_trials).map(move |t| (r, t)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.jobs.max(1))
        .build()
        .map_err(|e| GrapeError::InvalidArgument(format!("work pool: {e}")))?;
    let results: Vec<Result<T>> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(rate, trial)| wrap_trial_error(trial, work(rate, trial)))
            .collect()
    });
    results.into_iter().collect()
}

fn write_trace(dir: &Option<PathBuf>, name: &str, trace: &TrainTrace) -> Result<()> {
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(name), trace.to_csv())?;
    }
    Ok(())
}

/// Feature imputation protocol, optionally over several missing rates
/// (the sweep protocol reuses this with its own rate list).
pub fn run_imputation_experiment(
    spec: &ExperimentSpec,
    progress: Option<&ProgressSender>,
) -> Result<ExperimentReport> {
    spec.validate()?;
    let started = std::time::Instant::now();
    let dataset = resolve_dataset(&spec.dataset, derive_seed(spec.seed, "dataset", 0))?;

    let outputs = run_cells(spec, &spec.missing_rates, |rate, trial| {
        imputation_trial(
            spec,
            &dataset.data,
            rate,
            trial,
            None,
            None,
            "grape",
            true,
            progress,
        )
    })?;

    let mut rows = Vec::new();
    for out in outputs {
        let trace_name = if spec.missing_rates.len() == 1 {
            format!("trace_{}.csv", out.trial)
        } else {
            format!("trace_rate{}_{}.csv", out.rate, out.trial)
        };
        write_trace(&spec.output_dir, &trace_name, &out.trace)?;
        out.into_rows(&spec.dataset_name, &mut rows);
    }
    let wall = spec.record_timing.then(|| {
        let mut map = BTreeMap::new();
        map.insert("total_seconds".into(), started.elapsed().as_secs_f64());
        map
    });
    Ok(ExperimentReport::assemble(report_meta(spec, wall), rows))
}

/// Missing-rate sweep: the imputation protocol across the spec's rate list,
/// one merged report with per-rate curves.
pub fn run_missing_sweep(
    spec: &ExperimentSpec,
    progress: Option<&ProgressSender>,
) -> Result<ExperimentReport> {
    run_imputation_experiment(spec, progress)
}

/// Label-prediction protocol: train the node head end to end; baselines
/// impute with mean/KNN and then fit ordinary least squares, mirroring the
/// comparison protocol for methods without an end-to-end path.
pub fn run_prediction_experiment(
    spec: &ExperimentSpec,
    progress: Option<&ProgressSender>,
) -> Result<ExperimentReport> {
    spec.validate()?;
    let started = std::time::Instant::now();
    let dataset = resolve_dataset(&spec.dataset, derive_seed(spec.seed, "dataset", 0))?;
    let labels = dataset.labels.clone().ok_or_else(|| {
        GrapeError::InvalidArgument(
            "label prediction needs a label column or synthetic labels".into(),
        )
    })?;

    let outputs = run_cells(spec, &spec.missing_rates, |rate, trial| {
        let t_seed = trial_seed(spec.seed, trial);
        let (scaled, mask) = trial_data(&dataset.data, rate, t_seed)?;
        let split = split_labels(&labels, spec.train_fraction, derive_seed(t_seed, "split", 0))?;
        let mut config = spec.train.clone();
        config.seed = t_seed;
        if config.task == Task::Imputation {
            config.task = Task::LabelPrediction;
        }
        let (params, trace) = train_label_prediction(&scaled, &mask, &split, &config, progress)?;
        announce_trial(progress, trial, &trace);
        save_trial_checkpoint(spec, trial, &params, &config.grape)?;
        let graph = build_graph(&scaled, &mask)?;
        let test_idx = split.test_indices();
        let grape_mae = evaluate_label_mae(&params, &config.grape, &graph, &split, &test_idx)?;

        let mut metrics = vec![(
            "grape".to_string(),
            "label_mae".to_string(),
            Some(grape_mae),
        )];
        for b in &spec.baselines {
            let imputed = baseline_result(b, &scaled, &mask, spec.knn_k)?.imputed;
            let train_idx = split.train_indices();
            let take = |idx: &[usize]| {
                Array2::from_shape_fn((idx.len(), imputed.ncols()), |(r, c)| imputed[(idx[r], c)])
            };
            let y_train: Vec<f64> = train_idx.iter().map(|&i| split.labels[i]).collect();
            let preds =
                linear_regression_fit_predict(&take(&train_idx), &y_train, &take(&test_idx))?;
            let mae = test_idx
                .iter()
                .zip(&preds)
                .map(|(&i, p)| (split.labels[i] - p).abs())
                .sum::<f64>()
                / test_idx.len() as f64;
            metrics.push((format!("{b}_then_ols"), "label_mae".to_string(), Some(mae)));
        }
        Ok(TrialOutput {
            trial,
            rate,
            metrics,
            trace,
        })
    })?;

    let mut rows = Vec::new();
    for out in outputs {
        write_trace(
            &spec.output_dir,
            &format!("trace_{}.csv", out.trial),
            &out.trace,
        )?;
        out.into_rows(&spec.dataset_name, &mut rows);
    }
    let wall = spec.record_timing.then(|| {
        let mut map = BTreeMap::new();
        map.insert("total_seconds".into(), started.elapsed().as_secs_f64());
        map
    });
    Ok(ExperimentReport::assemble(report_meta(spec, wall), rows))
}

/// Generalization protocol: split rows 70/30, train on the train-row graph
/// only, then apply the trained model to the disjoint test-row graph with
/// no retraining. Scalers are fitted on train rows and reused for test
/// rows. The mean baseline runs directly on the test split.
pub fn run_generalization(
    spec: &ExperimentSpec,
    progress: Option<&ProgressSender>,
) -> Result<ExperimentReport> {
    spec.validate()?;
    let started = std::time::Instant::now();
    let dataset = resolve_dataset(&spec.dataset, derive_seed(spec.seed, "dataset", 0))?;
    let rate = spec.missing_rates[0];

    let outputs = run_cells(spec, &[rate], |rate, trial| {
        let t_seed = trial_seed(spec.seed, trial);
        let n = dataset.data.n_rows();
        // Row split via the label-split machinery (train = true).
        let row_split = split_labels(
            &vec![0.0; n],
            spec.train_fraction,
            derive_seed(t_seed, "rowsplit", 0),
        )?;
        let train_rows = row_split.train_indices();
        let test_rows = row_split.test_indices();

        // The train split must observe every column to fit scalers, which
        // whole-matrix sampling does not guarantee; resample with derived
        // seeds until it does.
        let m = dataset.data.n_cols();
        let mut chosen = None;
        for attempt in 0..100 {
            let mask = sample_mask(n, m, rate, derive_seed(t_seed, "mask", attempt))?;
            let train_mask = mask.select_rows(&train_rows);
            let covered = (0..m).all(|j| {
                train_mask.observed().column(j).iter().any(|&o| o)
            });
            if covered {
                chosen = Some(mask);
                break;
            }
        }
        let mask = chosen.ok_or_else(|| {
            GrapeError::MaskSampling(
                "no mask with train-split column coverage after 100 tries".into(),
            )
        })?;
        let train_raw = dataset.data.select_rows(&train_rows)?;
        let test_raw = dataset.data.select_rows(&test_rows)?;
        let train_mask = mask.select_rows(&train_rows);
        let test_mask = mask.select_rows(&test_rows);
        let train_scaled = minmax_scale(&train_raw, &train_mask)?;
        let test_scaled = apply_scaler(&test_raw, &train_scaled)?;

        let mut config = spec.train.clone();
        config.task = Task::Imputation;
        config.seed = t_seed;
        let (params, trace) = train_imputation(&train_scaled, &train_mask, &config, progress)?;
        announce_trial(progress, trial, &trace);

        let train_graph = build_graph(&train_scaled, &train_mask)?;
        let test_graph = build_graph(&test_scaled, &test_mask)?;
        let train_imputed = impute_full(&params, &train_graph, &config.grape)?;
        let test_imputed = impute_full(&params, &test_graph, &config.grape)?;

        let train_region = train_mask.unobserved_entries();
        let test_region = test_mask.unobserved_entries();
        let train_mae = compute_metrics(
            &train_imputed,
            train_scaled.values(),
            &train_region,
            MetricKind::Mae,
        )?;
        let test_mae = compute_metrics(
            &test_imputed,
            test_scaled.values(),
            &test_region,
            MetricKind::Mae,
        )?;
        // Mean baseline applied directly to the test split; a column with
        // no observed test entry (tiny splits) falls back to the train mean.
        let mut mean_imputed = test_scaled.values().clone();
        for j in 0..m {
            let observed_in = |data: &DataMatrix, mask: &MaskMatrix| {
                let vals: Vec<f64> = (0..data.n_rows())
                    .filter(|&i| mask.is_observed(i, j))
                    .map(|i| data.values()[(i, j)])
                    .collect();
                vals
            };
            let test_vals = observed_in(&test_scaled, &test_mask);
            let fill = if test_vals.is_empty() {
                let train_vals = observed_in(&train_scaled, &train_mask);
                train_vals.iter().sum::<f64>() / train_vals.len() as f64
            } else {
                test_vals.iter().sum::<f64>() / test_vals.len() as f64
            };
            for i in 0..test_scaled.n_rows() {
                if !test_mask.is_observed(i, j) {
                    mean_imputed[(i, j)] = fill;
                }
            }
        }
        let mean_mae = compute_metrics(
            &mean_imputed,
            test_scaled.values(),
            &test_region,
            MetricKind::Mae,
        )?;

        Ok(TrialOutput {
            trial,
            rate,
            metrics: vec![
                ("grape".into(), "train_graph_mae".into(), Some(train_mae)),
                ("grape".into(), "test_graph_mae".into(), Some(test_mae)),
                ("mean".into(), "test_graph_mae".into(), Some(mean_mae)),
            ],
            trace,
        })
    })?;

    let mut rows = Vec::new();
    for out in outputs {
        write_trace(
            &spec.output_dir,
            &format!("trace_{}.csv", out.trial),
            &out.trace,
        )?;
        out.into_rows(&spec.dataset_name, &mut rows);
    }
    let wall = spec.record_timing.then(|| {
        let mut map = BTreeMap::new();
        map.insert("total_seconds".into(), started.elapsed().as_secs_f64());
        map
    });
    Ok(ExperimentReport::assemble(report_meta(spec, wall), rows))
}

/// Ablations. All arms inside a trial share the trial seed, so masks,
/// scaling, splits, and init are bit-identical across arms.
pub fn run_ablations(
    spec: &ExperimentSpec,
    progress: Option<&ProgressSender>,
) -> Result<ExperimentReport> {
    spec.validate()?;
    let started = std::time::Instant::now();
    let dataset = resolve_dataset(&spec.dataset, derive_seed(spec.seed, "dataset", 0))?;
    let rate = spec.missing_rates[0];
    let mut rows = Vec::new();

    match spec.protocol {
        Protocol::AblateDropout => {
            let arms = [
                ("with_dropout", spec.train.edge_dropout.max(0.3), true),
                ("without_dropout", 0.0, false),
            ];
            for (name, dropout, with_baselines) in arms {
                let outputs = run_cells(spec, &[rate], |rate, trial| {
                    imputation_trial(
                        spec,
                        &dataset.data,
                        rate,
                        trial,
                        None,
                        Some(dropout),
                        name,
                        with_baselines,
                        progress,
                    )
                })?;
                for out in outputs {
                    write_trace(
                        &spec.output_dir,
                        &format!("trace_{name}_{}.csv", out.trial),
                        &out.trace,
                    )?;
                    out.into_rows(&spec.dataset_name, &mut rows);
                }
            }
        }
        Protocol::AblateAggregator => {
            for aggregator in [Aggregator::Sum, Aggregator::Max, Aggregator::Mean] {
                let mut grape = spec.train.grape.clone();
                grape.aggregator = aggregator;
                let name = format!("grape_{}", aggregator.name());
                let with_baselines = aggregator == Aggregator::Mean;
                let outputs = run_cells(spec, &[rate], |rate, trial| {
                    imputation_trial(
                        spec,
                        &dataset.data,
                        rate,
                        trial,
                        Some(&grape),
                        None,
                        &name,
                        with_baselines,
                        progress,
                    )
                })?;
                for out in outputs {
                    write_trace(
                        &spec.output_dir,
                        &format!("trace_{name}_{}.csv", out.trial),
                        &out.trace,
                    )?;
                    out.into_rows(&spec.dataset_name, &mut rows);
                }
            }
        }
        Protocol::AblateEndToEnd => {
            let labels = dataset.labels.clone().ok_or_else(|| {
                GrapeError::InvalidArgument(
                    "end-to-end ablation needs a label column or synthetic labels".into(),
                )
            })?;
            struct Arms {
                trial: usize,
                rate: f64,
                end_to_end: f64,
                two_stage: f64,
            }
            let outputs = run_cells(spec, &[rate], |rate, trial| {
                let t_seed = trial_seed(spec.seed, trial);
                let (scaled, mask) = trial_data(&dataset.data, rate, t_seed)?;
                let split =
                    split_labels(&labels, spec.train_fraction, derive_seed(t_seed, "split", 0))?;

                // End-to-end arm: node head trained on the label loss.
                let mut e2e = spec.train.clone();
                e2e.seed = t_seed;
                e2e.task = Task::LabelPrediction;
                if e2e.grape.node_head == crate::model::NodeHead::None {
                    e2e.grape = GrapeConfig::label_prediction_default();
                }
                let (params, _) = train_label_prediction(&scaled, &mask, &split, &e2e, progress)?;
                let graph = build_graph(&scaled, &mask)?;
                let end_to_end =
                    evaluate_label_mae(&params, &e2e.grape, &graph, &split, &split.test_indices())?;

                // Two-stage arm: the imputation architecture, then OLS.
                let mut two_stage_cfg = spec.train.clone();
                two_stage_cfg.seed = t_seed;
                two_stage_cfg.grape = GrapeConfig::imputation_default();
                two_stage_cfg.grape.aggregator = spec.train.grape.aggregator;
                two_stage_cfg.grape.message_source = spec.train.grape.message_source;
                let two_stage =
                    impute_then_predict(&scaled, &mask, &split, &two_stage_cfg, progress)?;
                Ok(Arms {
                    trial,
                    rate,
                    end_to_end,
                    two_stage,
                })
            })?;
            for out in &outputs {
                for (method, value) in [
                    ("end_to_end", out.end_to_end),
                    ("impute_then_predict", out.two_stage),
                ] {
                    rows.push(MetricRow {
                        dataset: spec.dataset_name.clone(),
                        method: method.into(),
                        rate: out.rate,
                        trial: out.trial,
                        metric: "label_mae".into(),
                        value: Some(value),
                    });
                }
            }
        }
        other => {
            return Err(GrapeError::InvalidArgument(format!(
                "run_ablations called with protocol {other:?}"
            )))
        }
    }

    let wall = spec.record_timing.then(|| {
        let mut map = BTreeMap::new();
        map.insert("total_seconds".into(), started.elapsed().as_secs_f64());
        map
    });
    Ok(ExperimentReport::assemble(report_meta(spec, wall), rows))
}

/// Protocol dispatch; writes report files into the spec's output dir when
/// one is set.
pub fn run_experiment(
    spec: &ExperimentSpec,
    progress: Option<&ProgressSender>,
) -> Result<ExperimentReport> {
    let report = match spec.protocol {
        Protocol::Impute | Protocol::Sweep => run_imputation_experiment(spec, progress)?,
        Protocol::Predict => run_prediction_experiment(spec, progress)?,
        Protocol::Generalize => run_generalization(spec, progress)?,
        Protocol::AblateDropout | Protocol::AblateAggregator | Protocol::AblateEndToEnd => {
            run_ablations(spec, progress)?
        }
    };
    if let Some(dir) = &spec.output_dir {
        report.write(dir)?;
    }
    Ok(report)
}
