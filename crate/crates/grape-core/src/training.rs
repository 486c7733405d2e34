//! Training loops for the two tasks.
//!
//! Feature imputation: every epoch resamples an edge-dropout mask with a
//! seed derived from (run seed, epoch), runs the network on the dropped
//! graph, and supervises predictions for ALL observed cells - dropped
//! edges are hidden from the input but still supervised, which is what
//! turns dropout into an imputation surrogate. Continuous cells contribute
//! mean squared error, categorical cells cross-entropy.
//!
//! Label prediction: the node head reads each row of the imputed matrix
//! (ground truth at observed cells, predictions elsewhere) and the loss is
//! the MSE against training labels; joint mode adds a weighted imputation
//! loss on top.
//!
//! Evaluation points run on the full (undropped) graph: imputation reports
//! MAE over unobserved cells against held-out truth, label prediction MAE
//! over test labels. Training is full-batch with Adam and a global
//! gradient-norm clip at 10.

use std::sync::mpsc::Sender;
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::{clip_global_norm, AdamState, Tape, TensorId};
use crate::baselines::linear_regression_fit_predict;
use crate::dataset::{ColumnKind, DataMatrix, LabelVector, MaskMatrix};
use crate::error::{GrapeError, Result};
use crate::graph::{build_graph, drop_edges, BipartiteGraph, DropMask};
use crate::model::{
    self, all_cells_feature_major, edge_head_output, graph_flow, init_params, GrapeConfig,
    ModelDims, ModelParams, NodeHead,
};
use crate::rng::derive_seed;

const GRAD_CLIP_NORM: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Task {
    Imputation,
    LabelPrediction,
    Joint { weight: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub edge_dropout: f64,
    pub task: Task,
    pub seed: u64,
    pub eval_every: usize,
    pub grape: GrapeConfig,
}

impl TrainConfig {
    /// Reproduction imputation preset: 20,000 epochs, lr 0.001, dropout 0.3.
    pub fn full_imputation() -> Self {
        Self {
            epochs: 20_000,
            learning_rate: 0.001,
            edge_dropout: 0.3,
            task: Task::Imputation,
            seed: 0,
            eval_every: 500,
            grape: GrapeConfig::imputation_default(),
        }
    }

    /// CI-scale imputation preset: identical except 4,000 epochs.
    pub fn desk_imputation() -> Self {
        Self {
            epochs: 4_000,
            eval_every: 200,
            ..Self::full_imputation()
        }
    }

    /// Reproduction label-prediction preset: 2 layers, 16 hidden, linear heads.
    pub fn full_prediction() -> Self {
        Self {
            epochs: 20_000,
            learning_rate: 0.001,
            edge_dropout: 0.3,
            task: Task::LabelPrediction,
            seed: 0,
            eval_every: 500,
            grape: GrapeConfig::label_prediction_default(),
        }
    }

    /// CI-scale label-prediction preset.
    pub fn desk_prediction() -> Self {
        Self {
            epochs: 4_000,
            eval_every: 200,
            ..Self::full_prediction()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(GrapeError::InvalidArgument("epochs must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.edge_dropout) {
            return Err(GrapeError::InvalidArgument(format!(
                "edge_dropout must be in [0, 1), got {}",
                self.edge_dropout
            )));
        }
        if self.eval_every == 0 {
            return Err(GrapeError::InvalidArgument("eval_every must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(GrapeError::InvalidArgument(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        self.grape.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_metric: Option<f64>,
    /// Seconds since training started; excluded from exported rows so that
    /// seeded runs compare bit-for-bit.
    pub wall_time: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub points: Vec<TracePoint>,
    /// Epochs where gradient clipping fired.
    pub clipped_epochs: Vec<usize>,
}

impl TrainTrace {
    /// The deterministic view: (epoch, train_loss, test_metric) rows.
    pub fn rows(&self) -> Vec<(usize, f64, Option<f64>)> {
        self.points
            .iter()
            .map(|p| (p.epoch, p.train_loss, p.test_metric))
            .collect()
    }

    /// CSV with columns epoch,train_loss,test_metric.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,test_metric\n");
        for p in &self.points {
            let metric = p.test_metric.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{}\n", p.epoch, p.train_loss, metric));
        }
        out
    }
}

/// Sent by trainers at evaluation points; the receiving end (typically the
/// CLI) decides how to render them.
#[derive(Debug, Clone)]
pub struct ProgressEvent {
    pub trial: Option<usize>,
    pub epoch: usize,
    pub train_loss: f64,
    pub test_metric: Option<f64>,
}

pub type ProgressSender = Sender<ProgressEvent>;

/// How observed-cell supervision rows map into the head tensor the loss
/// reads from: either the head was computed over exactly the observed
/// queries (dense), or over all n*m cells in feature-major order.
enum TargetLayout {
    Dense,
    AllCells { n: usize },
}

enum TargetGroup {
    Continuous {
        offset: usize,
        rows: Vec<usize>,
        values: Array2<f64>,
    },
    Categorical {
        offset: usize,
        width: usize,
        rows: Vec<usize>,
        codes: Vec<usize>,
    },
}

/// Supervision for every observed cell, grouped per head-output slice and
/// ordered feature-major.
pub(crate) struct ObservedTargets {
    queries: Vec<(usize, usize)>,
    groups: Vec<TargetGroup>,
    n_continuous: usize,
    n_categorical: usize,
}

impl ObservedTargets {
    fn build(graph: &BipartiteGraph, dims: &ModelDims, layout: TargetLayout) -> Self {
        let m = graph.n_feature_nodes();
        // Feature-major edge ordering keeps per-feature rows contiguous.
        let mut by_feature: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
        for edge in graph.edges() {
            let value = match dims.feature_kinds[edge.feature_index] {
                ColumnKind::Continuous => edge.feature_vector[0],
                ColumnKind::Categorical { cardinality } => {
                    let mut best = 0;
                    for c in 1..cardinality {
                        if edge.feature_vector[c] > edge.feature_vector[best] {
                            best = c;
                        }
                    }
                    best as f64
                }
            };
            by_feature[edge.feature_index].push((edge.data_index, value));
        }

        let mut queries = Vec::new();
        let mut groups = Vec::new();
        let mut n_continuous = 0;
        let mut n_categorical = 0;
        for (j, cells) in by_feature.iter().enumerate() {
            if cells.is_empty() {
                continue;
            }
            let rows: Vec<usize> = cells
                .iter()
                .map(|&(i, _)| match layout {
                    TargetLayout::Dense => {
                        queries.push((i, j));
                        queries.len() - 1
                    }
                    TargetLayout::AllCells { n } => j * n + i,
                })
                .collect();
            match dims.feature_kinds[j] {
                ColumnKind::Continuous => {
                    n_continuous += cells.len();
                    let values = Array2::from_shape_fn((cells.len(), 1), |(r, _)| cells[r].1);
                    groups.push(TargetGroup::Continuous {
                        offset: dims.output_offsets[j],
                        rows,
                        values,
                    });
                }
                ColumnKind::Categorical { cardinality } => {
                    n_categorical += cells.len();
                    let codes = cells.iter().map(|&(_, v)| v as usize).collect();
                    groups.push(TargetGroup::Categorical {
                        offset: dims.output_offsets[j],
                        width: cardinality,
                        rows,
                        codes,
                    });
                }
            }
        }
        Self {
            queries,
            groups,
            n_continuous,
            n_categorical,
        }
    }
}

/// Observed-cell loss: MSE averaged over all observed continuous cells plus
/// cross-entropy averaged over all observed categorical cells. `head` must
/// match the layout the targets were built with.
pub(crate) fn observed_edge_loss(
    tape: &mut Tape,
    head: TensorId,
    targets: &ObservedTargets,
) -> Result<TensorId> {
    let mut mse_total: Option<TensorId> = None;
    let mut ce_total: Option<TensorId> = None;
    for group in &targets.groups {
        match group {
            TargetGroup::Continuous {
                offset,
                rows,
                values,
            } => {
                let block = tape.gather_rows(head, rows)?;
                let pred = tape.slice_cols(block, *offset, 1)?;
                let target = tape.constant(values.clone());
                let mse = tape.mse_loss(pred, target)?;
                let weighted = tape.scale(mse, rows.len() as f64 / targets.n_continuous as f64);
                mse_total = Some(match mse_total {
                    Some(acc) => tape.add(acc, weighted)?,
                    None => weighted,
                });
            }
            TargetGroup::Categorical {
                offset,
                width,
                rows,
                codes,
            } => {
                let block = tape.gather_rows(head, rows)?;
                let logits = tape.slice_cols(block, *offset, *width)?;
                let ce = tape.softmax_cross_entropy(logits, codes)?;
                let weighted = tape.scale(ce, rows.len() as f64 / targets.n_categorical as f64);
                ce_total = Some(match ce_total {
                    Some(acc) => tape.add(acc, weighted)?,
                    None => weighted,
                });
            }
        }
    }
    match (mse_total, ce_total) {
        (Some(a), Some(b)) => tape.add(a, b),
        (Some(a), None) => Ok(a),
        (None, Some(b)) => Ok(b),
        (None, None) => Err(GrapeError::InvalidArgument(
            "no observed cells to supervise".into(),
        )),
    }
}

/// Builds the imputation training loss for one dropout draw and returns it
/// with the tape and bound parameters, for the optimizer step.
fn imputation_loss_tape(
    params: &ModelParams,
    graph: &BipartiteGraph,
    drop: &DropMask,
    config: &GrapeConfig,
    requires_grad: bool,
) -> Result<(Tape, model::TapeParams, TensorId)> {
    let mut tape = Tape::new();
    let tp = params.bind(&mut tape, requires_grad, config);
    let flow = graph_flow(&mut tape, &tp, config, graph, drop)?;
    let targets = ObservedTargets::build(graph, &params.dims, TargetLayout::Dense);
    let head = edge_head_output(&mut tape, &tp, graph, flow.h, &targets.queries)?;
    let loss = observed_edge_loss(&mut tape, head, &targets)?;
    Ok((tape, tp, loss))
}

/// Imputation training loss (observed cells, dropped-graph forward).
pub fn imputation_loss(
    params: &ModelParams,
    graph: &BipartiteGraph,
    drop: &DropMask,
    config: &GrapeConfig,
) -> Result<f64> {
    let (tape, _, loss) = imputation_loss_tape(params, graph, drop, config, false)?;
    Ok(tape.scalar(loss))
}

/// Imputation loss plus its gradient with respect to every parameter tensor
/// (canonical order). The gradient side of the finite-difference checks.
pub fn imputation_loss_with_gradients(
    params: &ModelParams,
    graph: &BipartiteGraph,
    drop: &DropMask,
    config: &GrapeConfig,
) -> Result<(f64, Vec<Array2<f64>>)> {
    let (mut tape, tp, loss) = imputation_loss_tape(params, graph, drop, config, true)?;
    tape.backward(loss)?;
    Ok((tape.scalar(loss), tp.gradients(&tape)))
}

fn label_loss_tape(
    params: &ModelParams,
    graph: &BipartiteGraph,
    train_idx: &[usize],
    y_train: &Array2<f64>,
    joint_weight: f64,
    drop: &DropMask,
    config: &GrapeConfig,
    requires_grad: bool,
) -> Result<(Tape, model::TapeParams, TensorId)> {
    let mut tape = Tape::new();
    let tp = params.bind(&mut tape, requires_grad, config);
    let flow = graph_flow(&mut tape, &tp, config, graph, drop)?;
    let n = graph.n_data_nodes();
    let all_cells = all_cells_feature_major(n, graph.n_feature_nodes());
    let head_all = edge_head_output(&mut tape, &tp, graph, flow.h, &all_cells)?;
    let d_hat = model::imputed_matrix(&mut tape, config, &params.dims, graph, head_all)?;
    let y_pred = tp.apply_node_head(&mut tape, d_hat)?;
    let y_pred_train = tape.gather_rows(y_pred, train_idx)?;
    let target = tape.constant(y_train.clone());
    let mut loss = tape.mse_loss(y_pred_train, target)?;
    if joint_weight != 0.0 {
        let targets = ObservedTargets::build(graph, &params.dims, TargetLayout::AllCells { n });
        let edge_loss = observed_edge_loss(&mut tape, head_all, &targets)?;
        let weighted = tape.scale(edge_loss, joint_weight);
        loss = tape.add(loss, weighted)?;
    }
    Ok((tape, tp, loss))
}

/// Label-prediction training loss (train rows only, dropped-graph forward).
pub fn label_loss(
    params: &ModelParams,
    graph: &BipartiteGraph,
    labels: &LabelVector,
    joint_weight: f64,
    drop: &DropMask,
    config: &GrapeConfig,
) -> Result<f64> {
    let (train_idx, y_train) = train_targets(labels);
    let (tape, _, loss) = label_loss_tape(
        params, graph, &train_idx, &y_train, joint_weight, drop, config, false,
    )?;
    Ok(tape.scalar(loss))
}

/// Label loss plus parameter gradients in canonical order.
pub fn label_loss_with_gradients(
    params: &ModelParams,
    graph: &BipartiteGraph,
    labels: &LabelVector,
    joint_weight: f64,
    drop: &DropMask,
    config: &GrapeConfig,
) -> Result<(f64, Vec<Array2<f64>>)> {
    let (train_idx, y_train) = train_targets(labels);
    let (mut tape, tp, loss) = label_loss_tape(
        params, graph, &train_idx, &y_train, joint_weight, drop, config, true,
    )?;
    tape.backward(loss)?;
    Ok((tape.scalar(loss), tp.gradients(&tape)))
}

fn train_targets(labels: &LabelVector) -> (Vec<usize>, Array2<f64>) {
    let train_idx = labels.train_indices();
    let y_train = Array2::from_shape_fn((train_idx.len(), 1), |(r, _)| labels.labels[train_idx[r]]);
    (train_idx, y_train)
}

/// Predictions (scalar view) for the listed cells on the full graph.
pub fn predict_entries(
    params: &ModelParams,
    config: &GrapeConfig,
    graph: &BipartiteGraph,
    entries: &[(usize, usize)],
) -> Result<Vec<f64>> {
    let out = model::forward(
        params,
        graph,
        &DropMask::keep_all(graph.n_edges()),
        entries,
        config,
    )?;
    Ok(out.edge_predictions.iter().map(|p| p.as_value()).collect())
}

/// MAE over unobserved cells against held-out truth, on the full graph.
/// `None` when nothing is unobserved.
pub fn evaluate_unobserved_mae(
    params: &ModelParams,
    config: &GrapeConfig,
    data: &DataMatrix,
    mask: &MaskMatrix,
    graph: &BipartiteGraph,
) -> Result<Option<f64>> {
    let entries = mask.unobserved_entries();
    if entries.is_empty() {
        return Ok(None);
    }
    let preds = predict_entries(params, config, graph, &entries)?;
    let mae = entries
        .iter()
        .zip(&preds)
        .map(|(&(i, j), p)| (data.values()[(i, j)] - p).abs())
        .sum::<f64>()
        / entries.len() as f64;
    Ok(Some(mae))
}

struct Optimizer {
    adam: AdamState,
    clipped: Vec<usize>,
}

impl Optimizer {
    fn new(config: &TrainConfig, params: &ModelParams) -> Self {
        Self {
            adam: AdamState::new(config.learning_rate, &params.shapes()),
            clipped: Vec::new(),
        }
    }

    fn apply(&mut self, params: &mut ModelParams, mut grads: Vec<Array2<f64>>, epoch: usize) -> Result<()> {
        if let Some(norm) = clip_global_norm(&mut grads, GRAD_CLIP_NORM) {
            self.clipped.push(epoch);
            if self.clipped.len() <= 3 {
                eprintln!("epoch {epoch}: gradient norm {norm:.3} clipped to {GRAD_CLIP_NORM}");
            }
        }
        let mut tensors = params.tensors_mut();
        self.adam.step(&mut tensors, &grads)
    }
}

fn send_progress(
    progress: Option<&ProgressSender>,
    epoch: usize,
    train_loss: f64,
    test_metric: Option<f64>,
) {
    if let Some(tx) = progress {
        let _ = tx.send(ProgressEvent {
            trial: None,
            epoch,
            train_loss,
            test_metric,
        });
    }
}

/// Trains the imputation model. `data` must be scaled; it supplies the
/// ground truth at unobserved cells for evaluation points (pass a fully
/// observed mask when no truth exists and evaluation reports `None`).
pub fn train_imputation(
    data: &DataMatrix,
    mask: &MaskMatrix,
    config: &TrainConfig,
    progress: Option<&ProgressSender>,
) -> Result<(ModelParams, TrainTrace)> {
    config.validate()?;
    let graph = build_graph(data, mask)?;
    let dims = ModelDims::new(&config.grape, &graph, data.schema())?;
    let mut params = init_params(&config.grape, &dims, derive_seed(config.seed, "init", 0))?;
    let mut optimizer = Optimizer::new(config, &params);
    let mut trace = TrainTrace::default();
    let started = Instant::now();

    for epoch in 0..config.epochs {
        let drop = drop_edges(
            &graph,
            config.edge_dropout,
            derive_seed(config.seed, "dropout", epoch as u64),
        )?;
        let (loss, grads) =
            imputation_loss_with_gradients(&params, &graph, &drop, &config.grape)?;
        if !loss.is_finite() {
            return Err(GrapeError::NonFinite(format!(
                "training loss diverged at epoch {epoch}"
            )));
        }
        optimizer.apply(&mut params, grads, epoch)?;

        if epoch % config.eval_every == 0 || epoch + 1 == config.epochs {
            let mae = evaluate_unobserved_mae(&params, &config.grape, data, mask, &graph)?;
            trace.points.push(TracePoint {
                epoch,
                train_loss: loss,
                test_metric: mae,
                wall_time: started.elapsed().as_secs_f64(),
            });
            send_progress(progress, epoch, loss, mae);
        }
    }
    trace.clipped_epochs = optimizer.clipped;
    Ok((params, trace))
}

/// Trains the label-prediction model (node head on the imputed matrix).
/// Joint mode adds `weight` times the imputation loss.
pub fn train_label_prediction(
    data: &DataMatrix,
    mask: &MaskMatrix,
    labels: &LabelVector,
    config: &TrainConfig,
    progress: Option<&ProgressSender>,
) -> Result<(ModelParams, TrainTrace)> {
    config.validate()?;
    if labels.labels.len() != data.n_rows() {
        return Err(GrapeError::Shape(format!(
            "{} labels for {} rows",
            labels.labels.len(),
            data.n_rows()
        )));
    }
    if config.grape.node_head != NodeHead::Linear {
        return Err(GrapeError::InvalidArgument(
            "label prediction needs a linear node head".into(),
        ));
    }
    let joint_weight = match config.task {
        Task::Joint { weight } => weight,
        _ => 0.0,
    };
    let graph = build_graph(data, mask)?;
    let dims = ModelDims::new(&config.grape, &graph, data.schema())?;
    let mut params = init_params(&config.grape, &dims, derive_seed(config.seed, "init", 0))?;
    let mut optimizer = Optimizer::new(config, &params);
    let mut trace = TrainTrace::default();
    let started = Instant::now();
    let (train_idx, y_train) = train_targets(labels);
    let test_idx = labels.test_indices();

    for epoch in 0..config.epochs {
        let drop = drop_edges(
            &graph,
            config.edge_dropout,
            derive_seed(config.seed, "dropout", epoch as u64),
        )?;
        let (mut tape, tp, loss_id) = label_loss_tape(
            &params,
            &graph,
            &train_idx,
            &y_train,
            joint_weight,
            &drop,
            &config.grape,
            true,
        )?;
        let loss = tape.scalar(loss_id);
        if !loss.is_finite() {
            return Err(GrapeError::NonFinite(format!(
                "training loss diverged at epoch {epoch}"
            )));
        }
        tape.backward(loss_id)?;
        let grads = tp.gradients(&tape);
        std::mem::drop(tape);
        optimizer.apply(&mut params, grads, epoch)?;

        if epoch % config.eval_every == 0 || epoch + 1 == config.epochs {
            let mae = evaluate_label_mae(&params, &config.grape, &graph, labels, &test_idx)?;
            trace.points.push(TracePoint {
                epoch,
                train_loss: loss,
                test_metric: Some(mae),
                wall_time: started.elapsed().as_secs_f64(),
            });
            send_progress(progress, epoch, loss, Some(mae));
        }
    }
    trace.clipped_epochs = optimizer.clipped;
    Ok((params, trace))
}

/// MAE of node-head predictions over the test rows, full graph.
pub fn evaluate_label_mae(
    params: &ModelParams,
    config: &GrapeConfig,
    graph: &BipartiteGraph,
    labels: &LabelVector,
    test_idx: &[usize],
) -> Result<f64> {
    let out = model::forward(
        params,
        graph,
        &DropMask::keep_all(graph.n_edges()),
        &[],
        config,
    )?;
    let y = out.node_predictions.ok_or_else(|| {
        GrapeError::InvalidArgument("model has no node head to evaluate".into())
    })?;
    if test_idx.is_empty() {
        return Err(GrapeError::InvalidArgument("empty test partition".into()));
    }
    Ok(test_idx
        .iter()
        .map(|&i| (labels.labels[i] - y[i]).abs())
        .sum::<f64>()
        / test_idx.len() as f64)
}

/// Two-stage comparator: train an imputation model with this config (node
/// head stripped, same seed/epochs/dropout), impute the full matrix, then
/// ordinary least squares from imputed features to train labels. Returns
/// the test MAE. Callers choose the stage-1 architecture through
/// `config.grape`.
pub fn impute_then_predict(
    data: &DataMatrix,
    mask: &MaskMatrix,
    labels: &LabelVector,
    config: &TrainConfig,
    progress: Option<&ProgressSender>,
) -> Result<f64> {
    let mut stage1 = config.clone();
    stage1.task = Task::Imputation;
    stage1.grape.node_head = NodeHead::None;
    let (params, _) = train_imputation(data, mask, &stage1, progress)?;
    let graph = build_graph(data, mask)?;
    let imputed = model::impute_full(&params, &graph, &stage1.grape)?;

    let train_idx = labels.train_indices();
    let test_idx = labels.test_indices();
    let take_rows = |idx: &[usize]| {
        Array2::from_shape_fn((idx.len(), imputed.ncols()), |(r, c)| imputed[(idx[r], c)])
    };
    let x_train = take_rows(&train_idx);
    let x_test = take_rows(&test_idx);
    let y_train: Vec<f64> = train_idx.iter().map(|&i| labels.labels[i]).collect();
    let preds = linear_regression_fit_predict(&x_train, &y_train, &x_test)?;
    if test_idx.is_empty() {
        return Err(GrapeError::InvalidArgument("empty test partition".into()));
    }
    Ok(test_idx
        .iter()
        .zip(&preds)
        .map(|(&i, p)| (labels.labels[i] - p).abs())
        .sum::<f64>()
        / test_idx.len() as f64)
}
