//! The network: L rounds of bipartite message passing with edge embeddings,
//! an edge-level head for cell predictions, and a node-level head that reads
//! each row of the imputed matrix.
//!
//! Per layer, with h the node embeddings and e the edge embeddings:
//! every kept edge sends a message `relu(P @ concat(source_state, e))` to
//! each endpoint, messages are pooled per node by the configured aggregator
//! into n_v, nodes update as `h = relu(Q @ concat(h_prev, n_v))`, and kept
//! edges update as `e = relu(W @ concat(e_prev, h_u, h_v))`. Cell (i, j) is
//! predicted from `concat(h_i, h_{n+j})` by the edge head; row labels are
//! predicted from the imputed row by the node head. Dropped edges keep
//! their previous embedding within a forward pass and carry no messages.

use std::path::Path;

use ndarray::Array2;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Aggregator, Tape, TensorId};
use crate::dataset::{ColumnKind, ColumnSchema};
use crate::error::{GrapeError, Result};
use crate::graph::{BipartiteGraph, DropMask};
use crate::rng::rng_from_seed;

const CHECKPOINT_VERSION: u32 = 1;

/// Where a message's node-state component comes from. `NeighborEmbedding`
/// concatenates the embedding of the node across the edge (the sender);
/// `LiteralSelfEmbedding` concatenates the receiving node's own embedding,
/// making messages depend only on the receiver state and the edge value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageSource {
    NeighborEmbedding,
    LiteralSelfEmbedding,
}

/// Edge-head output layout: a single scalar shared by all features, or one
/// slice per feature (a scalar for continuous columns, cardinality-many
/// logits for categorical ones).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputMode {
    Continuous,
    PerFeature,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EdgeHead {
    Mlp { hidden: usize },
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeHead {
    Linear,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrapeConfig {
    pub n_layers: usize,
    pub hidden_dim: usize,
    pub aggregator: Aggregator,
    pub edge_head: EdgeHead,
    pub node_head: NodeHead,
    pub message_source: MessageSource,
    pub output_mode: OutputMode,
    /// Biases in every linear map (off reproduces bare weight matrices).
    pub bias: bool,
    /// Node head reads predictions everywhere instead of ground truth at
    /// observed cells.
    pub node_head_all_predicted: bool,
}

impl GrapeConfig {
    /// Imputation setup: 3 layers, 64 hidden units, mean pooling, MLP edge
    /// head with 64 hidden units.
    pub fn imputation_default() -> Self {
        Self {
            n_layers: 3,
            hidden_dim: 64,
            aggregator: Aggregator::Mean,
            edge_head: EdgeHead::Mlp { hidden: 64 },
            node_head: NodeHead::None,
            message_source: MessageSource::NeighborEmbedding,
            output_mode: OutputMode::Continuous,
            bias: true,
            node_head_all_predicted: false,
        }
    }

    /// Label-prediction setup: 2 layers, 16 hidden units, linear heads.
    pub fn label_prediction_default() -> Self {
        Self {
            n_layers: 2,
            hidden_dim: 16,
            aggregator: Aggregator::Mean,
            edge_head: EdgeHead::Linear,
            node_head: NodeHead::Linear,
            message_source: MessageSource::NeighborEmbedding,
            output_mode: OutputMode::Continuous,
            bias: true,
            node_head_all_predicted: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 {
            return Err(GrapeError::InvalidArgument("n_layers must be >= 1".into()));
        }
        if self.hidden_dim == 0 {
            return Err(GrapeError::InvalidArgument("hidden_dim must be >= 1".into()));
        }
        if let EdgeHead::Mlp { hidden: 0 } = self.edge_head {
            return Err(GrapeError::InvalidArgument(
                "edge head hidden width must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// One dense map, applied as `x @ weight + bias` on row-major batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array2<f64>,
}

impl Linear {
    fn glorot(in_dim: usize, out_dim: usize, rng: &mut crate::rng::Rng) -> Self {
        let a = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weight = Array2::from_shape_fn((in_dim, out_dim), |_| rng.random_range(-a..a));
        Self {
            weight,
            bias: Array2::zeros((1, out_dim)),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.ncols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    /// Message weight (applied to concat(node state, edge embedding)).
    pub message: Linear,
    /// Node-update weight (applied to concat(h_prev, pooled messages)).
    pub node_update: Linear,
    /// Edge-update weight (applied to concat(e_prev, h_u, h_v)).
    pub edge_update: Linear,
}

/// Static width bookkeeping shared by parameters, the forward pass, and
/// checkpoint validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDims {
    pub n_features: usize,
    pub edge_feature_width: usize,
    pub hidden_dim: usize,
    pub output_width: usize,
    /// Per-feature offset into the edge-head output row.
    pub output_offsets: Vec<usize>,
    pub feature_kinds: Vec<ColumnKind>,
}

impl ModelDims {
    pub fn new(
        config: &GrapeConfig,
        graph: &BipartiteGraph,
        schema: &[ColumnSchema],
    ) -> Result<Self> {
        config.validate()?;
        if schema.len() != graph.n_feature_nodes() {
            return Err(GrapeError::Shape(format!(
                "schema has {} columns, graph has {} feature nodes",
                schema.len(),
                graph.n_feature_nodes()
            )));
        }
        let feature_kinds: Vec<ColumnKind> = schema.iter().map(|c| c.kind.clone()).collect();
        let has_categorical = feature_kinds
            .iter()
            .any(|k| matches!(k, ColumnKind::Categorical { .. }));
        let (output_width, output_offsets) = match config.output_mode {
            OutputMode::Continuous => {
                if has_categorical {
                    return Err(GrapeError::InvalidArgument(
                        "continuous output mode cannot represent categorical columns; \
                         use per-feature output mode"
                            .into(),
                    ));
                }
                (1, vec![0; schema.len()])
            }
            OutputMode::PerFeature => {
                let mut offsets = Vec::with_capacity(schema.len());
                let mut width = 0;
                for col in schema {
                    offsets.push(width);
                    width += col.value_width();
                }
                (width, offsets)
            }
        };
        Ok(Self {
            n_features: graph.n_feature_nodes(),
            edge_feature_width: graph.edge_feature_width(),
            hidden_dim: config.hidden_dim,
            output_width,
            output_offsets,
            feature_kinds,
        })
    }

    /// Width of a feature's slice in the edge-head output.
    pub fn slice_width(&self, feature: usize) -> usize {
        match self.feature_kinds[feature] {
            ColumnKind::Continuous => 1,
            ColumnKind::Categorical { cardinality } => cardinality,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub layers: Vec<LayerParams>,
    pub edge_head: Vec<Linear>,
    pub node_head: Option<Linear>,
    pub dims: ModelDims,
}

impl ModelParams {
    /// All parameter tensors in canonical order (layer by layer, then edge
    /// head, then node head). Adam state and gradient extraction use the
    /// same order.
    pub fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            for lin in [&layer.message, &layer.node_update, &layer.edge_update] {
                out.push(&lin.weight);
                out.push(&lin.bias);
            }
        }
        for lin in &self.edge_head {
            out.push(&lin.weight);
            out.push(&lin.bias);
        }
        if let Some(lin) = &self.node_head {
            out.push(&lin.weight);
            out.push(&lin.bias);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            for lin in [
                &mut layer.message,
                &mut layer.node_update,
                &mut layer.edge_update,
            ] {
                out.push(&mut lin.weight);
                out.push(&mut lin.bias);
            }
        }
        for lin in &mut self.edge_head {
            out.push(&mut lin.weight);
            out.push(&mut lin.bias);
        }
        if let Some(lin) = &mut self.node_head {
            out.push(&mut lin.weight);
            out.push(&mut lin.bias);
        }
        out
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.tensors().iter().map(|t| t.dim()).collect()
    }

    pub(crate) fn bind(
        &self,
        tape: &mut Tape,
        requires_grad: bool,
        config: &GrapeConfig,
    ) -> TapeParams {
        let mut bind_linear = |lin: &Linear| LinearIds {
            w: tape.leaf(lin.weight.clone(), requires_grad),
            b: tape.leaf(lin.bias.clone(), requires_grad),
        };
        let layers = self
            .layers
            .iter()
            .map(|l| LayerIds {
                message: bind_linear(&l.message),
                node_update: bind_linear(&l.node_update),
                edge_update: bind_linear(&l.edge_update),
            })
            .collect();
        let edge_head = self.edge_head.iter().map(&mut bind_linear).collect();
        let node_head = self.node_head.as_ref().map(&mut bind_linear);
        TapeParams {
            layers,
            edge_head,
            node_head,
            bias_enabled: config.bias,
        }
    }
}

/// Glorot-uniform weights (`a = sqrt(6 / (fan_in + fan_out))`), zero biases,
/// drawn in canonical tensor order from a single seeded stream.
pub fn init_params(config: &GrapeConfig, dims: &ModelDims, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = rng_from_seed(seed);
    let hidden = config.hidden_dim;
    let node_w0 = dims.n_features;
    let edge_w0 = dims.edge_feature_width;

    let mut layers = Vec::with_capacity(config.n_layers);
    for l in 0..config.n_layers {
        let (node_in, edge_in) = if l == 0 {
            (node_w0, edge_w0)
        } else {
            (hidden, hidden)
        };
        layers.push(LayerParams {
            message: Linear::glorot(node_in + edge_in, hidden, &mut rng),
            node_update: Linear::glorot(node_in + hidden, hidden, &mut rng),
            edge_update: Linear::glorot(edge_in + 2 * hidden, hidden, &mut rng),
        });
    }

    let head_in = 2 * hidden;
    let edge_head = match config.edge_head {
        EdgeHead::Mlp { hidden: mlp } => vec![
            Linear::glorot(head_in, mlp, &mut rng),
            Linear::glorot(mlp, dims.output_width, &mut rng),
        ],
        EdgeHead::Linear => vec![Linear::glorot(head_in, dims.output_width, &mut rng)],
    };
    let node_head = match config.node_head {
        NodeHead::Linear => Some(Linear::glorot(dims.n_features, 1, &mut rng)),
        NodeHead::None => None,
    };
    Ok(ModelParams {
        layers,
        edge_head,
        node_head,
        dims: dims.clone(),
    })
}

#[derive(Clone, Copy)]
pub(crate) struct LinearIds {
    w: TensorId,
    b: TensorId,
}

pub(crate) struct LayerIds {
    message: LinearIds,
    node_update: LinearIds,
    edge_update: LinearIds,
}

/// Parameter leaves bound onto one tape, in canonical order.
pub(crate) struct TapeParams {
    layers: Vec<LayerIds>,
    edge_head: Vec<LinearIds>,
    node_head: Option<LinearIds>,
    bias_enabled: bool,
}

impl TapeParams {
    fn apply_linear(&self, tape: &mut Tape, x: TensorId, lin: LinearIds) -> Result<TensorId> {
        let prod = tape.matmul(x, lin.w)?;
        if self.bias_enabled {
            tape.add_bias(prod, lin.b)
        } else {
            Ok(prod)
        }
    }

    pub(crate) fn apply_node_head(&self, tape: &mut Tape, x: TensorId) -> Result<TensorId> {
        let ids = self.node_head.ok_or_else(|| {
            GrapeError::InvalidArgument("node head requested but not configured".into())
        })?;
        self.apply_linear(tape, x, ids)
    }

    /// Gradients of every bound leaf in canonical order; zeros where a leaf
    /// never entered the computation (e.g. biases with `bias = false`).
    pub(crate) fn gradients(&self, tape: &Tape) -> Vec<Array2<f64>> {
        let mut ids = Vec::new();
        for layer in &self.layers {
            for lin in [layer.message, layer.node_update, layer.edge_update] {
                ids.push(lin.w);
                ids.push(lin.b);
            }
        }
        for lin in &self.edge_head {
            ids.push(lin.w);
            ids.push(lin.b);
        }
        if let Some(lin) = &self.node_head {
            ids.push(lin.w);
            ids.push(lin.b);
        }
        ids.iter()
            .map(|&id| match tape.grad(id) {
                Some(g) => g.clone(),
                None => Array2::zeros(tape.tensor(id).shape()),
            })
            .collect()
    }
}

/// Directed half-edges over the kept subset of an undirected edge set.
struct HalfEdges {
    src: Vec<usize>,
    tgt: Vec<usize>,
    /// Index into the kept-edge list, for edge-embedding lookup.
    kept_pos: Vec<usize>,
}

pub(crate) struct GraphFlow {
    /// Final node embeddings, `(n + m) x hidden`.
    pub h: TensorId,
    /// Final embeddings of kept edges, `K x hidden`.
    pub e: TensorId,
    /// Edge ids (into the graph's edge list) of the kept edges, in order.
    pub kept_edges: Vec<usize>,
}

/// Runs the L message-passing layers on the tape and returns the final
/// embeddings. Fails with the offending layer if activations go non-finite.
pub(crate) fn graph_flow(
    tape: &mut Tape,
    tp: &TapeParams,
    config: &GrapeConfig,
    graph: &BipartiteGraph,
    drop: &DropMask,
) -> Result<GraphFlow> {
    if drop.len() != graph.n_edges() {
        return Err(GrapeError::Shape(format!(
            "drop mask covers {} edges, graph has {}",
            drop.len(),
            graph.n_edges()
        )));
    }
    let n = graph.n_data_nodes();
    let m = graph.n_feature_nodes();
    let node_count = n + m;

    let kept_edges: Vec<usize> = (0..graph.n_edges()).filter(|&e| drop.is_kept(e)).collect();
    let kept_u: Vec<usize> = kept_edges
        .iter()
        .map(|&e| graph.data_node_id(graph.edges()[e].data_index))
        .collect();
    let kept_v: Vec<usize> = kept_edges
        .iter()
        .map(|&e| graph.feature_node_id(graph.edges()[e].feature_index))
        .collect();

    // Half-edges: data -> feature first, then feature -> data.
    let half = HalfEdges {
        src: kept_u.iter().chain(kept_v.iter()).copied().collect(),
        tgt: kept_v.iter().chain(kept_u.iter()).copied().collect(),
        kept_pos: (0..kept_edges.len()).chain(0..kept_edges.len()).collect(),
    };

    // Initial states: data nodes all-ones, feature nodes one-hot.
    let mut init = Array2::zeros((node_count, m));
    for i in 0..n {
        init.row_mut(i).fill(1.0);
    }
    for j in 0..m {
        init[(n + j, j)] = 1.0;
    }
    let mut h = tape.constant(init);

    let mut e0 = Array2::zeros((kept_edges.len(), graph.edge_feature_width()));
    for (row, &edge_id) in kept_edges.iter().enumerate() {
        for (col, &v) in graph.edges()[edge_id].feature_vector.iter().enumerate() {
            e0[(row, col)] = v;
        }
    }
    let mut e = tape.constant(e0);

    for (l, layer) in tp.layers.iter().enumerate() {
        let state_rows = match config.message_source {
            MessageSource::NeighborEmbedding => &half.src,
            MessageSource::LiteralSelfEmbedding => &half.tgt,
        };
        let state = tape.gather_rows(h, state_rows)?;
        let e_half = tape.gather_rows(e, &half.kept_pos)?;
        let msg_in = tape.concat_cols(&[state, e_half])?;
        let msg_lin = tp.apply_linear(tape, msg_in, layer.message)?;
        let msg = tape.relu(msg_lin);
        let pooled = tape.segment_aggregate(msg, &half.tgt, node_count, config.aggregator)?;

        let node_in = tape.concat_cols(&[h, pooled])?;
        let node_lin = tp.apply_linear(tape, node_in, layer.node_update)?;
        h = tape.relu(node_lin);
        if !tape.value(h).iter().all(|v| v.is_finite()) {
            return Err(GrapeError::NonFinite(format!(
                "node embeddings after layer {} are not finite",
                l + 1
            )));
        }

        let hu = tape.gather_rows(h, &kept_u)?;
        let hv = tape.gather_rows(h, &kept_v)?;
        let edge_in = tape.concat_cols(&[e, hu, hv])?;
        let edge_lin = tp.apply_linear(tape, edge_in, layer.edge_update)?;
        e = tape.relu(edge_lin);
    }

    Ok(GraphFlow { h, e, kept_edges })
}

/// Edge-head output for a list of query cells: `concat(h_i, h_{n+j})`
/// through the head stack, one row per query. Queries may reference
/// unobserved cells.
pub(crate) fn edge_head_output(
    tape: &mut Tape,
    tp: &TapeParams,
    graph: &BipartiteGraph,
    h: TensorId,
    queries: &[(usize, usize)],
) -> Result<TensorId> {
    let (n, m) = (graph.n_data_nodes(), graph.n_feature_nodes());
    let mut qu = Vec::with_capacity(queries.len());
    let mut qv = Vec::with_capacity(queries.len());
    for &(i, j) in queries {
        if i >= n || j >= m {
            return Err(GrapeError::InvalidArgument(format!(
                "query ({i}, {j}) out of range for {n}x{m}"
            )));
        }
        qu.push(graph.data_node_id(i));
        qv.push(graph.feature_node_id(j));
    }
    let hu = tape.gather_rows(h, &qu)?;
    let hv = tape.gather_rows(h, &qv)?;
    let mut z = tape.concat_cols(&[hu, hv])?;
    let last = tp.edge_head.len() - 1;
    for (idx, lin) in tp.edge_head.iter().enumerate() {
        z = tp.apply_linear(tape, z, *lin)?;
        if idx < last {
            z = tape.relu(z);
        }
    }
    Ok(z)
}

/// All cells in feature-major order: feature 0's column first, row by row.
/// The node-head path relies on this layout to slice per-feature columns
/// out of the edge-head output without transposing.
pub(crate) fn all_cells_feature_major(n: usize, m: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(n * m);
    for j in 0..m {
        for i in 0..n {
            out.push((i, j));
        }
    }
    out
}

/// Ground truth at observed cells (from the graph's edges) plus a row-major
/// flag per cell marking where predictions should be used instead.
pub(crate) fn observed_baseline(
    graph: &BipartiteGraph,
    dims: &ModelDims,
) -> (Array2<f64>, Vec<bool>) {
    let (n, m) = (graph.n_data_nodes(), graph.n_feature_nodes());
    let mut baseline = Array2::zeros((n, m));
    let mut use_pred = vec![true; n * m];
    for edge in graph.edges() {
        let (i, j) = (edge.data_index, edge.feature_index);
        baseline[(i, j)] = decode_edge_value(&dims.feature_kinds[j], &edge.feature_vector);
        use_pred[i * m + j] = false;
    }
    (baseline, use_pred)
}

fn decode_edge_value(kind: &ColumnKind, feature_vector: &[f64]) -> f64 {
    match kind {
        ColumnKind::Continuous => feature_vector[0],
        ColumnKind::Categorical { cardinality } => {
            let mut best = 0;
            for c in 1..*cardinality {
                if feature_vector[c] > feature_vector[best] {
                    best = c;
                }
            }
            best as f64
        }
    }
}

/// Builds the differentiable imputed matrix from the feature-major all-cells
/// head output: per-feature prediction columns (categorical columns
/// contribute constant argmax codes), then ground truth overlaid at observed
/// cells unless the config says all-predicted.
pub(crate) fn imputed_matrix(
    tape: &mut Tape,
    config: &GrapeConfig,
    dims: &ModelDims,
    graph: &BipartiteGraph,
    head_all_cells: TensorId,
) -> Result<TensorId> {
    let (n, m) = (graph.n_data_nodes(), graph.n_feature_nodes());
    let mut columns = Vec::with_capacity(m);
    for j in 0..m {
        let rows: Vec<usize> = (j * n..(j + 1) * n).collect();
        match dims.feature_kinds[j] {
            ColumnKind::Continuous => {
                let block = tape.gather_rows(head_all_cells, &rows)?;
                let col = tape.slice_cols(block, dims.output_offsets[j], 1)?;
                columns.push(col);
            }
            ColumnKind::Categorical { cardinality } => {
                // Class decisions are discrete; they enter as constants.
                let src = tape.value(head_all_cells);
                let offset = dims.output_offsets[j];
                let mut codes = Array2::zeros((n, 1));
                for (out_r, &in_r) in rows.iter().enumerate() {
                    let mut best = 0;
                    for c in 1..cardinality {
                        if src[(in_r, offset + c)] > src[(in_r, offset + best)] {
                            best = c;
                        }
                    }
                    codes[(out_r, 0)] = best as f64;
                }
                columns.push(tape.constant(codes));
            }
        }
    }
    let pred = tape.concat_cols(&columns)?;
    let (baseline, mut use_pred) = observed_baseline(graph, dims);
    if config.node_head_all_predicted {
        use_pred.iter_mut().for_each(|f| *f = true);
    }
    tape.mask_combine(pred, &baseline, &use_pred)
}

/// One cell prediction: a scalar for continuous features, class logits for
/// categorical ones.
#[derive(Debug, Clone, PartialEq)]
pub enum EdgePrediction {
    Continuous(f64),
    Logits(Vec<f64>),
}

impl EdgePrediction {
    /// Scalar view: the value itself, or the argmax class code.
    pub fn as_value(&self) -> f64 {
        match self {
            EdgePrediction::Continuous(v) => *v,
            EdgePrediction::Logits(logits) => {
                let mut best = 0;
                for c in 1..logits.len() {
                    if logits[c] > logits[best] {
                        best = c;
                    }
                }
                best as f64
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `(n + m) x hidden` final node embeddings.
    pub node_embeddings: Array2<f64>,
    /// `(edge id, final embedding)` for each kept edge.
    pub edge_embeddings: Vec<(usize, Vec<f64>)>,
    /// One prediction per query cell, in query order.
    pub edge_predictions: Vec<EdgePrediction>,
    /// Length-n label predictions when the node head is active.
    pub node_predictions: Option<Vec<f64>>,
}

/// Full forward pass without gradients. Query cells need not be observed.
pub fn forward(
    params: &ModelParams,
    graph: &BipartiteGraph,
    drop: &DropMask,
    query_edges: &[(usize, usize)],
    config: &GrapeConfig,
) -> Result<ForwardOutput> {
    let mut tape = Tape::new();
    let tp = params.bind(&mut tape, false, config);
    let flow = graph_flow(&mut tape, &tp, config, graph, drop)?;

    let head_out = edge_head_output(&mut tape, &tp, graph, flow.h, query_edges)?;
    let edge_predictions = extract_predictions(tape.value(head_out), query_edges, &params.dims);

    let node_predictions = if config.node_head == NodeHead::Linear {
        let all_cells = all_cells_feature_major(graph.n_data_nodes(), graph.n_feature_nodes());
        let head_all = edge_head_output(&mut tape, &tp, graph, flow.h, &all_cells)?;
        let d_hat = imputed_matrix(&mut tape, config, &params.dims, graph, head_all)?;
        let y = tp.apply_node_head(&mut tape, d_hat)?;
        Some(tape.value(y).column(0).to_vec())
    } else {
        None
    };

    let e_values = tape.value(flow.e);
    let edge_embeddings = flow
        .kept_edges
        .iter()
        .enumerate()
        .map(|(row, &edge_id)| (edge_id, e_values.row(row).to_vec()))
        .collect();

    Ok(ForwardOutput {
        node_embeddings: tape.value(flow.h).clone(),
        edge_embeddings,
        edge_predictions,
        node_predictions,
    })
}

pub(crate) fn extract_predictions(
    head_out: &Array2<f64>,
    queries: &[(usize, usize)],
    dims: &ModelDims,
) -> Vec<EdgePrediction> {
    queries
        .iter()
        .enumerate()
        .map(|(row, &(_, j))| match dims.feature_kinds[j] {
            ColumnKind::Continuous => {
                EdgePrediction::Continuous(head_out[(row, dims.output_offsets[j])])
            }
            ColumnKind::Categorical { cardinality } => {
                let offset = dims.output_offsets[j];
                EdgePrediction::Logits(
                    (0..cardinality)
                        .map(|c| head_out[(row, offset + c)])
                        .collect(),
                )
            }
        })
        .collect()
}

/// Predicts every cell on the full (undropped) graph and overwrites observed
/// cells with their true values; categorical cells return argmax codes.
pub fn impute_full(
    params: &ModelParams,
    graph: &BipartiteGraph,
    config: &GrapeConfig,
) -> Result<Array2<f64>> {
    let (n, m) = (graph.n_data_nodes(), graph.n_feature_nodes());
    let queries = all_cells_feature_major(n, m);
    let out = forward(
        params,
        graph,
        &DropMask::keep_all(graph.n_edges()),
        &queries,
        config,
    )?;
    let mut matrix = Array2::zeros((n, m));
    for (q, pred) in queries.iter().zip(&out.edge_predictions) {
        matrix[(q.0, q.1)] = pred.as_value();
    }
    for edge in graph.edges() {
        matrix[(edge.data_index, edge.feature_index)] = decode_edge_value(
            &params.dims.feature_kinds[edge.feature_index],
            &edge.feature_vector,
        );
    }
    Ok(matrix)
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    config: GrapeConfig,
    params: ModelParams,
}

pub fn save_checkpoint(
    params: &ModelParams,
    config: &GrapeConfig,
    path: impl AsRef<Path>,
) -> Result<()> {
    let ckpt = Checkpoint {
        format_version: CHECKPOINT_VERSION,
        config: config.clone(),
        params: params.clone(),
    };
    let file = std::fs::File::create(path.as_ref())?;
    serde_json::to_writer(std::io::BufWriter::new(file), &ckpt)?;
    Ok(())
}

/// Loads a checkpoint, rejecting version or dimension metadata mismatches.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelParams, GrapeConfig)> {
    let file = std::fs::File::open(path.as_ref())?;
    let ckpt: Checkpoint = serde_json::from_reader(std::io::BufReader::new(file))?;
    if ckpt.format_version != CHECKPOINT_VERSION {
        return Err(GrapeError::Checkpoint(format!(
            "unsupported checkpoint version {}",
            ckpt.format_version
        )));
    }
    validate_checkpoint(&ckpt.params, &ckpt.config)?;
    Ok((ckpt.params, ckpt.config))
}

fn validate_checkpoint(params: &ModelParams, config: &GrapeConfig) -> Result<()> {
    config.validate()?;
    if params.layers.len() != config.n_layers {
        return Err(GrapeError::Checkpoint(format!(
            "checkpoint has {} layers, config says {}",
            params.layers.len(),
            config.n_layers
        )));
    }
    let hidden = config.hidden_dim;
    let dims = &params.dims;
    for (l, layer) in params.layers.iter().enumerate() {
        let (node_in, edge_in) = if l == 0 {
            (dims.n_features, dims.edge_feature_width)
        } else {
            (hidden, hidden)
        };
        let expect = [
            (layer.message.in_dim(), node_in + edge_in, "message"),
            (layer.node_update.in_dim(), node_in + hidden, "node update"),
            (layer.edge_update.in_dim(), edge_in + 2 * hidden, "edge update"),
        ];
        for (got, want, what) in expect {
            if got != want {
                return Err(GrapeError::Checkpoint(format!(
                    "layer {} {what} input width {got}, expected {want}",
                    l + 1
                )));
            }
        }
        for lin in [&layer.message, &layer.node_update, &layer.edge_update] {
            if lin.out_dim() != hidden || lin.bias.dim() != (1, hidden) {
                return Err(GrapeError::Checkpoint(format!(
                    "layer {} output width {}, expected {hidden}",
                    l + 1,
                    lin.out_dim()
                )));
            }
        }
    }
    let last = params
        .edge_head
        .last()
        .ok_or_else(|| GrapeError::Checkpoint("edge head is empty".into()))?;
    if params.edge_head[0].in_dim() != 2 * hidden || last.out_dim() != dims.output_width {
        return Err(GrapeError::Checkpoint(format!(
            "edge head maps {} -> {}, expected {} -> {}",
            params.edge_head[0].in_dim(),
            last.out_dim(),
            2 * hidden,
            dims.output_width
        )));
    }
    match (&params.node_head, config.node_head) {
        (Some(lin), NodeHead::Linear) => {
            if lin.in_dim() != dims.n_features || lin.out_dim() != 1 {
                return Err(GrapeError::Checkpoint(format!(
                    "node head maps {} -> {}, expected {} -> 1",
                    lin.in_dim(),
                    lin.out_dim(),
                    dims.n_features
                )));
            }
        }
        (None, NodeHead::None) => {}
        _ => {
            return Err(GrapeError::Checkpoint(
                "node head presence disagrees with config".into(),
            ))
        }
    }
    Ok(())
}
