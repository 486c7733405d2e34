//! Bipartite observation/feature graph construction and edge dropout.
//!
//! Data node `i` gets global node id `i`; feature node `j` gets id `n + j`.
//! Edges are stored once per observed cell, in canonical row-major `(i, j)`
//! order, and expanded to two directed half-edges during message passing.
//! A dropped edge disappears in both directions (one coin flip per
//! undirected edge).

use ndarray::Array2;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::{ColumnKind, DataMatrix, MaskMatrix};
use crate::error::{GrapeError, Result};
use crate::rng::rng_from_seed;

/// One observed cell as an attributed edge. For a continuous feature the
/// vector holds the scaled value in slot 0; for a categorical feature it is
/// one-hot at the category code. Both are zero-padded to the graph-wide
/// edge feature width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub data_index: usize,
    pub feature_index: usize,
    pub feature_vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BipartiteGraph {
    n_data_nodes: usize,
    n_feature_nodes: usize,
    edges: Vec<EdgeRecord>,
    edge_feature_width: usize,
}

impl BipartiteGraph {
    pub fn n_data_nodes(&self) -> usize {
        self.n_data_nodes
    }

    pub fn n_feature_nodes(&self) -> usize {
        self.n_feature_nodes
    }

    pub fn node_count(&self) -> usize {
        self.n_data_nodes + self.n_feature_nodes
    }

    /// Width of initial node features (= number of feature nodes).
    pub fn node_init_width(&self) -> usize {
        self.n_feature_nodes
    }

    pub fn edges(&self) -> &[EdgeRecord] {
        &self.edges
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edge_feature_width(&self) -> usize {
        self.edge_feature_width
    }

    /// Global node id of data node `i`.
    pub fn data_node_id(&self, i: usize) -> usize {
        i
    }

    /// Global node id of feature node `j`.
    pub fn feature_node_id(&self, j: usize) -> usize {
        self.n_data_nodes + j
    }

    /// Debug dump with nodes, edges, and feature vectors.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Per-edge keep/drop decisions from one dropout draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropMask {
    kept: Vec<bool>,
    rate: f64,
    seed: u64,
}

impl DropMask {
    pub fn keep_all(n_edges: usize) -> Self {
        Self {
            kept: vec![true; n_edges],
            rate: 0.0,
            seed: 0,
        }
    }

    pub fn kept(&self) -> &[bool] {
        &self.kept
    }

    pub fn is_kept(&self, edge: usize) -> bool {
        self.kept[edge]
    }

    pub fn kept_count(&self) -> usize {
        self.kept.iter().filter(|&&k| k).count()
    }

    pub fn len(&self) -> usize {
        self.kept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept.is_empty()
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }
}

/// Builds the bipartite graph: one edge per observed `(i, j)`, edge feature
/// width = widest column representation, vectors zero-padded to match.
/// Expects `data` to already be on the model's scale.
pub fn build_graph(data: &DataMatrix, mask: &MaskMatrix) -> Result<BipartiteGraph> {
    if data.n_rows() != mask.n_rows() || data.n_cols() != mask.n_cols() {
        return Err(GrapeError::Shape(format!(
            "data is {}x{}, mask is {}x{}",
            data.n_rows(),
            data.n_cols(),
            mask.n_rows(),
            mask.n_cols()
        )));
    }
    let width = data
        .schema()
        .iter()
        .map(|col| col.value_width())
        .max()
        .unwrap_or(1);
    let mut edges = Vec::with_capacity(mask.observed_count());
    for i in 0..data.n_rows() {
        for j in 0..data.n_cols() {
            if !mask.is_observed(i, j) {
                continue;
            }
            let mut feature_vector = vec![0.0; width];
            match data.column(j).kind {
                ColumnKind::Continuous => feature_vector[0] = data.values()[(i, j)],
                ColumnKind::Categorical { .. } => {
                    feature_vector[data.values()[(i, j)] as usize] = 1.0;
                }
            }
            edges.push(EdgeRecord {
                data_index: i,
                feature_index: j,
                feature_vector,
            });
        }
    }
    Ok(BipartiteGraph {
        n_data_nodes: data.n_rows(),
        n_feature_nodes: data.n_cols(),
        edges,
        edge_feature_width: width,
    })
}

/// Initial node features: every data node is the all-ones vector of length
/// m, feature node `j` is one-hot at `j` (the feature block is the m×m
/// identity).
pub fn init_node_features(graph: &BipartiteGraph) -> (Array2<f64>, Array2<f64>) {
    let (n, m) = (graph.n_data_nodes, graph.n_feature_nodes);
    let data_features = Array2::from_elem((n, m), 1.0);
    let feature_features = Array2::from_shape_fn((m, m), |(i, j)| if i == j { 1.0 } else { 0.0 });
    (data_features, feature_features)
}

/// Draws one uniform sample per undirected edge; the edge is kept iff the
/// sample exceeds `rate`. Deterministic per seed.
pub fn drop_edges(graph: &BipartiteGraph, rate: f64, seed: u64) -> Result<DropMask> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(GrapeError::InvalidArgument(format!(
            "dropout rate must be in [0, 1], got {rate}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let kept = (0..graph.n_edges())
        .map(|_| rng.random::<f64>() > rate)
        .collect();
    Ok(DropMask { kept, rate, seed })
}

/// Adjacency over kept edges: for every global node id, the list of
/// `(neighbor node id, edge id)` pairs. Isolated nodes get empty lists.
pub fn neighborhoods(graph: &BipartiteGraph, drop: &DropMask) -> Result<Vec<Vec<(usize, usize)>>> {
    if drop.len() != graph.n_edges() {
        return Err(GrapeError::Shape(format!(
            "drop mask has {} entries for {} edges",
            drop.len(),
            graph.n_edges()
        )));
    }
    let mut adj = vec![Vec::new(); graph.node_count()];
    for (edge_id, edge) in graph.edges().iter().enumerate() {
        if !drop.is_kept(edge_id) {
            continue;
        }
        let u = graph.data_node_id(edge.data_index);
        let v = graph.feature_node_id(edge.feature_index);
        adj[u].push((v, edge_id));
        adj[v].push((u, edge_id));
    }
    Ok(adj)
}
