//! GRAPE: missing-data imputation and label prediction on bipartite graphs.
//!
//! A tabular dataset with missing entries is viewed as a bipartite graph:
//! one node per observation (row), one node per feature (column), and one
//! attributed edge per *observed* cell carrying the cell value. Imputing a
//! missing cell is then an edge-level prediction and predicting a per-row
//! label is a node-level prediction. Both are solved with a message-passing
//! network that maintains edge embeddings alongside node embeddings, trained
//! with edge dropout so that predicting values for hidden edges is part of
//! the training task itself.
//!
//! Module map:
//! - [`dataset`]: CSV ingestion, column typing, min-max scaling, mask
//!   sampling, label splits, synthetic fixtures.
//! - [`graph`]: bipartite graph construction, node feature initialization,
//!   edge dropout, adjacency indices.
//! - [`autodiff`]: a small reverse-mode engine over dense `f64` matrices
//!   plus the Adam optimizer; exactly the primitive set the model needs.
//! - [`model`]: the network itself (message / node-update / edge-update
//!   layers, edge head, node head), parameter init, checkpointing.
//! - [`training`]: imputation and label-prediction training loops, and the
//!   two-stage impute-then-predict comparator.
//! - [`baselines`]: column-mean and KNN imputers, closed-form linear
//!   regression.
//! - [`experiments`]: seeded multi-trial protocols (impute, predict, sweep,
//!   generalize, ablations) and CSV/JSON reports.

pub mod autodiff;
pub mod baselines;
pub mod dataset;
pub mod error;
pub mod experiments;
pub mod graph;
pub mod model;
pub mod rng;
pub mod training;

pub use error::{GrapeError, Result};
