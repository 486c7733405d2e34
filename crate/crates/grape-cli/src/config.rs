//! Flat override file: every knob optional, unknown keys rejected.

use std::path::PathBuf;

use grape_core::autodiff::Aggregator;
use grape_core::experiments::ExperimentSpec;
use grape_core::model::{EdgeHead, MessageSource, NodeHead, OutputMode};
use grape_core::training::Task;
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub rate: Option<f64>,
    pub rates: Option<Vec<f64>>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub edge_dropout: Option<f64>,
    pub eval_every: Option<usize>,
    pub task: Option<Task>,
    pub n_layers: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub aggregator: Option<Aggregator>,
    pub edge_head: Option<EdgeHead>,
    pub node_head: Option<NodeHead>,
    pub message_source: Option<MessageSource>,
    pub output_mode: Option<OutputMode>,
    pub bias: Option<bool>,
    pub node_head_all_predicted: Option<bool>,
    pub baselines: Option<Vec<String>>,
    pub knn_k: Option<usize>,
    pub train_fraction: Option<f64>,
    pub output_dir: Option<PathBuf>,
    pub record_timing: Option<bool>,
}

impl FileConfig {
    pub fn apply(self, spec: &mut ExperimentSpec) {
        if let Some(rates) = self.rates {
            spec.missing_rates = rates;
        }
        if let Some(rate) = self.rate {
            spec.missing_rates = vec![rate];
        }
        if let Some(v) = self.trials {
            spec.n_trials = v;
        }
        if let Some(v) = self.seed {
            spec.seed = v;
        }
        if let Some(v) = self.jobs {
            spec.jobs = v;
        }
        if let Some(v) = self.epochs {
            spec.train.epochs = v;
        }
        if let Some(v) = self.learning_rate {
            spec.train.learning_rate = v;
        }
        if let Some(v) = self.edge_dropout {
            spec.train.edge_dropout = v;
        }
        if let Some(v) = self.eval_every {
            spec.train.eval_every = v;
        }
        if let Some(v) = self.task {
            spec.train.task = v;
        }
        if let Some(v) = self.n_layers {
            spec.train.grape.n_layers = v;
        }
        if let Some(v) = self.hidden_dim {
            spec.train.grape.hidden_dim = v;
        }
        if let Some(v) = self.aggregator {
            spec.train.grape.aggregator = v;
        }
        if let Some(v) = self.edge_head {
            spec.train.grape.edge_head = v;
        }
        if let Some(v) = self.node_head {
            spec.train.grape.node_head = v;
        }
        if let Some(v) = self.message_source {
            spec.train.grape.message_source = v;
        }
        if let Some(v) = self.output_mode {
            spec.train.grape.output_mode = v;
        }
        if let Some(v) = self.bias {
            spec.train.grape.bias = v;
        }
        if let Some(v) = self.node_head_all_predicted {
            spec.train.grape.node_head_all_predicted = v;
        }
        if let Some(v) = self.baselines {
            spec.baselines = v;
        }
        if let Some(v) = self.knn_k {
            spec.knn_k = v;
        }
        if let Some(v) = self.train_fraction {
            spec.train_fraction = v;
        }
        if let Some(v) = self.output_dir {
            spec.output_dir = Some(v);
        }
        if let Some(v) = self.record_timing {
            spec.record_timing = v;
        }
    }
}
