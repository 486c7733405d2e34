//! Acceptance suite: one test per measurable claim, each printing a
//! `PASS criterion N` line (run with `--nocapture` to see them).
//!
//! Criteria 5-7 reproduce published-scale numbers on the UCI tables and
//! need `data/{yacht,housing,concrete}.csv` (see scripts/fetch_uci.py)
//! plus full-preset runtimes, so they are `#[ignore]`d by default:
//!
//! ```sh
//! cargo test -p grape-core --test acceptance -- --ignored --nocapture
//! ```

use std::path::{Path, PathBuf};

use ndarray::Array2;

use grape_core::autodiff::{Aggregator, Tape, TensorId};
use grape_core::baselines::{knn_impute, mean_impute};
use grape_core::dataset::{
    load_csv, make_synthetic, minmax_scale, sample_mask, ColumnSchema, DataMatrix, MaskMatrix,
    SchemaSpec,
};
use grape_core::experiments::{
    run_ablations, run_experiment, run_generalization, run_imputation_experiment,
    run_missing_sweep, DatasetSource, ExperimentSpec, Protocol, SyntheticLabel,
};
use grape_core::graph::{build_graph, drop_edges, init_node_features, neighborhoods};
use grape_core::model::{init_params, GrapeConfig, MessageSource, ModelDims};
use grape_core::rng::derive_seed;
use grape_core::training::{
    imputation_loss, imputation_loss_with_gradients, TrainConfig,
};

const FD_STEP: f64 = 1e-5;
const FD_TOLERANCE: f64 = 1e-5;

fn data_file(name: &str) -> Option<PathBuf> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(name);
    path.exists().then_some(path)
}

fn require_data(name: &str) -> PathBuf {
    data_file(name).unwrap_or_else(|| {
        panic!(
            "data/{name} is missing; run scripts/fetch_uci.py (needs network) \
             and re-run with -- --ignored"
        )
    })
}

/// Central finite differences of a scalar tape computation with respect to
/// one input matrix.
fn fd_gradient(
    input: &Array2<f64>,
    build: impl Fn(&mut Tape, TensorId) -> TensorId,
) -> (Array2<f64>, Array2<f64>) {
    let mut tape = Tape::new();
    let x = tape.leaf(input.clone(), true);
    let loss = build(&mut tape, x);
    tape.backward(loss).unwrap();
    let analytic = tape.grad(x).unwrap().clone();

    let mut numeric = Array2::zeros(input.dim());
    for i in 0..input.nrows() {
        for j in 0..input.ncols() {
            let eval = |v: f64| {
                let mut probe = input.clone();
                probe[(i, j)] = v;
                let mut t = Tape::new();
                let x = t.leaf(probe, false);
                let loss = build(&mut t, x);
                t.scalar(loss)
            };
            numeric[(i, j)] = (eval(input[(i, j)] + FD_STEP) - eval(input[(i, j)] - FD_STEP))
                / (2.0 * FD_STEP);
        }
    }
    (analytic, numeric)
}

fn assert_fd_close(name: &str, analytic: &Array2<f64>, numeric: &Array2<f64>) {
    for (a, n) in analytic.iter().zip(numeric.iter()) {
        let scale = a.abs().max(n.abs()).max(1.0);
        assert!(
            (a - n).abs() <= FD_TOLERANCE * scale,
            "{name}: analytic {a} vs finite difference {n}"
        );
    }
}

fn sum_all(tape: &mut Tape, x: TensorId) -> TensorId {
    let (r, c) = tape.tensor(x).shape();
    let left = tape.constant(Array2::from_elem((1, r), 1.0));
    let right = tape.constant(Array2::from_elem((c, 1), 1.0));
    let rowsum = tape.matmul(left, x).unwrap();
    tape.matmul(rowsum, right).unwrap()
}

#[test]
fn acceptance_01_gradient_correctness() {
    // Primitives, each against central finite differences.
    let x = Array2::from_shape_fn((4, 3), |(i, j)| 0.3 * (i as f64 + 1.0) - 0.45 * (j as f64) + 0.21);
    let w = Array2::from_shape_fn((3, 2), |(i, j)| 0.17 * (i as f64) - 0.23 * (j as f64) + 0.4);

    let (a, n) = fd_gradient(&x, |tape, x| {
        let w = tape.constant(w.clone());
        let prod = tape.matmul(x, w).unwrap();
        sum_all(tape, prod)
    });
    assert_fd_close("matmul", &a, &n);

    let (a, n) = fd_gradient(&x, |tape, x| {
        let other = tape.constant(Array2::from_elem((4, 2), 0.5));
        let cat = tape.concat_cols(&[x, other]).unwrap();
        sum_all(tape, cat)
    });
    assert_fd_close("concat_cols", &a, &n);

    let (a, n) = fd_gradient(&x, |tape, x| {
        let y = tape.relu(x);
        sum_all(tape, y)
    });
    assert_fd_close("relu", &a, &n);

    for mode in [Aggregator::Mean, Aggregator::Sum, Aggregator::Max] {
        let (a, n) = fd_gradient(&x, |tape, x| {
            let agg = tape.segment_aggregate(x, &[0, 1, 0, 1], 3, mode).unwrap();
            sum_all(tape, agg)
        });
        assert_fd_close(mode.name(), &a, &n);
    }

    let target = Array2::from_shape_fn((4, 3), |(i, j)| 0.1 * (i as f64) + 0.05 * (j as f64));
    let (a, n) = fd_gradient(&x, |tape, x| {
        let t = tape.constant(target.clone());
        tape.mse_loss(x, t).unwrap()
    });
    assert_fd_close("mse_loss", &a, &n);

    let (a, n) = fd_gradient(&x, |tape, x| {
        tape.softmax_cross_entropy(x, &[0, 2, 1, 0]).unwrap()
    });
    assert_fd_close("softmax_cross_entropy", &a, &n);

    let (a, n) = fd_gradient(&x, |tape, x| {
        let bias = tape.constant(Array2::from_elem((1, 3), 0.2));
        let biased = tape.add_bias(x, bias).unwrap();
        let gathered = tape.gather_rows(biased, &[2, 0, 2, 3]).unwrap();
        let sliced = tape.slice_cols(gathered, 1, 2).unwrap();
        let reshaped = tape.reshape(sliced, 2, 4).unwrap();
        sum_all(tape, reshaped)
    });
    assert_fd_close("bias/gather/slice/reshape", &a, &n);

    let baseline = Array2::from_elem((4, 3), 9.0);
    let flags: Vec<bool> = (0..12).map(|k| k % 3 != 0).collect();
    let (a, n) = fd_gradient(&x, |tape, x| {
        let combined = tape.mask_combine(x, &baseline, &flags).unwrap();
        sum_all(tape, combined)
    });
    assert_fd_close("mask_combine", &a, &n);

    // Composed forward/backward on a random 6x4 problem, all three
    // aggregators, at seeds whose activations stay clear of ReLU/argmax
    // kinks (finite differences are invalid at kinks).
    for (aggregator, seed) in [
        (Aggregator::Mean, 21u64),
        (Aggregator::Sum, 22),
        (Aggregator::Max, 27),
    ] {
        let (raw, _) = make_synthetic(6, 4, 2, 0.1, seed).unwrap();
        let mask = sample_mask(6, 4, 0.3, derive_seed(seed, "mask", 0)).unwrap();
        let data = minmax_scale(&raw, &mask).unwrap();
        let graph = build_graph(&data, &mask).unwrap();
        let config = GrapeConfig {
            n_layers: 2,
            hidden_dim: 5,
            aggregator,
            ..GrapeConfig::imputation_default()
        };
        let dims = ModelDims::new(&config, &graph, data.schema()).unwrap();
        let params = init_params(&config, &dims, seed).unwrap();
        let drop = drop_edges(&graph, 0.25, seed ^ 0xff).unwrap();
        let (_, grads) = imputation_loss_with_gradients(&params, &graph, &drop, &config).unwrap();

        for t in 0..params.tensors().len() {
            let dim = params.tensors()[t].dim();
            for r in 0..dim.0 {
                for c in 0..dim.1 {
                    let mut plus = params.clone();
                    plus.tensors_mut()[t][(r, c)] += FD_STEP;
                    let mut minus = params.clone();
                    minus.tensors_mut()[t][(r, c)] -= FD_STEP;
                    let up = imputation_loss(&plus, &graph, &drop, &config).unwrap();
                    let down = imputation_loss(&minus, &graph, &drop, &config).unwrap();
                    let numeric = (up - down) / (2.0 * FD_STEP);
                    let analytic = grads[t][(r, c)];
                    let scale = numeric.abs().max(analytic.abs()).max(1.0);
                    assert!(
                        (numeric - analytic).abs() <= FD_TOLERANCE * scale,
                        "{aggregator:?} tensor {t} ({r},{c}): fd {numeric} vs grad {analytic}"
                    );
                }
            }
        }
    }
    println!("PASS criterion 1: gradients match central finite differences (rel <= 1e-5)");
}

#[test]
fn acceptance_02_oracle_equivalence() {
    // Column-mean oracle, exact equality.
    let (raw, _) = make_synthetic(25, 7, 3, 0.2, 40).unwrap();
    let mask = sample_mask(25, 7, 0.35, 41).unwrap();
    let result = mean_impute(&raw, &mask).unwrap();
    for j in 0..7 {
        let observed: Vec<f64> = (0..25)
            .filter(|&i| mask.is_observed(i, j))
            .map(|i| raw.values()[(i, j)])
            .collect();
        let mean = observed.iter().sum::<f64>() / observed.len() as f64;
        for i in 0..25 {
            let expected = if mask.is_observed(i, j) {
                raw.values()[(i, j)]
            } else {
                mean
            };
            assert_eq!(result.imputed[(i, j)], expected, "cell ({i},{j})");
        }
    }

    // Brute-force all-pairs KNN oracle on five hand-built fixtures.
    let fixtures: Vec<(Vec<Vec<f64>>, Vec<(usize, usize)>)> = vec![
        (
            vec![
                vec![0.1, 0.9],
                vec![0.2, 0.8],
                vec![0.3, 0.7],
                vec![0.4, 0.6],
                vec![0.5, 0.0],
            ],
            vec![(4, 1)],
        ),
        (
            vec![
                vec![1.0, 0.0],
                vec![0.9, 0.1],
                vec![0.0, 1.0],
                vec![0.1, 0.9],
                vec![0.5, 0.5],
            ],
            vec![(0, 0), (2, 1)],
        ),
        (
            vec![
                vec![0.0, 0.0, 0.0],
                vec![1.0, 1.0, 1.0],
                vec![2.0, 2.0, 2.0],
                vec![3.0, 3.0, 3.0],
            ],
            vec![(1, 0), (3, 2)],
        ),
        (
            vec![
                vec![5.0, 5.0],
                vec![5.0, 5.0],
                vec![5.0, 5.0],
                vec![5.0, 1.0],
            ],
            vec![(3, 1), (0, 0)],
        ),
        (
            vec![
                vec![0.2, 0.4],
                vec![0.6, 0.1],
                vec![0.9, 0.9],
                vec![0.3, 0.3],
                vec![0.7, 0.5],
            ],
            vec![(2, 0), (0, 1), (4, 0)],
        ),
    ];
    for (rows, holes) in fixtures {
        let n = rows.len();
        let m = rows[0].len();
        let values = Array2::from_shape_fn((n, m), |(i, j)| rows[i][j]);
        let data = DataMatrix::from_continuous(values).unwrap();
        let mut observed = Array2::from_elem((n, m), true);
        for &(i, j) in &holes {
            observed[(i, j)] = false;
        }
        let mask = MaskMatrix::from_observed(observed);
        for k in [1, 3, 50] {
            let result = knn_impute(&data, &mask, k).unwrap();
            for &(i, j) in &holes {
                // Oracle: every pairwise partial distance from scratch.
                let mut dists: Vec<(f64, usize)> = Vec::new();
                for r in 0..n {
                    if r == i || !mask.is_observed(r, j) {
                        continue;
                    }
                    let mut sq = 0.0;
                    let mut shared = 0usize;
                    for c in 0..m {
                        if mask.is_observed(i, c) && mask.is_observed(r, c) {
                            let d = data.values()[(i, c)] - data.values()[(r, c)];
                            sq += d * d;
                            shared += 1;
                        }
                    }
                    if shared > 0 {
                        dists.push(((sq * m as f64 / shared as f64).sqrt(), r));
                    }
                }
                dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let expected = if dists.is_empty() {
                    let col: Vec<f64> = (0..n)
                        .filter(|&r| mask.is_observed(r, j))
                        .map(|r| data.values()[(r, j)])
                        .collect();
                    col.iter().sum::<f64>() / col.len() as f64
                } else {
                    let (mut num, mut den) = (0.0, 0.0);
                    for &(d, r) in dists.iter().take(k) {
                        let w = 1.0 / (d + 1e-8);
                        num += w * data.values()[(r, j)];
                        den += w;
                    }
                    num / den
                };
                let got = result.imputed[(i, j)];
                assert!(
                    (got - expected).abs() < 1e-9,
                    "k={k} cell ({i},{j}): {got} vs oracle {expected}"
                );
            }
        }
    }
    println!("PASS criterion 2: mean and KNN match independent oracles");
}

#[test]
fn acceptance_03_graph_invariants() {
    let (raw, _) = make_synthetic(100, 100, 4, 0.1, 50).unwrap();
    let mask = sample_mask(100, 100, 0.3, 51).unwrap();
    let scaled = minmax_scale(&raw, &mask).unwrap();
    let graph = build_graph(&scaled, &mask).unwrap();

    // Edge count equals observed count; reconstruction is exact.
    assert_eq!(graph.n_edges(), mask.observed_count());
    let mut seen = 0usize;
    for edge in graph.edges() {
        assert!(mask.is_observed(edge.data_index, edge.feature_index));
        assert_eq!(
            edge.feature_vector[0],
            scaled.values()[(edge.data_index, edge.feature_index)]
        );
        seen += 1;
    }
    assert_eq!(seen, mask.observed_count());

    // Dropout kept fraction within binomial 3 sigma over ~10^4 edges.
    let n_edges = graph.n_edges() as f64;
    assert!(n_edges >= 6_000.0, "need a large edge set, got {n_edges}");
    let rate = 0.3;
    let drop = drop_edges(&graph, rate, 52).unwrap();
    let kept = drop.kept_count() as f64;
    let sigma = (n_edges * rate * (1.0 - rate)).sqrt();
    assert!(
        (kept - n_edges * (1.0 - rate)).abs() <= 3.0 * sigma,
        "kept {kept} of {n_edges}"
    );

    // Degree sums match the kept count on both sides.
    let adj = neighborhoods(&graph, &drop).unwrap();
    let data_deg: usize = (0..100).map(|i| adj[i].len()).sum();
    let feat_deg: usize = (0..100).map(|j| adj[graph.feature_node_id(j)].len()).sum();
    assert_eq!(data_deg, drop.kept_count());
    assert_eq!(feat_deg, drop.kept_count());

    // Feature-node init features form the identity matrix.
    let (_, feature_init) = init_node_features(&graph);
    let m = graph.n_feature_nodes();
    for i in 0..m {
        for j in 0..m {
            assert_eq!(feature_init[(i, j)], f64::from(i == j));
        }
    }
    println!("PASS criterion 3: graph invariants hold (edges, reconstruction, dropout 3-sigma, identity init)");
}

#[test]
fn acceptance_04_desk_scale_learning_signal() {
    let mut spec = ExperimentSpec::new(
        DatasetSource::Synthetic {
            n: 50,
            m: 6,
            rank: 1,
            noise: 0.0,
            label: SyntheticLabel::RowSum,
        },
        "synthetic_rank1",
        Protocol::Impute,
    );
    spec.n_trials = 5;
    spec.train = TrainConfig::desk_imputation();
    spec.baselines = vec!["mean".into()];
    spec.jobs = 2;
    let report = run_imputation_experiment(&spec, None).unwrap();

    let mut wins = 0;
    for trial in 0..5 {
        let value = |method: &str| {
            report
                .rows
                .iter()
                .find(|r| r.method == method && r.trial == trial && r.metric == "mae")
                .and_then(|r| r.value)
                .unwrap()
        };
        let (grape, mean) = (value("grape"), value("mean"));
        println!("  trial {trial}: grape {grape:.4} vs mean {mean:.4}");
        if grape < mean {
            wins += 1;
        }
    }
    assert!(wins >= 4, "network beat the mean baseline in {wins} of 5 trials");
    println!("PASS criterion 4: desk-preset network beats mean baseline in {wins}/5 seeds");
}

/// Criterion 5 helper: full-preset imputation on one UCI table, 5 trials,
/// missing rate 0.3, mean MAE within the published tolerance; tries the
/// default message variant first and the literal variant as fallback.
fn uci_imputation_within(name: &str, file: &str, expected: f64, tolerance: f64) {
    let path = require_data(file);
    let mut passed_with = None;
    for source in [
        MessageSource::NeighborEmbedding,
        MessageSource::LiteralSelfEmbedding,
    ] {
        let mut spec = ExperimentSpec::new(
            DatasetSource::Csv {
                path: path.clone(),
                has_header: true,
                schema_path: None,
                label_column: Some(label_column_of(file)),
            },
            name,
            Protocol::Impute,
        );
        spec.n_trials = 5;
        spec.train = TrainConfig::full_imputation();
        spec.train.grape.message_source = source;
        spec.baselines = vec!["mean".into()];
        spec.jobs = 2;
        let report = run_imputation_experiment(&spec, None).unwrap();
        let mae = report.aggregate_mean("grape", 0.3, "mae").unwrap();
        println!("  {name} with {source:?}: mean MAE {mae:.4} (target {expected} +- {tolerance})");
        if (mae - expected).abs() <= tolerance {
            passed_with = Some(source);
            break;
        }
    }
    let source = passed_with
        .unwrap_or_else(|| panic!("{name}: no message variant lands within {expected} +- {tolerance}"));
    println!("PASS criterion 5 ({name}): within tolerance using {source:?}");
}

fn label_column_of(file: &str) -> usize {
    match file {
        "housing.csv" => 13,
        "yacht.csv" => 6,
        "concrete.csv" => 8,
        other => panic!("unknown data file {other}"),
    }
}

#[test]
#[ignore = "full 20k-epoch reproduction; needs data/yacht.csv (scripts/fetch_uci.py) and tens of minutes"]
fn acceptance_05a_yacht_imputation_reproduction() {
    uci_imputation_within("yacht", "yacht.csv", 0.151, 0.03);
}

#[test]
#[ignore = "full 20k-epoch reproduction; needs data/housing.csv (scripts/fetch_uci.py) and tens of minutes"]
fn acceptance_05b_housing_imputation_reproduction() {
    uci_imputation_within("housing", "housing.csv", 0.075, 0.03);
}

#[test]
#[ignore = "full 20k-epoch reproduction; needs data/concrete.csv (scripts/fetch_uci.py) and tens of minutes"]
fn acceptance_06_dropout_ablation_on_concrete() {
    let path = require_data("concrete.csv");
    let mut spec = ExperimentSpec::new(
        DatasetSource::Csv {
            path,
            has_header: true,
            schema_path: None,
            label_column: Some(8),
        },
        "concrete",
        Protocol::AblateDropout,
    );
    spec.n_trials = 5;
    spec.train = TrainConfig::full_imputation();
    spec.baselines = vec![];
    spec.jobs = 2;
    let report = run_ablations(&spec, None).unwrap();
    let with = report.aggregate_mean("with_dropout", 0.3, "mae").unwrap();
    let without = report.aggregate_mean("without_dropout", 0.3, "mae").unwrap();
    println!("  concrete: with dropout {with:.4}, without {without:.4}");
    assert!(
        with < without,
        "dropout must improve MAE: {with} vs {without}"
    );
    assert!(
        (with - 0.090).abs() <= 0.03,
        "with-dropout MAE {with} outside 0.090 +- 0.03"
    );
    println!("PASS criterion 6: edge dropout improves concrete MAE ({with:.3} vs {without:.3})");
}

#[test]
#[ignore = "needs data/housing.csv (scripts/fetch_uci.py); desk preset ~hours on 2 cores, full preset longer (GRAPE_FULL_PRESET=1)"]
fn acceptance_07_missing_rate_monotonicity_on_housing() {
    let path = require_data("housing.csv");
    let mut spec = ExperimentSpec::new(
        DatasetSource::Csv {
            path,
            has_header: true,
            schema_path: None,
            label_column: Some(13),
        },
        "housing",
        Protocol::Sweep,
    );
    spec.missing_rates = vec![0.1, 0.3, 0.5, 0.7];
    spec.n_trials = 5;
    spec.train = if std::env::var("GRAPE_FULL_PRESET").is_ok() {
        TrainConfig::full_imputation()
    } else {
        TrainConfig::desk_imputation()
    };
    spec.baselines = vec![];
    spec.jobs = 2;
    let report = run_missing_sweep(&spec, None).unwrap();
    let maes: Vec<f64> = spec
        .missing_rates
        .iter()
        .map(|&r| report.aggregate_mean("grape", r, "mae").unwrap())
        .collect();
    println!("  housing sweep MAEs: {maes:?}");
    let mut inversions = 0;
    for w in maes.windows(2) {
        if w[1] < w[0] {
            inversions += 1;
            assert!(
                w[0] - w[1] <= 0.005,
                "inversion {} -> {} exceeds 0.005",
                w[0],
                w[1]
            );
        }
    }
    assert!(inversions <= 1, "{inversions} inversions in {maes:?}");
    println!("PASS criterion 7: housing MAE non-decreasing in missing rate ({inversions} tolerated inversion)");
}

#[test]
fn acceptance_08_generalization_to_unseen_rows() {
    let mut spec = ExperimentSpec::new(
        DatasetSource::Synthetic {
            n: 80,
            m: 6,
            rank: 2,
            noise: 0.02,
            label: SyntheticLabel::RowSum,
        },
        "synthetic_gen",
        Protocol::Generalize,
    );
    spec.n_trials = 3;
    spec.train = TrainConfig::desk_imputation();
    spec.train.epochs = 3_000;
    spec.jobs = 2;
    let report = run_generalization(&spec, None).unwrap();
    let train_mae = report.aggregate_mean("grape", 0.3, "train_graph_mae").unwrap();
    let test_mae = report.aggregate_mean("grape", 0.3, "test_graph_mae").unwrap();
    let mean_mae = report.aggregate_mean("mean", 0.3, "test_graph_mae").unwrap();
    println!("  train-graph {train_mae:.4}, unseen test-graph {test_mae:.4}, mean baseline {mean_mae:.4}");
    assert!(
        (test_mae - train_mae).abs() <= 0.25 * train_mae,
        "test-graph MAE {test_mae} not within 25% of train-graph {train_mae}"
    );
    assert!(
        test_mae < mean_mae,
        "test-graph MAE {test_mae} not below mean baseline {mean_mae}"
    );
    println!("PASS criterion 8: unseen-row graph within 25% of train graph and below mean baseline");
}

#[test]
fn acceptance_09_end_to_end_beats_two_stage() {
    let mut spec = ExperimentSpec::new(
        DatasetSource::Synthetic {
            n: 50,
            m: 5,
            rank: 1,
            noise: 0.02,
            label: SyntheticLabel::SumOfSquares,
        },
        "synthetic_sq",
        Protocol::AblateEndToEnd,
    );
    spec.n_trials = 5;
    spec.train = TrainConfig::desk_prediction();
    spec.train.epochs = 6_000;
    spec.train.eval_every = 2_000;
    spec.jobs = 2;
    let report = run_ablations(&spec, None).unwrap();
    let mut wins = 0;
    for trial in 0..5 {
        let value = |method: &str| {
            report
                .rows
                .iter()
                .find(|r| r.method == method && r.trial == trial)
                .and_then(|r| r.value)
                .unwrap()
        };
        let (e2e, two_stage) = (value("end_to_end"), value("impute_then_predict"));
        println!("  trial {trial}: end-to-end {e2e:.4} vs two-stage {two_stage:.4}");
        if e2e <= two_stage {
            wins += 1;
        }
    }
    assert!(
        wins >= 4,
        "end-to-end won {wins} of 5 paired trials against impute-then-predict"
    );
    println!("PASS criterion 9: end-to-end <= two-stage in {wins}/5 paired trials");
}

#[test]
fn acceptance_10_bitwise_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let run = |out: &Path| {
        let mut spec = ExperimentSpec::new(
            DatasetSource::Synthetic {
                n: 30,
                m: 4,
                rank: 2,
                noise: 0.05,
                label: SyntheticLabel::RowSum,
            },
            "synthetic_det",
            Protocol::Impute,
        );
        spec.n_trials = 2;
        spec.seed = 12345;
        spec.train = TrainConfig::desk_imputation();
        spec.train.epochs = 300;
        spec.train.eval_every = 100;
        spec.train.grape.hidden_dim = 12;
        spec.jobs = 2;
        spec.output_dir = Some(out.to_path_buf());
        run_experiment(&spec, None).unwrap()
    };
    let a_dir = dir.path().join("a");
    let b_dir = dir.path().join("b");
    run(&a_dir);
    run(&b_dir);
    for artifact in ["report.json", "report.csv", "trace_0.csv", "trace_1.csv"] {
        let a = std::fs::read(a_dir.join(artifact)).unwrap();
        let b = std::fs::read(b_dir.join(artifact)).unwrap();
        assert_eq!(a, b, "{artifact} differs between identical seeded runs");
    }
    println!("PASS criterion 10: identical config and seed give bitwise-identical reports");
}

#[test]
fn uci_files_expected_layout_when_present() {
    // Not a numbered criterion: validates the fetched data layout early so
    // the ignored reproduction tests fail on science, not plumbing.
    for (file, cols) in [("housing.csv", 14), ("yacht.csv", 7), ("concrete.csv", 9)] {
        if let Some(path) = data_file(file) {
            let schema = SchemaSpec::Explicit(
                (0..cols)
                    .map(|j| ColumnSchema::continuous(j, format!("col{j}")))
                    .collect(),
            );
            let data = load_csv(&path, schema, true).unwrap();
            assert_eq!(data.n_cols(), cols, "{file} column count");
            assert!(data.n_rows() >= 300, "{file} row count {}", data.n_rows());
            println!("  {file}: {} rows x {} cols", data.n_rows(), data.n_cols());
        }
    }
}
