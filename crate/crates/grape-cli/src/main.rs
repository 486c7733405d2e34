//! Command-line front end: wires datasets, training, baselines, and the
//! experiment protocols into run directories.
//!
//! Configuration precedence: command-line flags override config-file values,
//! which override preset defaults. Every run directory receives the fully
//! resolved spec as `config.json`; passing that file back through
//! `--config` replays the run.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use grape_core::autodiff::Aggregator;
use grape_core::dataset::{load_csv, load_schema_json, ColumnKind, SchemaSpec};
use grape_core::experiments::{
    resolve_dataset, run_experiment, DatasetSource, ExperimentSpec, Protocol, SyntheticLabel,
};
use grape_core::model::MessageSource;
use grape_core::training::{ProgressEvent, Task, TrainConfig};
use grape_core::GrapeError;

mod config;

use config::FileConfig;

#[derive(Parser)]
#[command(
    name = "grape",
    about = "Missing-data imputation and label prediction on bipartite graphs",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Feature imputation: train on observed cells, report MAE over the
    /// held-out unobserved cells, with baselines on the identical mask.
    Impute(RunArgs),
    /// Label prediction: train the node head end to end; baselines impute
    /// and then fit linear regression.
    Predict(PredictArgs),
    /// Imputation across several missing rates.
    Sweep(SweepArgs),
    /// Train on a 70/30 row split and evaluate the unseen test graph
    /// without retraining.
    Generalize(RunArgs),
    /// Paired-arm ablations: dropout, aggregator, end_to_end.
    Ablate(AblateArgs),
    /// Dataset summary: shape, inferred schema, per-column ranges.
    Info(InfoArgs),
}

#[derive(Args, Clone)]
struct DataArgs {
    /// CSV dataset path (comma-separated, '.' decimals).
    #[arg(long, conflicts_with = "synthetic")]
    data: Option<PathBuf>,

    /// Synthetic dataset descriptor "n,m,rank,noise[,row_sum|sum_of_squares]".
    #[arg(long)]
    synthetic: Option<String>,

    /// JSON schema sidecar (array of {index, kind, cardinality?, name?}).
    #[arg(long)]
    schema: Option<PathBuf>,

    /// Treat the first CSV line as data, not a header.
    #[arg(long)]
    no_header: bool,

    /// Column index holding the downstream label (excluded from features).
    #[arg(long)]
    label_column: Option<usize>,
}

#[derive(Args, Clone)]
struct CommonArgs {
    #[command(flatten)]
    data: DataArgs,

    /// Missing rate for the sampled mask.
    #[arg(long)]
    rate: Option<f64>,

    /// Number of trials with independent seeds.
    #[arg(long)]
    trials: Option<usize>,

    /// Base seed; every stream in the run derives from it.
    #[arg(long)]
    seed: Option<u64>,

    /// Parallel trials (default 1 for reproducible scheduling).
    #[arg(long)]
    jobs: Option<usize>,

    /// Preset: "full" (20,000 epochs) or "desk" (4,000 epochs).
    #[arg(long)]
    preset: Option<String>,

    /// Config file: either a flat override file or a fully resolved spec
    /// from a previous run directory.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Output directory (default $GRAPE_RUN_DIR/<name> or runs/<name>).
    #[arg(long)]
    out: Option<PathBuf>,

    /// Record wall-clock timings in the report.
    #[arg(long)]
    timing: bool,

    /// Training epochs (overrides the preset).
    #[arg(long)]
    epochs: Option<usize>,

    /// Adam learning rate.
    #[arg(long)]
    lr: Option<f64>,

    /// Edge dropout rate.
    #[arg(long)]
    dropout: Option<f64>,

    /// Evaluation cadence in epochs.
    #[arg(long)]
    eval_every: Option<usize>,

    /// Message-passing layers.
    #[arg(long)]
    layers: Option<usize>,

    /// Hidden width.
    #[arg(long)]
    hidden: Option<usize>,

    /// Aggregator: mean, sum, or max.
    #[arg(long)]
    aggregator: Option<String>,

    /// Message source: "neighbor" (sender embedding) or "literal"
    /// (receiver embedding).
    #[arg(long)]
    message_source: Option<String>,

    /// Comma-separated baselines to run (mean,knn); empty string for none.
    #[arg(long)]
    baselines: Option<String>,

    /// Neighbor count for the KNN baseline.
    #[arg(long)]
    knn_k: Option<usize>,

    /// Train fraction for label splits and row splits.
    #[arg(long)]
    train_frac: Option<f64>,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    common: CommonArgs,

    /// Also run the two-stage impute-then-predict pipeline with paired
    /// seeds and report both MAE rows.
    #[arg(long)]
    compare: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,

    /// Comma-separated missing rates.
    #[arg(long, default_value = "0.1,0.3,0.5,0.7")]
    rates: String,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    common: CommonArgs,

    /// Which ablation: dropout, aggregator, or end_to_end.
    #[arg(long)]
    which: String,
}

#[derive(Args)]
struct InfoArgs {
    #[command(flatten)]
    data: DataArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Impute(args) => run(args.common, Protocol::Impute, None),
        Command::Predict(args) => {
            let protocol = if args.compare {
                Protocol::AblateEndToEnd
            } else {
                Protocol::Predict
            };
            run(args.common, protocol, None)
        }
        Command::Sweep(args) => {
            let rates = args.rates.clone();
            run(args.common, Protocol::Sweep, Some(rates))
        }
        Command::Generalize(args) => run(args.common, Protocol::Generalize, None),
        Command::Ablate(args) => {
            let protocol = match args.which.as_str() {
                "dropout" => Protocol::AblateDropout,
                "aggregator" => Protocol::AblateAggregator,
                "end_to_end" => Protocol::AblateEndToEnd,
                other => {
                    eprintln!("config error: unknown ablation {other:?} (expected dropout, aggregator, or end_to_end)");
                    return ExitCode::from(1);
                }
            };
            run(args.common, protocol, None)
        }
        Command::Info(args) => info(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(err)) => {
            eprintln!("runtime error: {err}");
            ExitCode::from(2)
        }
    }
}

enum CliError {
    Config(String),
    Runtime(GrapeError),
}

impl From<GrapeError> for CliError {
    fn from(err: GrapeError) -> Self {
        // Everything the spec layer rejects up front is a configuration
        // problem; failures after validation are runtime errors.
        CliError::Runtime(err)
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn parse_synthetic(text: &str) -> Result<DatasetSource, CliError> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 4 && parts.len() != 5 {
        return Err(config_err(format!(
            "--synthetic expects n,m,rank,noise[,label], got {text:?}"
        )));
    }
    let parse_usize = |s: &str, what: &str| {
        s.trim()
            .parse::<usize>()
            .map_err(|_| config_err(format!("--synthetic {what} must be an integer, got {s:?}")))
    };
    let n = parse_usize(parts[0], "n")?;
    let m = parse_usize(parts[1], "m")?;
    let rank = parse_usize(parts[2], "rank")?;
    let noise = parts[3]
        .trim()
        .parse::<f64>()
        .map_err(|_| config_err(format!("--synthetic noise must be a number, got {:?}", parts[3])))?;
    let label = match parts.get(4).map(|s| s.trim()) {
        None | Some("row_sum") => SyntheticLabel::RowSum,
        Some("sum_of_squares") => SyntheticLabel::SumOfSquares,
        Some(other) => {
            return Err(config_err(format!(
                "--synthetic label must be row_sum or sum_of_squares, got {other:?}"
            )))
        }
    };
    Ok(DatasetSource::Synthetic {
        n,
        m,
        rank,
        noise,
        label,
    })
}

fn dataset_source(args: &DataArgs) -> Result<(DatasetSource, String), CliError> {
    if let Some(text) = &args.synthetic {
        let source = parse_synthetic(text)?;
        return Ok((source, format!("synthetic_{}", text.replace(',', "x"))));
    }
    let path = args
        .data
        .clone()
        .ok_or_else(|| config_err("either --data or --synthetic is required"))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    Ok((
        DatasetSource::Csv {
            path,
            has_header: !args.no_header,
            schema_path: args.schema.clone(),
            label_column: args.label_column,
        },
        name,
    ))
}

/// Preset defaults -> config file -> flags.
fn resolve_spec(
    common: &CommonArgs,
    protocol: Protocol,
    rates_flag: Option<String>,
) -> Result<ExperimentSpec, CliError> {
    // A config file holding a fully resolved spec replays that run as-is
    // (flags still override).
    let file: Option<serde_json::Value> = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
            Some(
                serde_json::from_str(&text)
                    .map_err(|e| config_err(format!("{} is not valid JSON: {e}", path.display())))?,
            )
        }
        None => None,
    };

    let mut spec = if let Some(doc) = &file {
        if let Ok(full) = serde_json::from_value::<ExperimentSpec>(doc.clone()) {
            full
        } else {
            let (source, name) = dataset_source(&common.data)?;
            let mut spec = ExperimentSpec::new(source, name, protocol);
            spec.train = preset_train(common, protocol)?;
            let overrides: FileConfig = serde_json::from_value(doc.clone())
                .map_err(|e| config_err(format!("config file: {e}")))?;
            overrides.apply(&mut spec);
            spec
        }
    } else {
        let (source, name) = dataset_source(&common.data)?;
        let mut spec = ExperimentSpec::new(source, name, protocol);
        spec.train = preset_train(common, protocol)?;
        spec
    };
    spec.protocol = protocol;

    // Flags override whatever the file said.
    if common.config.is_some() && (common.data.data.is_some() || common.data.synthetic.is_some()) {
        let (source, name) = dataset_source(&common.data)?;
        spec.dataset = source;
        spec.dataset_name = name;
    }
    if let Some(rates) = rates_flag {
        spec.missing_rates = rates
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| config_err(format!("--rates entry {s:?} is not a number")))
            })
            .collect::<Result<_, _>>()?;
    }
    if let Some(rate) = common.rate {
        if !(0.0..1.0).contains(&rate) {
            return Err(config_err(format!(
                "--rate must be in [0, 1), got {rate}"
            )));
        }
        spec.missing_rates = vec![rate];
    }
    if let Some(trials) = common.trials {
        spec.n_trials = trials;
    }
    if let Some(seed) = common.seed {
        spec.seed = seed;
    }
    if let Some(jobs) = common.jobs {
        spec.jobs = jobs;
    }
    if let Some(epochs) = common.epochs {
        spec.train.epochs = epochs;
    }
    if let Some(lr) = common.lr {
        spec.train.learning_rate = lr;
    }
    if let Some(dropout) = common.dropout {
        spec.train.edge_dropout = dropout;
    }
    if let Some(eval_every) = common.eval_every {
        spec.train.eval_every = eval_every;
    }
    if let Some(layers) = common.layers {
        spec.train.grape.n_layers = layers;
    }
    if let Some(hidden) = common.hidden {
        spec.train.grape.hidden_dim = hidden;
    }
    if let Some(agg) = &common.aggregator {
        spec.train.grape.aggregator = agg
            .parse::<Aggregator>()
            .map_err(|e| config_err(e.to_string()))?;
    }
    if let Some(ms) = &common.message_source {
        spec.train.grape.message_source = match ms.as_str() {
            "neighbor" => MessageSource::NeighborEmbedding,
            "literal" => MessageSource::LiteralSelfEmbedding,
            other => {
                return Err(config_err(format!(
                    "--message-source must be neighbor or literal, got {other:?}"
                )))
            }
        };
    }
    if let Some(baselines) = &common.baselines {
        spec.baselines = baselines
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.trim().to_string())
            .collect();
    }
    if let Some(k) = common.knn_k {
        spec.knn_k = k;
    }
    if let Some(frac) = common.train_frac {
        spec.train_fraction = frac;
    }
    spec.record_timing = spec.record_timing || common.timing;

    // Label prediction needs labels.
    if matches!(protocol, Protocol::Predict | Protocol::AblateEndToEnd) {
        let has_labels = matches!(spec.dataset, DatasetSource::Synthetic { .. })
            || matches!(
                spec.dataset,
                DatasetSource::Csv {
                    label_column: Some(_),
                    ..
                }
            );
        if !has_labels {
            return Err(config_err(
                "--label-column is required for label prediction on CSV data",
            ));
        }
    }

    let out = common.out.clone().or(spec.output_dir).unwrap_or_else(|| {
        let root = std::env::var("GRAPE_RUN_DIR").unwrap_or_else(|_| "runs".into());
        PathBuf::from(root).join(format!(
            "{}_{}_seed{}",
            protocol_name(protocol),
            spec.dataset_name,
            spec.seed
        ))
    });
    spec.output_dir = Some(out);

    spec.validate().map_err(|e| config_err(e.to_string()))?;
    Ok(spec)
}

fn preset_train(common: &CommonArgs, protocol: Protocol) -> Result<TrainConfig, CliError> {
    let prediction = matches!(protocol, Protocol::Predict | Protocol::AblateEndToEnd);
    let preset = common.preset.as_deref().unwrap_or("full");
    let mut train = match (preset, prediction) {
        ("full", false) => TrainConfig::full_imputation(),
        ("desk", false) => TrainConfig::desk_imputation(),
        ("full", true) => TrainConfig::full_prediction(),
        ("desk", true) => TrainConfig::desk_prediction(),
        (other, _) => {
            return Err(config_err(format!(
                "--preset must be full or desk, got {other:?}"
            )))
        }
    };
    if prediction {
        train.task = Task::LabelPrediction;
    }
    Ok(train)
}

fn protocol_name(protocol: Protocol) -> &'static str {
    match protocol {
        Protocol::Impute => "impute",
        Protocol::Predict => "predict",
        Protocol::Sweep => "sweep",
        Protocol::Generalize => "generalize",
        Protocol::AblateDropout => "ablate_dropout",
        Protocol::AblateAggregator => "ablate_aggregator",
        Protocol::AblateEndToEnd => "ablate_end_to_end",
    }
}

fn run(
    common: CommonArgs,
    protocol: Protocol,
    rates_flag: Option<String>,
) -> Result<(), CliError> {
    let spec = resolve_spec(&common, protocol, rates_flag)?;
    let out_dir = spec.output_dir.clone().expect("resolved above");
    std::fs::create_dir_all(&out_dir).map_err(GrapeError::Io)?;
    std::fs::write(
        out_dir.join("config.json"),
        serde_json::to_string_pretty(&spec).map_err(GrapeError::Json)?,
    )
    .map_err(GrapeError::Io)?;

    let (tx, rx) = std::sync::mpsc::channel::<ProgressEvent>();
    let printer = std::thread::spawn(move || {
        for event in rx {
            let metric = event
                .test_metric
                .map(|v| format!(" test_metric {v:.6}"))
                .unwrap_or_default();
            match event.trial {
                Some(t) => println!("trial {t} done: epoch {} loss {:.6}{metric}", event.epoch, event.train_loss),
                None => println!("epoch {} loss {:.6}{metric}", event.epoch, event.train_loss),
            }
        }
    });

    let report = run_experiment(&spec, Some(&tx))?;
    drop(tx);
    let _ = printer.join();

    // Aggregate table to stdout.
    println!("\n{:<24} {:>8} {:>20} {:>12} {:>12}", "method", "rate", "metric", "mean", "stddev");
    for agg in &report.aggregates {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "null".into());
        println!(
            "{:<24} {:>8} {:>20} {:>12} {:>12}",
            agg.method,
            agg.rate,
            agg.metric,
            fmt(agg.mean),
            fmt(agg.stddev)
        );
    }
    println!("\nreport written to {}", out_dir.display());
    Ok(())
}

fn info(args: InfoArgs) -> Result<(), CliError> {
    if args.data.synthetic.is_some() {
        let (source, name) = dataset_source(&args.data)?;
        let resolved = resolve_dataset(&source, 0)?;
        println!("dataset {name}: {} rows x {} columns (synthetic)", resolved.data.n_rows(), resolved.data.n_cols());
        return Ok(());
    }
    let path = args
        .data
        .data
        .clone()
        .ok_or_else(|| config_err("--data is required"))?;
    let schema = match &args.data.schema {
        Some(p) => SchemaSpec::Explicit(load_schema_json(p)?),
        None => SchemaSpec::Infer,
    };
    let data = load_csv(&path, schema, !args.data.no_header)?;
    println!(
        "dataset {}: {} rows x {} columns",
        path.display(),
        data.n_rows(),
        data.n_cols()
    );
    println!("{:<6} {:<20} {:<22} {:>12} {:>12}", "index", "name", "kind", "min", "max");
    for col in data.schema() {
        let column = data.values().column(col.index);
        let min = column.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = column.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let kind = match col.kind {
            ColumnKind::Continuous => "continuous".to_string(),
            ColumnKind::Categorical { cardinality } => {
                format!("categorical({cardinality})")
            }
        };
        println!(
            "{:<6} {:<20} {:<22} {:>12} {:>12}",
            col.index, col.name, kind, min, max
        );
    }
    Ok(())
}
