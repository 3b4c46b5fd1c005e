//! Command-line surface for the mPCVM library: synthetic data generation,
//! width tuning, training, prediction, evaluation, the benchmark protocol,
//! and rank statistics over result tables.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use mpcvm::dataset::{self, Dataset};
use mpcvm::kernel::{self, KernelConfig};
use mpcvm::metrics::{self, Direction};
use mpcvm::model::ModelArtifact;
use mpcvm::probit;
use mpcvm::protocol::{self, TrainerKind, TrainerOptions};
use mpcvm::Error;

#[derive(Parser)]
#[command(name = "mpcvm", version, about = "Sparse Bayesian multi-class kernel classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset as CSV (label column last).
    Synth(SynthArgs),
    /// Pick the best RBF width over seeded tuning partitions.
    Tune(TuneArgs),
    /// Train a model and save it with a JSON train report.
    Train(TrainArgs),
    /// Predict labels (and optionally probabilities) for a feature file.
    Predict(PredictArgs),
    /// Evaluate a model on labeled data (ERR, generalized AUC, confusion).
    Evaluate(EvaluateArgs),
    /// Tune-then-evaluate over many seeded partitions, with summaries.
    Benchmark(BenchmarkArgs),
    /// Friedman test and Bonferroni-Dunn differences over a score table.
    Stats(StatsArgs),
}

#[derive(Args, Serialize)]
struct SynthArgs {
    /// Generator name: overlap or overclass.
    #[arg(long)]
    name: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize, Clone)]
struct HyperArgs {
    /// Gamma hyper-prior shape for weight precisions.
    #[arg(long, default_value_t = 1e-6)]
    u1: f64,
    /// Gamma hyper-prior rate for weight precisions.
    #[arg(long, default_value_t = 1e-6)]
    v1: f64,
    /// Gamma hyper-prior shape for bias precisions.
    #[arg(long, default_value_t = 1e-6)]
    u2: f64,
    /// Gamma hyper-prior rate for bias precisions.
    #[arg(long, default_value_t = 1e-6)]
    v2: f64,
    /// Precision threshold beyond which a weight is pruned (mpcvm1).
    #[arg(long, default_value_t = 1e6)]
    prune_threshold: f64,
    /// Iteration cap for mpcvm1.
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    /// Convergence tolerance (max |change| for mpcvm1; per-sample
    /// marginal-likelihood change for mpcvm2).
    #[arg(long)]
    tol: Option<f64>,
    /// Epoch cap for mpcvm2.
    #[arg(long, default_value_t = 1000)]
    max_epochs: usize,
    /// Gauss-Hermite node count.
    #[arg(long, default_value_t = 64)]
    quad_nodes: usize,
}

impl HyperArgs {
    fn options(&self, kind: TrainerKind, seed: u64) -> TrainerOptions {
        let mut opts = TrainerOptions::new(kind);
        opts.em.u1 = self.u1;
        opts.em.v1 = self.v1;
        opts.em.u2 = self.u2;
        opts.em.v2 = self.v2;
        opts.em.prune_threshold = self.prune_threshold;
        opts.em.max_iter = self.max_iter;
        if let Some(tol) = self.tol {
            opts.em.tol = tol;
            opts.fmlm.tol = tol;
        }
        opts.em.seed = seed;
        opts.em.quad_nodes = self.quad_nodes;
        opts.fmlm.max_epochs = self.max_epochs;
        opts.fmlm.seed = seed;
        opts.fmlm.quad_nodes = self.quad_nodes;
        opts
    }
}

#[derive(Args, Serialize)]
struct TuneArgs {
    #[arg(long)]
    data: PathBuf,
    /// Zero-based label column index (default: last column).
    #[arg(long)]
    label_col: Option<usize>,
    /// Trainer: mpcvm1 or mpcvm2.
    #[arg(long)]
    trainer: String,
    /// Explicit comma-separated width candidates (overrides --grid-count).
    #[arg(long, value_delimiter = ',')]
    thetas: Option<Vec<f64>>,
    /// Size of the automatic median-distance width grid.
    #[arg(long, default_value_t = 9)]
    grid_count: usize,
    #[arg(long, default_value_t = 5)]
    partitions: usize,
    /// Training rows per partition (default: 80% of the data).
    #[arg(long)]
    train_count: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Optional per-width accuracy CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    hyper: HyperArgs,
}

#[derive(Args, Serialize)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    label_col: Option<usize>,
    /// Trainer: mpcvm1 or mpcvm2.
    #[arg(long)]
    trainer: String,
    /// RBF width.
    #[arg(long)]
    theta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Model output path.
    #[arg(long)]
    out: PathBuf,
    /// Optional JSON train-report path (also printed to stdout).
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    hyper: HyperArgs,
}

#[derive(Args, Serialize)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Zero-based label column to drop when the file has one extra column
    /// (default: last).
    #[arg(long)]
    label_col: Option<usize>,
    /// Emit per-class probability columns after the label.
    #[arg(long, default_value_t = false)]
    with_proba: bool,
    /// Output CSV path (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    label_col: Option<usize>,
    /// Optional JSON report path (also printed to stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct BenchmarkArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    label_col: Option<usize>,
    /// Trainer: mpcvm1, mpcvm2, or both.
    #[arg(long)]
    trainer: String,
    /// Fixed RBF width; omit to tune on the first partitions.
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long, default_value_t = 9)]
    grid_count: usize,
    /// Evaluation partitions.
    #[arg(long, default_value_t = 45)]
    partitions: usize,
    #[arg(long, default_value_t = 5)]
    tune_partitions: usize,
    /// Training rows per partition (default: 80% of the data).
    #[arg(long)]
    train_count: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sweep mode: run on the first k classes for k = 2..=K.
    #[arg(long)]
    first_k_classes: Option<usize>,
    /// Optional per-partition CSV.
    #[arg(long)]
    out_csv: Option<PathBuf>,
    #[command(flatten)]
    hyper: HyperArgs,
}

#[derive(Args, Serialize)]
struct StatsArgs {
    /// Score table CSV: header row of algorithm names, one row per
    /// dataset (optional leading name column).
    #[arg(long)]
    scores: PathBuf,
    /// Control algorithm (column name).
    #[arg(long)]
    control: String,
    /// Metric direction: lower or higher is better.
    #[arg(long, default_value = "lower")]
    direction: String,
    #[arg(long, default_value_t = 0.10)]
    alpha: f64,
    /// Optional JSON report path (also printed to stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Tune(args) => cmd_tune(args),
        Command::Train(args) => cmd_train(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Benchmark(args) => cmd_benchmark(args),
        Command::Stats(args) => cmd_stats(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            if err.is_usage() {
                ExitCode::from(2)
            } else if err.is_numerical() {
                ExitCode::from(4)
            } else {
                ExitCode::from(3)
            }
        }
    }
}

fn resolved_config<T: Serialize>(command: &str, args: &T) -> serde_json::Value {
    json!({ "command": command, "args": args })
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn emit_report(value: &serde_json::Value, out: &Option<PathBuf>) -> Result<(), Error> {
    let text = format!("{}\n", serde_json::to_string_pretty(value).expect("report serializes"));
    print!("{text}");
    if let Some(path) = out {
        write_text(path, &text)?;
    }
    Ok(())
}

fn default_train_count(data: &Dataset, requested: Option<usize>) -> usize {
    requested.unwrap_or_else(|| ((data.len() as f64) * 0.8).round() as usize)
}

fn parse_trainer(name: &str) -> Result<TrainerKind, Error> {
    name.parse()
}

fn cmd_synth(args: SynthArgs) -> Result<(), Error> {
    let data = match args.name.as_str() {
        "overlap" => dataset::gen_overlap(args.seed),
        "overclass" => dataset::gen_overclass(args.seed),
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown generator {other:?}; expected overlap or overclass"
            )))
        }
    };
    dataset::write_csv(&data, &args.out)?;
    emit_report(
        &json!({
            "config": resolved_config("synth", &args),
            "rows": data.len(),
            "classes": data.class_count,
            "out": args.out,
        }),
        &None,
    )
}

fn cmd_tune(args: TuneArgs) -> Result<(), Error> {
    let data = dataset::load_csv(&args.data, args.label_col)?;
    let kind = parse_trainer(&args.trainer)?;
    let opts = args.hyper.options(kind, args.seed);
    let train_count = default_train_count(&data, args.train_count);
    let grid = match &args.thetas {
        Some(thetas) => thetas.clone(),
        None => {
            let params = dataset::fit_standardizer(&data)?;
            kernel::theta_grid(&params.transform(&data.features)?, args.grid_count)?
        }
    };
    let outcome = protocol::tune(&data, &grid, &opts, train_count, args.partitions, args.seed)?;

    if let Some(path) = &args.out {
        let mut csv = format!(
            "# config: {}\n",
            serde_json::to_string(&resolved_config("tune", &args)).unwrap()
        );
        csv.push_str("theta,partition,accuracy\n");
        for row in &outcome.rows {
            for (p, acc) in row.accuracies.iter().enumerate() {
                match acc {
                    Some(a) => csv.push_str(&format!("{},{},{}\n", row.theta, p, a)),
                    None => csv.push_str(&format!("{},{},\n", row.theta, p)),
                }
            }
        }
        write_text(path, &csv)?;
    }
    emit_report(
        &json!({
            "config": resolved_config("tune", &args),
            "best_theta": outcome.best_theta,
            "partitions": outcome.partitions,
            "rows": outcome.rows,
        }),
        &None,
    )
}

fn cmd_train(args: TrainArgs) -> Result<(), Error> {
    let data = dataset::load_csv(&args.data, args.label_col)?;
    let kind = parse_trainer(&args.trainer)?;
    let opts = args.hyper.options(kind, args.seed);
    let kernel_config = KernelConfig::rbf(args.theta)?;
    let (model, report) = protocol::fit_and_train(&data, &kernel_config, &opts)?;
    model.save(&args.out)?;
    let sparsity = model.sparsity_report();
    let vectors_nonzero: Vec<String> = sparsity
        .per_class_vectors
        .iter()
        .zip(&sparsity.per_class_nonzero)
        .map(|(v, nz)| format!("{v}({nz})"))
        .collect();
    emit_report(
        &json!({
            "config": resolved_config("train", &args),
            "model": args.out,
            "report": report,
            "sparsity": {
                "per_class": vectors_nonzero,
                "union_vectors": sparsity.union_vectors,
            },
        }),
        &args.report,
    )
}

fn load_prediction_features(
    model: &ModelArtifact,
    path: &Path,
    label_col: Option<usize>,
) -> Result<mpcvm::DMatrix<f64>, Error> {
    let raw = dataset::load_matrix_csv(path)?;
    let d = model.standardizer.mean.len();
    if raw.ncols() == d {
        return Ok(raw);
    }
    if raw.ncols() == d + 1 {
        let drop = label_col.unwrap_or(raw.ncols() - 1);
        if drop >= raw.ncols() {
            return Err(Error::InvalidArgument(format!(
                "label column {drop} outside a {}-column file",
                raw.ncols()
            )));
        }
        let keep: Vec<usize> = (0..raw.ncols()).filter(|&j| j != drop).collect();
        return Ok(mpcvm::DMatrix::from_fn(raw.nrows(), d, |i, j| {
            raw[(i, keep[j])]
        }));
    }
    Err(Error::DimensionMismatch(format!(
        "model expects {d} features but the file has {} columns",
        raw.ncols()
    )))
}

fn cmd_predict(args: PredictArgs) -> Result<(), Error> {
    let model = ModelArtifact::load(&args.model)?;
    let features = load_prediction_features(&model, &args.data, args.label_col)?;
    let labels = model.predict_class(&features)?;

    let mut csv = format!(
        "# config: {}\n",
        serde_json::to_string(&resolved_config("predict", &args)).unwrap()
    );
    if args.with_proba {
        let rule = probit::gauss_hermite(model.metadata.quad_nodes)?;
        let proba = model.predict_proba(&features, &rule)?;
        csv.push_str("label");
        for c in 0..model.classes {
            csv.push_str(&format!(",p{}", model.labels[c]));
        }
        csv.push('\n');
        for (i, label) in labels.iter().enumerate() {
            csv.push_str(&label.to_string());
            for c in 0..model.classes {
                csv.push_str(&format!(",{}", proba[(i, c)]));
            }
            csv.push('\n');
        }
    } else {
        csv.push_str("label\n");
        for label in &labels {
            csv.push_str(&format!("{label}\n"));
        }
    }
    match &args.out {
        Some(path) => write_text(path, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), Error> {
    let model = ModelArtifact::load(&args.model)?;
    let data = dataset::load_csv(&args.data, args.label_col)?;
    let report = protocol::evaluate(&model, &data, model.metadata.quad_nodes)?;
    emit_report(
        &json!({
            "config": resolved_config("evaluate", &args),
            "err": report.err,
            "auc": report.auc,
            "confusion": report.confusion,
        }),
        &args.out,
    )
}

fn benchmark_one(
    data: &Dataset,
    args: &BenchmarkArgs,
    kind: TrainerKind,
) -> Result<serde_json::Value, Error> {
    let opts = args.hyper.options(kind, args.seed);
    let spec = protocol::BenchmarkSpec {
        theta: args.theta,
        grid_count: args.grid_count,
        train_count: default_train_count(data, args.train_count),
        eval_partitions: args.partitions,
        tune_partitions: args.tune_partitions,
        base_seed: args.seed,
    };
    if let Some(k_max) = args.first_k_classes {
        let sweeps = protocol::benchmark_first_k(data, &opts, &spec, k_max)?;
        let rows: Vec<serde_json::Value> = sweeps
            .iter()
            .map(|(k, outcome)| {
                json!({
                    "k": k,
                    "theta": outcome.summary.theta,
                    "err": outcome.summary.format_err(),
                    "auc": outcome.summary.format_auc(),
                    "summary": outcome.summary,
                })
            })
            .collect();
        Ok(json!({ "trainer": kind.name(), "sweep": rows }))
    } else {
        let outcome = protocol::benchmark(data, &opts, &spec)?;
        if let Some(path) = &args.out_csv {
            let mut csv = format!(
                "# config: {}\n",
                serde_json::to_string(&resolved_config("benchmark", args)).unwrap()
            );
            csv.push_str("trainer,partition,seed,err,auc,converged\n");
            for p in &outcome.partitions {
                csv.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    kind.name(),
                    p.partition,
                    p.seed,
                    p.err,
                    p.auc,
                    p.converged
                ));
            }
            write_text(path, &csv)?;
        }
        Ok(json!({
            "trainer": kind.name(),
            "err": outcome.summary.format_err(),
            "auc": outcome.summary.format_auc(),
            "summary": outcome.summary,
            "partitions": outcome.partitions,
        }))
    }
}

fn cmd_benchmark(args: BenchmarkArgs) -> Result<(), Error> {
    let data = dataset::load_csv(&args.data, args.label_col)?;
    let kinds: Vec<TrainerKind> = match args.trainer.as_str() {
        "both" => vec![TrainerKind::Mpcvm1, TrainerKind::Mpcvm2],
        name => vec![parse_trainer(name)?],
    };
    let mut results = Vec::new();
    for kind in kinds {
        results.push(benchmark_one(&data, &args, kind)?);
    }
    emit_report(
        &json!({
            "config": resolved_config("benchmark", &args),
            "results": results,
        }),
        &None,
    )
}

/// Parse a score table: header of algorithm names, one row per dataset,
/// optionally led by a non-numeric dataset-name column.
fn parse_score_table(path: &Path) -> Result<(Vec<String>, mpcvm::DMatrix<f64>), Error> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let lines: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    if lines.len() < 2 {
        return Err(Error::Data("score table needs a header and at least one row".into()));
    }
    let header: Vec<String> = lines[0].split(',').map(|c| c.trim().to_string()).collect();
    let body: Vec<Vec<&str>> = lines[1..]
        .iter()
        .map(|l| l.split(',').map(str::trim).collect())
        .collect();
    let width = header.len();
    for (i, row) in body.iter().enumerate() {
        if row.len() != width {
            return Err(Error::Data(format!("ragged score row {}", i + 1)));
        }
    }
    let names_column = body.iter().any(|row| row[0].parse::<f64>().is_err());
    let first_col = usize::from(names_column);
    let algorithms: Vec<String> = header[first_col..].to_vec();
    if algorithms.len() < 2 {
        return Err(Error::Data("need at least two algorithm columns".into()));
    }
    let mut values = Vec::with_capacity(body.len() * algorithms.len());
    for (i, row) in body.iter().enumerate() {
        for cell in &row[first_col..] {
            values.push(cell.parse::<f64>().map_err(|_| {
                Error::Data(format!("non-numeric score {cell:?} in row {}", i + 1))
            })?);
        }
    }
    let matrix =
        mpcvm::DMatrix::from_row_iterator(body.len(), algorithms.len(), values);
    Ok((algorithms, matrix))
}

fn cmd_stats(args: StatsArgs) -> Result<(), Error> {
    let (algorithms, table) = parse_score_table(&args.scores)?;
    let direction = match args.direction.as_str() {
        "lower" => Direction::LowerIsBetter,
        "higher" => Direction::HigherIsBetter,
        other => {
            return Err(Error::InvalidArgument(format!(
                "direction must be lower or higher, got {other:?}"
            )))
        }
    };
    let control = algorithms
        .iter()
        .position(|a| a == &args.control)
        .ok_or_else(|| {
            Error::InvalidArgument(format!(
                "control {:?} not among the algorithms {algorithms:?}",
                args.control
            ))
        })?;

    let ranks = metrics::average_ranks(&table, direction)?;
    let q = metrics::friedman_q(&ranks)?;
    let p_value = metrics::chi_square_sf(q, ranks.k - 1)?;
    let q_alpha = metrics::q_alpha_for(ranks.k, args.alpha)?;
    let cd = metrics::critical_difference(ranks.k, ranks.n_datasets, q_alpha)?;
    let dunn = metrics::bonferroni_dunn(&ranks, control, q_alpha)?;

    let comparisons: Vec<serde_json::Value> = algorithms
        .iter()
        .enumerate()
        .map(|(j, name)| {
            json!({
                "algorithm": name,
                "avg_rank": ranks.avg_ranks[j],
                "difference": dunn.differences[j],
                "significant": dunn.significant[j],
            })
        })
        .collect();
    emit_report(
        &json!({
            "config": resolved_config("stats", &args),
            "algorithms": algorithms,
            "avg_ranks": ranks.avg_ranks,
            "friedman_q": q,
            "p_value": p_value,
            "q_alpha": q_alpha,
            "critical_difference": cd,
            "control": args.control,
            "comparisons": comparisons,
        }),
        &args.out,
    )
}
