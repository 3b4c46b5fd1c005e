//! The benchmark protocol: seeded train/test partitions, width tuning on
//! the first partitions, evaluation on the rest, and the class-curriculum
//! sweep. Partition seeds are `base_seed + 0 .. base_seed + tune - 1` for
//! tuning and continue from `base_seed + tune` for evaluation, so runs are
//! reproducible from a single seed.

use serde::{Deserialize, Serialize};

use crate::dataset::{self, Dataset, SplitSpec};
use crate::em::{self, EmConfig};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::fmlm::{self, FmlmConfig};
use crate::kernel::{self, KernelConfig};
use crate::metrics;
use crate::model::{ModelArtifact, TrainReport};
use crate::probit;

/// Which training algorithm to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainerKind {
    Mpcvm1,
    Mpcvm2,
}

impl TrainerKind {
    pub fn name(&self) -> &'static str {
        match self {
            TrainerKind::Mpcvm1 => "mpcvm1",
            TrainerKind::Mpcvm2 => "mpcvm2",
        }
    }
}

impl std::str::FromStr for TrainerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mpcvm1" => Ok(TrainerKind::Mpcvm1),
            "mpcvm2" => Ok(TrainerKind::Mpcvm2),
            other => Err(Error::InvalidArgument(format!(
                "unknown trainer {other:?}; expected mpcvm1 or mpcvm2"
            ))),
        }
    }
}

/// Trainer selection plus both hyper-parameter blocks (only the selected
/// one is consulted).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainerOptions {
    pub kind: TrainerKind,
    pub em: EmConfig,
    pub fmlm: FmlmConfig,
}

impl TrainerOptions {
    pub fn new(kind: TrainerKind) -> Self {
        TrainerOptions {
            kind,
            em: EmConfig::default(),
            fmlm: FmlmConfig::default(),
        }
    }

    pub fn quad_nodes(&self) -> usize {
        match self.kind {
            TrainerKind::Mpcvm1 => self.em.quad_nodes,
            TrainerKind::Mpcvm2 => self.fmlm.quad_nodes,
        }
    }

    fn with_seed(mut self, seed: u64) -> Self {
        self.em.seed = seed;
        self.fmlm.seed = seed;
        self
    }
}

/// Standardize (fitting on the given training set) and train.
pub fn fit_and_train(
    train_raw: &Dataset,
    kernel_config: &KernelConfig,
    opts: &TrainerOptions,
) -> Result<(ModelArtifact, TrainReport)> {
    let params = dataset::fit_standardizer(train_raw)?;
    let train_std = dataset::apply_standardizer(&params, train_raw)?;
    match opts.kind {
        TrainerKind::Mpcvm1 => em::train_mpcvm1(&train_std, &params, kernel_config, &opts.em),
        TrainerKind::Mpcvm2 => fmlm::train_mpcvm2(&train_std, &params, kernel_config, &opts.fmlm),
    }
}

/// One train/evaluate round on a seeded partition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartitionOutcome {
    pub partition: usize,
    pub seed: u64,
    pub err: f64,
    pub auc: f64,
    pub train_seconds: f64,
    pub converged: bool,
}

/// Split with the partition seed, train on the standardized training half,
/// and evaluate ERR and generalized AUC on the raw test half.
pub fn run_partition(
    data: &Dataset,
    train_count: usize,
    partition: usize,
    seed: u64,
    kernel_config: &KernelConfig,
    opts: &TrainerOptions,
) -> Result<PartitionOutcome> {
    let (train, test) = dataset::split(data, &SplitSpec { train_count, seed })?;
    let opts = opts.with_seed(seed);
    let (model, report) = fit_and_train(&train, kernel_config, &opts)?;
    let eval = evaluate(&model, &test, opts.quad_nodes())?;
    Ok(PartitionOutcome {
        partition,
        seed,
        err: eval.err,
        auc: eval.auc,
        train_seconds: report.wall_seconds,
        converged: report.converged,
    })
}

/// ERR, generalized AUC, and the confusion matrix of a model on labeled
/// data. Errors if the data contains a class the model does not know.
pub fn evaluate(model: &ModelArtifact, data: &Dataset, quad_nodes: usize) -> Result<metrics::EvalReport> {
    for (idx, &label) in data.label_names.iter().enumerate() {
        if !model.labels.contains(&label) {
            return Err(Error::Data(format!(
                "class {label} (index {}) is absent from the model",
                idx + 1
            )));
        }
    }
    let truth: Vec<i64> = data.labels.iter().map(|&l| data.original_label(l)).collect();
    let predicted = model.predict_class(&data.features)?;
    let err = metrics::error_rate(&predicted, &truth)?;

    let rule = probit::gauss_hermite(quad_nodes)?;
    let proba = model.predict_proba(&data.features, &rule)?;
    // score columns follow the model's class order; map truth onto it
    let truth_model_index: Vec<usize> = truth
        .iter()
        .map(|t| model.labels.iter().position(|l| l == t).unwrap() + 1)
        .collect();
    let auc = metrics::generalized_auc(&proba, &truth_model_index)?;

    let c = model.classes;
    let mut confusion = vec![vec![0usize; c]; c];
    for (t, p) in truth_model_index.iter().zip(&predicted) {
        let p_idx = model.labels.iter().position(|l| l == p).unwrap();
        confusion[t - 1][p_idx] += 1;
    }
    Ok(metrics::EvalReport { err, auc, confusion })
}

/// Mean accuracy of one kernel width over the tuning partitions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThetaRow {
    pub theta: f64,
    pub accuracies: Vec<Option<f64>>,
    pub mean_accuracy: Option<f64>,
    pub failures: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuneOutcome {
    pub best_theta: f64,
    pub rows: Vec<ThetaRow>,
    pub partitions: usize,
}

/// Evaluate each candidate width on the tuning partitions (test-half
/// accuracy) and pick the best mean, breaking ties toward the smaller
/// width. Widths whose every partition failed are excluded.
pub fn tune(
    data: &Dataset,
    grid: &[f64],
    opts: &TrainerOptions,
    train_count: usize,
    partitions: usize,
    base_seed: u64,
) -> Result<TuneOutcome> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty width grid".into()));
    }
    if partitions == 0 {
        return Err(Error::InvalidArgument("need at least one tuning partition".into()));
    }
    let cells = exec::map_indexed(
        Execution::default(),
        grid.len() * partitions,
        |flat| -> Option<f64> {
            let theta = grid[flat / partitions];
            let p = flat % partitions;
            let kernel_config = KernelConfig::rbf(theta).ok()?;
            run_partition(data, train_count, p, base_seed + p as u64, &kernel_config, opts)
                .ok()
                .map(|outcome| 100.0 - outcome.err)
        },
    );

    let mut rows = Vec::with_capacity(grid.len());
    for (gi, &theta) in grid.iter().enumerate() {
        let accuracies: Vec<Option<f64>> =
            cells[gi * partitions..(gi + 1) * partitions].to_vec();
        let ok: Vec<f64> = accuracies.iter().flatten().cloned().collect();
        let failures = partitions - ok.len();
        let mean_accuracy = if ok.is_empty() {
            None
        } else {
            Some(ok.iter().sum::<f64>() / ok.len() as f64)
        };
        rows.push(ThetaRow {
            theta,
            accuracies,
            mean_accuracy,
            failures,
        });
    }

    let best = rows
        .iter()
        .filter(|r| r.mean_accuracy.is_some())
        .max_by(|a, b| {
            let am = a.mean_accuracy.unwrap();
            let bm = b.mean_accuracy.unwrap();
            // strict ordering with ties toward the smaller theta
            am.partial_cmp(&bm)
                .unwrap()
                .then(b.theta.partial_cmp(&a.theta).unwrap())
        })
        .ok_or_else(|| Error::Numerical("every width failed on every tuning partition".into()))?;
    Ok(TuneOutcome {
        best_theta: best.theta,
        rows,
        partitions,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub theta: f64,
    pub tuned: bool,
    pub mean_err: f64,
    pub std_err: f64,
    pub mean_auc: f64,
    pub std_auc: f64,
    pub evaluated: usize,
    pub failures: usize,
}

impl BenchmarkSummary {
    /// "3.185(3.175)"-style fixed three-decimal formatting.
    pub fn format_err(&self) -> String {
        format!("{:.3}({:.3})", self.mean_err, self.std_err)
    }

    pub fn format_auc(&self) -> String {
        format!("{:.3}({:.3})", self.mean_auc, self.std_auc)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkOutcome {
    pub summary: BenchmarkSummary,
    pub partitions: Vec<PartitionOutcome>,
    pub tuning: Option<TuneOutcome>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// Partition layout and width policy of one benchmark run.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    /// Fixed kernel width; `None` tunes on the first partitions.
    pub theta: Option<f64>,
    pub grid_count: usize,
    pub train_count: usize,
    pub eval_partitions: usize,
    pub tune_partitions: usize,
    pub base_seed: u64,
}

/// Full protocol: optional tuning on the first `tune_partitions` seeded
/// partitions, then evaluation on the next `eval_partitions`. Partition
/// rounds run concurrently and are reported in partition order.
pub fn benchmark(data: &Dataset, opts: &TrainerOptions, spec: &BenchmarkSpec) -> Result<BenchmarkOutcome> {
    if spec.eval_partitions == 0 {
        return Err(Error::InvalidArgument("need at least one evaluation partition".into()));
    }
    let (theta, tuning) = match spec.theta {
        Some(t) => (t, None),
        None => {
            // the kernel acts on standardized features, so the width grid
            // must be scaled there as well
            let params = dataset::fit_standardizer(data)?;
            let standardized = params.transform(&data.features)?;
            let grid = kernel::theta_grid(&standardized, spec.grid_count)?;
            let outcome = tune(
                data,
                &grid,
                opts,
                spec.train_count,
                spec.tune_partitions,
                spec.base_seed,
            )?;
            (outcome.best_theta, Some(outcome))
        }
    };
    let kernel_config = KernelConfig::rbf(theta)?;

    let results = exec::map_indexed(Execution::default(), spec.eval_partitions, |p| {
        let partition = spec.tune_partitions + p;
        run_partition(
            data,
            spec.train_count,
            partition,
            spec.base_seed + partition as u64,
            &kernel_config,
            opts,
        )
    });

    let mut partitions = Vec::new();
    let mut failures = 0usize;
    for r in results {
        match r {
            Ok(outcome) => partitions.push(outcome),
            Err(_) => failures += 1,
        }
    }
    if partitions.is_empty() {
        return Err(Error::Numerical("every evaluation partition failed".into()));
    }
    let errs: Vec<f64> = partitions.iter().map(|p| p.err).collect();
    let aucs: Vec<f64> = partitions.iter().map(|p| p.auc).collect();
    let (mean_err, std_err) = mean_std(&errs);
    let (mean_auc, std_auc) = mean_std(&aucs);
    Ok(BenchmarkOutcome {
        summary: BenchmarkSummary {
            theta,
            tuned: tuning.is_some(),
            mean_err,
            std_err,
            mean_auc,
            std_auc,
            evaluated: partitions.len(),
            failures,
        },
        partitions,
        tuning,
    })
}

/// Class-curriculum sweep: run the benchmark on the first k classes for
/// each k in 2..=k_max, scaling the training count with the subset size.
pub fn benchmark_first_k(
    data: &Dataset,
    opts: &TrainerOptions,
    spec: &BenchmarkSpec,
    k_max: usize,
) -> Result<Vec<(usize, BenchmarkOutcome)>> {
    if k_max < 2 || k_max > data.class_count {
        return Err(Error::InvalidArgument(format!(
            "class sweep bound {k_max} outside 2..={}",
            data.class_count
        )));
    }
    let mut out = Vec::new();
    for k in 2..=k_max {
        let subset = dataset::filter_first_k_classes(data, k)?;
        let scaled_train = ((spec.train_count as f64) * subset.len() as f64
            / data.len() as f64)
            .round() as usize;
        let scaled_spec = BenchmarkSpec {
            train_count: scaled_train.clamp(1, subset.len() - 1),
            ..*spec
        };
        let outcome = benchmark(&subset, opts, &scaled_spec)?;
        out.push((k, outcome));
    }
    Ok(out)
}
