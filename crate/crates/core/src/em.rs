//! Top-down trainer: expectation-maximization to the MAP estimate, with
//! per-(sample, class) automatic relevance determination and permanent
//! pruning.
//!
//! Each iteration runs the maximization step (a joint solve for the class
//! weights and bias), prunes entries whose precision passed the threshold,
//! and then refreshes the latent, precision, and bias-precision
//! expectations. Sign-violating weights receive infinite precision in the
//! expectation step, which is what removes them on the following prune.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, StandardizationParams};
use crate::error::{Error, Result};
use crate::kernel::{self, BasisMatrix, KernelConfig};
use crate::linalg::spd_cholesky;
use crate::model::{ClassBasis, ModelArtifact, ModelMetadata, TrainReport};
use crate::probit::{self, Potentials};

/// Hyper-parameters and run controls for the EM trainer.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EmConfig {
    pub u1: f64,
    pub v1: f64,
    pub u2: f64,
    pub v2: f64,
    pub prune_threshold: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
    pub quad_nodes: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            u1: 1e-6,
            v1: 1e-6,
            u2: 1e-6,
            v2: 1e-6,
            prune_threshold: 1e6,
            max_iter: 500,
            tol: 1e-4,
            seed: 0,
            quad_nodes: 64,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::InvalidArgument("tol must be positive".into()));
        }
        if self.prune_threshold.is_nan() || self.prune_threshold <= 1.0 {
            return Err(Error::InvalidArgument("prune threshold must exceed 1".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be positive".into()));
        }
        for (name, v) in [("u1", self.u1), ("v1", self.v1), ("u2", self.u2), ("v2", self.v2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be nonnegative")));
            }
        }
        Ok(())
    }
}

/// Full iteration state of the EM trainer.
#[derive(Debug, Clone)]
pub struct EmState {
    pub weights: DMatrix<f64>,
    pub biases: DVector<f64>,
    pub alpha_bar: DMatrix<f64>,
    pub beta_bar: DVector<f64>,
    pub z_bar: DMatrix<f64>,
    pub active: DMatrix<bool>,
    pub sign_mask: DMatrix<f64>,
    pub labels: Vec<usize>,
}

impl EmState {
    pub fn sample_count(&self) -> usize {
        self.weights.nrows()
    }

    pub fn class_count(&self) -> usize {
        self.weights.ncols()
    }

    pub fn active_count(&self, class: usize) -> usize {
        (0..self.sample_count())
            .filter(|&n| self.active[(n, class)])
            .count()
    }
}

/// Random starting state: standard-normal latents, unit precisions, zero
/// weights and biases, everything active.
pub fn init_state(data: &Dataset, basis: &BasisMatrix, config: &EmConfig) -> Result<EmState> {
    let n = data.len();
    let c = data.class_count;
    if basis.nrows() != n || basis.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "basis is {}x{}, expected the {n}x{n} gram of the training points",
            basis.nrows(),
            basis.ncols()
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let mut z_bar = DMatrix::zeros(n, c);
    for col in 0..c {
        for row in 0..n {
            z_bar[(row, col)] = StandardNormal.sample(&mut rng);
        }
    }
    let sign_mask = DMatrix::from_fn(n, c, |row, col| {
        if data.labels[row] == col + 1 {
            1.0
        } else {
            -1.0
        }
    });
    Ok(EmState {
        weights: DMatrix::zeros(n, c),
        biases: DVector::zeros(c),
        alpha_bar: DMatrix::from_element(n, c, 1.0),
        beta_bar: DVector::from_element(c, 1.0),
        z_bar,
        active: DMatrix::from_element(n, c, true),
        sign_mask,
        labels: data.labels.clone(),
    })
}

/// Maximization step: per class, the stationary point of the Q function in
/// the active weights and the bias, found by one symmetric solve of the
/// augmented system
///
/// ```text
/// [ Phi_c^T Phi_c + diag(alpha_c)   Phi_c^T 1 ] [w]   [ Phi_c^T zbar_c ]
/// [ 1^T Phi_c                       N + beta_c ] [b] = [ 1^T zbar_c    ]
/// ```
///
/// Entries with infinite precision are excluded from the solve and get
/// weight zero.
pub fn m_step(state: &EmState, basis: &BasisMatrix) -> Result<EmState> {
    let n = state.sample_count();
    let c = state.class_count();
    let mut next = state.clone();
    for class in 0..c {
        let solve_set: Vec<usize> = (0..n)
            .filter(|&row| state.active[(row, class)] && state.alpha_bar[(row, class)].is_finite())
            .collect();
        let m = solve_set.len();
        let z_c = state.z_bar.column(class);
        let z_sum: f64 = z_c.iter().sum();

        for row in 0..n {
            next.weights[(row, class)] = 0.0;
        }
        if m == 0 {
            next.biases[class] = z_sum / (n as f64 + state.beta_bar[class]);
            continue;
        }

        let mut phi = DMatrix::zeros(n, m);
        for (k, &row) in solve_set.iter().enumerate() {
            phi.set_column(k, &basis.values.column(row));
        }
        let mut aug = DMatrix::zeros(m + 1, m + 1);
        let gram = phi.tr_mul(&phi);
        for i in 0..m {
            for j in 0..m {
                aug[(i, j)] = gram[(i, j)];
            }
            aug[(i, i)] += state.alpha_bar[(solve_set[i], class)];
            let col_sum: f64 = phi.column(i).iter().sum();
            aug[(i, m)] = col_sum;
            aug[(m, i)] = col_sum;
        }
        aug[(m, m)] = n as f64 + state.beta_bar[class];

        let mut rhs = DVector::zeros(m + 1);
        let proj = phi.tr_mul(&z_c);
        for i in 0..m {
            rhs[i] = proj[i];
        }
        rhs[m] = z_sum;

        let sol = spd_cholesky(&aug)?.solve(&rhs);
        for (k, &row) in solve_set.iter().enumerate() {
            next.weights[(row, class)] = sol[k];
        }
        next.biases[class] = sol[m];
    }
    Ok(next)
}

/// Expectation step: refresh latent expectations from the current
/// potentials, then the weight precisions (infinite wherever the sign
/// principle does not hold strictly) and bias precisions.
pub fn e_step(state: &EmState, basis: &BasisMatrix, config: &EmConfig) -> Result<EmState> {
    let n = state.sample_count();
    let c = state.class_count();
    let rule = probit::gauss_hermite(config.quad_nodes)?;

    let mut y = &basis.values * &state.weights;
    for class in 0..c {
        for row in 0..n {
            y[(row, class)] += state.biases[class];
        }
    }
    let latents = probit::expected_z_batch(&Potentials { values: y }, &state.labels, &rule)?;

    let mut next = state.clone();
    next.z_bar = latents.values;
    for class in 0..c {
        for row in 0..n {
            if !state.active[(row, class)] {
                next.alpha_bar[(row, class)] = f64::INFINITY;
                continue;
            }
            let w = state.weights[(row, class)];
            next.alpha_bar[(row, class)] = if state.sign_mask[(row, class)] * w > 0.0 {
                (2.0 * config.u1 + 1.0) / (w * w + 2.0 * config.v1)
            } else {
                f64::INFINITY
            };
        }
        let b = state.biases[class];
        next.beta_bar[class] = (2.0 * config.u2 + 1.0) / (b * b + 2.0 * config.v2);
    }
    Ok(next)
}

/// Deactivate entries whose precision reached the threshold and pin their
/// weights at zero. Pruned entries never come back.
pub fn prune(state: &EmState, config: &EmConfig) -> EmState {
    let mut next = state.clone();
    for class in 0..state.class_count() {
        for row in 0..state.sample_count() {
            if next.active[(row, class)] && next.alpha_bar[(row, class)] >= config.prune_threshold {
                next.active[(row, class)] = false;
                next.weights[(row, class)] = 0.0;
            }
        }
    }
    next
}

/// The Q function (expected complete-data log-posterior, up to terms not
/// involving the weights or biases) at the state's weights and biases.
pub fn q_value(state: &EmState, basis: &BasisMatrix) -> f64 {
    let n = state.sample_count();
    let c = state.class_count();
    let mut y = &basis.values * &state.weights;
    let mut q = 0.0;
    for class in 0..c {
        for row in 0..n {
            y[(row, class)] += state.biases[class];
            let yv = y[(row, class)];
            q += 2.0 * state.z_bar[(row, class)] * yv - yv * yv;
            let w = state.weights[(row, class)];
            if w != 0.0 {
                q -= state.alpha_bar[(row, class)] * w * w;
            }
        }
        q -= state.beta_bar[class] * state.biases[class] * state.biases[class];
    }
    q
}

/// Analytic Q gradient with respect to the weight matrix and biases.
pub fn q_gradient(state: &EmState, basis: &BasisMatrix) -> (DMatrix<f64>, DVector<f64>) {
    let n = state.sample_count();
    let c = state.class_count();
    let mut resid = state.z_bar.clone() - &basis.values * &state.weights;
    for class in 0..c {
        for row in 0..n {
            resid[(row, class)] -= state.biases[class];
        }
    }
    let projected = basis.values.tr_mul(&resid);
    let mut grad_w = DMatrix::zeros(n, c);
    let mut grad_b = DVector::zeros(c);
    for class in 0..c {
        for row in 0..n {
            let w = state.weights[(row, class)];
            let prior = if w == 0.0 {
                0.0
            } else {
                state.alpha_bar[(row, class)] * w
            };
            grad_w[(row, class)] = 2.0 * projected[(row, class)] - 2.0 * prior;
        }
        let resid_sum: f64 = resid.column(class).iter().sum();
        grad_b[class] =
            2.0 * resid_sum - 2.0 * state.beta_bar[class] * state.biases[class];
    }
    (grad_w, grad_b)
}

/// Train an mPCVM classifier by EM. `train` must already be standardized
/// with `standardizer`, which is embedded in the artifact.
pub fn train_mpcvm1(
    train: &Dataset,
    standardizer: &StandardizationParams,
    kernel_config: &KernelConfig,
    config: &EmConfig,
) -> Result<(ModelArtifact, TrainReport)> {
    config.validate()?;
    let started = std::time::Instant::now();
    let basis = kernel::gram(*kernel_config, &train.features)?;
    let mut state = init_state(train, &basis, config)?;

    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=config.max_iter {
        let prev_w = state.weights.clone();
        let prev_b = state.biases.clone();
        state = m_step(&state, &basis)?;
        state = prune(&state, config);
        state = e_step(&state, &basis, config)?;
        iterations = it;

        let mut delta: f64 = 0.0;
        for (a, b) in state.weights.iter().zip(prev_w.iter()) {
            delta = delta.max((a - b).abs());
        }
        for (a, b) in state.biases.iter().zip(prev_b.iter()) {
            delta = delta.max((a - b).abs());
        }
        if delta < config.tol {
            converged = true;
            break;
        }
    }

    // entries the final E step flagged (sign violations, exact zeros) are
    // dead by Eq. 24 and would be pruned next iteration; drop them now so
    // the artifact honors the sign principle
    for class in 0..state.class_count() {
        for row in 0..state.sample_count() {
            let w = state.weights[(row, class)];
            if state.active[(row, class)] && state.sign_mask[(row, class)] * w <= 0.0 {
                state.active[(row, class)] = false;
                state.weights[(row, class)] = 0.0;
            }
        }
    }

    let metadata = ModelMetadata {
        trainer: "mpcvm1".into(),
        seed: config.seed,
        quad_nodes: config.quad_nodes,
    };
    let biases: Vec<f64> = state.biases.iter().cloned().collect();
    let artifact = build_artifact(train, &state.weights, &biases, *kernel_config, standardizer, metadata);
    let report = TrainReport {
        trainer: "mpcvm1".into(),
        iterations,
        converged,
        active_per_class: (0..state.class_count()).map(|c| state.active_count(c)).collect(),
        nonzero_per_class: artifact.per_class.iter().map(|cb| cb.len()).collect(),
        log_likelihood_trajectory: None,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    Ok((artifact, report))
}

/// Collect the nonzero weights of a trained weight matrix into a deployable
/// artifact. Basis points are the (standardized) training rows.
pub(crate) fn build_artifact(
    train: &Dataset,
    weights: &DMatrix<f64>,
    biases: &[f64],
    kernel_config: KernelConfig,
    standardizer: &StandardizationParams,
    metadata: ModelMetadata,
) -> ModelArtifact {
    let (n, c) = weights.shape();
    let per_class: Vec<ClassBasis> = (0..c)
        .map(|class| {
            let mut cb = ClassBasis::empty();
            for row in 0..n {
                let w = weights[(row, class)];
                if w != 0.0 {
                    cb.basis
                        .push((0..train.dim()).map(|j| train.features[(row, j)]).collect());
                    cb.weights.push(w);
                    cb.label_of_basis.push(train.labels[row]);
                }
            }
            cb
        })
        .collect();
    ModelArtifact {
        kernel: kernel_config,
        standardizer: standardizer.clone(),
        classes: c,
        labels: train.label_names.clone(),
        per_class,
        biases: biases.to_vec(),
        metadata,
    }
}
