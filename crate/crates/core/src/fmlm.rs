//! Bottom-up trainer: incremental marginal-likelihood maximization over
//! per-(sample, class) precisions, with the bias fixed at zero.
//!
//! Each epoch every class computes sparsity/quality factors for all
//! candidate basis functions, applies a single add / delete / re-estimate
//! action at the optimum precision, and then the weights and latent
//! expectations are refreshed. Deleted basis functions stay eligible and
//! can return in later epochs.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, StandardizationParams};
use crate::em::build_artifact;
use crate::error::{Error, Result};
use crate::kernel::{self, BasisMatrix, KernelConfig};
use crate::linalg::{chol_log_det, spd_cholesky};
use crate::model::{ModelArtifact, ModelMetadata, TrainReport};
use crate::probit::{self, Potentials};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Run controls for the incremental trainer.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FmlmConfig {
    pub max_epochs: usize,
    /// Marginal-likelihood change tolerance per training sample; the
    /// convergence threshold is `tol * N`.
    pub tol: f64,
    pub seed: u64,
    pub quad_nodes: usize,
}

impl Default for FmlmConfig {
    fn default() -> Self {
        FmlmConfig {
            max_epochs: 1000,
            tol: 1e-6,
            seed: 0,
            quad_nodes: 64,
        }
    }
}

impl FmlmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::InvalidArgument("tol must be positive".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidArgument("max_epochs must be positive".into()));
        }
        Ok(())
    }
}

/// Per-(sample, class) factors with the precision state they came from.
#[derive(Debug, Clone)]
pub struct FactorTable {
    pub sparsity: DMatrix<f64>,
    pub quality: DMatrix<f64>,
    pub alpha: DMatrix<f64>,
    pub active: Vec<Vec<usize>>,
}

/// Single-class action chosen by [`select_candidate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorAction {
    Add,
    Reestimate,
    Delete,
}

/// Sparsity factors `s_n = phi_n^T C_{-n}^{-1} phi_n` and quality factors
/// `q_n = phi_n^T C_{-n}^{-1} z_c` for every candidate basis function of one
/// class, where `C_{-n}` excludes the candidate's own contribution.
///
/// Computed through the common-factor trick: one factorization of the
/// active-set system gives `S = phi^T C^{-1} phi` and `Q = phi^T C^{-1} z`,
/// and active members are de-inflated by `s = aS/(a-S)`, `q = aQ/(a-S)`.
pub fn compute_factors(
    basis: &BasisMatrix,
    z_c: &DVector<f64>,
    alpha_c: &DVector<f64>,
    active: &[usize],
) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = basis.nrows();
    if basis.ncols() != n || z_c.len() != n || alpha_c.len() != n {
        return Err(Error::DimensionMismatch(
            "factor computation needs the square training gram and matching vectors".into(),
        ));
    }
    let phi = &basis.values;
    let phi_z = phi * z_c;
    let row_norm_sq: Vec<f64> = (0..n).map(|r| phi.row(r).iter().map(|v| v * v).sum()).collect();

    let m = active.len();
    let mut s_full = DVector::zeros(n);
    let mut q_full = DVector::zeros(n);
    if m == 0 {
        for r in 0..n {
            s_full[r] = row_norm_sq[r];
            q_full[r] = phi_z[r];
        }
    } else {
        let mut phi_a = DMatrix::zeros(n, m);
        for (k, &col) in active.iter().enumerate() {
            phi_a.set_column(k, &phi.column(col));
        }
        let mut b = phi_a.tr_mul(&phi_a);
        for (k, &col) in active.iter().enumerate() {
            b[(k, k)] += alpha_c[col];
        }
        let chol = spd_cholesky(&b)?;
        // h[r, :] = phi_r^T Phi_a ; t = B^{-1} h^T
        let h = phi * &phi_a;
        let t = chol.solve(&h.transpose());
        let u = chol.solve(&phi_a.tr_mul(z_c));
        for r in 0..n {
            let mut corr = 0.0;
            let mut proj = 0.0;
            for k in 0..m {
                corr += h[(r, k)] * t[(k, r)];
                proj += h[(r, k)] * u[k];
            }
            s_full[r] = row_norm_sq[r] - corr;
            q_full[r] = phi_z[r] - proj;
        }
    }

    let mut s = s_full.clone();
    let mut q = q_full.clone();
    for &r in active {
        let a = alpha_c[r];
        let denom = a - s_full[r];
        if denom <= 0.0 {
            return Err(Error::Numerical(format!(
                "inconsistent factor state: alpha - S = {denom:e} for active basis {r}"
            )));
        }
        s[r] = a * s_full[r] / denom;
        q[r] = a * q_full[r] / denom;
    }
    Ok((s, q))
}

/// The unique maximizer of the single-precision likelihood contribution:
/// `s^2 / (q^2 - s)` when `q^2 > s`, infinite otherwise.
pub fn optimal_alpha(s: f64, q: f64) -> f64 {
    let excess = q * q - s;
    if excess > 0.0 {
        s * s / excess
    } else {
        f64::INFINITY
    }
}

/// Pick one candidate index and action for a class. Epoch 1 considers all
/// candidates by `q^2 - s`; later epochs prefer the best addition, then the
/// worst active deletion, then re-estimate a uniformly random active member.
/// Returns `None` when the class has nothing to do.
pub fn select_candidate(
    sparsity: &DVector<f64>,
    quality: &DVector<f64>,
    alpha_c: &DVector<f64>,
    epoch: usize,
    rng: &mut impl Rng,
) -> Option<(usize, FactorAction)> {
    let n = sparsity.len();
    let gain = |i: usize| quality[i] * quality[i] - sparsity[i];
    if epoch == 1 {
        let mut best = 0usize;
        for i in 1..n {
            if gain(i) > gain(best) {
                best = i;
            }
        }
        return if gain(best) > 0.0 {
            Some((best, FactorAction::Add))
        } else {
            None
        };
    }

    let mut best_add: Option<usize> = None;
    let mut worst_active: Option<usize> = None;
    let mut actives: Vec<usize> = Vec::new();
    for i in 0..n {
        if alpha_c[i].is_finite() {
            actives.push(i);
            if gain(i) < 0.0 && worst_active.is_none_or(|w| gain(i) < gain(w)) {
                worst_active = Some(i);
            }
        } else if gain(i) > 0.0 && best_add.is_none_or(|b| gain(i) > gain(b)) {
            best_add = Some(i);
        }
    }
    if let Some(i) = best_add {
        return Some((i, FactorAction::Add));
    }
    if let Some(i) = worst_active {
        return Some((i, FactorAction::Delete));
    }
    if actives.is_empty() {
        return None;
    }
    let pick = actives[rng.random_range(0..actives.len())];
    Some((pick, FactorAction::Reestimate))
}

/// MAP weights over each class's active set, with the sign gate
/// `delta(w f > 0)` zeroing violations. Gated entries keep their finite
/// precision and stay in the active set.
pub fn map_weights(
    basis: &BasisMatrix,
    z_bar: &DMatrix<f64>,
    alpha: &DMatrix<f64>,
    active: &[Vec<usize>],
    sign_mask: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = basis.nrows();
    let c = z_bar.ncols();
    let mut weights = DMatrix::zeros(n, c);
    for (class, act) in active.iter().enumerate() {
        let m = act.len();
        if m == 0 {
            continue;
        }
        let mut phi_a = DMatrix::zeros(n, m);
        for (k, &col) in act.iter().enumerate() {
            phi_a.set_column(k, &basis.values.column(col));
        }
        let mut b = phi_a.tr_mul(&phi_a);
        for (k, &col) in act.iter().enumerate() {
            b[(k, k)] += alpha[(col, class)];
        }
        let rhs = phi_a.tr_mul(&z_bar.column(class));
        let sol = spd_cholesky(&b)?.solve(&rhs);
        for (k, &col) in act.iter().enumerate() {
            if sol[k] * sign_mask[(col, class)] > 0.0 {
                weights[(col, class)] = sol[k];
            }
        }
    }
    Ok(weights)
}

/// Log marginal likelihood of the latent targets under the current
/// precision state, summed over classes. Uses the active-set (Woodbury)
/// form, so the cost scales with the active counts.
pub fn marginal_log_likelihood(
    basis: &BasisMatrix,
    z_bar: &DMatrix<f64>,
    alpha: &DMatrix<f64>,
    active: &[Vec<usize>],
) -> Result<f64> {
    let n = basis.nrows() as f64;
    let mut total = 0.0;
    for (class, act) in active.iter().enumerate() {
        let z_c = z_bar.column(class);
        let z_sq: f64 = z_c.iter().map(|v| v * v).sum();
        let m = act.len();
        if m == 0 {
            total += -0.5 * (n * LN_2PI + z_sq);
            continue;
        }
        let mut phi_a = DMatrix::zeros(basis.nrows(), m);
        for (k, &col) in act.iter().enumerate() {
            phi_a.set_column(k, &basis.values.column(col));
        }
        let mut b = phi_a.tr_mul(&phi_a);
        let mut log_alpha_sum = 0.0;
        for (k, &col) in act.iter().enumerate() {
            b[(k, k)] += alpha[(col, class)];
            log_alpha_sum += alpha[(col, class)].ln();
        }
        let chol = spd_cholesky(&b)?;
        // log|C| = log|B| - sum log alpha ; z^T C^{-1} z = z^T z - v^T B^{-1} v
        let log_det = chol_log_det(&chol) - log_alpha_sum;
        let v = phi_a.tr_mul(&z_c);
        let quad = z_sq - v.dot(&chol.solve(&v));
        total += -0.5 * (n * LN_2PI + log_det + quad);
    }
    Ok(total)
}

fn derive_seed(base: u64, epoch: u64, class: u64) -> u64 {
    // splitmix64 over a fixed mix of the coordinates
    let mut x = base
        .wrapping_add(epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(class.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    x ^= x >> 30;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Outcome of one per-class action inside an epoch.
struct EpochStep {
    structural_change: bool, // an add or delete happened
}

fn apply_action(
    alpha: &mut DMatrix<f64>,
    active: &mut Vec<usize>,
    class: usize,
    index: usize,
    action: FactorAction,
    s: &DVector<f64>,
    q: &DVector<f64>,
) -> EpochStep {
    let new_alpha = optimal_alpha(s[index], q[index]);
    match action {
        FactorAction::Add => {
            alpha[(index, class)] = new_alpha;
            active.push(index);
            active.sort_unstable();
            EpochStep { structural_change: true }
        }
        FactorAction::Delete => {
            alpha[(index, class)] = f64::INFINITY;
            active.retain(|&i| i != index);
            EpochStep { structural_change: true }
        }
        FactorAction::Reestimate => {
            if new_alpha.is_finite() {
                alpha[(index, class)] = new_alpha;
                EpochStep { structural_change: false }
            } else {
                // a re-estimate landing at infinity is a deletion
                alpha[(index, class)] = f64::INFINITY;
                active.retain(|&i| i != index);
                EpochStep { structural_change: true }
            }
        }
    }
}

/// Train an mPCVM classifier by fast marginal-likelihood maximization.
/// `train` must already be standardized with `standardizer`.
pub fn train_mpcvm2(
    train: &Dataset,
    standardizer: &StandardizationParams,
    kernel_config: &KernelConfig,
    config: &FmlmConfig,
) -> Result<(ModelArtifact, TrainReport)> {
    config.validate()?;
    let started = std::time::Instant::now();
    let basis = kernel::gram(*kernel_config, &train.features)?;
    let n = train.len();
    let c = train.class_count;
    let rule = probit::gauss_hermite(config.quad_nodes)?;

    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let mut z_bar = DMatrix::zeros(n, c);
    for col in 0..c {
        for row in 0..n {
            z_bar[(row, col)] = StandardNormal.sample(&mut rng);
        }
    }
    let sign_mask = DMatrix::from_fn(n, c, |row, col| {
        if train.labels[row] == col + 1 {
            1.0
        } else {
            -1.0
        }
    });

    let mut alpha = DMatrix::from_element(n, c, f64::INFINITY);
    let mut active: Vec<Vec<usize>> = vec![Vec::new(); c];
    let mut weights = DMatrix::zeros(n, c);
    let mut trajectory = Vec::new();
    let mut converged = false;
    let mut epochs = 0;

    for epoch in 1..=config.max_epochs {
        let mut structural_change = false;
        for (class, class_active) in active.iter_mut().enumerate() {
            let z_c = DVector::from_iterator(n, z_bar.column(class).iter().cloned());
            let alpha_c = DVector::from_iterator(n, alpha.column(class).iter().cloned());
            let (s, q) = compute_factors(&basis, &z_c, &alpha_c, class_active)?;
            let mut class_rng =
                ChaCha12Rng::seed_from_u64(derive_seed(config.seed, epoch as u64, class as u64));
            if let Some((index, action)) =
                select_candidate(&s, &q, &alpha_c, epoch, &mut class_rng)
            {
                let step = apply_action(&mut alpha, class_active, class, index, action, &s, &q);
                structural_change |= step.structural_change;
            }
        }

        weights = map_weights(&basis, &z_bar, &alpha, &active, &sign_mask)?;
        let potentials = Potentials { values: &basis.values * &weights };
        z_bar = probit::expected_z_batch(&potentials, &train.labels, &rule)?.values;

        let likelihood = marginal_log_likelihood(&basis, &z_bar, &alpha, &active)?;
        let delta = trajectory
            .last()
            .map(|prev: &f64| (likelihood - prev).abs())
            .unwrap_or(f64::INFINITY);
        trajectory.push(likelihood);
        epochs = epoch;
        if !structural_change && delta < config.tol * n as f64 {
            converged = true;
            break;
        }
    }

    let metadata = ModelMetadata {
        trainer: "mpcvm2".into(),
        seed: config.seed,
        quad_nodes: config.quad_nodes,
    };
    let biases = vec![0.0; c];
    let artifact = build_artifact(train, &weights, &biases, *kernel_config, standardizer, metadata);
    let report = TrainReport {
        trainer: "mpcvm2".into(),
        iterations: epochs,
        converged,
        active_per_class: active.iter().map(|a| a.len()).collect(),
        nonzero_per_class: artifact.per_class.iter().map(|cb| cb.len()).collect(),
        log_likelihood_trajectory: Some(trajectory),
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    Ok((artifact, report))
}
