//! Multinomial-probit expectations evaluated by deterministic quadrature.
//!
//! Class probabilities marginalize the noisy potential z = y + eps over a
//! standard-normal eps: p_i = E[prod_{j != i} Psi(eps + y_i - y_j)]. The
//! posterior latent expectations that drive both trainers are ratios of the
//! same kind of integral. Everything runs in log space so that products of
//! up to dozens of Gaussian CDFs cannot underflow.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};

const LN_2PI: f64 = 1.837_877_066_409_345_3;
const SQRT_2: f64 = std::f64::consts::SQRT_2;
/// Floor applied to the probability in the denominator of the loser
/// expectation ratio.
const LOG_DEN_FLOOR: f64 = -690.775_527_898_213_7; // ln(1e-300)

/// Quadrature nodes/weights normalized to take expectations against the
/// standard normal density: E[f(eps)] ~ sum_k w_k f(n_k).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    log_weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// E[f(eps)] under the standard normal.
    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&n, &w)| w * f(n))
            .sum()
    }
}

/// Class-potential matrix y (rows = samples, columns = classes).
#[derive(Debug, Clone)]
pub struct Potentials {
    pub values: DMatrix<f64>,
}

/// Posterior expectations of the latent z matrix.
#[derive(Debug, Clone)]
pub struct LatentExpectations {
    pub values: DMatrix<f64>,
}

/// Gauss-Hermite rule with `k` nodes, transformed for expectations against
/// the standard normal. Exact for polynomials of degree <= 2k - 1.
///
/// Golub-Welsch construction: the physicists' nodes are the eigenvalues of
/// the symmetric tridiagonal Jacobi matrix with off-diagonals sqrt(j/2),
/// and each normalized weight is the squared first component of the
/// corresponding eigenvector. The rule is then symmetrized pairwise so
/// nodes mirror about 0 exactly.
pub fn gauss_hermite(k: usize) -> Result<QuadratureRule> {
    if !(2..=256).contains(&k) {
        return Err(Error::InvalidArgument(format!(
            "quadrature node count must lie in 2..=256, got {k}"
        )));
    }
    let mut jacobi = DMatrix::<f64>::zeros(k, k);
    for j in 1..k {
        let b = (j as f64 / 2.0).sqrt();
        jacobi[(j - 1, j)] = b;
        jacobi[(j, j - 1)] = b;
    }
    let eig = nalgebra::SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..k)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    for i in 0..k / 2 {
        let node = 0.5 * (pairs[k - 1 - i].0 - pairs[i].0);
        let weight = 0.5 * (pairs[i].1 + pairs[k - 1 - i].1);
        pairs[i] = (-node, weight);
        pairs[k - 1 - i] = (node, weight);
    }
    if k % 2 == 1 {
        pairs[k / 2].0 = 0.0;
    }

    let nodes: Vec<f64> = pairs.iter().map(|p| SQRT_2 * p.0).collect();
    let weights: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let log_weights = weights.iter().map(|w| w.ln()).collect();
    Ok(QuadratureRule {
        nodes,
        weights,
        log_weights,
    })
}

/// log of the standard normal CDF, stable over the whole double range.
///
/// Uses erfc in the central region, log1p of the upper tail for large
/// positive x, and the divergent asymptotic series for large negative x.
pub fn log_norm_cdf(x: f64) -> f64 {
    if x < -14.0 {
        // Psi(x) = phi(x)/(-x) * (1 - 1/x^2 + 3/x^4 - 15/x^6 + ...)
        let inv_sq = 1.0 / (x * x);
        let mut series = 0.0;
        let mut term = 1.0;
        // (2k - 1)!! with alternating signs; eight terms reach ~1e-12
        // relative accuracy at the x = -14 switch point
        for k in 1..=8u32 {
            term *= -(2.0 * f64::from(k) - 1.0) * inv_sq;
            series += term;
        }
        -0.5 * x * x - (-x).ln() - 0.5 * LN_2PI + series.ln_1p()
    } else if x <= 8.0 {
        (0.5 * statrs::function::erf::erfc(-x / SQRT_2)).ln()
    } else {
        let tail = 0.5 * statrs::function::erf::erfc(x / SQRT_2);
        (-tail).ln_1p()
    }
}

/// log of the standard normal density.
#[inline]
pub(crate) fn log_norm_pdf(x: f64) -> f64 {
    -0.5 * x * x - 0.5 * LN_2PI
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / SQRT_2)
}

fn log_sum_exp(values: impl Iterator<Item = f64>) -> f64 {
    let collected: Vec<f64> = values.collect();
    let max = collected.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = collected.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Multinomial-probit class probabilities for one potential row, evaluated
/// per class via the quadrature rule in log space and normalized to sum 1.
pub fn class_probabilities(y_row: &[f64], rule: &QuadratureRule) -> Vec<f64> {
    let c = y_row.len();
    if c < 2 {
        return vec![1.0; c];
    }
    let mut log_p = vec![0.0f64; c];
    for (i, lp) in log_p.iter_mut().enumerate() {
        *lp = log_sum_exp(rule.nodes.iter().zip(&rule.log_weights).map(|(&node, &lw)| {
            let mut acc = lw;
            for (j, &yj) in y_row.iter().enumerate() {
                if j != i {
                    acc += log_norm_cdf(node + y_row[i] - yj);
                }
            }
            acc
        }));
    }
    let max = log_p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = log_p.iter().map(|&lp| (lp - max).exp()).collect();
    let total: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= total;
    }
    probs
}

/// Posterior expectation of the latent row z_n given that class `label`
/// (1-based) wins the argmax.
///
/// Losing classes get y_j minus a ratio of two quadrature expectations; the
/// winner is reconstructed from the identity z_i = y_i + sum_j (y_j - z_j),
/// which this construction satisfies exactly.
pub fn expected_z(y_row: &[f64], label: usize, rule: &QuadratureRule) -> Vec<f64> {
    let c = y_row.len();
    debug_assert!(label >= 1 && label <= c);
    let i = label - 1;
    if c < 2 {
        return y_row.to_vec();
    }
    let k = rule.len();
    let losers: Vec<usize> = (0..c).filter(|&j| j != i).collect();

    // u[k][loser] = node_k + y_i - y_j feeds both the CDF and density terms
    let mut log_psi = vec![0.0f64; k * losers.len()];
    let mut args = vec![0.0f64; k * losers.len()];
    let mut row_sum = vec![0.0f64; k];
    for (ki, &node) in rule.nodes.iter().enumerate() {
        let mut acc = 0.0;
        for (li, &j) in losers.iter().enumerate() {
            let u = node + y_row[i] - y_row[j];
            let lp = log_norm_cdf(u);
            args[ki * losers.len() + li] = u;
            log_psi[ki * losers.len() + li] = lp;
            acc += lp;
        }
        row_sum[ki] = acc;
    }

    let log_den = log_sum_exp(
        rule.log_weights
            .iter()
            .zip(&row_sum)
            .map(|(&lw, &t)| lw + t),
    )
    .max(LOG_DEN_FLOOR);

    let mut z = vec![0.0f64; c];
    let mut ratio_sum = 0.0;
    for (li, &j) in losers.iter().enumerate() {
        let log_num = log_sum_exp((0..k).map(|ki| {
            let idx = ki * losers.len() + li;
            rule.log_weights[ki] + row_sum[ki] - log_psi[idx] + log_norm_pdf(args[idx])
        }));
        let ratio = (log_num - log_den).exp();
        z[j] = y_row[j] - ratio;
        ratio_sum += ratio;
    }
    z[i] = y_row[i] + ratio_sum;
    z
}

/// Row-wise [`class_probabilities`] over a batch of potentials.
pub fn class_probabilities_batch(potentials: &Potentials, rule: &QuadratureRule) -> DMatrix<f64> {
    class_probabilities_batch_with(potentials, rule, Execution::default())
}

/// [`class_probabilities_batch`] with an explicit execution strategy.
pub fn class_probabilities_batch_with(
    potentials: &Potentials,
    rule: &QuadratureRule,
    exec: Execution,
) -> DMatrix<f64> {
    let (n, c) = potentials.values.shape();
    let rows = exec::map_indexed(exec, n, |r| {
        let row: Vec<f64> = potentials.values.row(r).iter().cloned().collect();
        class_probabilities(&row, rule)
    });
    DMatrix::from_row_iterator(n, c, rows.into_iter().flatten())
}

/// Row-wise [`expected_z`] for labeled samples.
pub fn expected_z_batch(
    potentials: &Potentials,
    labels: &[usize],
    rule: &QuadratureRule,
) -> Result<LatentExpectations> {
    expected_z_batch_with(potentials, labels, rule, Execution::default())
}

/// [`expected_z_batch`] with an explicit execution strategy; rows are
/// independent, so results are identical for either strategy.
pub fn expected_z_batch_with(
    potentials: &Potentials,
    labels: &[usize],
    rule: &QuadratureRule,
    exec: Execution,
) -> Result<LatentExpectations> {
    let (n, c) = potentials.values.shape();
    if labels.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {} potential rows",
            labels.len(),
            n
        )));
    }
    let rows = exec::map_indexed(exec, n, |r| {
        let row: Vec<f64> = potentials.values.row(r).iter().cloned().collect();
        expected_z(&row, labels[r], rule)
    });
    Ok(LatentExpectations {
        values: DMatrix::from_row_iterator(n, c, rows.into_iter().flatten()),
    })
}
