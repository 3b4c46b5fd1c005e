//! RBF basis (design) matrices between sample sets, plus a width grid for
//! tuning.
//!
//! The kernel convention is `k(x, x') = exp(-||x - x'||^2 / (2 theta^2))`;
//! the width `theta` is recorded in every [`BasisMatrix`] and persisted in
//! model artifacts so the convention travels with the numbers.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};

/// Supported kernel families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Rbf,
}

/// Kernel family plus width parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub kind: KernelKind,
    pub theta: f64,
}

impl KernelConfig {
    pub fn rbf(theta: f64) -> Result<Self> {
        if !(theta.is_finite() && theta > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "kernel width must be positive and finite, got {theta}"
            )));
        }
        Ok(KernelConfig {
            kind: KernelKind::Rbf,
            theta,
        })
    }
}

/// A kernel design matrix together with the configuration that produced it.
///
/// Entries lie in `(0, 1]`, with 1 exactly where the row point equals the
/// column point; a square matrix over a single point set is symmetric.
#[derive(Debug, Clone)]
pub struct BasisMatrix {
    pub values: DMatrix<f64>,
    pub config: KernelConfig,
}

impl BasisMatrix {
    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }
}

fn check_finite(name: &str, m: &DMatrix<f64>) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data(format!("{name} contains non-finite values")));
    }
    Ok(())
}

/// Square kernel matrix of a point set against itself.
pub fn gram(config: KernelConfig, points: &DMatrix<f64>) -> Result<BasisMatrix> {
    gram_with(config, points, Execution::default())
}

/// [`gram`] with an explicit execution strategy.
pub fn gram_with(config: KernelConfig, points: &DMatrix<f64>, exec: Execution) -> Result<BasisMatrix> {
    if points.nrows() == 0 {
        return Err(Error::Data("empty point set".into()));
    }
    cross_with(config, points, points, exec)
}

/// Rectangular kernel matrix between evaluation rows and basis columns.
pub fn cross(config: KernelConfig, rows: &DMatrix<f64>, cols: &DMatrix<f64>) -> Result<BasisMatrix> {
    cross_with(config, rows, cols, Execution::default())
}

/// [`cross`] with an explicit execution strategy. The matrix is filled one
/// column per task, so results do not depend on the strategy.
pub fn cross_with(
    config: KernelConfig,
    rows: &DMatrix<f64>,
    cols: &DMatrix<f64>,
    exec: Execution,
) -> Result<BasisMatrix> {
    if rows.ncols() != cols.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "row points have dimension {} but column points have dimension {}",
            rows.ncols(),
            cols.ncols()
        )));
    }
    check_finite("row points", rows)?;
    check_finite("column points", cols)?;

    let (n, m, d) = (rows.nrows(), cols.nrows(), rows.ncols());
    let inv_two_theta_sq = 1.0 / (2.0 * config.theta * config.theta);
    let mut values = DMatrix::<f64>::zeros(n, m);
    // column-major storage: each chunk of length n is one basis column
    exec::for_each_chunk_mut(exec, values.as_mut_slice(), n, |j, col| {
        for (i, slot) in col.iter_mut().enumerate() {
            let mut dist_sq = 0.0;
            for k in 0..d {
                let diff = rows[(i, k)] - cols[(j, k)];
                dist_sq += diff * diff;
            }
            *slot = (-dist_sq * inv_two_theta_sq).exp();
        }
    });
    Ok(BasisMatrix { values, config })
}

/// Geometric grid of candidate widths centered on the median pairwise
/// distance of `points`, spanning factors 2^-4 .. 2^4.
pub fn theta_grid(points: &DMatrix<f64>, count: usize) -> Result<Vec<f64>> {
    if count == 0 {
        return Err(Error::InvalidArgument("grid size must be positive".into()));
    }
    let n = points.nrows();
    if n < 2 {
        return Err(Error::Data("need at least 2 points for a width grid".into()));
    }
    check_finite("points", points)?;
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let mut dist_sq = 0.0;
            for k in 0..points.ncols() {
                let diff = points[(i, k)] - points[(j, k)];
                dist_sq += diff * diff;
            }
            dists.push(dist_sq.sqrt());
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if dists.len() % 2 == 1 {
        dists[dists.len() / 2]
    } else {
        0.5 * (dists[dists.len() / 2 - 1] + dists[dists.len() / 2])
    };
    if median <= 0.0 {
        return Err(Error::Data("all points are identical; no usable width scale".into()));
    }
    let grid = (0..count)
        .map(|t| {
            let exponent = if count == 1 {
                0.0
            } else {
                -4.0 + 8.0 * t as f64 / (count - 1) as f64
            };
            median * 2f64.powf(exponent)
        })
        .collect();
    Ok(grid)
}
