//! Evaluation metrics (classification error, generalized AUC) and
//! cross-algorithm rank statistics (Friedman test with Bonferroni-Dunn
//! post-hoc differences).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Evaluation summary for one model on one labeled set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    /// Misclassification percentage in [0, 100].
    pub err: f64,
    /// Generalized AUC percentage in [0, 100].
    pub auc: f64,
    /// confusion[t][p] counts samples of true class t+1 predicted as p+1.
    pub confusion: Vec<Vec<usize>>,
}

/// Average ranks of k algorithms over a collection of datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    pub k: usize,
    pub n_datasets: usize,
    pub avg_ranks: Vec<f64>,
}

impl RankTable {
    pub fn new(k: usize, n_datasets: usize, avg_ranks: Vec<f64>) -> Result<Self> {
        let table = RankTable { k, n_datasets, avg_ranks };
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        if self.avg_ranks.len() != self.k || self.k < 2 || self.n_datasets == 0 {
            return Err(Error::InvalidArgument(
                "rank table shape is inconsistent".into(),
            ));
        }
        let sum: f64 = self.avg_ranks.iter().sum();
        let expected = self.k as f64 * (self.k as f64 + 1.0) / 2.0;
        if (sum - expected).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "average ranks sum to {sum}, expected {expected}"
            )));
        }
        Ok(())
    }
}

/// Ranking direction for score tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    LowerIsBetter,
    HigherIsBetter,
}

/// Misclassification percentage.
pub fn error_rate(predictions: &[i64], truth: &[i64]) -> Result<f64> {
    if predictions.len() != truth.len() || truth.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions against {} labels",
            predictions.len(),
            truth.len()
        )));
    }
    let wrong = predictions
        .iter()
        .zip(truth)
        .filter(|(p, t)| p != t)
        .count();
    Ok(100.0 * wrong as f64 / truth.len() as f64)
}

/// Midranks of a score slice (1-based, ties averaged).
fn midranks(scores: &[f64]) -> Vec<f64> {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Rank-sum (Hand-Till) estimate of the probability that a class-i sample
/// scores above a class-j sample on the class-i score column.
fn pairwise_auc(scores_i: &[f64], is_class_i: &[bool]) -> f64 {
    let ranks = midranks(scores_i);
    let n_i = is_class_i.iter().filter(|&&b| b).count();
    let n_j = is_class_i.len() - n_i;
    let rank_sum: f64 = ranks
        .iter()
        .zip(is_class_i)
        .filter(|(_, &b)| b)
        .map(|(r, _)| r)
        .sum();
    (rank_sum - n_i as f64 * (n_i as f64 + 1.0) / 2.0) / (n_i as f64 * n_j as f64)
}

/// Generalized AUC (percentage): the average over unordered class pairs of
/// the symmetrized pairwise separability estimates.
pub fn generalized_auc(scores: &DMatrix<f64>, truth: &[usize]) -> Result<f64> {
    let (n, c) = scores.shape();
    if truth.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {n} score rows",
            truth.len()
        )));
    }
    if c < 2 {
        return Err(Error::InvalidArgument("need at least 2 score columns".into()));
    }
    let mut counts = vec![0usize; c];
    for &t in truth {
        if t < 1 || t > c {
            return Err(Error::Data(format!("label {t} outside 1..={c}")));
        }
        counts[t - 1] += 1;
    }
    if let Some(missing) = counts.iter().position(|&cnt| cnt == 0) {
        return Err(Error::Data(format!(
            "class {} absent from the truth labels",
            missing + 1
        )));
    }

    let mut total = 0.0;
    for i in 0..c {
        for j in (i + 1)..c {
            let idx: Vec<usize> = (0..n)
                .filter(|&r| truth[r] == i + 1 || truth[r] == j + 1)
                .collect();
            let is_i: Vec<bool> = idx.iter().map(|&r| truth[r] == i + 1).collect();
            let col_i: Vec<f64> = idx.iter().map(|&r| scores[(r, i)]).collect();
            let col_j: Vec<f64> = idx.iter().map(|&r| scores[(r, j)]).collect();
            let a_i_given_j = pairwise_auc(&col_i, &is_i);
            let is_j: Vec<bool> = is_i.iter().map(|&b| !b).collect();
            let a_j_given_i = pairwise_auc(&col_j, &is_j);
            total += 0.5 * (a_i_given_j + a_j_given_i);
        }
    }
    Ok(100.0 * 2.0 * total / (c as f64 * (c as f64 - 1.0)))
}

/// Friedman statistic Q = 12N/(k(k+1)) (sum R_j^2 - k(k+1)^2/4).
pub fn friedman_q(ranks: &RankTable) -> Result<f64> {
    ranks.validate()?;
    let k = ranks.k as f64;
    let n = ranks.n_datasets as f64;
    let sum_sq: f64 = ranks.avg_ranks.iter().map(|r| r * r).sum();
    Ok(12.0 * n / (k * (k + 1.0)) * (sum_sq - k * (k + 1.0) * (k + 1.0) / 4.0))
}

/// Survival function of the chi-square distribution with `dof` degrees of
/// freedom, via the upper regularized incomplete gamma function.
pub fn chi_square_sf(q: f64, dof: usize) -> Result<f64> {
    if q < 0.0 || dof == 0 {
        return Err(Error::InvalidArgument(format!(
            "chi-square survival needs q >= 0 and dof >= 1, got q={q}, dof={dof}"
        )));
    }
    if q == 0.0 {
        return Ok(1.0);
    }
    Ok(statrs::function::gamma::gamma_ur(dof as f64 / 2.0, q / 2.0))
}

/// Bonferroni-Dunn critical difference q_alpha sqrt(k(k+1)/(6N)).
pub fn critical_difference(k: usize, n_datasets: usize, q_alpha: f64) -> Result<f64> {
    if k < 2 || n_datasets == 0 || q_alpha < 0.0 {
        return Err(Error::InvalidArgument(
            "critical difference needs k >= 2, N >= 1, q_alpha >= 0".into(),
        ));
    }
    let k = k as f64;
    Ok(q_alpha * (k * (k + 1.0) / (6.0 * n_datasets as f64)).sqrt())
}

/// Two-sided Bonferroni-corrected normal quantiles z_{alpha/(2(k-1))} for
/// k in 2..=10, at significance levels 0.05 and 0.10. The 0.10 row for six
/// algorithms is the 2.326 constant used in the reference tables.
const Q_ALPHA_005: [f64; 9] = [1.960, 2.241, 2.394, 2.498, 2.576, 2.638, 2.690, 2.734, 2.773];
const Q_ALPHA_010: [f64; 9] = [1.645, 1.960, 2.128, 2.241, 2.326, 2.394, 2.450, 2.498, 2.539];

/// Built-in q_alpha lookup for alpha in {0.05, 0.10} and k in 2..=10.
pub fn q_alpha_for(k: usize, alpha: f64) -> Result<f64> {
    if !(2..=10).contains(&k) {
        return Err(Error::InvalidArgument(format!(
            "q_alpha table covers k in 2..=10, got {k}"
        )));
    }
    let table = if (alpha - 0.05).abs() < 1e-12 {
        &Q_ALPHA_005
    } else if (alpha - 0.10).abs() < 1e-12 {
        &Q_ALPHA_010
    } else {
        return Err(Error::InvalidArgument(format!(
            "q_alpha table covers alpha in {{0.05, 0.10}}, got {alpha}"
        )));
    };
    Ok(table[k - 2])
}

/// Standardized rank differences of every algorithm against a control:
/// (R_j - R_control) / sqrt(k(k+1)/(6N)). A difference is flagged
/// significant when it reaches the critical difference, which is how the
/// reference tables mark their bold cells.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BonferroniDunn {
    pub control: usize,
    pub differences: Vec<f64>,
    pub significant: Vec<bool>,
    pub q_alpha: f64,
    pub critical_difference: f64,
}

pub fn bonferroni_dunn(ranks: &RankTable, control: usize, q_alpha: f64) -> Result<BonferroniDunn> {
    ranks.validate()?;
    if control >= ranks.k {
        return Err(Error::InvalidArgument(format!(
            "control index {control} outside 0..{}",
            ranks.k
        )));
    }
    let k = ranks.k as f64;
    let scale = (k * (k + 1.0) / (6.0 * ranks.n_datasets as f64)).sqrt();
    let critical_difference = q_alpha * scale;
    let differences: Vec<f64> = ranks
        .avg_ranks
        .iter()
        .map(|r| (r - ranks.avg_ranks[control]) / scale)
        .collect();
    let significant = differences
        .iter()
        .map(|d| *d >= critical_difference)
        .collect();
    Ok(BonferroniDunn {
        control,
        differences,
        significant,
        q_alpha,
        critical_difference,
    })
}

/// Per-dataset midrank table averaged per algorithm. Rank 1 is best under
/// the given direction.
pub fn average_ranks(score_table: &DMatrix<f64>, direction: Direction) -> Result<RankTable> {
    let (n_datasets, k) = score_table.shape();
    if n_datasets == 0 || k < 2 {
        return Err(Error::InvalidArgument(
            "score table needs at least one dataset row and two algorithms".into(),
        ));
    }
    if score_table.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("score table contains non-finite entries".into()));
    }
    let mut sums = vec![0.0; k];
    for row in 0..n_datasets {
        let scores: Vec<f64> = (0..k)
            .map(|j| match direction {
                Direction::LowerIsBetter => score_table[(row, j)],
                Direction::HigherIsBetter => -score_table[(row, j)],
            })
            .collect();
        for (j, r) in midranks(&scores).into_iter().enumerate() {
            sums[j] += r;
        }
    }
    let avg_ranks: Vec<f64> = sums.into_iter().map(|s| s / n_datasets as f64).collect();
    RankTable::new(k, n_datasets, avg_ranks)
}
