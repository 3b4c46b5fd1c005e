//! The deployable classifier artifact: potentials, class decisions,
//! probabilistic output, sparsity accounting, and JSON persistence.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::StandardizationParams;
use crate::error::{Error, Result};
use crate::kernel::{self, KernelConfig};
use crate::probit::{self, Potentials, QuadratureRule};

pub const MODEL_SCHEMA: &str = "mpcvm/1";

/// Basis points retained for one class, with their weights and the
/// (internal, 1-based) training labels of the basis points.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassBasis {
    pub basis: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub label_of_basis: Vec<usize>,
}

impl ClassBasis {
    pub fn empty() -> Self {
        ClassBasis {
            basis: Vec::new(),
            weights: Vec::new(),
            label_of_basis: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub trainer: String,
    pub seed: u64,
    pub quad_nodes: usize,
}

/// A trained sparse multi-class classifier. Basis points live in
/// standardized feature space; prediction consumes raw features and applies
/// the stored standardizer first.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub kernel: KernelConfig,
    pub standardizer: StandardizationParams,
    pub classes: usize,
    pub labels: Vec<i64>,
    pub per_class: Vec<ClassBasis>,
    pub biases: Vec<f64>,
    pub metadata: ModelMetadata,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    schema: String,
    #[serde(flatten)]
    model: ModelArtifact,
}

/// Relevant-vector and non-zero-weight counts, per class and pooled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub per_class_vectors: Vec<usize>,
    pub per_class_nonzero: Vec<usize>,
    pub union_vectors: usize,
}

impl fmt::Display for SparsityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (c, (v, nz)) in self
            .per_class_vectors
            .iter()
            .zip(&self.per_class_nonzero)
            .enumerate()
        {
            writeln!(f, "class {}: {}({})", c + 1, v, nz)?;
        }
        write!(f, "union: {}", self.union_vectors)
    }
}

/// Per-run training summary emitted next to every artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub trainer: String,
    pub iterations: usize,
    pub converged: bool,
    pub active_per_class: Vec<usize>,
    pub nonzero_per_class: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_likelihood_trajectory: Option<Vec<f64>>,
    pub wall_seconds: f64,
}

impl ModelArtifact {
    pub fn validate(&self) -> Result<()> {
        if self.per_class.len() != self.classes
            || self.biases.len() != self.classes
            || self.labels.len() != self.classes
        {
            return Err(Error::CorruptModel(format!(
                "per-class tables do not all have {} entries",
                self.classes
            )));
        }
        let d = self.standardizer.dim();
        for (c, cb) in self.per_class.iter().enumerate() {
            if cb.basis.len() != cb.weights.len() || cb.basis.len() != cb.label_of_basis.len() {
                return Err(Error::CorruptModel(format!(
                    "class {} basis/weight/label lengths disagree",
                    c + 1
                )));
            }
            for point in &cb.basis {
                if point.len() != d {
                    return Err(Error::CorruptModel(format!(
                        "class {} basis point of dimension {} in a {d}-dimensional model",
                        c + 1,
                        point.len()
                    )));
                }
            }
            for (&w, &label) in cb.weights.iter().zip(&cb.label_of_basis) {
                if w == 0.0 {
                    return Err(Error::CorruptModel("stored weight is zero".into()));
                }
                let sign = if label == c + 1 { 1.0 } else { -1.0 };
                if sign * w < 0.0 {
                    return Err(Error::CorruptModel(format!(
                        "weight {w} for class {} violates the sign principle",
                        c + 1
                    )));
                }
            }
        }
        Ok(())
    }

    /// Class potentials y = Phi_test W + 1 b^T for raw feature rows.
    pub fn predict_potentials(&self, points: &DMatrix<f64>) -> Result<Potentials> {
        let std_points = self.standardizer.transform(points)?;
        let n = std_points.nrows();
        let mut values = DMatrix::zeros(n, self.classes);
        for (c, cb) in self.per_class.iter().enumerate() {
            let bias = self.biases[c];
            if cb.is_empty() {
                for i in 0..n {
                    values[(i, c)] = bias;
                }
                continue;
            }
            let m = cb.len();
            let basis =
                DMatrix::from_row_iterator(m, std_points.ncols(), cb.basis.iter().flatten().cloned());
            let k = kernel::cross(self.kernel, &std_points, &basis)?;
            let w = nalgebra::DVector::from_vec(cb.weights.clone());
            let col = &k.values * w;
            for i in 0..n {
                values[(i, c)] = col[i] + bias;
            }
        }
        Ok(Potentials { values })
    }

    /// Argmax-potential class decision, reported in original label values.
    /// Ties break toward the lowest class index.
    pub fn predict_class(&self, points: &DMatrix<f64>) -> Result<Vec<i64>> {
        let potentials = self.predict_potentials(points)?;
        Ok(self.decide(&potentials))
    }

    /// Class decisions for already-computed potentials.
    pub fn decide(&self, potentials: &Potentials) -> Vec<i64> {
        let (n, c) = potentials.values.shape();
        (0..n)
            .map(|i| {
                let mut best = 0usize;
                for j in 1..c {
                    if potentials.values[(i, j)] > potentials.values[(i, best)] {
                        best = j;
                    }
                }
                self.labels[best]
            })
            .collect()
    }

    /// Multinomial-probit probability rows (each summing to 1).
    pub fn predict_proba(&self, points: &DMatrix<f64>, rule: &QuadratureRule) -> Result<DMatrix<f64>> {
        let potentials = self.predict_potentials(points)?;
        Ok(probit::class_probabilities_batch(&potentials, rule))
    }

    pub fn sparsity_report(&self) -> SparsityReport {
        let per_class_vectors: Vec<usize> = self.per_class.iter().map(|cb| cb.len()).collect();
        let per_class_nonzero: Vec<usize> = self
            .per_class
            .iter()
            .map(|cb| cb.weights.iter().filter(|w| **w != 0.0).count())
            .collect();
        let mut union: BTreeSet<Vec<u64>> = BTreeSet::new();
        for cb in &self.per_class {
            for point in &cb.basis {
                union.insert(point.iter().map(|v| v.to_bits()).collect());
            }
        }
        SparsityReport {
            per_class_vectors,
            per_class_nonzero,
            union_vectors: union.len(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = ModelFile {
            schema: MODEL_SCHEMA.to_string(),
            model: self.clone(),
        };
        let mut text = serde_json::to_string_pretty(&file)
            .map_err(|e| Error::CorruptModel(format!("serialization failed: {e}")))?;
        text.push('\n');
        std::fs::write(path, text).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<ModelArtifact> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| Error::CorruptModel(format!("not valid JSON: {e}")))?;
        let schema = value
            .get("schema")
            .and_then(|s| s.as_str())
            .ok_or_else(|| Error::CorruptModel("missing schema field".into()))?;
        if schema != MODEL_SCHEMA {
            return Err(Error::SchemaMismatch {
                expected: MODEL_SCHEMA.to_string(),
                found: schema.to_string(),
            });
        }
        let file: ModelFile = serde_json::from_value(value)
            .map_err(|e| Error::CorruptModel(format!("schema {MODEL_SCHEMA} fields missing: {e}")))?;
        file.model.validate()?;
        Ok(file.model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn toy_model() -> ModelArtifact {
        ModelArtifact {
            kernel: KernelConfig::rbf(1.0).unwrap(),
            standardizer: StandardizationParams::identity(2),
            classes: 3,
            labels: vec![1, 2, 3],
            per_class: vec![
                ClassBasis {
                    basis: vec![vec![0.0, 0.0]],
                    weights: vec![0.8],
                    label_of_basis: vec![1],
                },
                ClassBasis {
                    basis: vec![vec![2.0, 0.0]],
                    weights: vec![0.9],
                    label_of_basis: vec![2],
                },
                ClassBasis::empty(),
            ],
            biases: vec![0.0, 0.0, 0.0],
            metadata: ModelMetadata {
                trainer: "mpcvm1".into(),
                seed: 0,
                quad_nodes: 64,
            },
        }
    }

    #[test]
    fn empty_class_yields_bias_only_potentials() {
        let model = toy_model();
        let pts = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 2.0, 0.0]);
        let pot = model.predict_potentials(&pts).unwrap();
        assert_eq!(pot.values[(0, 2)], 0.0);
        assert_eq!(pot.values[(1, 2)], 0.0);
    }

    #[test]
    fn single_basis_point_evaluated_at_itself_returns_weight() {
        let model = toy_model();
        let pts = DMatrix::from_row_slice(1, 2, &[0.0, 0.0]);
        let pot = model.predict_potentials(&pts).unwrap();
        assert_abs_diff_eq!(pot.values[(0, 0)], 0.8, epsilon = 1e-15);
    }

    #[test]
    fn potentials_are_shift_equivariant_in_bias() {
        let mut model = toy_model();
        let pts = DMatrix::from_row_slice(2, 2, &[0.3, -0.4, 1.0, 1.0]);
        let before = model.predict_potentials(&pts).unwrap();
        model.biases[1] += 0.625;
        let after = model.predict_potentials(&pts).unwrap();
        for i in 0..2 {
            assert_abs_diff_eq!(after.values[(i, 1)] - before.values[(i, 1)], 0.625, epsilon = 1e-15);
            assert_eq!(after.values[(i, 0)], before.values[(i, 0)]);
        }
    }

    #[test]
    fn class_decision_is_argmax_with_lowest_index_ties() {
        let model = toy_model();
        let pot = Potentials {
            values: DMatrix::from_row_slice(2, 3, &[0.2, 0.9, 0.1, 0.5, 0.5, 0.1]),
        };
        assert_eq!(model.decide(&pot), vec![2, 1]);
    }

    #[test]
    fn decision_is_invariant_to_row_shifts() {
        let model = toy_model();
        let pot = Potentials {
            values: DMatrix::from_row_slice(1, 3, &[0.4, 0.1, -0.2]),
        };
        let shifted = Potentials {
            values: DMatrix::from_row_slice(1, 3, &[10.4, 10.1, 9.8]),
        };
        assert_eq!(model.decide(&pot), model.decide(&shifted));
    }

    #[test]
    fn probabilities_match_binary_reduction_and_sum_to_one() {
        let mut model = toy_model();
        model.classes = 2;
        model.labels = vec![1, 2];
        model.per_class.pop();
        model.biases.pop();
        let rule = probit::gauss_hermite(64).unwrap();
        let pts = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 0.2, 2.0, -0.1]);
        let proba = model.predict_proba(&pts, &rule).unwrap();
        let pot = model.predict_potentials(&pts).unwrap();
        for i in 0..3 {
            let expected = probit::norm_cdf(
                (pot.values[(i, 0)] - pot.values[(i, 1)]) / std::f64::consts::SQRT_2,
            );
            assert_abs_diff_eq!(proba[(i, 0)], expected, epsilon = 1e-6);
            assert_abs_diff_eq!(proba[(i, 0)] + proba[(i, 1)], 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn equal_potentials_give_uniform_probabilities() {
        let model = ModelArtifact {
            per_class: vec![ClassBasis::empty(), ClassBasis::empty(), ClassBasis::empty()],
            ..toy_model()
        };
        let rule = probit::gauss_hermite(64).unwrap();
        let pts = DMatrix::from_row_slice(1, 2, &[0.1, 0.2]);
        let proba = model.predict_proba(&pts, &rule).unwrap();
        for c in 0..3 {
            assert_abs_diff_eq!(proba[(0, c)], 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn save_load_round_trip_is_byte_identical() {
        let model = toy_model();
        let dir = std::env::temp_dir().join("mpcvm_model_test");
        std::fs::create_dir_all(&dir).unwrap();
        let p1 = dir.join("model_a.json");
        let p2 = dir.join("model_b.json");
        model.save(&p1).unwrap();
        let loaded = ModelArtifact::load(&p1).unwrap();
        loaded.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());

        let pts = DMatrix::from_row_slice(2, 2, &[0.7, -0.2, 1.4, 0.9]);
        assert_eq!(
            model.predict_class(&pts).unwrap(),
            loaded.predict_class(&pts).unwrap()
        );
        let pot_a = model.predict_potentials(&pts).unwrap();
        let pot_b = loaded.predict_potentials(&pts).unwrap();
        assert_eq!(pot_a.values, pot_b.values);
    }

    #[test]
    fn wrong_schema_version_is_a_versioned_error() {
        let model = toy_model();
        let dir = std::env::temp_dir().join("mpcvm_model_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model_schema.json");
        model.save(&path).unwrap();
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replace("mpcvm/1", "mpcvm/999");
        std::fs::write(&path, text).unwrap();
        match ModelArtifact::load(&path).unwrap_err() {
            Error::SchemaMismatch { expected, found } => {
                assert_eq!(expected, "mpcvm/1");
                assert_eq!(found, "mpcvm/999");
            }
            other => panic!("expected schema mismatch, got {other}"),
        }
    }

    #[test]
    fn corrupt_file_is_reported() {
        let dir = std::env::temp_dir().join("mpcvm_model_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model_corrupt.json");
        std::fs::write(&path, "{ not json").unwrap();
        assert!(matches!(
            ModelArtifact::load(&path).unwrap_err(),
            Error::CorruptModel(_)
        ));
    }

    #[test]
    fn sparsity_report_counts_vectors_and_union() {
        let model = toy_model();
        let report = model.sparsity_report();
        assert_eq!(report.per_class_vectors, vec![1, 1, 0]);
        assert_eq!(report.per_class_nonzero, vec![1, 1, 0]);
        assert_eq!(report.union_vectors, 2);
        let text = report.to_string();
        assert!(text.contains("class 3: 0(0)"));
        assert!(text.contains("class 1: 1(1)"));
    }
}
