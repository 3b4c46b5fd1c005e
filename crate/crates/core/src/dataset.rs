//! Labeled multi-class datasets: CSV ingestion, dimensionwise
//! standardization, seeded splitting, and the two synthetic generators.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Feature matrix with contiguous integer labels 1..=C.
///
/// Labels are remapped at load time; `label_names[c - 1]` records the
/// original value of class `c` (sorted ascending).
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: DMatrix<f64>,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub label_names: Vec<i64>,
}

impl Dataset {
    pub fn new(features: DMatrix<f64>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        let label_names = (1..=class_count as i64).collect();
        Self::with_label_names(features, labels, class_count, label_names)
    }

    pub fn with_label_names(
        features: DMatrix<f64>,
        labels: Vec<usize>,
        class_count: usize,
        label_names: Vec<i64>,
    ) -> Result<Self> {
        let ds = Dataset {
            features,
            labels,
            class_count,
            label_names,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Original label value for an internal class index (1-based).
    pub fn original_label(&self, class: usize) -> i64 {
        self.label_names[class - 1]
    }

    fn validate(&self) -> Result<()> {
        let n = self.features.nrows();
        if self.labels.len() != n {
            return Err(Error::Data(format!(
                "{} labels for {} feature rows",
                self.labels.len(),
                n
            )));
        }
        if self.class_count < 2 {
            return Err(Error::Data(format!(
                "need at least 2 classes, got {}",
                self.class_count
            )));
        }
        if n < self.class_count {
            return Err(Error::Data(format!(
                "{n} samples cannot cover {} classes",
                self.class_count
            )));
        }
        if self.label_names.len() != self.class_count {
            return Err(Error::Data("label name table does not match class count".into()));
        }
        let mut seen = vec![false; self.class_count];
        for &l in &self.labels {
            if l < 1 || l > self.class_count {
                return Err(Error::Data(format!(
                    "label {l} outside 1..={}",
                    self.class_count
                )));
            }
            seen[l - 1] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Data(format!("class {} has no samples", missing + 1)));
        }
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("features contain non-finite values".into()));
        }
        Ok(())
    }
}

/// Per-dimension affine transform fitted on a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationParams {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl StandardizationParams {
    /// Identity transform for `dim` features.
    pub fn identity(dim: usize) -> Self {
        StandardizationParams {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Standardize a raw feature matrix.
    pub fn transform(&self, features: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if features.ncols() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "standardizer fitted on {} dimensions, data has {}",
                self.dim(),
                features.ncols()
            )));
        }
        let mut out = features.clone();
        for j in 0..out.ncols() {
            for i in 0..out.nrows() {
                out[(i, j)] = (out[(i, j)] - self.mean[j]) / self.scale[j];
            }
        }
        Ok(out)
    }
}

/// Seeded train/test partition request.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_count: usize,
    pub seed: u64,
}

/// Fit per-dimension mean and population standard deviation on the training
/// set; zero-variance dimensions get scale 1.
pub fn fit_standardizer(train: &Dataset) -> Result<StandardizationParams> {
    let n = train.len();
    if n < 2 {
        return Err(Error::Data("need at least 2 samples to fit a standardizer".into()));
    }
    let d = train.dim();
    let mut mean = vec![0.0; d];
    let mut scale = vec![0.0; d];
    for j in 0..d {
        let mut acc = 0.0;
        for i in 0..n {
            acc += train.features[(i, j)];
        }
        let mu = acc / n as f64;
        let mut var = 0.0;
        for i in 0..n {
            let diff = train.features[(i, j)] - mu;
            var += diff * diff;
        }
        var /= n as f64;
        let sd = var.sqrt();
        mean[j] = mu;
        scale[j] = if sd < 1e-12 { 1.0 } else { sd };
    }
    Ok(StandardizationParams { mean, scale })
}

/// Apply a fitted standardizer; labels pass through untouched.
pub fn apply_standardizer(params: &StandardizationParams, data: &Dataset) -> Result<Dataset> {
    let features = params.transform(&data.features)?;
    Ok(Dataset {
        features,
        labels: data.labels.clone(),
        class_count: data.class_count,
        label_names: data.label_names.clone(),
    })
}

/// Deterministic seeded split into train/test halves, re-drawing (up to 100
/// times) until both halves contain every class.
pub fn split(data: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    let n = data.len();
    if spec.train_count == 0 || spec.train_count >= n {
        return Err(Error::InvalidArgument(format!(
            "train count {} must lie strictly between 0 and {n}",
            spec.train_count
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let mut indices: Vec<usize> = (0..n).collect();
    for _ in 0..100 {
        indices.shuffle(&mut rng);
        let (train_idx, test_idx) = indices.split_at(spec.train_count);
        if covers_all_classes(data, train_idx) && covers_all_classes(data, test_idx) {
            return Ok((subset(data, train_idx), subset(data, test_idx)));
        }
    }
    Err(Error::Data(format!(
        "could not draw a split with all {} classes on both sides after 100 attempts",
        data.class_count
    )))
}

fn covers_all_classes(data: &Dataset, idx: &[usize]) -> bool {
    let mut seen = vec![false; data.class_count];
    for &i in idx {
        seen[data.labels[i] - 1] = true;
    }
    seen.iter().all(|&s| s)
}

fn subset(data: &Dataset, idx: &[usize]) -> Dataset {
    let d = data.dim();
    let mut features = DMatrix::zeros(idx.len(), d);
    let mut labels = Vec::with_capacity(idx.len());
    for (row, &i) in idx.iter().enumerate() {
        for j in 0..d {
            features[(row, j)] = data.features[(i, j)];
        }
        labels.push(data.labels[i]);
    }
    Dataset {
        features,
        labels,
        class_count: data.class_count,
        label_names: data.label_names.clone(),
    }
}

/// Keep only samples of the first `k` classes (class-curriculum protocol).
pub fn filter_first_k_classes(data: &Dataset, k: usize) -> Result<Dataset> {
    if k < 2 || k > data.class_count {
        return Err(Error::InvalidArgument(format!(
            "class filter k={k} outside 2..={}",
            data.class_count
        )));
    }
    let idx: Vec<usize> = (0..data.len()).filter(|&i| data.labels[i] <= k).collect();
    let mut out = subset(data, &idx);
    out.class_count = k;
    out.label_names = data.label_names[..k].to_vec();
    out.validate()?;
    Ok(out)
}

/// Load a comma-separated file. A header row is auto-detected (any cell of
/// the first row failing to parse as a number marks it as a header). The
/// label column is selected by zero-based index, defaulting to the last
/// column; label values are remapped to contiguous 1..=C preserving their
/// sorted order.
pub fn load_csv(path: &Path, label_column: Option<usize>) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_csv(&text, label_column)
}

pub(crate) fn parse_csv(text: &str, label_column: Option<usize>) -> Result<Dataset> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .peekable();

    let first = lines
        .peek()
        .ok_or_else(|| Error::Data("empty CSV file".into()))?;
    let header_present = first
        .split(',')
        .any(|cell| cell.trim().parse::<f64>().is_err());
    if header_present {
        lines.next();
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut raw_labels: Vec<i64> = Vec::new();
    let mut width: Option<usize> = None;
    for (line_no, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        match width {
            None => width = Some(cells.len()),
            Some(w) if w != cells.len() => {
                return Err(Error::Data(format!(
                    "ragged row {}: {} cells where {} expected",
                    line_no + 1,
                    cells.len(),
                    w
                )));
            }
            _ => {}
        }
        let w = width.unwrap();
        if w < 2 {
            return Err(Error::Data("rows need at least one feature and a label".into()));
        }
        let label_idx = label_column.unwrap_or(w - 1);
        if label_idx >= w {
            return Err(Error::InvalidArgument(format!(
                "label column {label_idx} outside a {w}-column file"
            )));
        }
        let mut feats = Vec::with_capacity(w - 1);
        for (col, cell) in cells.iter().enumerate() {
            if col == label_idx {
                raw_labels.push(parse_label(cell, line_no + 1)?);
            } else {
                let v: f64 = cell.parse().map_err(|_| {
                    Error::Data(format!(
                        "non-numeric feature cell {:?} at row {}, column {}",
                        cell,
                        line_no + 1,
                        col
                    ))
                })?;
                if !v.is_finite() {
                    return Err(Error::Data(format!(
                        "non-finite feature at row {}, column {}",
                        line_no + 1,
                        col
                    )));
                }
                feats.push(v);
            }
        }
        rows.push(feats);
    }
    if rows.is_empty() {
        return Err(Error::Data("CSV file has no data rows".into()));
    }

    let mut label_names: Vec<i64> = raw_labels.clone();
    label_names.sort_unstable();
    label_names.dedup();
    if label_names.len() < 2 {
        return Err(Error::Data(format!(
            "need at least 2 classes, found {}",
            label_names.len()
        )));
    }
    let labels: Vec<usize> = raw_labels
        .iter()
        .map(|raw| label_names.binary_search(raw).unwrap() + 1)
        .collect();

    let d = rows[0].len();
    let features = DMatrix::from_row_iterator(rows.len(), d, rows.into_iter().flatten());
    Dataset::with_label_names(features, labels, label_names.len(), label_names)
}

/// Load a CSV file as a plain numeric matrix (auto-detected header row,
/// no label column).
pub fn load_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .peekable();
    let first = lines
        .peek()
        .ok_or_else(|| Error::Data("empty CSV file".into()))?;
    if first.split(',').any(|cell| cell.trim().parse::<f64>().is_err()) {
        lines.next();
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line_no, line) in lines.enumerate() {
        let row: Vec<f64> = line
            .split(',')
            .map(|cell| {
                cell.trim().parse::<f64>().map_err(|_| {
                    Error::Data(format!(
                        "non-numeric cell {cell:?} at row {}",
                        line_no + 1
                    ))
                })
            })
            .collect::<Result<_>>()?;
        if let Some(prev) = rows.last() {
            if prev.len() != row.len() {
                return Err(Error::Data(format!("ragged row {}", line_no + 1)));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Data("CSV file has no data rows".into()));
    }
    let d = rows[0].len();
    Ok(DMatrix::from_row_iterator(rows.len(), d, rows.into_iter().flatten()))
}

fn parse_label(cell: &str, row: usize) -> Result<i64> {
    if let Ok(v) = cell.parse::<i64>() {
        return Ok(v);
    }
    if let Ok(v) = cell.parse::<f64>() {
        if v.is_finite() && v.fract() == 0.0 {
            return Ok(v as i64);
        }
    }
    Err(Error::Data(format!(
        "label {cell:?} at row {row} does not parse to an integer"
    )))
}

/// Write a dataset as CSV with the label column last, using shortest
/// round-trip decimal formatting so reruns are byte-identical.
pub fn write_csv(data: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    for i in 0..data.len() {
        for j in 0..data.dim() {
            out.push_str(&format!("{},", data.features[(i, j)]));
        }
        out.push_str(&format!("{}\n", data.original_label(data.labels[i])));
    }
    let mut file = std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    file.write_all(out.as_bytes()).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

struct GaussianCluster {
    label: usize,
    count: usize,
    center: [f64; 2],
    // row-major 2x2 shaping matrix applied to standard normal draws
    shape: [f64; 4],
}

fn sample_clusters(clusters: &[GaussianCluster], class_count: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let total: usize = clusters.iter().map(|c| c.count).sum();
    let mut features = DMatrix::zeros(total, 2);
    let mut labels = Vec::with_capacity(total);
    let mut row = 0;
    for cl in clusters {
        for _ in 0..cl.count {
            let u: f64 = StandardNormal.sample(&mut rng);
            let v: f64 = StandardNormal.sample(&mut rng);
            features[(row, 0)] = cl.center[0] + cl.shape[0] * u + cl.shape[1] * v;
            features[(row, 1)] = cl.center[1] + cl.shape[2] * u + cl.shape[3] * v;
            labels.push(cl.label);
            row += 1;
        }
    }
    Dataset {
        features,
        labels,
        class_count,
        label_names: (1..=class_count as i64).collect(),
    }
}

/// Three heavily overlapping 2-D classes: one skewed elliptical class in the
/// bottom-right corner, one class in three collinear clusters, and one class
/// in two clusters interleaved between them. 300 points total.
pub fn gen_overlap(seed: u64) -> Dataset {
    // rotation by 30 degrees applied to axis scales (2.0, 0.6)
    let (cos, sin) = (3f64.sqrt() / 2.0, 0.5);
    let skew = [2.0 * cos, -0.6 * sin, 2.0 * sin, 0.6 * cos];
    let unit = [1.0, 0.0, 0.0, 1.0];
    let clusters = [
        GaussianCluster { label: 1, count: 100, center: [3.5, -3.5], shape: skew },
        GaussianCluster { label: 2, count: 34, center: [-4.0, 0.0], shape: unit },
        GaussianCluster { label: 2, count: 33, center: [0.0, 0.0], shape: unit },
        GaussianCluster { label: 2, count: 33, center: [4.0, 0.0], shape: unit },
        GaussianCluster { label: 3, count: 50, center: [-2.0, 0.0], shape: unit },
        GaussianCluster { label: 3, count: 50, center: [2.0, 0.0], shape: unit },
    ];
    sample_clusters(&clusters, 3, seed)
}

/// Ten imbalanced 2-D classes (127 points, sizes 28 down to 3) on a ring of
/// radius 5 with unit covariance.
pub fn gen_overclass(seed: u64) -> Dataset {
    const SIZES: [usize; 10] = [28, 22, 18, 14, 12, 9, 8, 7, 6, 3];
    let unit = [1.0, 0.0, 0.0, 1.0];
    let clusters: Vec<GaussianCluster> = SIZES
        .iter()
        .enumerate()
        .map(|(c, &count)| {
            let angle = 2.0 * std::f64::consts::PI * c as f64 / 10.0;
            GaussianCluster {
                label: c + 1,
                count,
                center: [5.0 * angle.cos(), 5.0 * angle.sin()],
                shape: unit,
            }
        })
        .collect();
    sample_clusters(&clusters, 10, seed)
}
