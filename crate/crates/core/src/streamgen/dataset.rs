use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{Matrix, RandomSource};

/// Labeled pool that streams draw from.
#[derive(Clone, Debug, PartialEq)]
pub struct BaseDataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl BaseDataset {
    /// Checks that labels are in range and every class is present.
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::ShapeMismatch(format!("{} labels for {} rows", labels.len(), features.rows())));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::InvalidClass { class: bad, classes: num_classes });
        }
        let data = Self { features, labels, num_classes };
        if let Some(empty) = data.class_pools().iter().position(Vec::is_empty) {
            return Err(Error::EmptyClassPool(empty));
        }
        Ok(data)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Row indices of each class.
    pub fn class_pools(&self) -> Vec<Vec<usize>> {
        let mut pools = vec![Vec::new(); self.num_classes];
        for (i, &y) in self.labels.iter().enumerate() {
            pools[y].push(i);
        }
        pools
    }

    pub fn subset(&self, indices: &[usize]) -> BaseDataset {
        BaseDataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Stratified split; every class keeps at least one row on each side when
    /// it has two or more.
    pub fn split(&self, holdout_fraction: f64, rng: &mut RandomSource) -> (BaseDataset, BaseDataset) {
        let mut keep = Vec::new();
        let mut hold = Vec::new();
        for mut pool in self.class_pools() {
            rng.shuffle(&mut pool);
            let mut n_hold = (pool.len() as f64 * holdout_fraction).round() as usize;
            if pool.len() >= 2 {
                n_hold = n_hold.clamp(1, pool.len() - 1);
            }
            hold.extend_from_slice(&pool[..n_hold]);
            keep.extend_from_slice(&pool[n_hold..]);
        }
        keep.sort_unstable();
        hold.sort_unstable();
        (self.subset(&keep), self.subset(&hold))
    }

    /// Mean per-coordinate standard deviation of the features.
    pub fn feature_std(&self) -> f64 {
        let (_, var) = crate::gprerbn::batch_stats(&self.features);
        var.iter().map(|v| v.sqrt()).sum::<f64>() / var.len().max(1) as f64
    }
}

/// Isotropic unit-variance Gaussian classes whose means sit at pairwise
/// distance at least `separation` (random directions, rescaled together).
pub fn synth_gaussians(
    classes: usize,
    dim: usize,
    per_class: usize,
    separation: f64,
    seed: u64,
) -> Result<BaseDataset> {
    if classes < 2 || dim < 2 || per_class == 0 || separation.is_nan() || separation < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "synth_gaussians needs classes >= 2, dim >= 2, per_class >= 1, separation >= 0; got {classes}, {dim}, {per_class}, {separation}"
        )));
    }
    let mut rng = RandomSource::new(seed);
    let raw: Vec<Vec<f64>> = (0..classes).map(|_| (0..dim).map(|_| rng.normal()).collect()).collect();
    let mut min_dist = f64::INFINITY;
    for i in 0..classes {
        for j in i + 1..classes {
            let d: f64 = raw[i].iter().zip(&raw[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            min_dist = min_dist.min(d);
        }
    }
    let factor = if min_dist > 0.0 { separation / min_dist } else { 0.0 };
    let means: Vec<Vec<f64>> = raw.iter().map(|m| m.iter().map(|v| v * factor).collect()).collect();
    let mut data = Vec::with_capacity(classes * per_class * dim);
    let mut labels = Vec::with_capacity(classes * per_class);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            data.extend(mean.iter().map(|m| m + rng.normal()));
            labels.push(c);
        }
    }
    BaseDataset::new(Matrix::from_vec(classes * per_class, dim, data)?, labels, classes)
}

/// A dataset read from CSV plus the original label of each dense class index.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvDataset {
    pub dataset: BaseDataset,
    pub label_values: Vec<i64>,
}

/// Reads rows of `d` feature columns followed by one integer label column.
/// Labels are re-indexed densely in ascending order of their original value.
pub fn ingest_csv(path: &Path, has_header: bool) -> Result<CsvDataset> {
    let text = fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut raw_labels: Vec<i64> = Vec::new();
    let mut width: Option<usize> = None;
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        if (has_header && n == 0) || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 2 {
            return Err(Error::Parse { line: line_no, message: "need at least one feature and a label".into() });
        }
        if let Some(w) = width {
            if fields.len() != w {
                return Err(Error::Parse { line: line_no, message: format!("{} columns, expected {w}", fields.len()) });
            }
        }
        width = Some(fields.len());
        let (label_field, feature_fields) = fields.split_last().expect("len >= 2");
        let mut row = Vec::with_capacity(feature_fields.len());
        for (col, f) in feature_fields.iter().enumerate() {
            match f.parse::<f64>() {
                Ok(v) if v.is_finite() => row.push(v),
                _ => return Err(Error::NonNumericFeature { line: line_no, column: col + 1, value: (*f).to_owned() }),
            }
        }
        let label = label_field
            .parse::<i64>()
            .map_err(|_| Error::Parse { line: line_no, message: format!("label {label_field:?} is not an integer") })?;
        rows.push(row);
        raw_labels.push(label);
    }
    if rows.is_empty() {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    let mut mapping = BTreeMap::new();
    for &l in &raw_labels {
        mapping.entry(l).or_insert(0usize);
    }
    for (dense, v) in mapping.values_mut().enumerate() {
        *v = dense;
    }
    let labels = raw_labels.iter().map(|l| mapping[l]).collect();
    let label_values: Vec<i64> = mapping.keys().copied().collect();
    let classes = label_values.len();
    let dataset = BaseDataset { features: Matrix::from_rows(&rows)?, labels, num_classes: classes };
    Ok(CsvDataset { dataset, label_values })
}
