//! Labeled feature matrices: CSV ingestion and synthetic generation.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{Error, Result};

/// Feature matrix (`m×n`, samples as columns) with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSet {
    pub features: DMatrix<f64>,
    pub labels: Vec<usize>,
    /// Empty when the labels were integers.
    pub class_names: Vec<String>,
}

impl DataSet {
    pub fn new(features: DMatrix<f64>, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != features.ncols() {
            return Err(Error::Dimension {
                context: "label count vs samples",
                expected: features.ncols(),
                found: labels.len(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "features contain non-finite entries".into(),
            ));
        }
        Ok(Self {
            features,
            labels,
            class_names: Vec::new(),
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.features.nrows()
    }

    pub fn len(&self) -> usize {
        self.features.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_classes(&self) -> usize {
        self.labels
            .iter()
            .max()
            .map_or(0, |m| m + 1)
            .max(self.class_names.len())
    }

    pub fn subset(&self, indices: &[usize]) -> DataSet {
        DataSet {
            features: self.features.select_columns(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
        }
    }

    /// Per-class seeded split; `train_fraction` of every class (rounded)
    /// goes to the first set, the rest to the second.
    pub fn stratified_split(&self, train_fraction: f64, seed: u64) -> (DataSet, DataSet) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut train = Vec::new();
        let mut test = Vec::new();
        for class in 0..self.num_classes() {
            let mut members: Vec<usize> = (0..self.len())
                .filter(|&i| self.labels[i] == class)
                .collect();
            members.shuffle(&mut rng);
            let cut = (members.len() as f64 * train_fraction).round() as usize;
            train.extend_from_slice(&members[..cut]);
            test.extend_from_slice(&members[cut..]);
        }
        train.sort_unstable();
        test.sort_unstable();
        (self.subset(&train), self.subset(&test))
    }

    /// Re-index the labels of `self` to the class names of another dataset
    /// (or model). Integer-labeled data is returned unchanged.
    pub fn align_classes(&self, names: &[String]) -> Result<DataSet> {
        if self.class_names.is_empty() || names.is_empty() {
            return Ok(self.clone());
        }
        let index: HashMap<&str, usize> = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect();
        let mut labels = Vec::with_capacity(self.len());
        for &l in &self.labels {
            let name = &self.class_names[l];
            let Some(&mapped) = index.get(name.as_str()) else {
                return Err(Error::InvalidParameter(format!(
                    "class {name:?} does not appear in the training classes"
                )));
            };
            labels.push(mapped);
        }
        Ok(DataSet {
            features: self.features.clone(),
            labels,
            class_names: names.to_vec(),
        })
    }
}

/// Comma-separated samples, one per row, label in the last column.
///
/// Integer labels are used as class indices. Any other label text is mapped
/// to indices in order of first appearance and kept in `class_names`.
pub fn load_csv(path: &Path) -> Result<DataSet> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => parse_err(0, format!("{other:?}")),
        })?;

    let mut values: Vec<f64> = Vec::new();
    let mut raw_labels: Vec<String> = Vec::new();
    let mut width: Option<usize> = None;
    for (row, record) in reader.records().enumerate() {
        let line = row + 1;
        let record = record.map_err(|e| parse_err(line, e.to_string()))?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() < 2 {
            return Err(parse_err(
                line,
                "expected at least one feature column and a label column".into(),
            ));
        }
        let cols = record.len() - 1;
        match width {
            None => width = Some(cols),
            Some(w) if w != cols => {
                return Err(parse_err(
                    line,
                    format!("ragged row: {cols} feature columns, expected {w}"),
                ))
            }
            _ => {}
        }
        for (col, cell) in record.iter().take(cols).enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                parse_err(
                    line,
                    format!("column {}: non-numeric feature {cell:?}", col + 1),
                )
            })?;
            if !v.is_finite() {
                return Err(parse_err(
                    line,
                    format!("column {}: non-finite feature {cell:?}", col + 1),
                ));
            }
            values.push(v);
        }
        raw_labels.push(record[cols].to_string());
    }
    let Some(m) = width else {
        return Err(parse_err(0, "empty file".into()));
    };
    let n = raw_labels.len();
    // row-major samples become the columns of an m×n matrix
    let features = DMatrix::from_column_slice(m, n, &values);

    let (labels, class_names) = match raw_labels
        .iter()
        .map(|s| s.parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
    {
        Ok(ints) => (ints, Vec::new()),
        Err(_) => {
            let mut names: Vec<String> = Vec::new();
            let mut index: HashMap<String, usize> = HashMap::new();
            let labels = raw_labels
                .into_iter()
                .map(|s| {
                    *index.entry(s.clone()).or_insert_with(|| {
                        names.push(s);
                        names.len() - 1
                    })
                })
                .collect();
            (labels, names)
        }
    };
    Ok(DataSet {
        features,
        labels,
        class_names,
    })
}

/// Write `data` in the format read by [`load_csv`]. Floats use the shortest
/// representation that parses back to the same value.
pub fn save_csv(data: &DataSet, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for (i, col) in data.features.column_iter().enumerate() {
        for v in col.iter() {
            write!(out, "{v},")?;
        }
        let label = data.labels[i];
        match data.class_names.get(label) {
            Some(name) => writeln!(out, "{name}")?,
            None => writeln!(out, "{label}")?,
        }
    }
    out.flush()?;
    Ok(())
}

/// Gaussian clusters around class means placed on a random orthogonal
/// frame (random unit directions when `classes > dim`) scaled by
/// `separation`. Samples are grouped by class.
pub fn synth_dataset(
    classes: usize,
    per_class: usize,
    dim: usize,
    separation: f64,
    noise_sigma: f64,
    seed: u64,
) -> DataSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gaussian = |rows: usize, cols: usize| {
        let mut a = DMatrix::zeros(rows, cols);
        for j in 0..cols {
            for i in 0..rows {
                a[(i, j)] = StandardNormal.sample(&mut rng);
            }
        }
        a
    };
    let mut frame = if classes <= dim {
        gaussian(dim, classes).qr().q()
    } else {
        gaussian(dim, classes)
    };
    for mut c in frame.column_iter_mut() {
        let n = c.norm();
        if n > 0.0 {
            c /= n;
        }
    }
    let noise = gaussian(dim, classes * per_class);
    let mut features = DMatrix::zeros(dim, classes * per_class);
    let mut labels = Vec::with_capacity(classes * per_class);
    for class in 0..classes {
        for s in 0..per_class {
            let i = class * per_class + s;
            let col = frame.column(class) * separation + noise.column(i) * noise_sigma;
            features.set_column(i, &col);
            labels.push(class);
        }
    }
    DataSet {
        features,
        labels,
        class_names: Vec::new(),
    }
}
