//! Shared domain types: target series with side information, split points,
//! base prediction bundles and constrained weight vectors.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::constraints::ConstraintKind;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Name of the target column in the CSV ingestion format.
pub const TARGET_COLUMN: &str = "y";

/// A matrix of named real-valued features, one row per time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    names: Vec<String>,
    data: Matrix,
}

impl FeatureMatrix {
    pub fn new(names: Vec<String>, data: Matrix) -> Result<Self> {
        if names.len() != data.cols() {
            return Err(Error::DimensionMismatch(format!(
                "{} names for {} columns",
                names.len(),
                data.cols()
            )));
        }
        let mut seen = HashMap::new();
        for n in &names {
            if seen.insert(n.as_str(), ()).is_some() {
                return Err(Error::DuplicateColumn(n.clone()));
            }
        }
        if !data.all_finite() {
            return Err(Error::NonFinite("feature matrix".into()));
        }
        Ok(Self { names, data })
    }

    /// Builds from named columns of equal length.
    pub fn from_columns(columns: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let n_rows = columns.first().map_or(0, |(_, c)| c.len());
        if let Some((name, c)) = columns.iter().find(|(_, c)| c.len() != n_rows) {
            return Err(Error::DimensionMismatch(format!(
                "column `{name}` has {} rows, expected {n_rows}",
                c.len()
            )));
        }
        let n_cols = columns.len();
        let mut data = Matrix::zeros(n_rows, n_cols);
        for (j, (_, col)) in columns.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                data[(i, j)] = *v;
            }
        }
        Self::new(columns.into_iter().map(|(n, _)| n).collect(), data)
    }

    pub fn empty(n_rows: usize) -> Self {
        Self {
            names: Vec::new(),
            data: Matrix::zeros(n_rows, 0),
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_rows(&self) -> usize {
        self.data.rows()
    }

    pub fn n_cols(&self) -> usize {
        self.data.cols()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        self.data.row(r)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.data
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let j = self
            .column_index(name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))?;
        Ok(self.data.column(j))
    }

    /// Rows `start..end` as a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> FeatureMatrix {
        let data = self.data.as_slice()[start * self.n_cols()..end * self.n_cols()].to_vec();
        FeatureMatrix {
            names: self.names.clone(),
            data: Matrix::from_vec(end - start, self.n_cols(), data).expect("consistent slice"),
        }
    }

    /// Keeps only the named columns, in the order given.
    pub fn select(&self, names: &[String]) -> Result<FeatureMatrix> {
        let cols = names
            .iter()
            .map(|n| self.column(n).map(|c| (n.clone(), c)))
            .collect::<Result<Vec<_>>>()?;
        if cols.is_empty() {
            return Ok(FeatureMatrix::empty(self.n_rows()));
        }
        FeatureMatrix::from_columns(cols)
    }
}

/// Scalar target sequence with aligned side information.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesFrame {
    values: Vec<f64>,
    side_info: FeatureMatrix,
}

impl TimeSeriesFrame {
    pub fn new(values: Vec<f64>, side_info: FeatureMatrix) -> Result<Self> {
        if values.len() != side_info.n_rows() {
            return Err(Error::DimensionMismatch(format!(
                "{} target values but {} side-information rows",
                values.len(),
                side_info.n_rows()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("target at row {i}")));
        }
        if side_info.column_index(TARGET_COLUMN).is_some() {
            return Err(Error::DuplicateColumn(TARGET_COLUMN.into()));
        }
        Ok(Self { values, side_info })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn side_info(&self) -> &FeatureMatrix {
        &self.side_info
    }

    pub fn slice(&self, start: usize, end: usize) -> TimeSeriesFrame {
        TimeSeriesFrame {
            values: self.values[start..end].to_vec(),
            side_info: self.side_info.slice_rows(start, end),
        }
    }

    /// Returns a copy with the target replaced; side information is kept.
    pub fn with_values(&self, values: Vec<f64>) -> Result<TimeSeriesFrame> {
        TimeSeriesFrame::new(values, self.side_info.clone())
    }

    /// Reads the CSV ingestion format: header required, a `y` column for the
    /// target, every other column is side information, rows in time order.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let target_idx = headers
            .iter()
            .position(|h| h == TARGET_COLUMN)
            .ok_or_else(|| Error::UnknownColumn(TARGET_COLUMN.into()))?;
        let side_names: Vec<String> = headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != target_idx)
            .map(|(_, h)| h.clone())
            .collect();
        let mut values = Vec::new();
        let mut side = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() != headers.len() {
                return Err(Error::DimensionMismatch(format!(
                    "data row {} has {} fields, header has {}",
                    line + 1,
                    record.len(),
                    headers.len()
                )));
            }
            for (j, field) in record.iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| {
                    Error::NonFinite(format!(
                        "unparseable or missing value `{field}` at data row {}, column `{}`",
                        line + 1,
                        headers[j]
                    ))
                })?;
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "data row {}, column `{}`",
                        line + 1,
                        headers[j]
                    )));
                }
                if j == target_idx {
                    values.push(v);
                } else {
                    side.push(v);
                }
            }
        }
        let data = Matrix::from_vec(values.len(), side_names.len(), side)?;
        Self::new(values, FeatureMatrix::new(side_names, data)?)
    }

    pub fn read_csv_path(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec![TARGET_COLUMN.to_string()];
        header.extend(self.side_info.names().iter().cloned());
        wtr.write_record(&header)?;
        for (t, y) in self.values.iter().enumerate() {
            let mut rec = vec![y.to_string()];
            rec.extend(self.side_info.row(t).iter().map(|v| v.to_string()));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Split points of the three-way partition `[0, t1) | [t1, t_end) | [t_end, t2)`,
/// i.e. base training, meta training and test segments (row counts).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub t1: usize,
    pub t_end: usize,
    pub t2: usize,
}

impl SplitSpec {
    pub fn new(t1: usize, t_end: usize, t2: usize) -> Result<Self> {
        let spec = Self { t1, t_end, t2 };
        spec.validate(t2)?;
        Ok(spec)
    }

    pub fn validate(&self, len: usize) -> Result<()> {
        if !(1 <= self.t1 && self.t1 < self.t_end && self.t_end < self.t2) {
            return Err(Error::IndexOutOfRange(format!(
                "split ({}, {}, {}) must satisfy 1 <= t1 < t_end < t2",
                self.t1, self.t_end, self.t2
            )));
        }
        if self.t2 > len {
            return Err(Error::IndexOutOfRange(format!(
                "t2 = {} exceeds series length {len}",
                self.t2
            )));
        }
        Ok(())
    }

    /// Default three-way split: the last `test` rows are held out and the
    /// meta-training window has the same length as the test window.
    pub fn trailing(len: usize, test: usize) -> Result<Self> {
        if len < 2 * test + 1 {
            return Err(Error::IndexOutOfRange(format!(
                "series of length {len} cannot hold two windows of {test}"
            )));
        }
        Self::new(len - 2 * test, len - test, len)
    }

    pub fn test_len(&self) -> usize {
        self.t2 - self.t_end
    }
}

/// Splits a frame into base-training, meta-training and test segments.
pub fn split(
    frame: &TimeSeriesFrame,
    spec: &SplitSpec,
) -> Result<(TimeSeriesFrame, TimeSeriesFrame, TimeSeriesFrame)> {
    spec.validate(frame.len())?;
    Ok((
        frame.slice(0, spec.t1),
        frame.slice(spec.t1, spec.t_end),
        frame.slice(spec.t_end, spec.t2),
    ))
}

/// Duplicate-free union of side-information matrices.
///
/// Columns are taken in first-occurrence order across `frames`, then
/// `extras`. A repeated name must carry bit-identical values on every row.
pub fn build_superset_side_info(
    frames: &[&FeatureMatrix],
    extras: Option<&FeatureMatrix>,
) -> Result<FeatureMatrix> {
    let inputs: Vec<&FeatureMatrix> = frames.iter().copied().chain(extras).collect();
    let n_rows = match inputs.first() {
        Some(f) => f.n_rows(),
        None => return Ok(FeatureMatrix::empty(0)),
    };
    let mut columns: Vec<(String, Vec<f64>)> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for input in &inputs {
        if input.n_rows() != n_rows {
            return Err(Error::DimensionMismatch(format!(
                "side-information inputs have {} and {} rows",
                n_rows,
                input.n_rows()
            )));
        }
        for (j, name) in input.names().iter().enumerate() {
            let col = input.matrix().column(j);
            match index.get(name) {
                Some(&k) => {
                    if let Some(row) = columns[k]
                        .1
                        .iter()
                        .zip(&col)
                        .position(|(a, b)| a.to_bits() != b.to_bits())
                    {
                        return Err(Error::ConflictingFeature {
                            name: name.clone(),
                            row,
                        });
                    }
                }
                None => {
                    index.insert(name.clone(), columns.len());
                    columns.push((name.clone(), col));
                }
            }
        }
    }
    if columns.is_empty() {
        return Ok(FeatureMatrix::empty(n_rows));
    }
    FeatureMatrix::from_columns(columns)
}

/// Base model predictions, one row per time step and one column per model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionBundle {
    base_preds: Matrix,
    model_names: Vec<String>,
}

impl PredictionBundle {
    pub fn new(model_names: Vec<String>, base_preds: Matrix) -> Result<Self> {
        if model_names.len() < 2 {
            return Err(Error::ConfigInvalid(format!(
                "an ensemble needs at least 2 base models, got {}",
                model_names.len()
            )));
        }
        if model_names.len() != base_preds.cols() {
            return Err(Error::DimensionMismatch(format!(
                "{} model names for {} prediction columns",
                model_names.len(),
                base_preds.cols()
            )));
        }
        if !base_preds.all_finite() {
            return Err(Error::NonFinite("base predictions".into()));
        }
        Ok(Self {
            base_preds,
            model_names,
        })
    }

    /// Builds from one prediction vector per model.
    pub fn from_columns(model_names: Vec<String>, columns: &[Vec<f64>]) -> Result<Self> {
        let n = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::DimensionMismatch("prediction columns differ in length".into()));
        }
        let mut m = Matrix::zeros(n, columns.len());
        for (j, c) in columns.iter().enumerate() {
            for (i, v) in c.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        Self::new(model_names, m)
    }

    pub fn n_models(&self) -> usize {
        self.model_names.len()
    }

    pub fn n_rows(&self) -> usize {
        self.base_preds.rows()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        self.base_preds.row(t)
    }

    pub fn model_names(&self) -> &[String] {
        &self.model_names
    }

    pub fn matrix(&self) -> &Matrix {
        &self.base_preds
    }
}

/// Combination weights together with the constraint they satisfy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    w: Vec<f64>,
    kind: ConstraintKind,
}

impl WeightVector {
    pub const SUM_TOL: f64 = 1e-9;
    pub const NONNEG_TOL: f64 = 1e-12;

    pub fn new(w: Vec<f64>, kind: ConstraintKind) -> Result<Self> {
        let v = Self { w, kind };
        v.check()?;
        Ok(v)
    }

    pub fn check(&self) -> Result<()> {
        if self.w.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidWeights("non-finite weight".into()));
        }
        let sum: f64 = self.w.iter().sum();
        match self.kind {
            ConstraintKind::Unconstrained => {}
            ConstraintKind::Affine | ConstraintKind::Convex => {
                if (sum - 1.0).abs() > Self::SUM_TOL {
                    return Err(Error::InvalidWeights(format!(
                        "{:?} weights sum to {sum}",
                        self.kind
                    )));
                }
            }
        }
        if self.kind == ConstraintKind::Convex {
            if let Some(x) = self.w.iter().find(|x| **x < -Self::NONNEG_TOL) {
                return Err(Error::InvalidWeights(format!("negative convex weight {x}")));
            }
        }
        Ok(())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.w
    }

    pub fn kind(&self) -> ConstraintKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    /// `wᵀŷ`.
    pub fn combine(&self, base_preds: &[f64]) -> f64 {
        crate::linalg::dot(&self.w, base_preds)
    }
}
