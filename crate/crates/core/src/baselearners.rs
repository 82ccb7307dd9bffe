//! Base forecasters.
//!
//! A base model predicts `y_t` one step ahead from lagged targets
//! `y_{t−k}` and exogenous side-information columns observed at `t`. Three
//! kinds exist: a ridge-regularized linear autoregressor, a boosted-tree
//! regressor on the same features, and a passthrough that reads an existing
//! frame column as its forecast (used to feed known component series to the
//! ensemble).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{FeatureMatrix, TimeSeriesFrame};
use crate::gbdt::{self, BoostedRegressor, GBDTConfig};
use crate::linalg::{dot, Cholesky, Matrix};
use crate::params::Hyperparams;

pub const DEFAULT_RIDGE: f64 = 1e-3;

/// Reciprocal-condition threshold below which an unregularized design is
/// reported as singular.
const SINGULAR_RCOND: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseKind {
    LinearAr,
    BoostedTrees,
    Passthrough,
}

impl fmt::Display for BaseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaseKind::LinearAr => "linear_ar",
            BaseKind::BoostedTrees => "boosted_trees",
            BaseKind::Passthrough => "passthrough",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasePredictorSpec {
    pub name: String,
    pub kind: BaseKind,
    #[serde(default)]
    pub lags: Vec<usize>,
    #[serde(default)]
    pub exog_columns: Vec<String>,
    #[serde(default, skip_serializing_if = "Hyperparams::is_empty")]
    pub hyperparams: Hyperparams,
}

impl BasePredictorSpec {
    pub fn linear_ar(name: &str, lags: Vec<usize>) -> Self {
        Self {
            name: name.to_string(),
            kind: BaseKind::LinearAr,
            lags,
            exog_columns: Vec::new(),
            hyperparams: Hyperparams::new(),
        }
    }

    pub fn boosted_trees(name: &str, lags: Vec<usize>) -> Self {
        Self {
            kind: BaseKind::BoostedTrees,
            ..Self::linear_ar(name, lags)
        }
    }

    pub fn passthrough(name: &str, column: &str) -> Self {
        Self {
            kind: BaseKind::Passthrough,
            hyperparams: Hyperparams::new().set("column", crate::params::ParamValue::Str(column.to_string())),
            ..Self::linear_ar(name, Vec::new())
        }
    }

    pub fn with_exog(mut self, columns: &[&str]) -> Self {
        self.exog_columns = columns.iter().map(|c| c.to_string()).collect();
        self
    }

    pub fn with_hyperparams(mut self, hyperparams: Hyperparams) -> Self {
        self.hyperparams = hyperparams;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ctx = format!("base `{}`", self.name);
        if self.name.is_empty() {
            return Err(Error::ConfigInvalid("base model name must be non-empty".into()));
        }
        match self.kind {
            BaseKind::Passthrough => {
                self.hyperparams.check_keys(&["column"], &ctx)?;
                if !self.lags.is_empty() || !self.exog_columns.is_empty() {
                    return Err(Error::ConfigInvalid(format!("{ctx}: passthrough takes no lags or exog_columns")));
                }
                if self.source_column()?.is_none() {
                    return Err(Error::ConfigInvalid(format!("{ctx}: passthrough needs hyperparams.column")));
                }
            }
            BaseKind::LinearAr | BaseKind::BoostedTrees => {
                if self.lags.is_empty() {
                    return Err(Error::ConfigInvalid(format!("{ctx}: lags must be non-empty")));
                }
                if self.lags[0] == 0 || self.lags.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::ConfigInvalid(format!(
                        "{ctx}: lags must be positive and strictly increasing, got {:?}",
                        self.lags
                    )));
                }
                let names = self.feature_names();
                for (i, n) in names.iter().enumerate() {
                    if names[..i].contains(n) {
                        return Err(Error::DuplicateColumn(n.clone()));
                    }
                }
                if self.kind == BaseKind::LinearAr {
                    self.hyperparams.check_keys(&["ridge", "intercept"], &ctx)?;
                    let ridge = self.ridge()?;
                    if !(ridge >= 0.0) || !ridge.is_finite() {
                        return Err(Error::ConfigInvalid(format!("{ctx}: ridge must be >= 0")));
                    }
                    self.intercept()?;
                } else {
                    self.hyperparams.check_keys(&GBDTConfig::KEYS, &ctx)?;
                    self.gbdt_config()?.validate()?;
                }
            }
        }
        Ok(())
    }

    pub fn max_lag(&self) -> usize {
        self.lags.iter().copied().max().unwrap_or(0)
    }

    /// Names of the side-information columns this model consumes: `lag{k}`
    /// for each lag, then the exogenous columns. Empty for passthrough.
    pub fn feature_names(&self) -> Vec<String> {
        self.lags
            .iter()
            .map(|k| format!("lag{k}"))
            .chain(self.exog_columns.iter().cloned())
            .collect()
    }

    pub fn source_column(&self) -> Result<Option<&str>> {
        self.hyperparams.str("column")
    }

    fn ridge(&self) -> Result<f64> {
        self.hyperparams.f64_or("ridge", DEFAULT_RIDGE)
    }

    fn intercept(&self) -> Result<bool> {
        self.hyperparams.bool_or("intercept", false)
    }

    fn gbdt_config(&self) -> Result<GBDTConfig> {
        self.hyperparams.to_config(&GBDTConfig::KEYS, &format!("base `{}`", self.name))
    }
}

/// Feature rows paired with the targets they predict.
#[derive(Debug, Clone, PartialEq)]
pub struct LaggedFeatures {
    pub features: FeatureMatrix,
    pub targets: Vec<f64>,
    /// Frame row of the first feature row.
    pub first_row: usize,
}

/// Side-information rows `start..end` for `spec`: lagged targets strictly
/// before each row, exogenous values at the row.
pub fn side_info_rows(frame: &TimeSeriesFrame, spec: &BasePredictorSpec, start: usize, end: usize) -> Result<FeatureMatrix> {
    if end > frame.len() || start > end {
        return Err(Error::IndexOutOfRange(format!("rows {start}..{end} of a {}-row frame", frame.len())));
    }
    if start < spec.max_lag() {
        return Err(Error::SeriesTooShort {
            needed: spec.max_lag() + 1,
            got: start + 1,
        });
    }
    let values = frame.values();
    let side = frame.side_info();
    let mut cols: Vec<(String, Vec<f64>)> = spec
        .lags
        .iter()
        .map(|&k| (format!("lag{k}"), (start..end).map(|t| values[t - k]).collect()))
        .collect();
    for name in &spec.exog_columns {
        let j = side
            .column_index(name)
            .ok_or_else(|| Error::UnknownColumn(name.clone()))?;
        cols.push((name.clone(), (start..end).map(|t| side.row(t)[j]).collect()));
    }
    if cols.is_empty() {
        return Ok(FeatureMatrix::empty(end - start));
    }
    FeatureMatrix::from_columns(cols)
}

/// Model inputs for rows `start..end`. Identical to [`side_info_rows`]
/// except for passthrough models, whose single input is the source column.
pub fn input_rows(frame: &TimeSeriesFrame, spec: &BasePredictorSpec, start: usize, end: usize) -> Result<FeatureMatrix> {
    match spec.kind {
        BaseKind::Passthrough => {
            let col = spec
                .source_column()?
                .ok_or_else(|| Error::ConfigInvalid(format!("base `{}` has no source column", spec.name)))?;
            let values = frame.side_info().column(col)?;
            if end > values.len() || start > end {
                return Err(Error::IndexOutOfRange(format!("rows {start}..{end} of a {}-row frame", values.len())));
            }
            FeatureMatrix::from_columns(vec![(col.to_string(), values[start..end].to_vec())])
        }
        _ => side_info_rows(frame, spec, start, end),
    }
}

/// All usable training rows of `frame` for `spec`: rows without enough
/// history for the largest lag are dropped.
pub fn make_features(frame: &TimeSeriesFrame, spec: &BasePredictorSpec) -> Result<LaggedFeatures> {
    let first = spec.max_lag();
    if frame.len() <= first {
        return Err(Error::SeriesTooShort {
            needed: first + 1,
            got: frame.len(),
        });
    }
    Ok(LaggedFeatures {
        features: input_rows(frame, spec, first, frame.len())?,
        targets: frame.values()[first..].to_vec(),
        first_row: first,
    })
}

/// Closed-form ridge regression `β = (XᵀX + ridge·I)⁻¹Xᵀy`.
pub fn fit_linear_ar(features: &Matrix, targets: &[f64], ridge: f64) -> Result<Vec<f64>> {
    if features.rows() != targets.len() {
        return Err(Error::LengthMismatch {
            left: features.rows(),
            right: targets.len(),
        });
    }
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(Error::ConfigInvalid(format!("ridge must be >= 0, got {ridge}")));
    }
    if features.rows() == 0 {
        return Err(Error::EmptyData("no training rows".into()));
    }
    let chol = Cholesky::new(&features.gram(ridge)).ok_or(Error::SingularDesign)?;
    if ridge == 0.0 && chol.pivot_ratio() < SINGULAR_RCOND {
        return Err(Error::SingularDesign);
    }
    Ok(chol.solve(&features.t_mul_vec(targets)))
}

/// One-step-ahead prediction from a single feature row.
pub trait Forecaster {
    fn n_features(&self) -> usize;
    fn predict_row(&self, row: &[f64]) -> Result<f64>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearArModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
}

impl Forecaster for LinearArModel {
    fn n_features(&self) -> usize {
        self.coefficients.len()
    }

    fn predict_row(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.coefficients.len() {
            return Err(Error::DimensionMismatch(format!(
                "linear model expects {} features, got {}",
                self.coefficients.len(),
                row.len()
            )));
        }
        Ok(self.intercept + dot(&self.coefficients, row))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BaseModel {
    LinearAr(LinearArModel),
    BoostedTrees(BoostedRegressor),
    Passthrough,
}

impl Forecaster for BaseModel {
    fn n_features(&self) -> usize {
        match self {
            BaseModel::LinearAr(m) => m.n_features(),
            BaseModel::BoostedTrees(m) => m.n_features,
            BaseModel::Passthrough => 1,
        }
    }

    fn predict_row(&self, row: &[f64]) -> Result<f64> {
        match self {
            BaseModel::LinearAr(m) => m.predict_row(row),
            BaseModel::BoostedTrees(m) => m.predict_row(row),
            BaseModel::Passthrough => match row {
                [v] => Ok(*v),
                _ => Err(Error::DimensionMismatch(format!("passthrough expects 1 feature, got {}", row.len()))),
            },
        }
    }
}

/// Row-wise predictions.
pub fn predict_base<F: Forecaster + ?Sized>(model: &F, features: &Matrix) -> Result<Vec<f64>> {
    if features.rows() > 0 && features.cols() != model.n_features() {
        return Err(Error::DimensionMismatch(format!(
            "model expects {} features, got {}",
            model.n_features(),
            features.cols()
        )));
    }
    (0..features.rows()).map(|r| model.predict_row(features.row(r))).collect()
}

/// Fits `spec` on every usable row of `frame`.
pub fn fit_base(frame: &TimeSeriesFrame, spec: &BasePredictorSpec) -> Result<BaseModel> {
    spec.validate()?;
    match spec.kind {
        BaseKind::Passthrough => {
            input_rows(frame, spec, 0, 0)?;
            Ok(BaseModel::Passthrough)
        }
        BaseKind::LinearAr => {
            let data = make_features(frame, spec)?;
            let x = data.features.matrix();
            if spec.intercept()? {
                let mut rows = Vec::with_capacity(x.rows());
                for r in 0..x.rows() {
                    let mut row = x.row(r).to_vec();
                    row.push(1.0);
                    rows.push(row);
                }
                let mut beta = fit_linear_ar(&Matrix::from_rows(&rows)?, &data.targets, spec.ridge()?)?;
                let intercept = beta.pop().expect("constant column present");
                Ok(BaseModel::LinearAr(LinearArModel {
                    coefficients: beta,
                    intercept,
                }))
            } else {
                Ok(BaseModel::LinearAr(LinearArModel {
                    coefficients: fit_linear_ar(x, &data.targets, spec.ridge()?)?,
                    intercept: 0.0,
                }))
            }
        }
        BaseKind::BoostedTrees => {
            let data = make_features(frame, spec)?;
            Ok(BaseModel::BoostedTrees(gbdt::fit_base(
                data.features.matrix(),
                &data.targets,
                &spec.gbdt_config()?,
            )?))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamValue;

    fn frame(values: Vec<f64>) -> TimeSeriesFrame {
        let n = values.len();
        TimeSeriesFrame::new(values, FeatureMatrix::empty(n)).unwrap()
    }

    #[test]
    fn lag_one_features() {
        let f = frame(vec![1.0, 2.0, 3.0, 4.0]);
        let d = make_features(&f, &BasePredictorSpec::linear_ar("ar", vec![1])).unwrap();
        assert_eq!(d.features.matrix().as_slice(), &[1.0, 2.0, 3.0]);
        assert_eq!(d.targets, vec![2.0, 3.0, 4.0]);
        assert_eq!(d.first_row, 1);
    }

    #[test]
    fn long_lag_drops_rows() {
        let f = frame((0..10).map(f64::from).collect());
        let d = make_features(&f, &BasePredictorSpec::linear_ar("ar", vec![1, 7])).unwrap();
        assert_eq!(d.features.n_rows(), 3);
        assert_eq!(d.features.names(), &["lag1", "lag7"]);
        let short = frame(vec![1.0; 7]);
        assert!(matches!(
            make_features(&short, &BasePredictorSpec::linear_ar("ar", vec![7])),
            Err(Error::SeriesTooShort { .. })
        ));
    }

    #[test]
    fn exog_column_appended() {
        let side = FeatureMatrix::from_columns(vec![("dow".into(), vec![0.0, 1.0, 2.0, 3.0])]).unwrap();
        let f = TimeSeriesFrame::new(vec![1.0, 2.0, 3.0, 4.0], side).unwrap();
        let spec = BasePredictorSpec::linear_ar("ar", vec![1]).with_exog(&["dow"]);
        let d = make_features(&f, &spec).unwrap();
        assert_eq!(d.features.n_cols(), 2);
        assert_eq!(d.features.row(0), &[1.0, 1.0]);
    }

    #[test]
    fn no_future_values_in_features() {
        let values: Vec<f64> = (0..40).map(|t| (t as f64 * 0.7).sin()).collect();
        let spec = BasePredictorSpec::linear_ar("ar", vec![1, 2, 7]);
        let clean = side_info_rows(&frame(values.clone()), &spec, 7, 40).unwrap();
        for t in 7..40 {
            let mut poisoned = values.clone();
            for v in &mut poisoned[t..] {
                *v = 1e12;
            }
            let rows = side_info_rows(&frame(poisoned), &spec, 7, t + 1).unwrap();
            assert_eq!(rows.row(t - 7), clean.row(t - 7), "row {t}");
            assert!(rows.row(t - 7).iter().all(|v| *v != 1e12));
        }
    }

    #[test]
    fn exact_linear_fit() {
        let x = Matrix::from_vec(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        let beta = fit_linear_ar(&x, &[2.0, 4.0, 6.0], 0.0).unwrap();
        assert!((beta[0] - 2.0).abs() < 1e-12);
        let model = LinearArModel {
            coefficients: beta,
            intercept: 0.0,
        };
        let p = predict_base(&model, &x).unwrap();
        for (a, b) in p.iter().zip([2.0, 4.0, 6.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        let zero = LinearArModel {
            coefficients: vec![0.0],
            intercept: 0.0,
        };
        assert_eq!(predict_base(&zero, &x).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn heavy_ridge_shrinks_to_zero() {
        let x = Matrix::from_vec(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        let beta = fit_linear_ar(&x, &[2.0, 4.0, 6.0], 1e9).unwrap();
        assert!(beta[0].abs() < 1e-6);
    }

    #[test]
    fn singular_design_without_ridge() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]]).unwrap();
        assert!(matches!(fit_linear_ar(&x, &[1.0, 2.0, 3.0], 0.0), Err(Error::SingularDesign)));
        assert!(fit_linear_ar(&x, &[1.0, 2.0, 3.0], 1e-3).is_ok());
    }

    #[test]
    fn intercept_option() {
        let f = frame((0..30).map(|t| 5.0 + if t % 2 == 0 { 1.0 } else { -1.0 }).collect());
        let spec = BasePredictorSpec::linear_ar("ar", vec![1])
            .with_hyperparams(Hyperparams::new().set("intercept", ParamValue::Bool(true)).set("ridge", ParamValue::Float(0.0)));
        let BaseModel::LinearAr(m) = fit_base(&f, &spec).unwrap() else { panic!() };
        // y_t = 10 − y_{t−1}
        assert!((m.coefficients[0] + 1.0).abs() < 1e-9);
        assert!((m.intercept - 10.0).abs() < 1e-8);
    }

    #[test]
    fn boosted_base_fits_step() {
        let values: Vec<f64> = (0..200).map(|t| if (t / 10) % 2 == 0 { 0.0 } else { 5.0 }).collect();
        let side = FeatureMatrix::from_columns(vec![("phase".into(), (0..200).map(|t| ((t / 10) % 2) as f64).collect())]).unwrap();
        let f = TimeSeriesFrame::new(values.clone(), side).unwrap();
        let spec = BasePredictorSpec::boosted_trees("gb", vec![1]).with_exog(&["phase"]);
        let model = fit_base(&f, &spec).unwrap();
        let d = make_features(&f, &spec).unwrap();
        let p = predict_base(&model, d.features.matrix()).unwrap();
        for (a, b) in p.iter().zip(&d.targets) {
            assert!((a - b).abs() < 1e-3, "{a} vs {b}");
        }
        assert_eq!(fit_base(&f, &spec).unwrap(), model);
    }

    #[test]
    fn spec_validation() {
        assert!(BasePredictorSpec::linear_ar("a", vec![]).validate().is_err());
        assert!(BasePredictorSpec::linear_ar("a", vec![2, 1]).validate().is_err());
        assert!(BasePredictorSpec::linear_ar("a", vec![0]).validate().is_err());
        assert!(BasePredictorSpec::linear_ar("a", vec![1, 2]).validate().is_ok());
        let typo = BasePredictorSpec::linear_ar("a", vec![1]).with_hyperparams(Hyperparams::new().set("rige", ParamValue::Float(1.0)));
        assert!(typo.validate().is_err());
        assert!(BasePredictorSpec::passthrough("p", "y1").validate().is_ok());
        let mut bad = BasePredictorSpec::passthrough("p", "y1");
        bad.lags = vec![1];
        assert!(bad.validate().is_err());
    }

    #[test]
    fn passthrough_reads_column() {
        let side = FeatureMatrix::from_columns(vec![("y1".into(), vec![0.5, 1.5, 2.5])]).unwrap();
        let f = TimeSeriesFrame::new(vec![1.0, 2.0, 3.0], side).unwrap();
        let spec = BasePredictorSpec::passthrough("p", "y1");
        let model = fit_base(&f, &spec).unwrap();
        let x = input_rows(&f, &spec, 1, 3).unwrap();
        assert_eq!(predict_base(&model, x.matrix()).unwrap(), vec![1.5, 2.5]);
        assert_eq!(side_info_rows(&f, &spec, 1, 3).unwrap().n_cols(), 0);
    }
}
