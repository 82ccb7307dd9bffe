//! Two-phase ensemble training and evaluation.
//!
//! Offline phase: base models are fitted on `[0, t1)`, their one-step-ahead
//! predictions are collected on `[t1, t_end)`, and the meta-learner is fitted
//! on those predictions against the superset side information of the same
//! rows. Only rows before `t_end` are ever passed to this phase.
//!
//! Online phase: base models are refitted on `[0, t_end)`, the frozen
//! meta-learner produces a weight vector for every test row in
//! `[t_end, t2)`, and the ensemble forecast is `wᵀŷ`.

mod config;
mod output;

use serde::{Deserialize, Serialize};

pub use config::{DataSource, ExperimentConfig, MetaKind, DEFAULT_TEST_LEN};
pub use output::{write_outputs, OutputFiles, CUMERR_FILE, MODEL_FILE, PREDICTIONS_FILE, SUMMARY_FILE};

use crate::baselearners::{self, fit_base, fit_linear_ar, predict_base, BaseModel, BasePredictorSpec};
use crate::constraints::ConstraintKind;
use crate::datagen::{self, SyntheticSpec};
use crate::error::{Error, Result};
use crate::frame::{build_superset_side_info, FeatureMatrix, PredictionBundle, SplitSpec, TimeSeriesFrame, WeightVector};
use crate::gbdt::{self, BoostedMetaModel};
use crate::linalg::dot;
use crate::metrics::{cumulative_normalized_curve, total_squared_loss, ErrorCurve};
use crate::mlp::{self, MLPModel};

/// Ridge floor of the conventional linear stacker.
pub const CONVENTIONAL_RIDGE: f64 = 1e-8;

/// Loads the experiment's data. Synthetic frames include the component
/// columns referenced by passthrough bases.
pub fn load_frame(config: &ExperimentConfig) -> Result<TimeSeriesFrame> {
    match &config.data {
        DataSource::Csv { path } => TimeSeriesFrame::read_csv_path(path),
        DataSource::Synthetic {
            mix,
            length,
            seed,
            noise_sigma,
        } => {
            let data = datagen::generate(&SyntheticSpec {
                length: *length,
                mix: *mix,
                seed: *seed,
                noise_sigma: *noise_sigma,
            })?;
            let wanted = config.passthrough_columns();
            if wanted.is_empty() {
                return Ok(data.frame);
            }
            let full = data.frame_with_components()?;
            let side = full.side_info();
            let keep: Vec<String> = side
                .names()
                .iter()
                .filter(|n| !datagen::COMPONENT_COLUMNS.contains(&n.as_str()) || wanted.contains(n))
                .cloned()
                .collect();
            TimeSeriesFrame::new(full.values().to_vec(), side.select(&keep)?)
        }
    }
}

/// Indicator expansion of an integer-valued column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneHot {
    pub column: String,
    pub levels: Vec<f64>,
}

impl OneHot {
    fn fit(column: &str, values: &[f64]) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| v.fract() != 0.0) {
            return Err(Error::ConfigInvalid(format!(
                "one_hot column `{column}` has non-integer value {v}"
            )));
        }
        let mut levels = values.to_vec();
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        Ok(Self {
            column: column.to_string(),
            levels,
        })
    }

    fn expand(&self, values: &[f64]) -> Vec<(String, Vec<f64>)> {
        self.levels
            .iter()
            .map(|l| {
                (
                    format!("{}={l}", self.column),
                    values.iter().map(|v| if v == l { 1.0 } else { 0.0 }).collect(),
                )
            })
            .collect()
    }
}

/// How the meta-learner's side information is assembled from a frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideInfoPlan {
    pub bases: Vec<BasePredictorSpec>,
    pub extras: Vec<String>,
    pub one_hot: Vec<OneHot>,
}

impl SideInfoPlan {
    /// Resolves `meta_features` against the frame; one-hot levels are taken
    /// from `frame` rows `[0, fit_end)`.
    fn new(config: &ExperimentConfig, frame: &TimeSeriesFrame, fit_end: usize) -> Result<Self> {
        let passthrough = config.passthrough_columns();
        let extras = match &config.meta_features {
            Some(names) => names.clone(),
            None => frame
                .side_info()
                .names()
                .iter()
                .filter(|n| !passthrough.contains(n))
                .cloned()
                .collect(),
        };
        for name in &extras {
            if frame.side_info().column_index(name).is_none() {
                return Err(Error::UnknownColumn(name.clone()));
            }
        }
        let one_hot = config
            .one_hot
            .iter()
            .map(|c| OneHot::fit(c, &frame.side_info().column(c)?[..fit_end]))
            .collect::<Result<_>>()?;
        Ok(Self {
            bases: config.bases.clone(),
            extras,
            one_hot,
        })
    }

    /// Superset side information for rows `start..end`.
    pub fn build(&self, frame: &TimeSeriesFrame, start: usize, end: usize) -> Result<FeatureMatrix> {
        let per_base = self
            .bases
            .iter()
            .map(|b| baselearners::side_info_rows(frame, b, start, end))
            .collect::<Result<Vec<_>>>()?;
        let mut extra_cols = Vec::new();
        for name in &self.extras {
            let values = frame.side_info().column(name)?[start..end].to_vec();
            match self.one_hot.iter().find(|o| &o.column == name) {
                Some(enc) => extra_cols.extend(enc.expand(&values)),
                None => extra_cols.push((name.clone(), values)),
            }
        }
        let extras = if extra_cols.is_empty() {
            None
        } else {
            Some(FeatureMatrix::from_columns(extra_cols)?)
        };
        let refs: Vec<&FeatureMatrix> = per_base.iter().collect();
        build_superset_side_info(&refs, extras.as_ref())
    }
}

/// A trained combiner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MetaModel {
    Gbdt(BoostedMetaModel),
    Mlp(MLPModel),
    /// Stacking weights from least squares on base predictions.
    ConventionalLinear { coefficients: Vec<f64> },
    /// Stacking network on base predictions; produces no weight vector.
    ConventionalMlp(MLPModel),
    BestBase { index: usize, n_models: usize },
    UniformAverage { n_models: usize },
}

impl MetaModel {
    /// Weight vector for one row, when the meta combines linearly.
    pub fn weights(&self, side_info_row: &[f64]) -> Result<Option<WeightVector>> {
        Ok(match self {
            MetaModel::Gbdt(m) => Some(gbdt::predict_weights(m, side_info_row)?),
            MetaModel::Mlp(m) => Some(mlp::predict_weights(m, side_info_row)?),
            MetaModel::ConventionalLinear { coefficients } => {
                Some(WeightVector::new(coefficients.clone(), ConstraintKind::Unconstrained)?)
            }
            MetaModel::ConventionalMlp(_) => None,
            MetaModel::BestBase { index, n_models } => {
                let mut w = vec![0.0; *n_models];
                w[*index] = 1.0;
                Some(WeightVector::new(w, ConstraintKind::Convex)?)
            }
            MetaModel::UniformAverage { n_models } => Some(WeightVector::new(
                vec![1.0 / *n_models as f64; *n_models],
                ConstraintKind::Convex,
            )?),
        })
    }

    /// Weights (if any) and the ensemble forecast for one row.
    pub fn combine(&self, side_info_row: &[f64], base_preds: &[f64]) -> Result<(Option<WeightVector>, f64)> {
        if let MetaModel::ConventionalMlp(m) = self {
            return Ok((None, mlp::predict_value(m, base_preds)?));
        }
        let w = self.weights(side_info_row)?.expect("linear metas produce weights");
        if w.len() != base_preds.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {} base predictions",
                w.len(),
                base_preds.len()
            )));
        }
        let yhat = w.combine(base_preds);
        Ok((Some(w), yhat))
    }
}

/// Least-squares stacking coefficients (ridge floor 1e-8, no intercept).
pub fn fit_conventional_linear(base_preds: &PredictionBundle, targets: &[f64]) -> Result<Vec<f64>> {
    fit_linear_ar(base_preds.matrix(), targets, CONVENTIONAL_RIDGE)
}

/// Fits the conventional linear stacker and applies it to a test bundle.
pub fn run_conventional_linear(
    base_preds_train: &PredictionBundle,
    targets_train: &[f64],
    base_preds_test: &PredictionBundle,
) -> Result<Vec<f64>> {
    if base_preds_train.n_models() != base_preds_test.n_models() {
        return Err(Error::DimensionMismatch(format!(
            "{} training models vs {} test models",
            base_preds_train.n_models(),
            base_preds_test.n_models()
        )));
    }
    let beta = fit_conventional_linear(base_preds_train, targets_train)?;
    Ok((0..base_preds_test.n_rows())
        .map(|r| dot(&beta, base_preds_test.row(r)))
        .collect())
}

/// Everything the offline phase produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineOutput {
    pub meta: MetaModel,
    /// Base predictions on the meta-training rows `[t1, t_end)`.
    pub harvested: PredictionBundle,
    /// Superset side information on the same rows.
    pub side_info: FeatureMatrix,
    pub targets: Vec<f64>,
    pub plan: SideInfoPlan,
    /// Base models fitted on `[0, t1)`.
    pub base_models: Vec<BaseModel>,
}

fn resolve_split(config: &ExperimentConfig, len: usize) -> Result<SplitSpec> {
    let split = match config.split {
        Some(s) => s,
        None => SplitSpec::trailing(len, DEFAULT_TEST_LEN)?,
    };
    split.validate(len)?;
    let needed = config.bases.iter().map(|b| b.max_lag()).max().unwrap_or(0);
    if needed >= split.t1 {
        return Err(Error::ConfigInvalid(format!(
            "t1 = {} leaves no base-training rows for a maximum lag of {needed}",
            split.t1
        )));
    }
    Ok(split)
}

fn base_predictions(
    models: &[BaseModel],
    specs: &[BasePredictorSpec],
    frame: &TimeSeriesFrame,
    start: usize,
    end: usize,
) -> Result<PredictionBundle> {
    let columns = models
        .iter()
        .zip(specs)
        .map(|(m, s)| predict_base(m, baselearners::input_rows(frame, s, start, end)?.matrix()))
        .collect::<Result<Vec<_>>>()?;
    PredictionBundle::from_columns(specs.iter().map(|s| s.name.clone()).collect(), &columns)
}

/// Offline phase. Rows at or beyond `t_end` are cut off before anything is
/// computed, so test targets cannot influence the result.
pub fn run_offline_phase(config: &ExperimentConfig, frame: &TimeSeriesFrame) -> Result<OfflineOutput> {
    config.validate()?;
    let split = resolve_split(config, frame.len())?;
    let offline = frame.slice(0, split.t_end);

    let base_train = offline.slice(0, split.t1);
    let base_models = config
        .bases
        .iter()
        .map(|spec| fit_base(&base_train, spec))
        .collect::<Result<Vec<_>>>()?;
    let harvested = base_predictions(&base_models, &config.bases, &offline, split.t1, split.t_end)?;
    let plan = SideInfoPlan::new(config, &offline, split.t_end)?;
    let side_info = plan.build(&offline, split.t1, split.t_end)?;
    let targets = offline.values()[split.t1..].to_vec();

    let meta = match config.meta {
        MetaKind::Gbdt => MetaModel::Gbdt(gbdt::fit_meta(
            &side_info,
            &harvested,
            &targets,
            config.constraint.expect("validated"),
            &config.gbdt_config()?,
        )?),
        MetaKind::Mlp => MetaModel::Mlp(mlp::fit_meta(
            &side_info,
            &harvested,
            &targets,
            config.constraint.expect("validated"),
            &config.mlp_config()?,
        )?),
        MetaKind::ConventionalLinear => MetaModel::ConventionalLinear {
            coefficients: fit_conventional_linear(&harvested, &targets)?,
        },
        MetaKind::ConventionalMlp => {
            MetaModel::ConventionalMlp(mlp::fit_conventional(harvested.matrix(), &targets, &config.mlp_config()?)?)
        }
        MetaKind::BestBase => {
            let mse = |i: usize| -> f64 {
                (0..harvested.n_rows())
                    .map(|r| (targets[r] - harvested.row(r)[i]).powi(2))
                    .sum::<f64>()
            };
            let index = (0..harvested.n_models())
                .fold(0, |best, i| if mse(i) < mse(best) { i } else { best });
            MetaModel::BestBase {
                index,
                n_models: harvested.n_models(),
            }
        }
        MetaKind::UniformAverage => MetaModel::UniformAverage {
            n_models: harvested.n_models(),
        },
    };
    Ok(OfflineOutput {
        meta,
        harvested,
        side_info,
        targets,
        plan,
        base_models,
    })
}

/// One test step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based time index.
    pub t: usize,
    pub y: f64,
    pub base_preds: Vec<f64>,
    pub weights: Option<Vec<f64>>,
    pub ensemble: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub model_names: Vec<String>,
    pub records: Vec<StepRecord>,
    /// Last point of the cumulative normalized error curve.
    pub final_cumulative_error: f64,
    pub total_squared_error: f64,
    pub cumulative_curve: ErrorCurve,
    pub split: SplitSpec,
    pub meta: MetaKind,
    pub constraint: Option<ConstraintKind>,
    pub config_hash: String,
    pub seed: u64,
}

/// Online phase: refit bases on `[0, t_end)` and combine on the test rows.
pub fn run_online_phase(config: &ExperimentConfig, frame: &TimeSeriesFrame, offline: &OfflineOutput) -> Result<ExperimentResult> {
    let split = resolve_split(config, frame.len())?;
    let frame = frame.slice(0, split.t2);
    let train = frame.slice(0, split.t_end);
    let models = config
        .bases
        .iter()
        .map(|spec| fit_base(&train, spec))
        .collect::<Result<Vec<_>>>()?;
    let preds = base_predictions(&models, &config.bases, &frame, split.t_end, split.t2)?;
    let side = offline.plan.build(&frame, split.t_end, split.t2)?;
    if side.names() != offline.side_info.names() {
        return Err(Error::DimensionMismatch(
            "test side information columns differ from the meta-training columns".into(),
        ));
    }

    let mut records = Vec::with_capacity(split.test_len());
    for r in 0..preds.n_rows() {
        let row = split.t_end + r;
        let (w, ensemble) = offline.meta.combine(side.row(r), preds.row(r))?;
        records.push(StepRecord {
            t: row + 1,
            y: frame.values()[row],
            base_preds: preds.row(r).to_vec(),
            weights: w.map(WeightVector::into_vec),
            ensemble,
        });
    }
    let y: Vec<f64> = records.iter().map(|s| s.y).collect();
    let yhat: Vec<f64> = records.iter().map(|s| s.ensemble).collect();
    let curve = cumulative_normalized_curve(&y, &yhat, split.t_end + 1)?;
    Ok(ExperimentResult {
        model_names: preds.model_names().to_vec(),
        records,
        final_cumulative_error: curve.last().expect("non-empty test window"),
        total_squared_error: total_squared_loss(&y, &yhat)?,
        cumulative_curve: curve,
        split,
        meta: config.meta,
        constraint: config.constraint,
        config_hash: config.hash(),
        seed: config.seed,
    })
}

/// Both phases on an already loaded frame.
pub fn run_experiment_on(config: &ExperimentConfig, frame: &TimeSeriesFrame) -> Result<(OfflineOutput, ExperimentResult)> {
    let offline = run_offline_phase(config, frame)?;
    let result = run_online_phase(config, frame, &offline)?;
    Ok((offline, result))
}

/// Loads the data and runs both phases.
pub fn run_experiment(config: &ExperimentConfig) -> Result<(OfflineOutput, ExperimentResult)> {
    run_experiment_on(config, &load_frame(config)?)
}
