//! Histogram gradient-boosted regression trees.
//!
//! The same engine backs two roles:
//!
//! * a single-output squared-loss forecaster ([`fit_base`]), used as a base
//!   model, and
//! * the multi-output meta-learner ([`fit_meta`]) that grows one tree per
//!   base model per round on the constraint-aware gradients of
//!   [`meta_grad_hess`], producing raw scores `p` that are mapped to weights
//!   through the constraint transform.
//!
//! Hessians are floored at [`HESSIAN_FLOOR`] before they enter split gains and
//! leaf values, since the affine and convex objectives are not convex in `p`.

mod binning;
mod objective;
mod tree;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use binning::BinMapper;
pub use objective::{meta_grad_hess, meta_loss, HESSIAN_FLOOR};
pub use tree::{Node, Tree};

use crate::constraints::{transform, ConstraintKind};
use crate::error::{Error, Result};
use crate::frame::{FeatureMatrix, PredictionBundle, WeightVector};
use crate::linalg::Matrix;
use objective::meta_grad_hess_into;
use tree::{grow_tree, GrowParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GBDTConfig {
    pub num_rounds: usize,
    pub learning_rate: f64,
    pub max_leaves: usize,
    pub min_samples_leaf: usize,
    pub l2_lambda: f64,
    pub histogram_bins: usize,
    pub seed: u64,
    /// Fraction of rows drawn (per round, seeded) for each tree; 1.0 keeps all.
    pub subsample: f64,
}

impl GBDTConfig {
    /// Field names accepted from key-value hyperparameter maps.
    pub const KEYS: [&'static str; 8] = [
        "num_rounds",
        "learning_rate",
        "max_leaves",
        "min_samples_leaf",
        "l2_lambda",
        "histogram_bins",
        "seed",
        "subsample",
    ];
}

impl Default for GBDTConfig {
    fn default() -> Self {
        Self {
            num_rounds: 500,
            learning_rate: 0.05,
            max_leaves: 31,
            min_samples_leaf: 5,
            l2_lambda: 1.0,
            histogram_bins: 255,
            seed: 0,
            subsample: 1.0,
        }
    }
}

impl GBDTConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ConfigInvalid(format!("gbdt: {m}")));
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad("learning_rate must be in (0, 1]");
        }
        if self.max_leaves == 0 {
            return bad("max_leaves must be >= 1");
        }
        if self.min_samples_leaf < 1 {
            return bad("min_samples_leaf must be >= 1");
        }
        if !(self.l2_lambda >= 0.0) {
            return bad("l2_lambda must be nonnegative");
        }
        if !(2..=255).contains(&self.histogram_bins) {
            return bad("histogram_bins must be in [2, 255]");
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad("subsample must be in (0, 1]");
        }
        Ok(())
    }

    fn grow_params(&self) -> GrowParams {
        GrowParams {
            max_leaves: self.max_leaves,
            min_samples_leaf: self.min_samples_leaf,
            l2_lambda: self.l2_lambda,
            learning_rate: self.learning_rate,
        }
    }

    fn round_rows(&self, n: usize, round: usize, output: usize) -> Vec<usize> {
        if self.subsample >= 1.0 {
            return (0..n).collect();
        }
        let stream = (round as u64) << 16 | output as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        let rows: Vec<usize> = (0..n).filter(|_| rng.gen::<f64>() < self.subsample).collect();
        if rows.is_empty() {
            (0..n).collect()
        } else {
            rows
        }
    }
}

fn check_features(features: &Matrix) -> Result<()> {
    if !features.all_finite() {
        return Err(Error::NonFinite("features".into()));
    }
    Ok(())
}

/// Single-output squared-loss boosted regressor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedRegressor {
    pub init_score: f64,
    pub trees: Vec<Tree>,
    pub n_features: usize,
    /// Training MSE after each round.
    pub loss_history: Vec<f64>,
}

impl BoostedRegressor {
    pub fn predict_row(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.n_features {
            return Err(Error::DimensionMismatch(format!(
                "row has {} features, model expects {}",
                row.len(),
                self.n_features
            )));
        }
        Ok(self.init_score + self.trees.iter().map(|t| t.predict(row)).sum::<f64>())
    }

    pub fn predict(&self, features: &Matrix) -> Result<Vec<f64>> {
        (0..features.rows()).map(|r| self.predict_row(features.row(r))).collect()
    }
}

/// Fits a squared-loss boosted regressor; the initial score is the target mean.
pub fn fit_base(features: &Matrix, targets: &[f64], config: &GBDTConfig) -> Result<BoostedRegressor> {
    config.validate()?;
    check_features(features)?;
    let n = features.rows();
    if n != targets.len() {
        return Err(Error::LengthMismatch { left: n, right: targets.len() });
    }
    if n == 0 || n < 2 * config.min_samples_leaf {
        return Err(Error::EmptyData(format!(
            "{n} rows, need at least {}",
            2 * config.min_samples_leaf.max(1)
        )));
    }
    let mapper = BinMapper::fit(features, config.histogram_bins);
    let bins = mapper.bin_matrix(features);
    let params = config.grow_params();
    let init = targets.iter().sum::<f64>() / n as f64;
    let mut pred = vec![init; n];
    let mut grad = vec![0.0; n];
    let hess = vec![1.0; n];
    let mut trees = Vec::with_capacity(config.num_rounds);
    let mut loss_history = Vec::with_capacity(config.num_rounds);
    for round in 0..config.num_rounds {
        for i in 0..n {
            grad[i] = pred[i] - targets[i];
        }
        let rows = config.round_rows(n, round, 0);
        let tree = grow_tree(rows, &bins, &mapper, &grad, &hess, &params);
        for (i, p) in pred.iter_mut().enumerate() {
            *p += tree.predict(features.row(i));
        }
        trees.push(tree);
        let mse = pred.iter().zip(targets).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / n as f64;
        if !mse.is_finite() {
            return Err(Error::NonFiniteLoss { round });
        }
        loss_history.push(mse);
    }
    Ok(BoostedRegressor {
        init_score: init,
        trees,
        n_features: features.cols(),
        loss_history,
    })
}

/// Multi-output meta-learner: one forest per base model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedMetaModel {
    pub forests: Vec<Vec<Tree>>,
    pub init_scores: Vec<f64>,
    pub kind: ConstraintKind,
    pub feature_names: Vec<String>,
    /// Mean ensemble loss over the training rows after each round.
    pub loss_history: Vec<f64>,
}

impl BoostedMetaModel {
    /// Model with uniform initial scores and no trees.
    pub fn untrained(n_models: usize, kind: ConstraintKind, feature_names: Vec<String>) -> Self {
        Self {
            forests: vec![Vec::new(); n_models],
            init_scores: vec![kind.uniform_raw(n_models); n_models],
            kind,
            feature_names,
            loss_history: Vec::new(),
        }
    }

    pub fn n_models(&self) -> usize {
        self.init_scores.len()
    }

    pub fn n_rounds(&self) -> usize {
        self.forests.first().map_or(0, Vec::len)
    }

    pub fn raw_scores(&self, side_info_row: &[f64]) -> Result<Vec<f64>> {
        if side_info_row.len() != self.feature_names.len() {
            return Err(Error::DimensionMismatch(format!(
                "side-information row has {} features, model expects {}",
                side_info_row.len(),
                self.feature_names.len()
            )));
        }
        Ok(self
            .forests
            .iter()
            .zip(&self.init_scores)
            .map(|(forest, init)| init + forest.iter().map(|t| t.predict(side_info_row)).sum::<f64>())
            .collect())
    }
}

/// `τ(p)` with `p_i = init_i + Σ_rounds tree_i(s)`.
pub fn predict_weights(model: &BoostedMetaModel, side_info_row: &[f64]) -> Result<WeightVector> {
    transform(&model.raw_scores(side_info_row)?, model.kind)
}

/// Trains the boosted meta-learner on side information and harvested base
/// predictions.
pub fn fit_meta(
    side_info: &FeatureMatrix,
    base_preds: &PredictionBundle,
    targets: &[f64],
    kind: ConstraintKind,
    config: &GBDTConfig,
) -> Result<BoostedMetaModel> {
    config.validate()?;
    let features = side_info.matrix();
    check_features(features)?;
    let n = features.rows();
    if n != targets.len() || n != base_preds.n_rows() {
        return Err(Error::DimensionMismatch(format!(
            "{n} side-information rows, {} targets, {} prediction rows",
            targets.len(),
            base_preds.n_rows()
        )));
    }
    if n == 0 || n < 2 * config.min_samples_leaf {
        return Err(Error::EmptyData(format!("{n} meta-training rows")));
    }
    let m = base_preds.n_models();
    let mut model = BoostedMetaModel::untrained(m, kind, side_info.names().to_vec());
    let mapper = BinMapper::fit(features, config.histogram_bins);
    let bins = mapper.bin_matrix(features);
    let params = config.grow_params();

    // raw[i][row]
    let mut raw: Vec<Vec<f64>> = model.init_scores.iter().map(|s| vec![*s; n]).collect();
    let mut grad = vec![vec![0.0; n]; m];
    let mut hess = vec![vec![0.0; n]; m];
    let mut p = vec![0.0; m];
    let mut g_row = vec![0.0; m];
    let mut h_row = vec![0.0; m];

    for round in 0..config.num_rounds {
        for r in 0..n {
            for i in 0..m {
                p[i] = raw[i][r];
            }
            meta_grad_hess_into(targets[r], base_preds.row(r), &p, kind, &mut g_row, &mut h_row)?;
            for i in 0..m {
                if !g_row[i].is_finite() || !h_row[i].is_finite() {
                    return Err(Error::NonFiniteLoss { round });
                }
                grad[i][r] = g_row[i];
                hess[i][r] = h_row[i].max(HESSIAN_FLOOR);
            }
        }
        for i in 0..m {
            let rows = config.round_rows(n, round, i);
            let tree = grow_tree(rows, &bins, &mapper, &grad[i], &hess[i], &params);
            for (r, v) in raw[i].iter_mut().enumerate() {
                *v += tree.predict(features.row(r));
            }
            model.forests[i].push(tree);
        }
        let mut total = 0.0;
        for r in 0..n {
            for i in 0..m {
                p[i] = raw[i][r];
            }
            total += meta_loss(targets[r], base_preds.row(r), &p, kind)?;
        }
        let loss = total / n as f64;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { round });
        }
        model.loss_history.push(loss);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feature_matrix(cols: Vec<Vec<f64>>) -> Matrix {
        let n = cols[0].len();
        let mut m = Matrix::zeros(n, cols.len());
        for (j, c) in cols.iter().enumerate() {
            for (i, v) in c.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        m
    }

    #[test]
    fn constant_target_predicts_constant() {
        let x = feature_matrix(vec![(0..50).map(f64::from).collect()]);
        let y = vec![3.25; 50];
        let model = fit_base(&x, &y, &GBDTConfig { num_rounds: 20, ..Default::default() }).unwrap();
        for v in model.predict(&x).unwrap() {
            assert_eq!(v, 3.25);
        }
        assert_eq!(model.predict_row(&[1e6]).unwrap(), 3.25);
    }

    #[test]
    fn step_function_is_learned() {
        let xs: Vec<f64> = (0..200).map(|i| i as f64 / 10.0).collect();
        let y: Vec<f64> = xs.iter().map(|x| if *x < 7.3 { -2.0 } else { 5.0 }).collect();
        let config = GBDTConfig {
            num_rounds: 50,
            learning_rate: 0.3,
            min_samples_leaf: 1,
            ..Default::default()
        };
        let x = feature_matrix(vec![xs]);
        let model = fit_base(&x, &y, &config).unwrap();
        assert!(*model.loss_history.last().unwrap() < 1e-6);
        for w in model.loss_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
    }

    #[test]
    fn single_round_unit_rate_is_mean() {
        let x = feature_matrix(vec![(0..10).map(f64::from).collect()]);
        let y: Vec<f64> = (0..10).map(|i| (i * i) as f64).collect();
        let config = GBDTConfig {
            num_rounds: 1,
            learning_rate: 1.0,
            max_leaves: 1,
            ..Default::default()
        };
        let model = fit_base(&x, &y, &config).unwrap();
        assert_eq!(model.trees[0].n_leaves(), 1);
        assert_eq!(model.predict_row(&[4.0]).unwrap(), 28.5);
    }

    #[test]
    fn too_few_rows() {
        let x = feature_matrix(vec![vec![1.0, 2.0]]);
        assert!(matches!(
            fit_base(&x, &[1.0, 2.0], &GBDTConfig { min_samples_leaf: 5, ..Default::default() }),
            Err(Error::EmptyData(_))
        ));
    }

    #[test]
    fn untrained_meta_model_is_uniform() {
        for kind in [ConstraintKind::Convex, ConstraintKind::Affine] {
            let model = BoostedMetaModel::untrained(2, kind, vec!["a".into()]);
            assert_eq!(predict_weights(&model, &[0.0]).unwrap().as_slice(), &[0.5, 0.5]);
        }
        let model = BoostedMetaModel::untrained(2, ConstraintKind::Convex, vec!["a".into()]);
        assert!(matches!(predict_weights(&model, &[0.0, 1.0]), Err(Error::DimensionMismatch(_))));
    }
}
