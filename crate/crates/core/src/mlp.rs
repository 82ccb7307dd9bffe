//! Two-layer perceptron meta-learner.
//!
//! Feed-forward: `v = U¹x`, `z = ReLU(v)`, `p = U²z`, `w = τ(p)`; the
//! ensemble prediction is `wᵀŷ` and the per-sample loss `(y − wᵀŷ)²`.
//! Gradients are propagated through `τ` with its Jacobian and trained by
//! plain per-sample SGD. The same network with a scalar regression head
//! serves as the conventional stacking baseline that maps base predictions
//! straight to a forecast.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constraints::{transform, transform_jacobian, ConstraintKind, AFFINE_MIN_SUM};
use crate::error::{Error, Result};
use crate::frame::{FeatureMatrix, PredictionBundle, WeightVector};
use crate::linalg::{dot, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MLPConfig {
    pub hidden_units: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub shuffle: bool,
    pub bias: bool,
}

impl Default for MLPConfig {
    fn default() -> Self {
        Self {
            hidden_units: 16,
            learning_rate: 1e-3,
            epochs: 300,
            seed: 0,
            shuffle: true,
            bias: false,
        }
    }
}

impl MLPConfig {
    /// Field names accepted from key-value hyperparameter maps.
    pub const KEYS: [&'static str; 6] = ["hidden_units", "learning_rate", "epochs", "seed", "shuffle", "bias"];

    pub fn validate(&self) -> Result<()> {
        if self.hidden_units == 0 {
            return Err(Error::ConfigInvalid("mlp: hidden_units must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::ConfigInvalid("mlp: learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Per-feature affine rescaling fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(features: &Matrix) -> Self {
        let n = features.rows().max(1) as f64;
        let (mean, scale) = (0..features.cols())
            .map(|j| {
                let col = features.column(j);
                let mu = col.iter().sum::<f64>() / n;
                let var = col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
                let sd = var.sqrt();
                (mu, if sd > 1e-12 { sd } else { 1.0 })
            })
            .unzip();
        Self { mean, scale }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Head {
    /// Outputs are raw scores mapped to combination weights.
    Weights(ConstraintKind),
    /// Single output read as a forecast, `y = y_mean + y_scale · p`.
    Regression { y_mean: f64, y_scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MLPModel {
    /// L×K, input → hidden.
    pub u1: Matrix,
    /// M×L, hidden → output.
    pub u2: Matrix,
    pub b1: Option<Vec<f64>>,
    pub b2: Option<Vec<f64>>,
    pub head: Head,
    pub standardizer: Option<Standardizer>,
    /// Mean training loss after each epoch.
    pub loss_history: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Forward {
    pub v: Vec<f64>,
    pub z: Vec<f64>,
    pub p: Vec<f64>,
    /// `None` for the regression head.
    pub w: Option<WeightVector>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub du1: Matrix,
    pub du2: Matrix,
    pub db1: Option<Vec<f64>>,
    pub db2: Option<Vec<f64>>,
}

impl Gradients {
    fn all_finite(&self) -> bool {
        self.du1.all_finite()
            && self.du2.all_finite()
            && self.db1.iter().flatten().all(|v| v.is_finite())
            && self.db2.iter().flatten().all(|v| v.is_finite())
    }
}

impl MLPModel {
    /// Bias-free weight-producing network from explicit layer matrices.
    pub fn new(u1: Matrix, u2: Matrix, kind: ConstraintKind) -> Result<Self> {
        if u2.cols() != u1.rows() {
            return Err(Error::DimensionMismatch(format!(
                "U1 is {}x{}, U2 is {}x{}",
                u1.rows(),
                u1.cols(),
                u2.rows(),
                u2.cols()
            )));
        }
        if !u1.all_finite() || !u2.all_finite() {
            return Err(Error::NonFinite("layer weights".into()));
        }
        Ok(Self {
            u1,
            u2,
            b1: None,
            b2: None,
            head: Head::Weights(kind),
            standardizer: None,
            loss_history: Vec::new(),
        })
    }

    /// Seeded uniform initialization in `±1/√fan_in`. Affine heads start with
    /// nonnegative output weights so `Σp` is bounded away from zero.
    pub fn init(inputs: usize, outputs: usize, head: Head, config: &MLPConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let l = config.hidden_units;
        let mut layer = |rows: usize, cols: usize, nonneg: bool| {
            let bound = 1.0 / (cols.max(1) as f64).sqrt();
            let data = (0..rows * cols)
                .map(|_| {
                    let v = rng.gen_range(-bound..=bound);
                    if nonneg {
                        v.abs()
                    } else {
                        v
                    }
                })
                .collect();
            Matrix::from_vec(rows, cols, data).expect("sized")
        };
        let u1 = layer(l, inputs, false);
        let u2 = layer(outputs, l, head == Head::Weights(ConstraintKind::Affine));
        Self {
            u1,
            u2,
            b1: config.bias.then(|| vec![0.0; l]),
            b2: config.bias.then(|| vec![0.0; outputs]),
            head,
            standardizer: None,
            loss_history: Vec::new(),
        }
    }

    pub fn n_inputs(&self) -> usize {
        self.u1.cols()
    }

    pub fn n_hidden(&self) -> usize {
        self.u1.rows()
    }

    pub fn n_outputs(&self) -> usize {
        self.u2.rows()
    }

    pub fn kind(&self) -> Option<ConstraintKind> {
        match self.head {
            Head::Weights(k) => Some(k),
            Head::Regression { .. } => None,
        }
    }

    fn prepare_input(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_inputs() {
            return Err(Error::DimensionMismatch(format!(
                "input has {} features, model expects {}",
                x.len(),
                self.n_inputs()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mlp input".into()));
        }
        Ok(match &self.standardizer {
            Some(s) => s.apply(x),
            None => x.to_vec(),
        })
    }

    fn raw_forward(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut v = self.u1.mul_vec(x);
        if let Some(b) = &self.b1 {
            v.iter_mut().zip(b).for_each(|(a, b)| *a += b);
        }
        let z: Vec<f64> = v.iter().map(|a| a.max(0.0)).collect();
        let mut p = self.u2.mul_vec(&z);
        if let Some(b) = &self.b2 {
            p.iter_mut().zip(b).for_each(|(a, b)| *a += b);
        }
        (v, z, p)
    }
}

pub fn forward(model: &MLPModel, x: &[f64]) -> Result<Forward> {
    let x = model.prepare_input(x)?;
    let (v, z, p) = model.raw_forward(&x);
    let w = match model.head {
        Head::Weights(kind) => Some(transform(&p, kind)?),
        Head::Regression { .. } => None,
    };
    Ok(Forward { v, z, p, w })
}

pub fn predict_weights(model: &MLPModel, x: &[f64]) -> Result<WeightVector> {
    forward(model, x)?
        .w
        .ok_or_else(|| Error::ConfigInvalid("regression head produces no weights".into()))
}

/// Forecast of a regression-head network.
pub fn predict_value(model: &MLPModel, x: &[f64]) -> Result<f64> {
    match model.head {
        Head::Regression { y_mean, y_scale } => {
            let f = forward(model, x)?;
            Ok(y_mean + y_scale * f.p[0])
        }
        Head::Weights(_) => Err(Error::ConfigInvalid("weight head produces no forecast".into())),
    }
}

fn layer_gradients(model: &MLPModel, x: &[f64], fwd: &Forward, d_p: &[f64]) -> Gradients {
    let (m, l, k) = (model.n_outputs(), model.n_hidden(), model.n_inputs());
    let mut du2 = Matrix::zeros(m, l);
    for o in 0..m {
        for h in 0..l {
            du2[(o, h)] = d_p[o] * fwd.z[h];
        }
    }
    let d_v: Vec<f64> = (0..l)
        .map(|h| {
            if fwd.v[h] > 0.0 {
                (0..m).map(|o| d_p[o] * model.u2[(o, h)]).sum()
            } else {
                0.0
            }
        })
        .collect();
    let mut du1 = Matrix::zeros(l, k);
    for h in 0..l {
        for c in 0..k {
            du1[(h, c)] = d_v[h] * x[c];
        }
    }
    Gradients {
        du1,
        du2,
        db1: model.b1.as_ref().map(|_| d_v.clone()),
        db2: model.b2.as_ref().map(|_| d_p.to_vec()),
    }
}

/// Gradients of `(y − τ(p)ᵀŷ)²` with respect to every layer weight.
pub fn backward(model: &MLPModel, x: &[f64], y: f64, base_preds: &[f64]) -> Result<Gradients> {
    let Head::Weights(kind) = model.head else {
        return Err(Error::ConfigInvalid("backward needs a weight head".into()));
    };
    if base_preds.len() != model.n_outputs() {
        return Err(Error::DimensionMismatch(format!(
            "{} base predictions for {} outputs",
            base_preds.len(),
            model.n_outputs()
        )));
    }
    let xs = model.prepare_input(x)?;
    let (v, z, p) = model.raw_forward(&xs);
    let w = transform(&p, kind)?;
    let ens = w.combine(base_preds);
    // ∂L/∂w_i = 2(ŷ^E − y)ŷ_i, then ∂L/∂p = Jᵀ ∂L/∂w.
    let d_w: Vec<f64> = base_preds.iter().map(|yi| 2.0 * (ens - y) * yi).collect();
    let jac = transform_jacobian(&p, kind)?;
    let m = p.len();
    let d_p: Vec<f64> = (0..m).map(|c| (0..m).map(|r| jac[(r, c)] * d_w[r]).sum()).collect();
    let fwd = Forward { v, z, p, w: Some(w) };
    Ok(layer_gradients(model, &xs, &fwd, &d_p))
}

/// Gradients of `(y_std − p)²` for the regression head, in standardized
/// target units.
pub fn backward_regression(model: &MLPModel, x: &[f64], y: f64) -> Result<Gradients> {
    let Head::Regression { y_mean, y_scale } = model.head else {
        return Err(Error::ConfigInvalid("backward_regression needs a regression head".into()));
    };
    let xs = model.prepare_input(x)?;
    let (v, z, p) = model.raw_forward(&xs);
    let y_std = (y - y_mean) / y_scale;
    let d_p = vec![2.0 * (p[0] - y_std)];
    let fwd = Forward { v, z, p, w: None };
    Ok(layer_gradients(model, &xs, &fwd, &d_p))
}

/// `U ← U − α·dU`; the model is left untouched when a gradient is non-finite.
pub fn sgd_step(model: &mut MLPModel, grads: &Gradients, alpha: f64) -> Result<()> {
    if !grads.all_finite() {
        return Err(Error::NonFiniteGradient { epoch: 0, sample: 0 });
    }
    if grads.du1.rows() != model.u1.rows()
        || grads.du1.cols() != model.u1.cols()
        || grads.du2.rows() != model.u2.rows()
        || grads.du2.cols() != model.u2.cols()
    {
        return Err(Error::DimensionMismatch("gradient shape differs from model".into()));
    }
    let step = |u: &mut [f64], g: &[f64]| u.iter_mut().zip(g).for_each(|(u, g)| *u -= alpha * g);
    step(model.u1.as_mut_slice(), grads.du1.as_slice());
    step(model.u2.as_mut_slice(), grads.du2.as_slice());
    if let (Some(b), Some(g)) = (model.b1.as_mut(), grads.db1.as_ref()) {
        step(b, g);
    }
    if let (Some(b), Some(g)) = (model.b2.as_mut(), grads.db2.as_ref()) {
        step(b, g);
    }
    Ok(())
}

fn epoch_order(n: usize, config: &MLPConfig, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if config.shuffle {
        order.shuffle(rng);
    }
    order
}

fn shuffle_rng(config: &MLPConfig) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    rng
}

/// Trains the weight-producing network with per-sample SGD.
///
/// Inputs are standardized with statistics of the training rows. For affine
/// heads, samples whose `|Σp|` falls to the degeneracy threshold are skipped;
/// an epoch skipping more than 1% of its samples aborts training.
pub fn fit_meta(
    side_info: &FeatureMatrix,
    base_preds: &PredictionBundle,
    targets: &[f64],
    kind: ConstraintKind,
    config: &MLPConfig,
) -> Result<MLPModel> {
    config.validate()?;
    let n = side_info.n_rows();
    if n != targets.len() || n != base_preds.n_rows() {
        return Err(Error::DimensionMismatch(format!(
            "{n} side-information rows, {} targets, {} prediction rows",
            targets.len(),
            base_preds.n_rows()
        )));
    }
    if n == 0 {
        return Err(Error::EmptyData("no meta-training rows".into()));
    }
    let mut model = MLPModel::init(side_info.n_cols(), base_preds.n_models(), Head::Weights(kind), config);
    model.standardizer = Some(Standardizer::fit(side_info.matrix()));
    let mut rng = shuffle_rng(config);

    let is_degenerate = |model: &MLPModel, x: &[f64]| -> Result<bool> {
        if kind != ConstraintKind::Affine {
            return Ok(false);
        }
        let xs = model.prepare_input(x)?;
        let (_, _, p) = model.raw_forward(&xs);
        Ok(p.iter().sum::<f64>().abs() <= AFFINE_MIN_SUM)
    };

    for epoch in 0..config.epochs {
        let mut skipped = 0;
        for &r in &epoch_order(n, config, &mut rng) {
            let x = side_info.row(r);
            if is_degenerate(&model, x)? {
                skipped += 1;
                continue;
            }
            let grads = backward(&model, x, targets[r], base_preds.row(r))?;
            sgd_step(&mut model, &grads, config.learning_rate)
                .map_err(|_| Error::NonFiniteGradient { epoch, sample: r })?;
        }
        if skipped * 100 > n {
            return Err(Error::DegenerateEpoch { epoch, skipped, total: n });
        }
        let mut total = 0.0;
        let mut counted = 0usize;
        for r in 0..n {
            let x = side_info.row(r);
            if is_degenerate(&model, x)? {
                continue;
            }
            let w = predict_weights(&model, x)?;
            let e = targets[r] - w.combine(base_preds.row(r));
            total += e * e;
            counted += 1;
        }
        model.loss_history.push(total / counted.max(1) as f64);
    }
    Ok(model)
}

/// Conventional stacking baseline: regresses the target directly on the base
/// predictions. Inputs and target are standardized internally.
pub fn fit_conventional(base_preds: &Matrix, targets: &[f64], config: &MLPConfig) -> Result<MLPModel> {
    config.validate()?;
    let n = base_preds.rows();
    if n != targets.len() {
        return Err(Error::LengthMismatch { left: n, right: targets.len() });
    }
    if n == 0 {
        return Err(Error::EmptyData("no training rows".into()));
    }
    let y_mean = targets.iter().sum::<f64>() / n as f64;
    let y_var = targets.iter().map(|v| (v - y_mean) * (v - y_mean)).sum::<f64>() / n as f64;
    let y_scale = if y_var.sqrt() > 1e-12 { y_var.sqrt() } else { 1.0 };
    let mut model = MLPModel::init(base_preds.cols(), 1, Head::Regression { y_mean, y_scale }, config);
    model.standardizer = Some(Standardizer::fit(base_preds));
    let mut rng = shuffle_rng(config);
    for epoch in 0..config.epochs {
        for &r in &epoch_order(n, config, &mut rng) {
            let grads = backward_regression(&model, base_preds.row(r), targets[r])?;
            sgd_step(&mut model, &grads, config.learning_rate)
                .map_err(|_| Error::NonFiniteGradient { epoch, sample: r })?;
        }
        let mse = (0..n)
            .map(|r| predict_value(&model, base_preds.row(r)).map(|p| (targets[r] - p).powi(2)))
            .sum::<Result<f64>>()?
            / n as f64;
        model.loss_history.push(mse);
    }
    Ok(model)
}

/// Mean squared ensemble error of a weight head on a dataset.
pub fn ensemble_mse(
    model: &MLPModel,
    side_info: &FeatureMatrix,
    base_preds: &PredictionBundle,
    targets: &[f64],
) -> Result<f64> {
    let mut total = 0.0;
    for (r, y) in targets.iter().enumerate() {
        let w = predict_weights(model, side_info.row(r))?;
        total += (y - dot(w.as_slice(), base_preds.row(r))).powi(2);
    }
    Ok(total / targets.len().max(1) as f64)
}
