//! Self-check suites behind `ctxens verify`.
//!
//! * `grad`: boosted-tree meta gradients/hessians and MLP backprop against
//!   finite differences of the loss, for every constraint kind.
//! * `oracle`: closed-form and projected oracle weights against brute-force
//!   grid search on random two-model statistics.
//! * `order`: the oracle loss chain unconstrained ≤ affine ≤ convex on random
//!   statistics.
//!
//! Each suite draws its random instances from a fixed seed, so reports are
//! reproducible.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::constraints::ConstraintKind;
use crate::error::{Error, Result};
use crate::gbdt::{meta_grad_hess, meta_loss};
use crate::linalg::{dot, Matrix};
use crate::mlp::{self, MLPModel};
use crate::oracle::{self, ConditionalStats};

/// Relative tolerances.
pub const GBDT_GRAD_TOL: f64 = 1e-5;
pub const GBDT_HESS_TOL: f64 = 1e-4;
pub const MLP_GRAD_TOL: f64 = 1e-4;
/// Achieved-loss tolerance of the grid comparisons.
pub const ORACLE_LOSS_TOL: f64 = 2e-4;
pub const ORDER_TOL: f64 = 1e-9;

/// Denominator floors of the relative errors; values below the floor are
/// compared absolutely.
const GRAD_FLOOR: f64 = 1e-6;
const HESS_FLOOR: f64 = 1e-3;
const MLP_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Grad,
    Oracle,
    Order,
}

impl FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grad" => Ok(Suite::Grad),
            "oracle" => Ok(Suite::Oracle),
            "order" => Ok(Suite::Order),
            other => Err(Error::ConfigInvalid(format!("unknown suite `{other}` (grad, oracle, order)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub instances: usize,
    pub failures: usize,
    pub max_error: f64,
    pub tolerance: f64,
}

impl CheckReport {
    fn new(name: impl Into<String>, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            instances: 0,
            failures: 0,
            max_error: 0.0,
            tolerance,
        }
    }

    fn record(&mut self, error: f64) {
        self.instances += 1;
        if error.is_nan() || error > self.tolerance {
            self.failures += 1;
        }
        if error.is_nan() || error > self.max_error {
            self.max_error = error;
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0 && self.instances > 0
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<28} {}/{} ok, max error {:.3e} (tol {:.0e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.instances - self.failures,
            self.instances,
            self.max_error,
            self.tolerance
        )
    }
}

pub fn run_suite(suite: Suite, instances: usize, seed: u64) -> Result<Vec<CheckReport>> {
    match suite {
        Suite::Grad => {
            let mut out = gbdt_gradient_checks(instances, seed)?;
            out.extend(mlp_gradient_checks(instances, seed)?);
            Ok(out)
        }
        Suite::Oracle => oracle_grid_checks(instances, seed),
        Suite::Order => ordering_checks(instances, seed),
    }
}

fn rel_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Raw outputs for `kind`; affine draws keep `|Σp| ≥ 0.5`.
fn draw_raw(rng: &mut ChaCha8Rng, m: usize, kind: ConstraintKind) -> Vec<f64> {
    loop {
        let p = uniform(rng, m, -2.0, 2.0);
        if kind != ConstraintKind::Affine || p.iter().sum::<f64>().abs() >= 0.5 {
            return p;
        }
    }
}

/// Richardson-extrapolated central first difference of `f` at 0.
fn fd_first(f: &dyn Fn(f64) -> f64, h: f64) -> f64 {
    let d = |h: f64| (f(h) - f(-h)) / (2.0 * h);
    (4.0 * d(h / 2.0) - d(h)) / 3.0
}

/// Richardson-extrapolated central second difference of `f` at 0.
fn fd_second(f: &dyn Fn(f64) -> f64, h: f64) -> f64 {
    let f0 = f(0.0);
    let d = |h: f64| (f(h) - 2.0 * f0 + f(-h)) / (h * h);
    (4.0 * d(h / 2.0) - d(h)) / 3.0
}

/// Closed-form gradients/hessians of the boosted meta objective versus
/// finite differences of the loss.
pub fn gbdt_gradient_checks(instances: usize, seed: u64) -> Result<Vec<CheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for kind in ConstraintKind::ALL {
        let mut g_rep = CheckReport::new(format!("gbdt gradient {kind}"), GBDT_GRAD_TOL);
        let mut h_rep = CheckReport::new(format!("gbdt hessian {kind}"), GBDT_HESS_TOL);
        for _ in 0..instances {
            let m = rng.gen_range(2..=4);
            let y = rng.gen_range(-2.0..2.0);
            let preds = uniform(&mut rng, m, -2.0, 2.0);
            let p = draw_raw(&mut rng, m, kind);
            let (g, h) = meta_grad_hess(y, &preds, &p, kind)?;
            for i in 0..m {
                let along = |d: f64| {
                    let mut q = p.clone();
                    q[i] += d;
                    meta_loss(y, &preds, &q, kind).unwrap_or(f64::NAN)
                };
                let fg = fd_first(&along, 1e-3);
                let fh = fd_second(&along, 1e-2);
                g_rep.record(rel_error(g[i], fg, GRAD_FLOOR));
                h_rep.record(rel_error(h[i], fh, HESS_FLOOR));
            }
        }
        out.push(g_rep);
        out.push(h_rep);
    }
    Ok(out)
}

fn mlp_loss(model: &MLPModel, x: &[f64], y: f64, preds: &[f64]) -> f64 {
    match mlp::predict_weights(model, x) {
        Ok(w) => (y - dot(w.as_slice(), preds)).powi(2),
        Err(_) => f64::NAN,
    }
}

/// Backprop gradients of every layer weight versus central differences.
pub fn mlp_gradient_checks(instances: usize, seed: u64) -> Result<Vec<CheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let mut out = Vec::new();
    for kind in ConstraintKind::ALL {
        let mut rep = CheckReport::new(format!("mlp backprop {kind}"), MLP_GRAD_TOL);
        let mut drawn = 0;
        while drawn < instances {
            let (k, l, m) = (rng.gen_range(1..=4), rng.gen_range(2..=6), rng.gen_range(2..=4));
            let u1 = Matrix::from_vec(l, k, uniform(&mut rng, l * k, -1.0, 1.0))?;
            let u2 = Matrix::from_vec(m, l, uniform(&mut rng, m * l, -1.0, 1.0))?;
            let x = uniform(&mut rng, k, -1.0, 1.0);
            let preds = uniform(&mut rng, m, -2.0, 2.0);
            let y = rng.gen_range(-2.0..2.0);
            let model = MLPModel::new(u1, u2, kind)?;
            let fwd = mlp::forward(&model, &x);
            // Skip draws near a ReLU kink or the affine singularity, where
            // the loss is not smooth within the difference stencil.
            let Ok(fwd) = fwd else { continue };
            if fwd.v.iter().any(|v| v.abs() < 1e-3) {
                continue;
            }
            if kind == ConstraintKind::Affine && fwd.p.iter().sum::<f64>().abs() < 0.5 {
                continue;
            }
            drawn += 1;
            let grads = mlp::backward(&model, &x, y, &preds)?;
            for layer in 0..2 {
                let n = if layer == 0 { l * k } else { m * l };
                for idx in 0..n {
                    let perturbed = |d: f64| {
                        let mut mm = model.clone();
                        let slot = if layer == 0 { mm.u1.as_mut_slice() } else { mm.u2.as_mut_slice() };
                        slot[idx] += d;
                        mlp_loss(&mm, &x, y, &preds)
                    };
                    let fd = fd_first(&perturbed, 1e-4);
                    let an = if layer == 0 { grads.du1.as_slice()[idx] } else { grads.du2.as_slice()[idx] };
                    rep.record(rel_error(an, fd, MLP_FLOOR));
                }
            }
        }
        out.push(rep);
    }
    Ok(out)
}

/// Random jointly consistent statistics for `m` models: the covariance of
/// `(y, ŷ_1..ŷ_m)` is `AAᵀ + 0.1·I` with Gaussian `A`.
pub fn random_stats(rng: &mut ChaCha8Rng, m: usize) -> Result<ConditionalStats> {
    let n = m + 1;
    let a: Vec<f64> = (0..n * n).map(|_| rng.sample(StandardNormal)).collect();
    let mut cov = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            cov[(i, j)] = (0..n).map(|k| a[i * n + k] * a[j * n + k]).sum::<f64>() + if i == j { 0.1 } else { 0.0 };
        }
    }
    let mut c = Matrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            c[(i, j)] = cov[(i + 1, j + 1)];
        }
    }
    let a_vec = (0..m).map(|i| cov[(i + 1, 0)]).collect();
    ConditionalStats::new(c, a_vec, cov[(0, 0)])
}

/// `σ² − 2aᵀw + wᵀCw`, expanded directly.
fn direct_loss(stats: &ConditionalStats, w: &[f64]) -> f64 {
    let cw = stats.c_mat().mul_vec(w);
    stats.sigma2() - 2.0 * dot(stats.a_vec(), w) + dot(w, &cw)
}

fn grid_min(stats: &ConditionalStats, points: impl Iterator<Item = [f64; 2]>) -> f64 {
    points.map(|w| direct_loss(stats, &w)).fold(f64::INFINITY, f64::min)
}

/// Two-model oracle weights against grid search: step 1e-3 over a ±0.5 box
/// (unconstrained) or ±1 line (affine) around the closed form, and step 1e-4
/// over the whole simplex (convex). The error is the gap in achieved loss.
pub fn oracle_grid_checks(instances: usize, seed: u64) -> Result<Vec<CheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(17));
    let mut unc = CheckReport::new("oracle unconstrained vs grid", ORACLE_LOSS_TOL);
    let mut aff = CheckReport::new("oracle affine vs grid", ORACLE_LOSS_TOL);
    let mut con = CheckReport::new("oracle convex vs grid", ORACLE_LOSS_TOL);
    for _ in 0..instances {
        let stats = random_stats(&mut rng, 2)?;

        let w = oracle::optimal_unconstrained(&stats)?;
        let (c0, c1) = (w.as_slice()[0], w.as_slice()[1]);
        let grid = (0..=1000).flat_map(|i| {
            (0..=1000).map(move |j| [c0 - 0.5 + i as f64 * 1e-3, c1 - 0.5 + j as f64 * 1e-3])
        });
        unc.record((direct_loss(&stats, w.as_slice()) - grid_min(&stats, grid)).abs());

        let w = oracle::optimal_affine(&stats)?;
        let c0 = w.as_slice()[0];
        let grid = (0..=2000).map(|i| {
            let a = c0 - 1.0 + i as f64 * 1e-3;
            [a, 1.0 - a]
        });
        aff.record((direct_loss(&stats, w.as_slice()) - grid_min(&stats, grid)).abs());

        let w = oracle::optimal_convex(&stats)?;
        let grid = (0..=10_000).map(|i| {
            let a = i as f64 * 1e-4;
            [a, 1.0 - a]
        });
        con.record((direct_loss(&stats, w.as_slice()) - grid_min(&stats, grid)).abs());
    }
    Ok(vec![unc, aff, con])
}

/// Oracle loss chain on random statistics with 2 to 5 models. The error is
/// the largest violation `max(L_unc − L_aff, L_aff − L_con, 0)`.
pub fn ordering_checks(instances: usize, seed: u64) -> Result<Vec<CheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(29));
    let mut rep = CheckReport::new("loss ordering unc<=aff<=con", ORDER_TOL);
    for _ in 0..instances {
        let m = rng.gen_range(2..=5);
        let stats = random_stats(&mut rng, m)?;
        let lu = oracle::loss_unconstrained(&stats)?;
        let la = oracle::loss_affine(&stats)?;
        let lc = oracle::loss_convex(&stats)?;
        rep.record((lu - la).max(la - lc).max(0.0));
    }
    Ok(vec![rep])
}
