//! Per-sample gradients and hessians of the ensemble loss
//! `L = (y − τ(p)ᵀŷ)²` with respect to each raw output `p_i`.

use crate::constraints::{transform_raw, ConstraintKind, AFFINE_MIN_SUM};
use crate::error::{Error, Result};
use crate::linalg::dot;

/// Hessian floor used for split gains and leaf values.
pub const HESSIAN_FLOOR: f64 = 1e-6;

/// Squared ensemble loss at raw outputs `p`.
pub fn meta_loss(y: f64, base_preds: &[f64], p: &[f64], kind: ConstraintKind) -> Result<f64> {
    let w = transform_raw(p, kind)?;
    let r = y - dot(&w, base_preds);
    Ok(r * r)
}

/// Closed-form `(G_i, H_i)` with `G_i = ∂L/∂p_i` and `H_i = ∂²L/∂p_i²`.
///
/// * Unconstrained: `G = 2ŷ_i(ŷ^E − y)`, `H = 2ŷ_i²`
/// * Affine (`c = 1/Σp`): `G = 2c(y − ŷ^E)(ŷ^E − ŷ_i)`,
///   `H = 2c²(ŷ^E − ŷ_i)(3ŷ^E − 2y − ŷ_i)`
/// * Convex: `G = 2(y − ŷ^E)w_i(ŷ^E − ŷ_i)`,
///   `H = G(1 − 2w_i) + 2w_i²(ŷ^E − ŷ_i)²`
pub fn meta_grad_hess(
    y: f64,
    base_preds: &[f64],
    p: &[f64],
    kind: ConstraintKind,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = p.len();
    let mut grad = vec![0.0; m];
    let mut hess = vec![0.0; m];
    meta_grad_hess_into(y, base_preds, p, kind, &mut grad, &mut hess)?;
    Ok((grad, hess))
}

pub(crate) fn meta_grad_hess_into(
    y: f64,
    base_preds: &[f64],
    p: &[f64],
    kind: ConstraintKind,
    grad: &mut [f64],
    hess: &mut [f64],
) -> Result<()> {
    if base_preds.len() != p.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} base predictions for {} raw outputs",
            base_preds.len(),
            p.len()
        )));
    }
    if !y.is_finite() || base_preds.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gradient inputs".into()));
    }
    let w = transform_raw(p, kind)?;
    let ens = dot(&w, base_preds);
    match kind {
        ConstraintKind::Unconstrained => {
            for (i, &yi) in base_preds.iter().enumerate() {
                grad[i] = 2.0 * yi * (ens - y);
                hess[i] = 2.0 * yi * yi;
            }
        }
        ConstraintKind::Affine => {
            let sum: f64 = p.iter().sum();
            if sum.abs() <= AFFINE_MIN_SUM {
                return Err(Error::NormalizationDegenerate { sum });
            }
            let c = 1.0 / sum;
            for (i, &yi) in base_preds.iter().enumerate() {
                grad[i] = 2.0 * (y - ens) * c * (ens - yi);
                hess[i] = 2.0 * c * c * (ens - yi) * (3.0 * ens - 2.0 * y - yi);
            }
        }
        ConstraintKind::Convex => {
            for (i, &yi) in base_preds.iter().enumerate() {
                let g = 2.0 * (y - ens) * w[i] * (ens - yi);
                grad[i] = g;
                hess[i] = g * (1.0 - 2.0 * w[i]) + 2.0 * w[i] * w[i] * (ens - yi) * (ens - yi);
            }
        }
    }
    Ok(())
}
