//! Output transformations mapping raw meta-learner outputs `p` to
//! combination weights `w`, and their Jacobians.
//!
//! | kind          | transform            | feasible set        |
//! |---------------|----------------------|---------------------|
//! | Unconstrained | `w = p`              | ℝ^M                 |
//! | Affine        | `w = p / Σp`         | `Σw = 1`            |
//! | Convex        | `w = softmax(p)`     | unit simplex Δ_M    |

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::WeightVector;
use crate::linalg::Matrix;

/// Smallest `|Σp|` the affine normalization accepts.
pub const AFFINE_MIN_SUM: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintKind {
    Unconstrained,
    Affine,
    Convex,
}

impl ConstraintKind {
    pub const ALL: [ConstraintKind; 3] = [
        ConstraintKind::Unconstrained,
        ConstraintKind::Affine,
        ConstraintKind::Convex,
    ];

    /// Raw output that maps to the uniform weight vector `1/M`.
    pub fn uniform_raw(self, m: usize) -> f64 {
        match self {
            ConstraintKind::Unconstrained | ConstraintKind::Affine => 1.0 / m as f64,
            ConstraintKind::Convex => 0.0,
        }
    }
}

impl fmt::Display for ConstraintKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConstraintKind::Unconstrained => "unconstrained",
            ConstraintKind::Affine => "affine",
            ConstraintKind::Convex => "convex",
        })
    }
}

impl FromStr for ConstraintKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "unconstrained" | "none" => Ok(ConstraintKind::Unconstrained),
            "affine" => Ok(ConstraintKind::Affine),
            "convex" | "simplex" => Ok(ConstraintKind::Convex),
            other => Err(Error::ConfigInvalid(format!("unknown constraint `{other}`"))),
        }
    }
}

fn affine_sum(p: &[f64]) -> Result<f64> {
    let sum: f64 = p.iter().sum();
    if sum.abs() <= AFFINE_MIN_SUM {
        return Err(Error::NormalizationDegenerate { sum });
    }
    Ok(sum)
}

/// Softmax with max-subtraction.
pub fn softmax(p: &[f64]) -> Vec<f64> {
    let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = p.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Raw weights `τ(p)` without wrapping in a [`WeightVector`].
pub fn transform_raw(p: &[f64], kind: ConstraintKind) -> Result<Vec<f64>> {
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("raw meta output".into()));
    }
    Ok(match kind {
        ConstraintKind::Unconstrained => p.to_vec(),
        ConstraintKind::Affine => {
            let sum = affine_sum(p)?;
            p.iter().map(|v| v / sum).collect()
        }
        ConstraintKind::Convex => softmax(p),
    })
}

pub fn transform(p: &[f64], kind: ConstraintKind) -> Result<WeightVector> {
    WeightVector::new(transform_raw(p, kind)?, kind)
}

/// `J[m][i] = ∂w_m/∂p_i`.
pub fn transform_jacobian(p: &[f64], kind: ConstraintKind) -> Result<Matrix> {
    let m = p.len();
    let w = transform_raw(p, kind)?;
    let mut jac = Matrix::zeros(m, m);
    match kind {
        ConstraintKind::Unconstrained => return Ok(Matrix::identity(m)),
        ConstraintKind::Affine => {
            let sum = affine_sum(p)?;
            for r in 0..m {
                for c in 0..m {
                    let delta = if r == c { 1.0 } else { 0.0 };
                    jac[(r, c)] = (delta - w[r]) / sum;
                }
            }
        }
        ConstraintKind::Convex => {
            for r in 0..m {
                for c in 0..m {
                    let delta = if r == c { 1.0 } else { 0.0 };
                    jac[(r, c)] = w[r] * (delta - w[c]);
                }
            }
        }
    }
    Ok(jac)
}
