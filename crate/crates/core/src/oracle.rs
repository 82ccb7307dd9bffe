//! Optimal combination weights and losses under known conditional statistics.
//!
//! With `C = E[ŷŷᵀ | s]`, `a = E[yŷ | s]` and `σ² = E[y² | s]`, the expected
//! squared loss of weights `w` is `σ² − 2wᵀa + wᵀCw`. This module gives the
//! minimizers over ℝ^M, the affine hyperplane `Σw = 1` and the unit simplex,
//! together with the attained losses. These are the yardsticks the learned
//! meta-learners are compared against.

use crate::constraints::ConstraintKind;
use crate::error::{Error, Result};
use crate::frame::WeightVector;
use crate::linalg::{dot, max_eigenvalue, Cholesky, Matrix};

const SYMMETRY_TOL: f64 = 1e-12;
const ORDERING_TOL: f64 = 1e-9;

/// Iteration cap of the projected-gradient simplex solver.
pub const SIMPLEX_MAX_ITER: usize = 10_000;
/// Stop once successive losses differ by less than this.
pub const SIMPLEX_LOSS_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct ConditionalStats {
    c_mat: Matrix,
    a_vec: Vec<f64>,
    sigma2: f64,
    chol: Cholesky,
}

impl ConditionalStats {
    pub fn new(c_mat: Matrix, a_vec: Vec<f64>, sigma2: f64) -> Result<Self> {
        if c_mat.rows() != c_mat.cols() || c_mat.rows() != a_vec.len() {
            return Err(Error::DimensionMismatch(format!(
                "C is {}x{}, a has {} entries",
                c_mat.rows(),
                c_mat.cols(),
                a_vec.len()
            )));
        }
        if !c_mat.all_finite() || a_vec.iter().any(|v| !v.is_finite()) || !sigma2.is_finite() {
            return Err(Error::NonFinite("conditional statistics".into()));
        }
        if !c_mat.is_symmetric(SYMMETRY_TOL) {
            return Err(Error::InvalidStatistics("C is not symmetric".into()));
        }
        if sigma2 < 0.0 {
            return Err(Error::InvalidStatistics(format!("negative variance {sigma2}")));
        }
        let chol = Cholesky::new(&c_mat).ok_or(Error::SingularStatistics)?;
        Ok(Self {
            c_mat,
            a_vec,
            sigma2,
            chol,
        })
    }

    /// Sample estimate `C = mean(ŷŷᵀ)`, `a = mean(yŷ)`, `σ² = mean(y²)` with
    /// plain averages.
    pub fn estimate(base_preds: &[Vec<f64>], targets: &[f64]) -> Result<Self> {
        if base_preds.len() != targets.len() {
            return Err(Error::LengthMismatch {
                left: base_preds.len(),
                right: targets.len(),
            });
        }
        let n = targets.len();
        if n == 0 {
            return Err(Error::EmptyData("no samples for statistics".into()));
        }
        let m = base_preds[0].len();
        let mut c = Matrix::zeros(m, m);
        let mut a = vec![0.0; m];
        let mut s2 = 0.0;
        for (row, &y) in base_preds.iter().zip(targets) {
            if row.len() != m {
                return Err(Error::DimensionMismatch("ragged prediction rows".into()));
            }
            for i in 0..m {
                a[i] += y * row[i];
                for j in 0..m {
                    c[(i, j)] += row[i] * row[j];
                }
            }
            s2 += y * y;
        }
        let inv_n = 1.0 / n as f64;
        c.as_mut_slice().iter_mut().for_each(|v| *v *= inv_n);
        a.iter_mut().for_each(|v| *v *= inv_n);
        Self::new(c, a, s2 * inv_n)
    }

    pub fn dim(&self) -> usize {
        self.a_vec.len()
    }

    pub fn c_mat(&self) -> &Matrix {
        &self.c_mat
    }

    pub fn a_vec(&self) -> &[f64] {
        &self.a_vec
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    fn c_inv_a(&self) -> Vec<f64> {
        self.chol.solve(&self.a_vec)
    }

    fn c_inv_ones(&self) -> Vec<f64> {
        self.chol.solve(&vec![1.0; self.dim()])
    }

    /// `1ᵀC⁻¹a − 1` and `1ᵀC⁻¹1`.
    fn affine_terms(&self) -> (f64, f64) {
        let excess = self.c_inv_a().iter().sum::<f64>() - 1.0;
        let denom = self.c_inv_ones().iter().sum::<f64>();
        (excess, denom)
    }
}

fn check_finite(w: &[f64]) -> Result<()> {
    if w.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::SingularStatistics)
    }
}

/// `w = C⁻¹a`.
pub fn optimal_unconstrained(stats: &ConditionalStats) -> Result<WeightVector> {
    let w = stats.c_inv_a();
    check_finite(&w)?;
    WeightVector::new(w, ConstraintKind::Unconstrained)
}

/// `σ² − aᵀC⁻¹a`; not clamped at zero.
pub fn loss_unconstrained(stats: &ConditionalStats) -> Result<f64> {
    let w = stats.c_inv_a();
    check_finite(&w)?;
    Ok(stats.sigma2 - dot(&stats.a_vec, &w))
}

/// `w = C⁻¹a − ((1ᵀC⁻¹a − 1)/(1ᵀC⁻¹1))·C⁻¹1`.
pub fn optimal_affine(stats: &ConditionalStats) -> Result<WeightVector> {
    let w_unc = stats.c_inv_a();
    let c_inv_1 = stats.c_inv_ones();
    let (excess, denom) = stats.affine_terms();
    let w: Vec<f64> = w_unc
        .iter()
        .zip(&c_inv_1)
        .map(|(u, g)| u - excess / denom * g)
        .collect();
    check_finite(&w)?;
    WeightVector::new(w, ConstraintKind::Affine)
}

pub fn loss_affine(stats: &ConditionalStats) -> Result<f64> {
    let (excess, denom) = stats.affine_terms();
    Ok(loss_unconstrained(stats)? + excess * excess / denom)
}

/// Expected loss at arbitrary weights, in completed-square form
/// `L_unc* + (w − w_unc*)ᵀ C (w − w_unc*)`.
pub fn loss_at_weights(stats: &ConditionalStats, w: &[f64]) -> Result<f64> {
    if w.len() != stats.dim() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} base models",
            w.len(),
            stats.dim()
        )));
    }
    let w_unc = stats.c_inv_a();
    let diff: Vec<f64> = w.iter().zip(&w_unc).map(|(a, b)| a - b).collect();
    Ok(loss_unconstrained(stats)? + dot(&diff, &stats.c_mat.mul_vec(&diff)))
}

fn in_simplex(w: &[f64]) -> bool {
    w.iter().all(|v| *v >= 0.0)
}

/// Euclidean projection onto the unit simplex (sort-based).
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

fn simplex_weights(w: Vec<f64>) -> Result<WeightVector> {
    // Renormalize away the rounding left by the projection.
    let sum: f64 = w.iter().sum();
    WeightVector::new(w.into_iter().map(|x| x / sum).collect(), ConstraintKind::Convex)
}

/// Minimizer over the unit simplex.
///
/// For two base models the affine optimum is either already feasible or the
/// answer is the corner on the side of its positive component. For more
/// models the quadratic is minimized by projected gradient descent with step
/// `1/λ_max(C)`.
pub fn optimal_convex(stats: &ConditionalStats) -> Result<WeightVector> {
    let w_aff = optimal_affine(stats)?.into_vec();
    if in_simplex(&w_aff) {
        return WeightVector::new(w_aff, ConstraintKind::Convex);
    }
    if stats.dim() == 2 {
        let corner = if w_aff[0] < 0.0 { vec![0.0, 1.0] } else { vec![1.0, 0.0] };
        return WeightVector::new(corner, ConstraintKind::Convex);
    }
    projected_gradient(stats, &w_aff)
}

fn projected_gradient(stats: &ConditionalStats, start: &[f64]) -> Result<WeightVector> {
    let step = 1.0 / max_eigenvalue(&stats.c_mat);
    let mut w = project_to_simplex(start);
    let mut loss = loss_at_weights(stats, &w)?;
    for _ in 0..SIMPLEX_MAX_ITER {
        // ∇ = 2(Cw − a); the factor 2 is folded into the step.
        let cw = stats.c_mat.mul_vec(&w);
        let moved: Vec<f64> = w
            .iter()
            .zip(cw.iter().zip(&stats.a_vec))
            .map(|(wi, (cwi, ai))| wi - step * (cwi - ai))
            .collect();
        let next = project_to_simplex(&moved);
        let next_loss = loss_at_weights(stats, &next)?;
        w = next;
        if (loss - next_loss).abs() < SIMPLEX_LOSS_TOL {
            return simplex_weights(w);
        }
        loss = next_loss;
    }
    Err(Error::NoConvergence(SIMPLEX_MAX_ITER))
}

/// Loss at the simplex-constrained optimum.
pub fn loss_convex(stats: &ConditionalStats) -> Result<f64> {
    let w_aff = optimal_affine(stats)?.into_vec();
    if in_simplex(&w_aff) {
        return loss_affine(stats);
    }
    if stats.dim() == 2 {
        // Moving from the affine optimum to the corner shifts w by the
        // negative component along [-1, 1]:
        // L_con = L_aff + [-1 1] C [-1 1]ᵀ · (w_neg)².
        let c = &stats.c_mat;
        let quad = c[(0, 0)] - c[(0, 1)] - c[(1, 0)] + c[(1, 1)];
        let neg = if w_aff[0] < 0.0 { w_aff[0] } else { w_aff[1] };
        return Ok(loss_affine(stats)? + quad * neg * neg);
    }
    let w = optimal_convex(stats)?;
    loss_at_weights(stats, w.as_slice())
}

/// Returns `(L_unc*, L_aff*, L_con*)` after checking `L_unc* ≤ L_aff* ≤ L_con*`.
pub fn check_loss_ordering(stats: &ConditionalStats) -> Result<(f64, f64, f64)> {
    let unc = loss_unconstrained(stats)?;
    let aff = loss_affine(stats)?;
    let con = loss_convex(stats)?;
    if unc > aff + ORDERING_TOL || aff > con + ORDERING_TOL {
        return Err(Error::OrderingViolated { unc, aff, con });
    }
    Ok((unc, aff, con))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(c: [[f64; 2]; 2], a: [f64; 2], s2: f64) -> ConditionalStats {
        ConditionalStats::new(
            Matrix::from_rows(&[c[0].to_vec(), c[1].to_vec()]).unwrap(),
            a.to_vec(),
            s2,
        )
        .unwrap()
    }

    const I2: [[f64; 2]; 2] = [[1.0, 0.0], [0.0, 1.0]];

    /// Direct expansion of the expected loss, independent of the completed square.
    fn direct_loss(s: &ConditionalStats, w: &[f64]) -> f64 {
        s.sigma2() - 2.0 * dot(w, s.a_vec()) + dot(w, &s.c_mat().mul_vec(w))
    }

    fn grid_min_2d(s: &ConditionalStats, lo: f64, hi: f64, step: f64) -> (Vec<f64>, f64) {
        let n = ((hi - lo) / step).round() as usize;
        let mut best = (vec![0.0, 0.0], f64::INFINITY);
        for i in 0..=n {
            for j in 0..=n {
                let w = [lo + i as f64 * step, lo + j as f64 * step];
                let l = direct_loss(s, &w);
                if l < best.1 {
                    best = (w.to_vec(), l);
                }
            }
        }
        best
    }

    fn grid_min_line(s: &ConditionalStats, lo: f64, hi: f64, step: f64) -> (Vec<f64>, f64) {
        let n = ((hi - lo) / step).round() as usize;
        (0..=n)
            .map(|i| {
                let w1 = lo + i as f64 * step;
                let w = vec![w1, 1.0 - w1];
                let l = direct_loss(s, &w);
                (w, l)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
    }

    #[test]
    fn unconstrained_examples() {
        let s = stats(I2, [0.5, 0.3], 1.0);
        assert_eq!(optimal_unconstrained(&s).unwrap().as_slice(), &[0.5, 0.3]);
        let s2 = stats([[2.0, 0.0], [0.0, 2.0]], [1.0, 1.0], 1.0);
        for w in optimal_unconstrained(&s2).unwrap().as_slice() {
            assert!((w - 0.5).abs() < 1e-15);
        }

        let s3 = stats([[1.0, 0.5], [0.5, 1.0]], [0.8, 0.6], 1.0);
        let w = optimal_unconstrained(&s3).unwrap();
        let (gw, _) = grid_min_2d(&s3, -2.0, 2.0, 1e-3);
        assert!((w.as_slice()[0] - gw[0]).abs() < 1.5e-3);
        assert!((w.as_slice()[1] - gw[1]).abs() < 1.5e-3);
        // Cw = a
        let cw = s3.c_mat().mul_vec(w.as_slice());
        assert!((cw[0] - 0.8).abs() < 1e-14 && (cw[1] - 0.6).abs() < 1e-14);
    }

    #[test]
    fn unconstrained_losses() {
        assert!((loss_unconstrained(&stats(I2, [0.5, 0.3], 1.0)).unwrap() - 0.66).abs() < 1e-12);
        assert_eq!(loss_unconstrained(&stats(I2, [0.0, 0.0], 0.7)).unwrap(), 0.7);
        assert_eq!(loss_unconstrained(&stats(I2, [0.0, 0.0], 0.0)).unwrap(), 0.0);
    }

    #[test]
    fn affine_examples() {
        let s = stats(I2, [0.5, 0.3], 1.0);
        let w = optimal_affine(&s).unwrap();
        assert!((w.as_slice()[0] - 0.6).abs() < 1e-12 && (w.as_slice()[1] - 0.4).abs() < 1e-12);
        let (gw, gl) = grid_min_line(&s, -2.0, 2.0, 1e-3);
        assert!((gw[0] - 0.6).abs() < 1e-9);
        assert!((loss_affine(&s).unwrap() - 0.68).abs() < 1e-12);
        assert!((gl - 0.68).abs() < 1e-9);

        let s2 = stats(I2, [1.5, -0.3], 1.0);
        let w2 = optimal_affine(&s2).unwrap();
        assert!((w2.as_slice()[0] - 1.4).abs() < 1e-12 && (w2.as_slice()[1] + 0.4).abs() < 1e-12);
        let (_, gl2) = grid_min_line(&s2, -2.0, 2.0, 1e-3);
        assert!((loss_affine(&s2).unwrap() - gl2).abs() < 1e-6);

        // unconstrained optimum already on the hyperplane
        let s3 = stats(I2, [0.25, 0.75], 1.0);
        let wa = optimal_affine(&s3).unwrap();
        let wu = optimal_unconstrained(&s3).unwrap();
        assert_eq!(wa.as_slice(), wu.as_slice());
        assert!((loss_affine(&s3).unwrap() - loss_unconstrained(&s3).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn loss_at_weights_examples() {
        let s = stats(I2, [0.5, 0.3], 1.0);
        let wu = optimal_unconstrained(&s).unwrap();
        assert!((loss_at_weights(&s, wu.as_slice()).unwrap() - 0.66).abs() < 1e-12);
        let wa = optimal_affine(&s).unwrap();
        assert!((loss_at_weights(&s, wa.as_slice()).unwrap() - loss_affine(&s).unwrap()).abs() < 1e-9);
        assert!((loss_at_weights(&s, &[0.0, 0.0]).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn convex_examples() {
        let s = stats(I2, [0.5, 0.3], 1.0);
        let w = optimal_convex(&s).unwrap();
        assert!((w.as_slice()[0] - 0.6).abs() < 1e-12);
        assert_eq!(w.kind(), ConstraintKind::Convex);
        assert!((loss_convex(&s).unwrap() - loss_affine(&s).unwrap()).abs() < 1e-15);

        let s2 = stats(I2, [1.5, -0.3], 1.0);
        assert_eq!(optimal_convex(&s2).unwrap().as_slice(), &[1.0, 0.0]);
        // exhaustive grid over the simplex
        let best = (0..=10_000)
            .map(|i| {
                let w1 = i as f64 * 1e-4;
                (w1, direct_loss(&s2, &[w1, 1.0 - w1]))
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        assert_eq!(best.0, 1.0);
        let lc = loss_convex(&s2).unwrap();
        assert!((lc - loss_at_weights(&s2, &[1.0, 0.0]).unwrap()).abs() < 1e-12);
        // L_aff + 2 * 0.4^2
        assert!((lc - (loss_affine(&s2).unwrap() + 2.0 * 0.16)).abs() < 1e-12);

        let s3 = stats(I2, [0.5, 0.5], 0.5);
        assert_eq!(optimal_convex(&s3).unwrap().as_slice(), &[0.5, 0.5]);
        assert!((loss_convex(&s3).unwrap() - loss_at_weights(&s3, &[0.5, 0.5]).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn ordering_example() {
        let (u, a, c) = check_loss_ordering(&stats(I2, [0.5, 0.3], 1.0)).unwrap();
        assert!((u - 0.66).abs() < 1e-12 && (a - 0.68).abs() < 1e-12 && (c - 0.68).abs() < 1e-12);

        let (u, a, c) = check_loss_ordering(&stats(I2, [0.2, 0.8], 1.0)).unwrap();
        assert!((u - a).abs() < 1e-15 && (a - c).abs() < 1e-15);
    }

    #[test]
    fn invalid_stats_rejected() {
        let asym = Matrix::from_rows(&[vec![1.0, 0.2], vec![0.1, 1.0]]).unwrap();
        assert!(matches!(
            ConditionalStats::new(asym, vec![0.0, 0.0], 1.0),
            Err(Error::InvalidStatistics(_))
        ));
        let indefinite = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(matches!(
            ConditionalStats::new(indefinite, vec![0.0, 0.0], 1.0),
            Err(Error::SingularStatistics)
        ));
        assert!(ConditionalStats::new(Matrix::identity(2), vec![0.0, 0.0], -1.0).is_err());
    }

    #[test]
    fn simplex_projection_basics() {
        assert_eq!(project_to_simplex(&[0.2, 0.8]), vec![0.2, 0.8]);
        assert_eq!(project_to_simplex(&[2.0, 0.0]), vec![1.0, 0.0]);
        let p = project_to_simplex(&[0.5, 0.5, 0.5]);
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn convex_three_models_beats_coarse_grid() {
        let c = Matrix::from_rows(&[
            vec![2.0, 0.3, 0.1],
            vec![0.3, 1.0, 0.2],
            vec![0.1, 0.2, 0.5],
        ])
        .unwrap();
        let s = ConditionalStats::new(c, vec![2.5, -0.4, 0.1], 3.0).unwrap();
        let w = optimal_convex(&s).unwrap();
        let lw = loss_at_weights(&s, w.as_slice()).unwrap();
        let step = 1e-2;
        let mut best = f64::INFINITY;
        for i in 0..=100 {
            for j in 0..=(100 - i) {
                let w = [i as f64 * step, j as f64 * step, 1.0 - (i + j) as f64 * step];
                best = best.min(direct_loss(&s, &w));
            }
        }
        assert!(lw <= best + 1e-9, "{lw} vs grid {best}");
    }
}
