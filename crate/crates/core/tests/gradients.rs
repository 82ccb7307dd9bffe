//! Analytic derivatives against finite differences of the loss.

use ctxens_core::constraints::{transform_jacobian, transform_raw, ConstraintKind};
use ctxens_core::gbdt::{meta_grad_hess, meta_loss};
use ctxens_core::linalg::Matrix;
use ctxens_core::mlp::{self, MLPModel};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn central(f: impl Fn(f64) -> f64, h: f64) -> f64 {
    let d = |h: f64| (f(h) - f(-h)) / (2.0 * h);
    (4.0 * d(h / 2.0) - d(h)) / 3.0
}

fn second(f: impl Fn(f64) -> f64, h: f64) -> f64 {
    let f0 = f(0.0);
    let d = |h: f64| (f(h) - 2.0 * f0 + f(-h)) / (h * h);
    (4.0 * d(h / 2.0) - d(h)) / 3.0
}

fn rel(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn draw(rng: &mut ChaCha8Rng, m: usize, kind: ConstraintKind) -> Vec<f64> {
    loop {
        let p: Vec<f64> = (0..m).map(|_| rng.gen_range(-2.0..2.0)).collect();
        if kind != ConstraintKind::Affine || p.iter().sum::<f64>().abs() >= 0.5 {
            return p;
        }
    }
}

#[test]
fn boosted_objective_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for kind in ConstraintKind::ALL {
        let (mut worst_g, mut worst_h) = (0.0f64, 0.0f64);
        for _ in 0..1000 {
            let m = rng.gen_range(2..=4);
            let y = rng.gen_range(-2.0..2.0);
            let preds: Vec<f64> = (0..m).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let p = draw(&mut rng, m, kind);
            let (g, h) = meta_grad_hess(y, &preds, &p, kind).unwrap();
            for i in 0..m {
                let along = |d: f64| {
                    let mut q = p.clone();
                    q[i] += d;
                    meta_loss(y, &preds, &q, kind).unwrap()
                };
                worst_g = worst_g.max(rel(g[i], central(along, 1e-3), 1e-6));
                worst_h = worst_h.max(rel(h[i], second(along, 1e-2), 1e-3));
            }
        }
        assert!(worst_g <= 1e-5, "{kind}: gradient error {worst_g:e}");
        assert!(worst_h <= 1e-4, "{kind}: hessian error {worst_h:e}");
    }
}

#[test]
fn mlp_backprop_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for kind in ConstraintKind::ALL {
        let mut worst = 0.0f64;
        let mut drawn = 0;
        while drawn < 1000 {
            let (k, l, m) = (rng.gen_range(1..=4), rng.gen_range(2..=6), rng.gen_range(2..=4));
            let u1 = Matrix::from_vec(l, k, (0..l * k).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let u2 = Matrix::from_vec(m, l, (0..m * l).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let x: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let preds: Vec<f64> = (0..m).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let y = rng.gen_range(-2.0..2.0);
            let model = MLPModel::new(u1, u2, kind).unwrap();
            let Ok(fwd) = mlp::forward(&model, &x) else { continue };
            if fwd.v.iter().any(|v| v.abs() < 1e-3) || (kind == ConstraintKind::Affine && fwd.p.iter().sum::<f64>().abs() < 0.5) {
                continue;
            }
            drawn += 1;
            let g = mlp::backward(&model, &x, y, &preds).unwrap();
            let loss = |mm: &MLPModel| {
                let w = mlp::predict_weights(mm, &x).unwrap();
                let e = y - w.as_slice().iter().zip(&preds).map(|(a, b)| a * b).sum::<f64>();
                e * e
            };
            for idx in 0..l * k {
                let fd = central(
                    |d| {
                        let mut mm = model.clone();
                        mm.u1.as_mut_slice()[idx] += d;
                        loss(&mm)
                    },
                    1e-4,
                );
                worst = worst.max(rel(g.du1.as_slice()[idx], fd, 1e-4));
            }
            for idx in 0..m * l {
                let fd = central(
                    |d| {
                        let mut mm = model.clone();
                        mm.u2.as_mut_slice()[idx] += d;
                        loss(&mm)
                    },
                    1e-4,
                );
                worst = worst.max(rel(g.du2.as_slice()[idx], fd, 1e-4));
            }
        }
        assert!(worst <= 1e-4, "{kind}: backprop error {worst:e}");
    }
}

#[test]
fn regression_head_gradient() {
    let u1 = Matrix::from_rows(&[vec![0.4, -0.3], vec![0.2, 0.9], vec![-0.5, 0.1]]).unwrap();
    let u2 = Matrix::from_rows(&[vec![0.3, -0.7, 0.5]]).unwrap();
    let mut model = MLPModel::new(u1, u2, ConstraintKind::Unconstrained).unwrap();
    model.head = mlp::Head::Regression { y_mean: 1.0, y_scale: 2.0 };
    let x = [0.8, -0.6];
    let y = 2.5;
    let g = mlp::backward_regression(&model, &x, y).unwrap();
    // Loss in standardized units.
    let loss = |mm: &MLPModel| ((mlp::predict_value(mm, &x).unwrap() - y) / 2.0).powi(2);
    for idx in 0..6 {
        let fd = central(
            |d| {
                let mut mm = model.clone();
                mm.u1.as_mut_slice()[idx] += d;
                loss(&mm)
            },
            1e-4,
        );
        assert!(rel(g.du1.as_slice()[idx], fd, 1e-6) < 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn jacobian_matches_finite_differences(p in prop::collection::vec(-3.0f64..3.0, 2..5), which in 0usize..3) {
        let kind = ConstraintKind::ALL[which];
        prop_assume!(kind != ConstraintKind::Affine || p.iter().sum::<f64>().abs() > 0.5);
        let j = transform_jacobian(&p, kind).unwrap();
        for i in 0..p.len() {
            for m in 0..p.len() {
                let fd = central(|d| {
                    let mut q = p.clone();
                    q[i] += d;
                    transform_raw(&q, kind).unwrap()[m]
                }, 1e-4);
                prop_assert!((j[(m, i)] - fd).abs() <= 1e-7 * (1.0 + fd.abs()));
            }
        }
    }
}
