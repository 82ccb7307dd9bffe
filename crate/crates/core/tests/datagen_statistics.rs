//! Sample statistics of the synthetic generators.

use ctxens_core::datagen::{self, MixKind, SyntheticSpec};
use ctxens_core::oracle::{self, ConditionalStats};

/// Stationary covariance of the ARMA state `(y_t, y_{t−1}, e_t, e_{t−1})`,
/// by fixed-point iteration of the discrete Lyapunov equation `P = FPFᵀ + ggᵀ`.
fn arma_stationary_cov() -> [[f64; 4]; 4] {
    let f = [
        [0.2, -0.1, 0.3, -0.1],
        [1.0, 0.0, 0.0, 0.0],
        [0.0, -0.2, 0.3, -0.1],
        [0.0, 0.0, 1.0, 0.0],
    ];
    let g = [1.0, 0.0, 1.0, 0.0];
    let mut p = [[0.0; 4]; 4];
    for _ in 0..500 {
        let mut fp = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                fp[i][j] = (0..4).map(|k| f[i][k] * p[k][j]).sum();
            }
        }
        let mut next = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                next[i][j] = (0..4).map(|k| fp[i][k] * f[j][k]).sum::<f64>() + g[i] * g[j];
            }
        }
        p = next;
    }
    p
}

fn moments(x: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let cov1 = x.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum::<f64>() / n;
    (mean, var, cov1 / var)
}

#[test]
fn arma_variance_and_autocorrelation() {
    let p = arma_stationary_cov();
    let acf1 = p[0][1] / p[0][0];
    for seed in 0..3 {
        let y = datagen::gen_arma(10_000, seed);
        let (mean, var, rho) = moments(&y);
        assert!(mean.abs() < 0.1, "seed {seed}: mean {mean}");
        assert!((0.8..=1.4).contains(&var), "seed {seed}: variance {var}");
        assert!((var - p[0][0]).abs() < 0.1, "seed {seed}: variance {var} vs {}", p[0][0]);
        assert!((rho - acf1).abs() < 0.05, "seed {seed}: acf {rho} vs {acf1}");
    }
}

#[test]
fn piecewise_stays_in_regime_band() {
    let y = datagen::gen_piecewise(10_000, 5);
    let (mean, _, _) = moments(&y);
    assert!((30.0..=71.0).contains(&mean));
    assert!(y.iter().all(|v| (20.0..=81.0).contains(v)));
}

#[test]
fn mixing_weights_are_recovered_per_stratum() {
    for kind in [MixKind::A, MixKind::B, MixKind::C] {
        let period = kind.period();
        let spec = SyntheticSpec {
            length: 50_000 * period,
            ..SyntheticSpec::new(kind, 3)
        };
        let data = datagen::generate(&spec).unwrap();
        let y = data.frame.values();
        let key = data.frame.side_info().column(&format!("mod{period}")).unwrap();
        for phase in 0..period {
            let rows: Vec<usize> = (0..y.len()).filter(|&r| key[r] as usize == phase).collect();
            let preds: Vec<Vec<f64>> = rows.iter().map(|&r| vec![data.components[0][r], data.components[1][r]]).collect();
            let targets: Vec<f64> = rows.iter().map(|&r| y[r]).collect();
            let stats = ConditionalStats::estimate(&preds, &targets).unwrap();
            let w = oracle::optimal_unconstrained(&stats).unwrap();
            let (alpha, beta) = kind.weights_at(phase as i64);
            assert!((w.as_slice()[0] - alpha).abs() <= 0.02, "{kind} phase {phase}: {:?}", w.as_slice());
            assert!((w.as_slice()[1] - beta).abs() <= 0.02, "{kind} phase {phase}: {:?}", w.as_slice());
        }
    }
}

#[test]
fn modulo_columns_follow_time_index() {
    let data = datagen::generate(&SyntheticSpec::new(MixKind::C, 0)).unwrap();
    let m16 = data.frame.side_info().column("mod16").unwrap();
    // First emitted row is t = 8.
    for (r, v) in m16.iter().enumerate() {
        assert_eq!(*v as usize, (r + 8) % 16);
    }
    let lag1 = data.frame.side_info().column("lag1").unwrap();
    assert_eq!(&lag1[1..], &data.frame.values()[..data.frame.len() - 1]);
}

#[test]
fn generation_is_seed_deterministic() {
    let spec = SyntheticSpec::new(MixKind::B, 42);
    assert_eq!(datagen::generate(&spec).unwrap(), datagen::generate(&spec).unwrap());
    let other = SyntheticSpec::new(MixKind::B, 43);
    assert_ne!(datagen::generate(&spec).unwrap().frame.values(), datagen::generate(&other).unwrap().frame.values());
}
