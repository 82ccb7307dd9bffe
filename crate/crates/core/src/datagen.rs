//! Synthetic regime-mixing datasets.
//!
//! Two independent components are generated, an ARMA(2,2)-type linear process
//! and an eight-regime piecewise-constant process around level 50, and then
//! mixed with time-varying weights keyed on `t mod 2`, `t mod 4` or
//! `t mod 16`. The modulo indices are exposed as side information, so a
//! meta-learner that sees them can recover the mixing weights exactly.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{FeatureMatrix, TimeSeriesFrame};

pub const ARMA_BURN_IN: usize = 100;
pub const PIECEWISE_BURN_IN: usize = 50;
pub const MIN_LENGTH: usize = 51;

/// Names of the emitted side-information columns.
pub const SIDE_INFO_COLUMNS: [&str; 5] = ["mod2", "mod4", "mod16", "lag1", "lag7"];
/// Names of the component columns added by [`SyntheticDataset::frame_with_components`].
pub const COMPONENT_COLUMNS: [&str; 2] = ["y1", "y2"];

const MAX_LAG: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixKind {
    A,
    B,
    C,
}

impl MixKind {
    pub fn period(self) -> usize {
        match self {
            MixKind::A => 2,
            MixKind::B => 4,
            MixKind::C => 16,
        }
    }

    /// `(α, β)` for residue `t mod period`.
    pub fn table(self) -> &'static [(f64, f64)] {
        match self {
            MixKind::A => &MIX_A,
            MixKind::B => &MIX_B,
            MixKind::C => &MIX_C,
        }
    }

    pub fn weights_at(self, t: i64) -> (f64, f64) {
        self.table()[t.rem_euclid(self.period() as i64) as usize]
    }

    pub fn label(self) -> &'static str {
        match self {
            MixKind::A => "a",
            MixKind::B => "b",
            MixKind::C => "c",
        }
    }
}

impl fmt::Display for MixKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for MixKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Ok(MixKind::A),
            "b" => Ok(MixKind::B),
            "c" => Ok(MixKind::C),
            other => Err(Error::ConfigInvalid(format!("unknown mix `{other}` (expected a, b or c)"))),
        }
    }
}

const MIX_A: [(f64, f64); 2] = [(0.333, 0.667), (0.666, 0.334)];

const MIX_B: [(f64, f64); 4] = [(0.200, 0.800), (0.400, 0.600), (0.600, 0.400), (0.800, 0.200)];

const MIX_C: [(f64, f64); 16] = [
    (0.059, 0.941),
    (0.118, 0.882),
    (0.176, 0.824),
    (0.235, 0.765),
    (0.294, 0.706),
    (0.353, 0.647),
    (0.412, 0.588),
    (0.471, 0.529),
    (0.529, 0.471),
    (0.588, 0.412),
    (0.647, 0.353),
    (0.706, 0.294),
    (0.765, 0.235),
    (0.824, 0.176),
    (0.882, 0.118),
    (0.941, 0.059),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub length: usize,
    pub mix: MixKind,
    pub seed: u64,
    pub noise_sigma: f64,
}

impl SyntheticSpec {
    pub fn new(mix: MixKind, seed: u64) -> Self {
        Self {
            length: 730,
            mix,
            seed,
            noise_sigma: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.length < MIN_LENGTH {
            return Err(Error::ConfigInvalid(format!(
                "synthetic length must be > 50, got {}",
                self.length
            )));
        }
        if !(self.noise_sigma > 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::ConfigInvalid("noise_sigma must be positive".into()));
        }
        Ok(())
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, sigma: f64) -> Vec<f64> {
    (0..n)
        .map(|_| sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect()
}

/// Runs the ARMA recursion from a zero initial state on the given innovations:
/// `y_t = 0.2y_{t−1} − 0.1y_{t−2} + 0.3e_{t−1} − 0.1e_{t−2} + v_t`,
/// `e_t = y_t − 0.2y_{t−1} − 0.1y_{t−2}`.
pub fn arma_from_noise(noise: &[f64]) -> Vec<f64> {
    let mut y = Vec::with_capacity(noise.len());
    let mut e: Vec<f64> = Vec::with_capacity(noise.len());
    let at = |s: &[f64], t: usize, lag: usize| if t >= lag { s[t - lag] } else { 0.0 };
    for (t, v) in noise.iter().enumerate() {
        let yt = 0.2 * at(&y, t, 1) - 0.1 * at(&y, t, 2) + 0.3 * at(&e, t, 1) - 0.1 * at(&e, t, 2) + v;
        let et = yt - 0.2 * at(&y, t, 1) - 0.1 * at(&y, t, 2);
        y.push(yt);
        e.push(et);
    }
    y
}

fn arma_with_sigma(length: usize, seed: u64, sigma: f64) -> Vec<f64> {
    let noise = gaussian(&mut rng_for(seed, 1), length + ARMA_BURN_IN, sigma);
    arma_from_noise(&noise)[ARMA_BURN_IN..].to_vec()
}

/// Linear component with unit-variance innovations, 100-sample burn-in.
pub fn gen_arma(length: usize, seed: u64) -> Vec<f64> {
    arma_with_sigma(length, seed, 1.0)
}

/// Regime level from the value seven steps back, the previous value and the
/// seven-step mean. Values equal to 50 count as "below".
pub fn piecewise_level(lag7: f64, lag1: f64, mean7: f64) -> f64 {
    match (lag7 > 50.0, lag1 > 50.0, mean7 > 50.0) {
        (true, true, true) => 30.0,
        (true, true, false) => 35.0,
        (true, false, true) => 40.0,
        (true, false, false) => 45.0,
        (false, true, true) => 56.0,
        (false, true, false) => 61.0,
        (false, false, true) => 66.0,
        (false, false, false) => 71.0,
    }
}

fn piecewise_with_sigma(length: usize, seed: u64, sigma: f64) -> Vec<f64> {
    let total = length + PIECEWISE_BURN_IN;
    let mut rng = rng_for(seed, 2);
    let mut y: Vec<f64> = (0..MAX_LAG).map(|_| rng.gen_range(45.0..=55.0)).collect();
    let noise = gaussian(&mut rng, total.saturating_sub(MAX_LAG), sigma);
    for v in noise {
        let t = y.len();
        let mean7 = y[t - MAX_LAG..t].iter().sum::<f64>() / MAX_LAG as f64;
        y.push(piecewise_level(y[t - MAX_LAG], y[t - 1], mean7) + v);
    }
    y[total - length..].to_vec()
}

/// Piecewise regime component, 50-sample burn-in.
pub fn gen_piecewise(length: usize, seed: u64) -> Vec<f64> {
    piecewise_with_sigma(length, seed, 1.0)
}

/// Mixes two components with the weights of `kind`; time is 1-based
/// (`t = row + 1`). Side information holds `mod2`, `mod4` and `mod16`.
pub fn mix(y1: &[f64], y2: &[f64], kind: MixKind) -> Result<(Vec<f64>, FeatureMatrix)> {
    if y1.len() != y2.len() {
        return Err(Error::LengthMismatch {
            left: y1.len(),
            right: y2.len(),
        });
    }
    let series = y1
        .iter()
        .zip(y2)
        .enumerate()
        .map(|(r, (a, b))| {
            let (alpha, beta) = kind.weights_at(r as i64 + 1);
            alpha * a + beta * b
        })
        .collect();
    let modulo = |k: usize| (1..=y1.len()).map(|t| (t % k) as f64).collect::<Vec<f64>>();
    let side = FeatureMatrix::from_columns(vec![
        ("mod2".into(), modulo(2)),
        ("mod4".into(), modulo(4)),
        ("mod16".into(), modulo(16)),
    ])?;
    Ok((series, side))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    /// Target plus `mod2, mod4, mod16, lag1, lag7`.
    pub frame: TimeSeriesFrame,
    /// The two mixed components, aligned with the frame rows.
    pub components: [Vec<f64>; 2],
}

impl SyntheticDataset {
    /// The frame with `y1` and `y2` appended as extra columns.
    pub fn frame_with_components(&self) -> Result<TimeSeriesFrame> {
        let side = self.frame.side_info();
        let mut cols: Vec<(String, Vec<f64>)> = side
            .names()
            .iter()
            .map(|n| side.column(n).map(|c| (n.clone(), c)))
            .collect::<Result<_>>()?;
        for (name, comp) in COMPONENT_COLUMNS.iter().zip(&self.components) {
            cols.push((name.to_string(), comp.clone()));
        }
        TimeSeriesFrame::new(self.frame.values().to_vec(), FeatureMatrix::from_columns(cols)?)
    }
}

/// Generates a dataset of `spec.length` rows. Seven extra leading samples are
/// generated so the lag columns are defined on every emitted row.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let n = spec.length + MAX_LAG;
    let y1 = arma_with_sigma(n, spec.seed, spec.noise_sigma);
    let y2 = piecewise_with_sigma(n, spec.seed, spec.noise_sigma);
    let (series, mods) = mix(&y1, &y2, spec.mix)?;

    let rows = MAX_LAG..n;
    let mut cols: Vec<(String, Vec<f64>)> = ["mod2", "mod4", "mod16"]
        .iter()
        .map(|name| mods.column(name).map(|c| (name.to_string(), c[rows.clone()].to_vec())))
        .collect::<Result<_>>()?;
    cols.push(("lag1".into(), rows.clone().map(|t| series[t - 1]).collect()));
    cols.push(("lag7".into(), rows.clone().map(|t| series[t - 7]).collect()));
    let frame = TimeSeriesFrame::new(series[rows.clone()].to_vec(), FeatureMatrix::from_columns(cols)?)?;
    Ok(SyntheticDataset {
        frame,
        components: [y1[rows.clone()].to_vec(), y2[rows].to_vec()],
    })
}
