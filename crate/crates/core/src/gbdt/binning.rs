use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;

/// Per-feature bin edges. A value `x` falls into the first bin `b` with
/// `x <= edges[b]`, or into the last bin when it exceeds every edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinMapper {
    edges: Vec<Vec<f64>>,
}

impl BinMapper {
    /// Equal-frequency edges computed from the training rows.
    pub fn fit(features: &Matrix, max_bins: usize) -> Self {
        let edges = (0..features.cols())
            .map(|j| quantile_edges(features.column(j), max_bins))
            .collect();
        Self { edges }
    }

    pub fn n_features(&self) -> usize {
        self.edges.len()
    }

    pub fn n_bins(&self, feature: usize) -> usize {
        self.edges[feature].len() + 1
    }

    pub fn threshold(&self, feature: usize, bin: usize) -> f64 {
        self.edges[feature][bin]
    }

    pub fn bin(&self, feature: usize, x: f64) -> u8 {
        self.edges[feature].partition_point(|e| *e < x) as u8
    }

    /// Column-major bin indices, `out[feature][row]`.
    pub fn bin_matrix(&self, features: &Matrix) -> Vec<Vec<u8>> {
        (0..features.cols())
            .map(|j| (0..features.rows()).map(|r| self.bin(j, features[(r, j)])).collect())
            .collect()
    }
}

fn quantile_edges(mut values: Vec<f64>, max_bins: usize) -> Vec<f64> {
    values.sort_by(f64::total_cmp);
    let mut unique = values.clone();
    unique.dedup();
    if unique.len() <= 1 {
        return Vec::new();
    }
    if unique.len() <= max_bins {
        return unique.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0).collect();
    }
    let n = values.len();
    let mut edges: Vec<f64> = (1..max_bins).map(|k| values[k * n / max_bins - 1]).collect();
    edges.dedup();
    let max = *unique.last().expect("non-empty");
    edges.retain(|e| *e < max);
    edges
}
