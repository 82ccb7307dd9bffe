//! Test-window loss accounting.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label written to result metadata describing the curve normalization.
pub const CURVE_NORMALIZATION: &str = "running mean over test steps: value_j = sum_{k<=j} e_k^2 / j";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorCurve {
    /// `(t, cumulative normalized error)` with `t` the absolute time index.
    pub points: Vec<(usize, f64)>,
    pub final_total: f64,
}

impl ErrorCurve {
    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|(_, v)| *v).collect()
    }

    pub fn last(&self) -> Option<f64> {
        self.points.last().map(|(_, v)| *v)
    }

    /// `cumerr.csv`: columns `t,value`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["t", "value"])?;
        for (t, v) in &self.points {
            wtr.write_record([t.to_string(), v.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn check_lengths(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::LengthMismatch {
            left: y.len(),
            right: yhat.len(),
        });
    }
    if y.is_empty() {
        return Err(Error::EmptyData("empty sequences".into()));
    }
    Ok(())
}

/// `Σ (y_t − ŷ_t)²`.
pub fn total_squared_loss(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_lengths(y, yhat)?;
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// Running mean of squared test residuals. Point `j` (1-based within the
/// window) is labelled with time `t_start + j − 1`.
pub fn cumulative_normalized_curve(y: &[f64], yhat: &[f64], t_start: usize) -> Result<ErrorCurve> {
    check_lengths(y, yhat)?;
    let mut acc = 0.0;
    let points = y
        .iter()
        .zip(yhat)
        .enumerate()
        .map(|(j, (a, b))| {
            acc += (a - b) * (a - b);
            (t_start + j, acc / (j + 1) as f64)
        })
        .collect();
    Ok(ErrorCurve {
        points,
        final_total: acc,
    })
}
