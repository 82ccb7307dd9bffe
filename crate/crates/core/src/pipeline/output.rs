//! Result files: `predictions.csv`, `cumerr.csv`, `summary.txt` and the
//! trained meta-learner as `meta_model.json`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{ExperimentResult, OfflineOutput};
use crate::error::Result;
use crate::metrics::CURVE_NORMALIZATION;
use crate::persist::{to_json, write_atomic};

pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const CUMERR_FILE: &str = "cumerr.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const MODEL_FILE: &str = "meta_model.json";

#[derive(Debug, Clone, PartialEq)]
pub struct OutputFiles {
    pub files: Vec<PathBuf>,
}

fn predictions_csv(result: &ExperimentResult) -> Result<Vec<u8>> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["t".to_string(), "y".to_string()];
    header.extend(result.model_names.iter().map(|n| format!("pred_{n}")));
    header.extend(result.model_names.iter().map(|n| format!("w_{n}")));
    header.push("ensemble".into());
    wtr.write_record(&header)?;
    for s in &result.records {
        let mut row = vec![s.t.to_string(), s.y.to_string()];
        row.extend(s.base_preds.iter().map(f64::to_string));
        match &s.weights {
            Some(w) => row.extend(w.iter().map(f64::to_string)),
            None => row.extend(std::iter::repeat_n(String::new(), result.model_names.len())),
        }
        row.push(s.ensemble.to_string());
        wtr.write_record(&row)?;
    }
    Ok(wtr.into_inner().map_err(|e| e.into_error())?)
}

fn summary_text(result: &ExperimentResult) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "final_cumulative_error: {}", result.final_cumulative_error);
    let _ = writeln!(s, "total_squared_error: {}", result.total_squared_error);
    let _ = writeln!(s, "test_steps: {}", result.records.len());
    let _ = writeln!(
        s,
        "split: t1={} t_end={} t2={}",
        result.split.t1, result.split.t_end, result.split.t2
    );
    let _ = writeln!(s, "meta: {}", result.meta);
    let constraint = result.constraint.map_or("none".to_string(), |c| c.to_string());
    let _ = writeln!(s, "constraint: {constraint}");
    if result.meta.is_extension() {
        let _ = writeln!(s, "extension: reference meta-learner outside the weighted-ensemble family");
    }
    let _ = writeln!(s, "models: {}", result.model_names.join(","));
    let _ = writeln!(s, "seed: {}", result.seed);
    let _ = writeln!(s, "config_hash: {}", result.config_hash);
    let _ = writeln!(s, "curve_normalization: {CURVE_NORMALIZATION}");
    s
}

/// Writes every result file into `dir` atomically and returns their paths.
pub fn write_outputs(dir: &Path, result: &ExperimentResult, offline: &OfflineOutput) -> Result<OutputFiles> {
    std::fs::create_dir_all(dir)?;
    let mut curve = Vec::new();
    result.cumulative_curve.write_csv(&mut curve)?;
    let contents: [(&str, Vec<u8>); 4] = [
        (PREDICTIONS_FILE, predictions_csv(result)?),
        (CUMERR_FILE, curve),
        (SUMMARY_FILE, summary_text(result).into_bytes()),
        (MODEL_FILE, to_json(&offline.meta)?.into_bytes()),
    ];
    let mut files = Vec::new();
    for (name, bytes) in contents {
        let path = dir.join(name);
        write_atomic(&path, &bytes)?;
        files.push(path);
    }
    Ok(OutputFiles { files })
}
