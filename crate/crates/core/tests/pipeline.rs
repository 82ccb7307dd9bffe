//! Two-phase experiments on generated data.

use ctxens_core::baselearners::BasePredictorSpec;
use ctxens_core::constraints::ConstraintKind;
use ctxens_core::datagen::{self, MixKind, SyntheticSpec};
use ctxens_core::frame::{FeatureMatrix, SplitSpec, TimeSeriesFrame};
use ctxens_core::mlp;
use ctxens_core::params::{Hyperparams, ParamValue};
use ctxens_core::pipeline::{
    self, write_outputs, DataSource, ExperimentConfig, MetaKind, MetaModel, PREDICTIONS_FILE, SUMMARY_FILE,
};

fn passthrough_config(mix: MixKind, meta: MetaKind, constraint: Option<ConstraintKind>) -> ExperimentConfig {
    let feature = format!("mod{}", mix.period());
    ExperimentConfig {
        data: DataSource::Synthetic {
            mix,
            length: 730,
            seed: 0,
            noise_sigma: 1.0,
        },
        split: None,
        bases: vec![
            BasePredictorSpec::passthrough("arma", "y1"),
            BasePredictorSpec::passthrough("piecewise", "y2"),
        ],
        meta,
        constraint,
        meta_hyperparams: Hyperparams::new()
            .set("learning_rate", ParamValue::Float(3e-5))
            .set("epochs", ParamValue::Int(300)),
        meta_features: Some(vec![feature]),
        one_hot: Vec::new(),
        seed: 0,
        output_dir: "out".into(),
    }
}

fn forecasting_config() -> ExperimentConfig {
    ExperimentConfig {
        data: DataSource::Synthetic {
            mix: MixKind::B,
            length: 400,
            seed: 2,
            noise_sigma: 1.0,
        },
        split: Some(SplitSpec::new(200, 300, 400).unwrap()),
        bases: vec![
            BasePredictorSpec::linear_ar("ar", vec![1, 2, 7]),
            BasePredictorSpec::boosted_trees("trees", vec![1, 7]).with_exog(&["mod4"]),
        ],
        meta: MetaKind::Gbdt,
        constraint: Some(ConstraintKind::Convex),
        meta_hyperparams: Hyperparams::new().set("num_rounds", ParamValue::Int(40)),
        meta_features: None,
        one_hot: Vec::new(),
        seed: 3,
        output_dir: "out".into(),
    }
}

/// Replaces every value and side-information cell from `from` on.
fn poison(frame: &TimeSeriesFrame, from: usize) -> TimeSeriesFrame {
    let sentinel = 1e9;
    let values = frame
        .values()
        .iter()
        .enumerate()
        .map(|(r, v)| if r >= from { sentinel } else { *v })
        .collect();
    let side = frame.side_info();
    let cols = side
        .names()
        .iter()
        .map(|n| {
            let c = side.column(n).unwrap();
            (n.clone(), c.iter().enumerate().map(|(r, v)| if r >= from { sentinel } else { *v }).collect())
        })
        .collect();
    TimeSeriesFrame::new(values, FeatureMatrix::from_columns(cols).unwrap()).unwrap()
}

#[test]
fn offline_phase_never_reads_test_rows() {
    let config = forecasting_config();
    let frame = pipeline::load_frame(&config).unwrap();
    let clean = pipeline::run_offline_phase(&config, &frame).unwrap();
    let dirty = pipeline::run_offline_phase(&config, &poison(&frame, 300)).unwrap();
    assert_eq!(clean, dirty);

    let config = passthrough_config(MixKind::A, MetaKind::Mlp, Some(ConstraintKind::Affine));
    let frame = pipeline::load_frame(&config).unwrap();
    let clean = pipeline::run_offline_phase(&config, &frame).unwrap();
    let dirty = pipeline::run_offline_phase(&config, &poison(&frame, 630)).unwrap();
    assert_eq!(clean, dirty);
}

#[test]
fn experiments_are_reproducible() {
    let config = forecasting_config();
    let (o1, r1) = pipeline::run_experiment(&config).unwrap();
    let (o2, r2) = pipeline::run_experiment(&config).unwrap();
    assert_eq!(o1, o2);
    assert_eq!(r1, r2);
    assert_eq!(r1.final_cumulative_error.to_bits(), r2.final_cumulative_error.to_bits());
}

#[test]
fn recorded_ensemble_is_weighted_sum() {
    for (meta, constraint) in [
        (MetaKind::Gbdt, Some(ConstraintKind::Unconstrained)),
        (MetaKind::Gbdt, Some(ConstraintKind::Affine)),
        (MetaKind::Gbdt, Some(ConstraintKind::Convex)),
        (MetaKind::BestBase, None),
        (MetaKind::UniformAverage, None),
    ] {
        let mut config = forecasting_config();
        config.meta = meta;
        config.constraint = constraint;
        if meta != MetaKind::Gbdt {
            config.meta_hyperparams = Hyperparams::new();
        }
        let (_, result) = pipeline::run_experiment(&config).unwrap();
        for s in &result.records {
            let w = s.weights.as_ref().unwrap();
            let sum: f64 = w.iter().zip(&s.base_preds).map(|(a, b)| a * b).sum();
            assert!((sum - s.ensemble).abs() <= 1e-12, "{meta}");
        }
    }
}

#[test]
fn cumulative_curve_is_running_mean_of_squared_errors() {
    let (_, result) = pipeline::run_experiment(&forecasting_config()).unwrap();
    let mut acc = 0.0;
    for (j, (s, (t, v))) in result.records.iter().zip(&result.cumulative_curve.points).enumerate() {
        acc += (s.y - s.ensemble).powi(2);
        assert_eq!(*t, s.t);
        assert!((v - acc / (j + 1) as f64).abs() <= 1e-12 * (1.0 + v.abs()));
    }
    assert_eq!(result.records[0].t, 301);
    assert!((result.total_squared_error - acc).abs() <= 1e-9 * acc);
    assert_eq!(result.final_cumulative_error, result.cumulative_curve.last().unwrap());
}

#[test]
fn convex_mlp_fits_mix_a_training_window() {
    let config = passthrough_config(MixKind::A, MetaKind::Mlp, Some(ConstraintKind::Convex));
    let (offline, _) = pipeline::run_experiment(&config).unwrap();
    let MetaModel::Mlp(model) = &offline.meta else { panic!("expected an MLP meta") };
    let mse = mlp::ensemble_mse(model, &offline.side_info, &offline.harvested, &offline.targets).unwrap();
    assert!(mse < 1e-2, "training mse {mse}");
}

#[test]
fn convex_beats_conventional_linear_on_mix_b() {
    let convex = passthrough_config(MixKind::B, MetaKind::Mlp, Some(ConstraintKind::Convex));
    let mut linear = passthrough_config(MixKind::B, MetaKind::ConventionalLinear, None);
    linear.meta_hyperparams = Hyperparams::new();
    let (_, rc) = pipeline::run_experiment(&convex).unwrap();
    let (_, rl) = pipeline::run_experiment(&linear).unwrap();
    assert!(
        rl.final_cumulative_error >= 10.0 * rc.final_cumulative_error,
        "convex {} vs linear {}",
        rc.final_cumulative_error,
        rl.final_cumulative_error
    );
}

#[test]
fn conventional_mlp_records_no_weights() {
    let mut config = forecasting_config();
    config.meta = MetaKind::ConventionalMlp;
    config.constraint = None;
    config.meta_hyperparams = Hyperparams::new().set("epochs", ParamValue::Int(5));
    let (offline, result) = pipeline::run_experiment(&config).unwrap();
    assert!(result.records.iter().all(|s| s.weights.is_none()));
    let dir = tempfile::tempdir().unwrap();
    write_outputs(dir.path(), &result, &offline).unwrap();
    let text = std::fs::read_to_string(dir.path().join(PREDICTIONS_FILE)).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t,y,pred_ar,pred_trees,w_ar,w_trees,ensemble");
    assert!(lines.next().unwrap().contains(",,,"));
}

#[test]
fn outputs_round_trip_through_csv() {
    let (offline, result) = pipeline::run_experiment(&forecasting_config()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = write_outputs(dir.path(), &result, &offline).unwrap();
    assert!(files.files.iter().all(|p| p.exists()));
    let summary = std::fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap();
    assert!(summary.contains(&format!("final_cumulative_error: {}", result.final_cumulative_error)));

    let mut rdr = csv::Reader::from_path(dir.path().join(PREDICTIONS_FILE)).unwrap();
    for (rec, s) in rdr.records().zip(&result.records) {
        let rec = rec.unwrap();
        let ens: f64 = rec[rec.len() - 1].parse().unwrap();
        assert_eq!(ens.to_bits(), s.ensemble.to_bits());
    }
}

#[test]
fn csv_source_matches_in_memory_frame() {
    let data = datagen::generate(&SyntheticSpec { length: 300, ..SyntheticSpec::new(MixKind::C, 4) }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("yc.csv");
    data.frame.write_csv(std::fs::File::create(&path).unwrap()).unwrap();

    let mut config = forecasting_config();
    config.data = DataSource::Csv { path };
    config.split = Some(SplitSpec::new(150, 220, 300).unwrap());
    let (_, from_csv) = pipeline::run_experiment(&config).unwrap();
    let (_, in_memory) = pipeline::run_experiment_on(&config, &data.frame).unwrap();
    assert_eq!(from_csv.records, in_memory.records);
}
