mod common;

use std::path::Path;

use secret_core::dataset::{preprocess, ColumnKind, Schema};
use secret_core::experiment::{
    emit_report, load_report_json, report_to_csv, run_experiment, run_experiment_with, Comparisons,
    DatasetConfig, ExperimentConfig, ReportFormat, FEATURE_ONLY, SECRET,
};
use secret_core::fusion::{run_ensemble_baseline, run_secret, SecretConfig};
use secret_core::hpo::{BoOptions, TuningData, TuningMetric};
use secret_core::model::Learner;
use secret_core::{Dataset, LabelVectorSet};

fn separable_cfg() -> ExperimentConfig {
    let mut cfg = common::config(
        Schema::new(vec![
            ColumnKind::Numeric,
            ColumnKind::Numeric,
            ColumnKind::Label,
        ]),
        3,
        3,
        1,
    );
    cfg.comparisons = Comparisons {
        secret: true,
        feature_only: true,
        semantic_only: true,
        ensemble: true,
    };
    cfg
}

#[test]
fn separable_fixture_all_approaches_perfect() {
    let report = run_experiment_with(
        &separable_cfg(),
        &common::inputs(common::separable_table(1, 30)),
    )
    .unwrap();
    assert_eq!(report.folds.len(), 3);
    for (name, s) in &report.summary {
        assert_eq!(s.accuracy_mean, 1.0, "{name}");
        assert_eq!(s.f1_mean, 1.0, "{name}");
    }
    assert_eq!(report.summary.len(), 4);
}

#[test]
fn folds_share_one_split_and_cover_every_instance_once() {
    let report = run_experiment_with(
        &separable_cfg(),
        &common::inputs(common::separable_table(2, 30)),
    )
    .unwrap();
    let mut seen: Vec<usize> = report
        .folds
        .iter()
        .flat_map(|f| f.test_indices.clone())
        .collect();
    seen.sort_unstable();
    assert_eq!(seen, (0..60).collect::<Vec<_>>());
    for f in &report.folds {
        assert_eq!(f.split_hash.len(), 64);
        for o in f.approaches.values() {
            assert_eq!(o.predictions.len(), f.test_indices.len());
        }
    }
}

#[test]
fn report_round_trips_and_csv_has_one_row_per_fold_and_approach() {
    let report = run_experiment_with(
        &separable_cfg(),
        &common::inputs(common::separable_table(3, 30)),
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("r.json");
    emit_report(&report, &json, ReportFormat::Json).unwrap();
    assert_eq!(load_report_json(&json).unwrap(), report);

    let csv = report_to_csv(&report).unwrap();
    let rows = csv.lines().count() - 1;
    assert_eq!(rows, report.folds.len() * report.summary.len());
    let first = csv.lines().nth(1).unwrap();
    let acc: f64 = first.split(',').nth(2).unwrap().parse().unwrap();
    let name = first.split(',').nth(1).unwrap();
    assert_eq!(acc, report.folds[0].approaches[name].accuracy);
    assert!("xml".parse::<ReportFormat>().is_err());
}

#[test]
fn cmc_ten_folds() {
    let mut cfg = ExperimentConfig::new(DatasetConfig {
        path: Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/cmc.data"),
        schema: {
            use ColumnKind::*;
            Schema::new(vec![
                Numeric,
                Categorical,
                Categorical,
                Numeric,
                Categorical,
                Categorical,
                Categorical,
                Categorical,
                Categorical,
                Label,
            ])
        },
        preprocess: Default::default(),
    });
    cfg.comparisons = Comparisons {
        secret: false,
        feature_only: true,
        semantic_only: false,
        ensemble: false,
    };
    cfg.bo_iterations = 1;
    cfg.spaces.forest = common::small_forest_space(5, 5);
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.folds.len(), 10);
    assert_eq!(report.n_instances, 1473);
    assert_eq!(report.class_labels, vec!["1", "2", "3"]);
    assert!(report.depth_comparison.is_none());
    assert!(report
        .folds
        .iter()
        .all(|f| f.depth.contains_key(FEATURE_ONLY)));
}

fn datasets(seed: u64) -> (Dataset, Dataset, LabelVectorSet) {
    let ds = preprocess(&common::separable_table(seed, 30), &Default::default()).unwrap();
    let train: Vec<usize> = (0..ds.n_instances()).filter(|i| i % 3 != 0).collect();
    let test: Vec<usize> = (0..ds.n_instances()).filter(|i| i % 3 == 0).collect();
    let vs = LabelVectorSet::from_labels(&ds.class_labels, &common::overlap_vectors(), &|l| {
        l.to_owned()
    })
    .unwrap();
    (ds.select(&train), ds.select(&test), vs)
}

#[test]
fn secret_on_separable_data_is_perfect() {
    let (train, test, vs) = datasets(5);
    let fs = Learner::Forest(secret_core::forest::ForestParams::with_trees(10));
    let out = run_secret(&train, &test, &fs, &fs, &vs, &SecretConfig::default()).unwrap();
    assert_eq!(out.outcome.accuracy, 1.0);
}

#[test]
fn single_class_dataset() {
    let table = common::separable_table(6, 10);
    let rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .filter(|r| r[2] == "alpha")
        .cloned()
        .collect();
    let table =
        secret_core::RawTable::new(table.column_names.clone(), table.column_kinds.clone(), rows)
            .unwrap();
    let ds = preprocess(&table, &Default::default()).unwrap();
    let vs = LabelVectorSet::from_labels(&ds.class_labels, &common::overlap_vectors(), &|l| {
        l.to_owned()
    })
    .unwrap();
    let fs = Learner::Forest(secret_core::forest::ForestParams::with_trees(3));
    let out = run_secret(&ds, &ds, &fs, &fs, &vs, &SecretConfig::default()).unwrap();
    assert!(out.outcome.predictions.iter().all(|&p| p == 0));
    assert_eq!(out.outcome.accuracy, 1.0);
}

#[test]
fn ensemble_on_separable_data_is_perfect() {
    let (trainval, test, _) = datasets(7);
    let half: Vec<usize> = (0..trainval.n_instances()).collect();
    let (tr, va) = secret_core::dataset::train_val_split(&half, &trainval, 0.25, 0).unwrap();
    let (tr, va) = (trainval.select(&tr), trainval.select(&va));
    let fs = Learner::Forest(secret_core::forest::ForestParams::with_trees(5));
    let out = run_ensemble_baseline(
        TuningData {
            train: &tr,
            val: &va,
        },
        &trainval,
        &test,
        &fs,
        &fs,
        &common::small_forest_space(1, 5),
        &BoOptions::with_budget(3, 0),
        TuningMetric::Accuracy,
        &SecretConfig::default(),
    )
    .unwrap();
    assert_eq!(out.outcome.accuracy, 1.0);
    assert_eq!(out.tuning.result.history.len(), 3);
}

#[test]
fn identical_members_reproduce_the_single_model() {
    let (train, test, _) = datasets(8);
    let fs = Learner::Forest(secret_core::forest::ForestParams::with_trees(7));
    let model = fs.fit_classifier(&train, 3).unwrap();
    let conf = model.confidence(test.x.view()).unwrap();
    let fused = secret_core::fusion::fuse_and_decide(&conf, &conf).unwrap();
    assert_eq!(fused, model.predict(test.x.view()).unwrap());
}

#[test]
fn uniform_semantic_switch_reproduces_feature_only() {
    let mut cfg = common::config(common::overlap_schema(), 4, 3, 12);
    cfg.force_uniform_semantic = true;
    let report = run_experiment_with(&cfg, &common::inputs(common::overlap_table(12, 25))).unwrap();
    for f in &report.folds {
        assert_eq!(
            f.approaches[SECRET].predictions,
            f.approaches[FEATURE_ONLY].predictions
        );
    }
}

#[test]
fn missing_vectors_for_secret_is_a_config_error() {
    let mut cfg = common::config(common::overlap_schema(), 3, 3, 0);
    cfg.embeddings = None;
    assert!(cfg.validate().is_err());
    cfg.folds = 1;
    cfg.comparisons.secret = false;
    assert!(cfg.validate().is_err());
}

#[test]
fn out_of_vocabulary_label_is_reported() {
    let cfg = common::config(common::overlap_schema(), 3, 3, 0);
    let mut inputs = common::inputs(common::overlap_table(1, 10));
    inputs.embeddings = Some(
        secret_core::EmbeddingTable::from_entries([("alpha", vec![1.0]), ("beta", vec![2.0])])
            .unwrap(),
    );
    let err = run_experiment_with(&cfg, &inputs).unwrap_err();
    assert!(
        matches!(err, secret_core::Error::OutOfVocabulary { .. }),
        "{err}"
    );
}
