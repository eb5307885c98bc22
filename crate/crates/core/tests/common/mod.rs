#![allow(dead_code)]

use std::path::PathBuf;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::Normal;

use secret_core::dataset::{ColumnKind, RawTable, Schema};
use secret_core::embeddings::EmbeddingTable;
use secret_core::experiment::{Comparisons, DatasetConfig, ExperimentConfig, ExperimentInputs};
use secret_core::hpo::{Dimension, HyperparameterSpace};

pub const N_NOISE: usize = 4;

fn gauss(rng: &mut ChaCha8Rng, mean: f64, sd: f64) -> f64 {
    mean + sd * rng.sample(Normal::new(0.0, 1.0).unwrap())
}

/// Three classes: "alpha" is far from the others in feature space, "beta"
/// and "gamma" overlap. Two informative columns plus noise columns.
pub fn overlap_table(seed: u64, per_class: usize) -> RawTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for (label, c0, c1) in [
        ("alpha", 3.0, 0.0),
        ("beta", 0.0, 0.5),
        ("gamma", 0.0, -0.5),
    ] {
        for _ in 0..per_class {
            let mut row = vec![
                format!("{}", gauss(&mut rng, c0, 1.0)),
                format!("{}", gauss(&mut rng, c1, 1.0)),
            ];
            for _ in 0..N_NOISE {
                row.push(format!("{}", gauss(&mut rng, 0.0, 1.0)));
            }
            row.push(label.to_owned());
            rows.push(row);
        }
    }
    let width = 2 + N_NOISE;
    let mut names: Vec<String> = (0..width).map(|i| format!("x{i}")).collect();
    names.push("label".into());
    RawTable::new(names, overlap_schema().columns, rows).unwrap()
}

pub fn overlap_schema() -> Schema {
    let mut cols = vec![ColumnKind::Numeric; 2 + N_NOISE];
    cols.push(ColumnKind::Label);
    Schema::new(cols)
}

/// Two well-separated classes on one feature.
pub fn separable_table(seed: u64, per_class: usize) -> RawTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for (label, c) in [("alpha", -3.0), ("beta", 3.0)] {
        for _ in 0..per_class {
            rows.push(vec![
                format!("{}", c + rng.gen_range(-1.0..1.0)),
                format!("{}", rng.gen_range(-1.0..1.0)),
                label.to_owned(),
            ]);
        }
    }
    RawTable::new(
        vec!["x0".into(), "x1".into(), "label".into()],
        vec![ColumnKind::Numeric, ColumnKind::Numeric, ColumnKind::Label],
        rows,
    )
    .unwrap()
}

/// "beta" and "gamma" close together, "alpha" far away. "gammoid" is a
/// synonym lying very close to "gamma".
pub fn overlap_vectors() -> EmbeddingTable {
    EmbeddingTable::from_entries([
        ("alpha", vec![4.0, 0.0, 0.0]),
        ("beta", vec![0.0, 0.6, 0.0]),
        ("gamma", vec![0.0, -0.6, 0.1]),
        ("gammoid", vec![0.02, -0.61, 0.09]),
    ])
    .unwrap()
}

pub fn small_forest_space(lower: i64, upper: i64) -> HyperparameterSpace {
    HyperparameterSpace::new(vec![Dimension::integer("n_trees", lower, upper)]).unwrap()
}

pub fn config(schema: Schema, folds: usize, budget: usize, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(DatasetConfig {
        path: PathBuf::from("<memory>"),
        schema,
        preprocess: Default::default(),
    });
    cfg.embeddings = Some(PathBuf::from("<memory>"));
    cfg.folds = folds;
    cfg.bo_iterations = budget;
    cfg.seed = seed;
    cfg.spaces.forest = small_forest_space(5, 60);
    cfg.comparisons = Comparisons {
        secret: true,
        feature_only: true,
        semantic_only: false,
        ensemble: false,
    };
    cfg
}

pub fn inputs(table: RawTable) -> ExperimentInputs {
    ExperimentInputs {
        table,
        embeddings: Some(overlap_vectors()),
    }
}
