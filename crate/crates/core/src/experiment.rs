//! Config-driven experiments: stratified folds, tuning, every requested
//! approach on the same splits, and report emission.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{compare_depth_variance, node_depth_stats, DepthComparison, DepthReport};
use crate::dataset::{
    load_csv, preprocess, stratified_kfold, train_val_split, Dataset, Fold, PreprocessConfig,
    Preprocessor, RawTable, Schema,
};
use crate::embeddings::{load_embeddings, EmbeddingTable, LabelVectorSet};
use crate::error::{Error, Result};
use crate::forest::ForestParams;
use crate::fusion::{
    run_ensemble_baseline, run_feature_only, run_secret, run_semantic_only, select_regressor,
    Outcome, RegressorCandidate, RegressorSelection, SecretConfig, EPSILON_DECIDE,
};
use crate::hpo::{
    tune_feature_hyperparameters, tune_semantic_hyperparameters, tune_semantic_only, BoOptions,
    HyperparameterSpace, Tuned, TuningData, TuningMetric,
};
use crate::model::{Algorithm, Learner};
use crate::perceptron::MlpParams;
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressorChoice {
    Forest,
    Perceptron,
    /// Tune both and pick by validation performance.
    Auto,
}

impl RegressorChoice {
    fn candidates(self) -> Vec<Algorithm> {
        match self {
            RegressorChoice::Forest => vec![Algorithm::Forest],
            RegressorChoice::Perceptron => vec![Algorithm::Perceptron],
            RegressorChoice::Auto => vec![Algorithm::Forest, Algorithm::Perceptron],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub path: PathBuf,
    pub schema: Schema,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Comparisons {
    pub secret: bool,
    pub feature_only: bool,
    pub semantic_only: bool,
    pub ensemble: bool,
}

impl Default for Comparisons {
    fn default() -> Self {
        Comparisons {
            secret: true,
            feature_only: true,
            semantic_only: false,
            ensemble: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Spaces {
    pub forest: HyperparameterSpace,
    pub perceptron: HyperparameterSpace,
}

impl Default for Spaces {
    fn default() -> Self {
        Spaces {
            forest: Algorithm::Forest.default_space(),
            perceptron: Algorithm::Perceptron.default_space(),
        }
    }
}

impl Spaces {
    pub fn for_algorithm(&self, a: Algorithm) -> &HyperparameterSpace {
        match a {
            Algorithm::Forest => &self.forest,
            Algorithm::Perceptron => &self.perceptron,
        }
    }
}

fn default_folds() -> usize {
    10
}
fn default_validation_fraction() -> f64 {
    0.2
}
fn default_bo_iterations() -> usize {
    30
}
fn default_epsilon() -> f64 {
    EPSILON_DECIDE
}
fn default_fs() -> Algorithm {
    Algorithm::Forest
}
fn default_ss() -> RegressorChoice {
    RegressorChoice::Forest
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    /// Word-vector text file; needed by the approaches that use label vectors.
    #[serde(default)]
    pub embeddings: Option<PathBuf>,
    /// Replacement text for raw label values before the vector lookup.
    #[serde(default)]
    pub label_remap: BTreeMap<String, String>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
    #[serde(default = "default_fs")]
    pub fs_algo: Algorithm,
    #[serde(default = "default_ss")]
    pub ss_algo: RegressorChoice,
    #[serde(default = "default_fs")]
    pub ensemble_algo: Algorithm,
    #[serde(default)]
    pub spaces: Spaces,
    #[serde(default = "default_bo_iterations")]
    pub bo_iterations: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon_decide: f64,
    #[serde(default)]
    pub comparisons: Comparisons,
    /// Settings of the hyperparameters that are not tuned.
    #[serde(default)]
    pub forest: ForestParams,
    #[serde(default)]
    pub mlp: MlpParams,
    #[serde(default)]
    pub force_uniform_semantic: bool,
    #[serde(default)]
    pub tuning_metric: TuningMetric,
}

impl ExperimentConfig {
    pub fn new(dataset: DatasetConfig) -> Self {
        ExperimentConfig {
            dataset,
            embeddings: None,
            label_remap: BTreeMap::new(),
            folds: default_folds(),
            seed: 0,
            validation_fraction: default_validation_fraction(),
            fs_algo: default_fs(),
            ss_algo: default_ss(),
            ensemble_algo: default_fs(),
            spaces: Spaces::default(),
            bo_iterations: default_bo_iterations(),
            epsilon_decide: default_epsilon(),
            comparisons: Comparisons::default(),
            forest: ForestParams::default(),
            mlp: MlpParams::default(),
            force_uniform_semantic: false,
            tuning_metric: TuningMetric::default(),
        }
    }

    /// Reads a JSON or TOML config (by extension; anything other than
    /// `.toml` is parsed as JSON). Relative file paths are resolved against
    /// the config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ExperimentConfig = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        } else {
            serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        };
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.dataset.path = resolve(base, &cfg.dataset.path);
        cfg.embeddings = cfg.embeddings.map(|p| resolve(base, &p));
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Config(format!(
                "folds must be at least 2, got {}",
                self.folds
            )));
        }
        if self.bo_iterations == 0 {
            return Err(Error::Config("bo_iterations must be at least 1".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation_fraction must lie in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        if !(self.epsilon_decide > 0.0) {
            return Err(Error::Config("epsilon_decide must be positive".into()));
        }
        self.spaces.forest.validate()?;
        self.spaces.perceptron.validate()?;
        let c = self.comparisons;
        if !(c.secret || c.feature_only || c.semantic_only || c.ensemble) {
            return Err(Error::Config("no comparisons selected".into()));
        }
        if self.needs_vectors() && self.embeddings.is_none() {
            return Err(Error::Config(
                "an embeddings file is required for secret and semantic_only".into(),
            ));
        }
        Ok(())
    }

    pub fn needs_vectors(&self) -> bool {
        self.comparisons.secret || self.comparisons.semantic_only
    }

    pub fn learner(&self, a: Algorithm) -> Learner {
        match a {
            Algorithm::Forest => Learner::Forest(self.forest.clone()),
            Algorithm::Perceptron => Learner::Perceptron(self.mlp.clone()),
        }
    }

    pub fn remap_label(&self, label: &str) -> String {
        self.label_remap
            .get(label)
            .cloned()
            .unwrap_or_else(|| label.to_owned())
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Loaded inputs of an experiment.
#[derive(Debug, Clone)]
pub struct ExperimentInputs {
    pub table: RawTable,
    pub embeddings: Option<EmbeddingTable>,
}

impl ExperimentInputs {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let table = load_csv(&cfg.dataset.path, &cfg.dataset.schema)?;
        let embeddings = match &cfg.embeddings {
            Some(p) if cfg.needs_vectors() => Some(load_embeddings(p)?),
            _ => None,
        };
        Ok(ExperimentInputs { table, embeddings })
    }

    /// Label vectors for the table's classes (sorted label texts).
    pub fn label_vectors(&self, cfg: &ExperimentConfig) -> Result<LabelVectorSet> {
        let table = self
            .embeddings
            .as_ref()
            .ok_or_else(|| Error::Config("no embeddings loaded".into()))?;
        LabelVectorSet::from_labels(&self.table.label_texts(), table, &|l| cfg.remap_label(l))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub accuracy_mean: f64,
    /// Sample standard deviation across folds.
    pub accuracy_std: f64,
    pub f1_mean: f64,
    pub f1_std: f64,
}

impl Summary {
    fn of(outcomes: &[&Outcome]) -> Self {
        let acc: Vec<f64> = outcomes.iter().map(|o| o.accuracy).collect();
        let f1: Vec<f64> = outcomes.iter().map(|o| o.f1).collect();
        let (accuracy_mean, accuracy_std) = mean_std(&acc);
        let (f1_mean, f1_std) = mean_std(&f1);
        Summary {
            accuracy_mean,
            accuracy_std,
            f1_mean,
            f1_std,
        }
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (mean, crate::analysis::sample_variance(v).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    /// SHA-256 over the train, validation and test indices of this fold.
    pub split_hash: String,
    pub test_indices: Vec<usize>,
    pub feature_tuning: Tuned,
    /// Semantic tuning per candidate regressor algorithm.
    pub semantic_tuning: BTreeMap<String, Tuned>,
    pub regressor_selection: Option<RegressorSelection>,
    pub semantic_only_tuning: Option<Tuned>,
    pub ensemble_tuning: Option<Tuned>,
    /// Test outcome per approach.
    pub approaches: BTreeMap<String, Outcome>,
    /// Leaf-depth statistics of the forests, keyed by role.
    pub depth: BTreeMap<String, DepthReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub class_labels: Vec<String>,
    pub n_instances: usize,
    pub folds: Vec<FoldReport>,
    pub summary: BTreeMap<String, Summary>,
    /// Feature-space classifier forest against the semantic regressor forest.
    pub depth_comparison: Option<DepthComparison>,
}

pub const SECRET: &str = "secret";
pub const FEATURE_ONLY: &str = "feature_only";
pub const SEMANTIC_ONLY: &str = "semantic_only";
pub const ENSEMBLE: &str = "ensemble";

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let inputs = ExperimentInputs::load(cfg)?;
    run_experiment_with(cfg, &inputs)
}

/// Runs every fold (in parallel on the current rayon pool) and aggregates.
pub fn run_experiment_with(
    cfg: &ExperimentConfig,
    inputs: &ExperimentInputs,
) -> Result<ExperimentReport> {
    cfg.validate()?;
    let full = preprocess(&inputs.table, &cfg.dataset.preprocess)?;
    let vs = if cfg.needs_vectors() {
        Some(inputs.label_vectors(cfg)?)
    } else {
        None
    };
    let plan = stratified_kfold(&full, cfg.folds, cfg.seed)?;
    info!(
        "{} instances, {} classes, {} folds, BO budget {}",
        full.n_instances(),
        full.n_classes(),
        cfg.folds,
        cfg.bo_iterations
    );

    let folds: Vec<FoldReport> = plan
        .folds
        .par_iter()
        .enumerate()
        .map(|(i, fold)| run_fold(cfg, &inputs.table, &full, vs.as_ref(), i, fold))
        .collect::<Result<_>>()?;

    let mut summary = BTreeMap::new();
    for name in folds[0].approaches.keys() {
        let outcomes: Vec<&Outcome> = folds.iter().map(|f| &f.approaches[name]).collect();
        summary.insert(name.clone(), Summary::of(&outcomes));
    }
    let traditional: Vec<DepthReport> = folds
        .iter()
        .filter_map(|f| f.depth.get(FEATURE_ONLY).cloned())
        .collect();
    let secret: Vec<DepthReport> = folds
        .iter()
        .filter_map(|f| f.depth.get(SECRET).cloned())
        .collect();
    let depth_comparison = if !traditional.is_empty() && traditional.len() == secret.len() {
        Some(compare_depth_variance(&traditional, &secret)?)
    } else {
        None
    };

    Ok(ExperimentReport {
        config: cfg.clone(),
        class_labels: full.class_labels.clone(),
        n_instances: full.n_instances(),
        folds,
        summary,
        depth_comparison,
    })
}

fn split_hash(train: &[usize], val: &[usize], test: &[usize]) -> String {
    let mut h = Sha256::new();
    for (tag, part) in [(b'T', train), (b'V', val), (b'E', test)] {
        h.update([tag]);
        for &i in part {
            h.update((i as u64).to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

fn run_fold(
    cfg: &ExperimentConfig,
    table: &RawTable,
    full: &Dataset,
    vs: Option<&LabelVectorSet>,
    fold_id: usize,
    fold: &Fold,
) -> Result<FoldReport> {
    let fold_seed = derive_seed(cfg.seed, 1000 + fold_id as u64);
    let stage = |stage: &'static str| move |e: Error| e.in_fold(fold_id, stage);

    let (train_idx, val_idx) =
        train_val_split(&fold.train, full, cfg.validation_fraction, fold_seed)
            .map_err(stage("split"))?;
    let tune_prep = Preprocessor::fit(table, &train_idx, &cfg.dataset.preprocess)
        .map_err(stage("preprocess"))?;
    let train = tune_prep
        .transform(table, &train_idx)
        .map_err(stage("preprocess"))?;
    let val = tune_prep
        .transform(table, &val_idx)
        .map_err(stage("preprocess"))?;
    let final_prep = Preprocessor::fit(table, &fold.train, &cfg.dataset.preprocess)
        .map_err(stage("preprocess"))?;
    let trainval = final_prep
        .transform(table, &fold.train)
        .map_err(stage("preprocess"))?;
    let test = final_prep
        .transform(table, &fold.test)
        .map_err(stage("preprocess"))?;
    let data = TuningData {
        train: &train,
        val: &val,
    };
    let opts = BoOptions::with_budget(cfg.bo_iterations, derive_seed(fold_seed, 1));
    let secret_cfg = SecretConfig {
        epsilon_decide: cfg.epsilon_decide,
        seed: derive_seed(fold_seed, 2),
        force_uniform_semantic: cfg.force_uniform_semantic,
    };

    let fs_base = cfg.learner(cfg.fs_algo);
    let feature_tuning = tune_feature_hyperparameters(
        data,
        &fs_base,
        cfg.spaces.for_algorithm(cfg.fs_algo),
        &opts,
        cfg.tuning_metric,
    )
    .map_err(stage("feature tuning"))?;
    let fs = fs_base
        .with_hyperparameters(
            &feature_tuning.result.names,
            &feature_tuning.result.best_point,
        )
        .map_err(stage("feature tuning"))?;

    let mut report = FoldReport {
        fold: fold_id,
        split_hash: split_hash(&train_idx, &val_idx, &fold.test),
        test_indices: fold.test.clone(),
        feature_tuning,
        semantic_tuning: BTreeMap::new(),
        regressor_selection: None,
        semantic_only_tuning: None,
        ensemble_tuning: None,
        approaches: BTreeMap::new(),
        depth: BTreeMap::new(),
    };

    if cfg.comparisons.feature_only {
        let (outcome, model) =
            run_feature_only(&trainval, &test, &fs, &secret_cfg).map_err(stage("feature only"))?;
        if let Some(f) = model.forest() {
            let d = node_depth_stats(f, None).map_err(stage("depth analysis"))?;
            report
                .depth
                .insert(FEATURE_ONLY.into(), d.with_fold(fold_id));
        }
        report.approaches.insert(FEATURE_ONLY.into(), outcome);
    }

    if cfg.comparisons.secret {
        let vs = vs.expect("validated: vectors loaded");
        let mut tuned_learners = Vec::new();
        let mut candidates = Vec::new();
        for algo in cfg.ss_algo.candidates() {
            let tuned = tune_semantic_hyperparameters(
                data,
                &fs,
                vs,
                &cfg.learner(algo),
                cfg.spaces.for_algorithm(algo),
                &opts,
                cfg.tuning_metric,
            )
            .map_err(stage("semantic tuning"))?;
            let best = tuned.best_score();
            candidates.push(RegressorCandidate {
                algorithm: algo,
                accuracy: best.accuracy,
                f1: best.f1,
            });
            let learner = cfg
                .learner(algo)
                .with_hyperparameters(&tuned.result.names, &tuned.result.best_point)
                .map_err(stage("semantic tuning"))?;
            tuned_learners.push((algo, learner));
            report.semantic_tuning.insert(algo.name().into(), tuned);
        }
        let selection = select_regressor(&candidates).map_err(stage("regressor selection"))?;
        let several = tuned_learners.len() > 1;
        for (algo, ss) in &tuned_learners {
            let out =
                run_secret(&trainval, &test, &fs, ss, vs, &secret_cfg).map_err(stage("secret"))?;
            let primary = *algo == selection.primary();
            if primary {
                if let Some(f) = out.regressor.forest() {
                    let d = node_depth_stats(f, Some(vs)).map_err(stage("depth analysis"))?;
                    report.depth.insert(SECRET.into(), d.with_fold(fold_id));
                }
            }
            if several {
                report
                    .approaches
                    .insert(format!("{SECRET}_{}", algo.name()), out.outcome.clone());
            }
            if primary {
                report.approaches.insert(SECRET.into(), out.outcome);
            }
        }
        report.regressor_selection = Some(selection);
    }

    if cfg.comparisons.semantic_only {
        let vs = vs.expect("validated: vectors loaded");
        let algo = match &report.regressor_selection {
            Some(sel) => sel.primary(),
            None => cfg.ss_algo.candidates()[0],
        };
        let tuned = tune_semantic_only(
            data,
            vs,
            &cfg.learner(algo),
            cfg.spaces.for_algorithm(algo),
            &opts,
            cfg.tuning_metric,
        )
        .map_err(stage("semantic-only tuning"))?;
        let ss = cfg
            .learner(algo)
            .with_hyperparameters(&tuned.result.names, &tuned.result.best_point)
            .map_err(stage("semantic-only tuning"))?;
        let (outcome, _) = run_semantic_only(&trainval, &test, &ss, vs, &secret_cfg)
            .map_err(stage("semantic only"))?;
        report.semantic_only_tuning = Some(tuned);
        report.approaches.insert(SEMANTIC_ONLY.into(), outcome);
    }

    if cfg.comparisons.ensemble {
        let out = run_ensemble_baseline(
            data,
            &trainval,
            &test,
            &fs,
            &cfg.learner(cfg.ensemble_algo),
            cfg.spaces.for_algorithm(cfg.ensemble_algo),
            &opts,
            cfg.tuning_metric,
            &secret_cfg,
        )
        .map_err(stage("ensemble"))?;
        report.ensemble_tuning = Some(out.tuning);
        report.approaches.insert(ENSEMBLE.into(), out.outcome);
    }

    info!(
        "fold {fold_id}: {}",
        report
            .approaches
            .iter()
            .map(|(k, o)| format!("{k} acc {:.3} f1 {:.3}", o.accuracy, o.f1))
            .collect::<Vec<_>>()
            .join(", ")
    );
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::UnsupportedFormat(other.to_owned())),
        }
    }
}

pub fn report_to_json(report: &ExperimentReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(report)?)
}

/// One row per (fold, approach).
pub fn report_to_csv(report: &ExperimentReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["fold", "approach", "accuracy", "f1", "split_hash"])?;
    for f in &report.folds {
        for (name, o) in &f.approaches {
            w.write_record([
                f.fold.to_string(),
                name.clone(),
                // shortest representation that round-trips
                format!("{:?}", o.accuracy),
                format!("{:?}", o.f1),
                f.split_hash.clone(),
            ])?;
        }
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Config(format!("csv buffer: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn emit_report(
    report: &ExperimentReport,
    path: impl AsRef<Path>,
    format: ReportFormat,
) -> Result<()> {
    let path = path.as_ref();
    let text = match format {
        ReportFormat::Json => report_to_json(report)?,
        ReportFormat::Csv => report_to_csv(report)?,
    };
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_report_json(path: impl AsRef<Path>) -> Result<ExperimentReport> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// What `validate` checks: the table loads, folds can be carved, and every
/// label resolves to a vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationSummary {
    pub n_rows: usize,
    pub n_features: usize,
    pub class_labels: Vec<String>,
    pub class_counts: Vec<usize>,
    /// Label text used for the vector lookup, per class.
    pub lookup_texts: Vec<String>,
    pub vector_dim: Option<usize>,
}

pub fn validate_experiment(cfg: &ExperimentConfig) -> Result<ValidationSummary> {
    cfg.validate()?;
    let inputs = ExperimentInputs::load(cfg)?;
    let full = preprocess(&inputs.table, &cfg.dataset.preprocess)?;
    stratified_kfold(&full, cfg.folds, cfg.seed)?;
    let vector_dim = if cfg.needs_vectors() {
        Some(inputs.label_vectors(cfg)?.dim())
    } else {
        None
    };
    Ok(ValidationSummary {
        n_rows: full.n_instances(),
        n_features: full.n_features(),
        lookup_texts: full
            .class_labels
            .iter()
            .map(|l| cfg.remap_label(l))
            .collect(),
        class_counts: full.class_counts(),
        class_labels: full.class_labels,
        vector_dim,
    })
}
