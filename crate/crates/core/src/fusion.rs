//! Semantic confidence, dual-space decisions, regressor selection and the
//! two-classifier ensemble baseline.

use log::warn;
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::confidence::{argmax, ConfidenceMatrix};
use crate::dataset::Dataset;
use crate::embeddings::LabelVectorSet;
use crate::error::{Error, Result};
use crate::hpo::{
    bayesian_optimize, model_seed, BoOptions, HyperparameterSpace, Tuned, TuningData, TuningMetric,
    ValidationScore,
};
use crate::metrics::{accuracy, accuracy_with_abstentions, macro_f1, macro_f1_with_abstentions};
use crate::model::{Algorithm, Classifier, Learner, Regressor};
use crate::rng::derive_seed;

/// Additive shift used when deciding labels.
pub const EPSILON_DECIDE: f64 = 1e-200;
/// Additive shift used while tuning; exact overlaps then diverge.
pub const EPSILON_TUNE: f64 = 0.0;

/// Normalized inverse squared distance from each regressor output to every
/// label vector:
///
/// `conf[j][k] = (1 / (d2[j][k] + eps)) / sum_m (1 / (d2[j][m] + eps))`
///
/// Computed as `s / (d2 + eps)` with `s = min_m (d2[j][m] + eps)` so the
/// largest term is exactly 1 and nothing overflows. With `eps == 0` a row
/// whose output coincides with a label vector has no defined value and is
/// flagged diverged.
pub fn semantic_confidence(
    ss_out: ArrayView2<'_, f64>,
    vs: &LabelVectorSet,
    epsilon: f64,
) -> Result<ConfidenceMatrix> {
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "additive shift must be non-negative, got {epsilon}"
        )));
    }
    if ss_out.ncols() != vs.dim() {
        return Err(Error::Shape(format!(
            "regressor outputs have {} dimensions, label vectors {}",
            ss_out.ncols(),
            vs.dim()
        )));
    }
    let c = vs.n_classes();
    let mut scores = Array2::zeros((ss_out.nrows(), c));
    let mut diverged = vec![false; ss_out.nrows()];
    let mut min_positive = f64::INFINITY;
    for (j, out) in ss_out.rows().into_iter().enumerate() {
        let d2 = vs.squared_distances_to(out);
        for &d in &d2 {
            if d > 0.0 && d < min_positive {
                min_positive = d;
            }
        }
        let shifted: Vec<f64> = d2.iter().map(|d| d + epsilon).collect();
        let s = shifted.iter().copied().fold(f64::INFINITY, f64::min);
        if s == 0.0 {
            diverged[j] = true;
            scores.row_mut(j).fill(f64::NAN);
            continue;
        }
        let w: Vec<f64> = shifted.iter().map(|v| s / v).collect();
        let total: f64 = w.iter().sum();
        for (k, wk) in w.iter().enumerate() {
            scores[[j, k]] = wk / total;
        }
    }
    if epsilon > 0.0 && epsilon >= min_positive {
        warn!(
            "additive shift {epsilon:e} is not below the smallest positive squared distance {min_positive:e}"
        );
    }
    ConfidenceMatrix::with_diverged(scores, diverged)
}

/// Averages the two confidence matrices and takes the row-wise argmax
/// (lowest class id on ties). Rows diverged in either input yield `None`.
pub fn fuse(fs: &ConfidenceMatrix, ss: &ConfidenceMatrix) -> Result<Vec<Option<usize>>> {
    if fs.scores().dim() != ss.scores().dim() {
        return Err(Error::Shape(format!(
            "confidence shapes differ: {:?} vs {:?}",
            fs.scores().dim(),
            ss.scores().dim()
        )));
    }
    let overall = (fs.scores() + ss.scores()) / 2.0;
    Ok(overall
        .rows()
        .into_iter()
        .enumerate()
        .map(|(j, row)| (!fs.is_diverged(j) && !ss.is_diverged(j)).then(|| argmax(row)))
        .collect())
}

pub fn fuse_and_decide(fs: &ConfidenceMatrix, ss: &ConfidenceMatrix) -> Result<Vec<usize>> {
    fuse(fs, ss)?
        .into_iter()
        .enumerate()
        .map(|(row, p)| p.ok_or(Error::Diverged { row }))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecretConfig {
    pub epsilon_decide: f64,
    pub seed: u64,
    /// Replace the semantic confidences by the uniform matrix. Debug switch:
    /// the decision then reduces to the feature-space classifier's argmax.
    #[serde(default)]
    pub force_uniform_semantic: bool,
}

impl Default for SecretConfig {
    fn default() -> Self {
        SecretConfig {
            epsilon_decide: EPSILON_DECIDE,
            seed: 0,
            force_uniform_semantic: false,
        }
    }
}

impl SecretConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_decide > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "decision shift must be positive, got {}",
                self.epsilon_decide
            )));
        }
        Ok(())
    }

    fn fs_seed(&self) -> u64 {
        derive_seed(self.seed, 0xF5)
    }

    fn ss_seed(&self) -> u64 {
        derive_seed(self.seed, 0x55)
    }
}

/// Test-set predictions and their scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub predictions: Vec<usize>,
    pub accuracy: f64,
    pub f1: f64,
}

impl Outcome {
    pub fn score(truth: &[usize], predictions: Vec<usize>, n_classes: usize) -> Result<Self> {
        Ok(Outcome {
            accuracy: accuracy(truth, &predictions)?,
            f1: macro_f1(truth, &predictions, n_classes)?,
            predictions,
        })
    }
}

#[derive(Debug, Clone)]
pub struct SecretOutcome {
    pub outcome: Outcome,
    pub classifier: Classifier,
    pub regressor: Regressor,
}

/// Trains both spaces on `trainval`, then labels `test` by fused confidence.
pub fn run_secret(
    trainval: &Dataset,
    test: &Dataset,
    fs: &Learner,
    ss: &Learner,
    vs: &LabelVectorSet,
    cfg: &SecretConfig,
) -> Result<SecretOutcome> {
    cfg.validate()?;
    check_label_vectors(trainval, vs)?;
    let classifier = fs.fit_classifier(trainval, cfg.fs_seed())?;
    let targets = vs.targets_for(&trainval.y);
    let regressor = ss.fit_regressor(trainval.x.view(), targets.view(), cfg.ss_seed())?;

    let fs_conf = classifier.confidence(test.x.view())?;
    let ss_conf = if cfg.force_uniform_semantic {
        ConfidenceMatrix::uniform(test.n_instances(), vs.n_classes())
    } else {
        let out = regressor.predict(test.x.view())?;
        semantic_confidence(out.view(), vs, cfg.epsilon_decide)?
    };
    let predictions = fuse_and_decide(&fs_conf, &ss_conf)?;
    Ok(SecretOutcome {
        outcome: Outcome::score(&test.y, predictions, trainval.n_classes())?,
        classifier,
        regressor,
    })
}

/// Feature-space classifier alone, trained on `trainval`.
pub fn run_feature_only(
    trainval: &Dataset,
    test: &Dataset,
    fs: &Learner,
    cfg: &SecretConfig,
) -> Result<(Outcome, Classifier)> {
    let classifier = fs.fit_classifier(trainval, cfg.fs_seed())?;
    let predictions = classifier.predict(test.x.view())?;
    Ok((
        Outcome::score(&test.y, predictions, trainval.n_classes())?,
        classifier,
    ))
}

/// Semantic regressor alone: each test instance gets the class whose label
/// vector is nearest to the regressor output.
pub fn run_semantic_only(
    trainval: &Dataset,
    test: &Dataset,
    ss: &Learner,
    vs: &LabelVectorSet,
    cfg: &SecretConfig,
) -> Result<(Outcome, Regressor)> {
    check_label_vectors(trainval, vs)?;
    let targets = vs.targets_for(&trainval.y);
    let regressor = ss.fit_regressor(trainval.x.view(), targets.view(), cfg.ss_seed())?;
    let out = regressor.predict(test.x.view())?;
    let predictions = out.rows().into_iter().map(|r| vs.nearest(r)).collect();
    Ok((
        Outcome::score(&test.y, predictions, trainval.n_classes())?,
        regressor,
    ))
}

fn check_label_vectors(ds: &Dataset, vs: &LabelVectorSet) -> Result<()> {
    if vs.n_classes() != ds.n_classes() {
        return Err(Error::Shape(format!(
            "{} label vectors for {} classes",
            vs.n_classes(),
            ds.n_classes()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorCandidate {
    pub algorithm: Algorithm,
    /// Validation scores as fractions in [0, 1].
    pub accuracy: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressorSelection {
    Chosen(Algorithm),
    /// The leading candidates are within one point on both accuracy and F1.
    Inconclusive(Vec<Algorithm>),
}

impl RegressorSelection {
    /// The candidate to use when a single one is needed: the chosen one, or
    /// the first of an inconclusive set (highest validation accuracy).
    pub fn primary(&self) -> Algorithm {
        match self {
            RegressorSelection::Chosen(a) => *a,
            RegressorSelection::Inconclusive(all) => all[0],
        }
    }
}

pub const SELECTION_MARGIN: f64 = 0.01;

/// Picks the candidate with the highest validation accuracy (first on ties).
/// Candidates within [`SELECTION_MARGIN`] of it on both accuracy and F1 make
/// the selection inconclusive.
pub fn select_regressor(candidates: &[RegressorCandidate]) -> Result<RegressorSelection> {
    let first = candidates
        .first()
        .ok_or(Error::Empty("no regressor candidates"))?;
    let best = candidates
        .iter()
        .fold(first, |b, c| if c.accuracy > b.accuracy { c } else { b });
    // absorb rounding in differences such as 0.80 - 0.79
    let within = |a: f64, b: f64| (a - b).abs() <= SELECTION_MARGIN + 1e-12;
    let mut tied = vec![best.algorithm];
    for c in candidates {
        if !std::ptr::eq(c, best) && within(c.accuracy, best.accuracy) && within(c.f1, best.f1) {
            tied.push(c.algorithm);
        }
    }
    Ok(if tied.len() == 1 {
        RegressorSelection::Chosen(best.algorithm)
    } else {
        RegressorSelection::Inconclusive(tied)
    })
}

#[derive(Debug, Clone)]
pub struct EnsembleOutcome {
    pub outcome: Outcome,
    pub tuning: Tuned,
    pub second: Learner,
}

/// Tunes a second feature-space classifier against fused validation
/// performance with `first` fixed, then retrains both on `trainval` and
/// labels `test` by averaged confidence.
#[allow(clippy::too_many_arguments)]
pub fn run_ensemble_baseline(
    data: TuningData<'_>,
    trainval: &Dataset,
    test: &Dataset,
    first: &Learner,
    second: &Learner,
    space: &HyperparameterSpace,
    opts: &BoOptions,
    metric: TuningMetric,
    cfg: &SecretConfig,
) -> Result<EnsembleOutcome> {
    let tuning = tune_ensemble_member(data, first, second, space, opts, metric)?;
    let second = second.with_hyperparameters(&tuning.result.names, &tuning.result.best_point)?;

    let m1 = first.fit_classifier(trainval, cfg.fs_seed())?;
    let m2 = second.fit_classifier(trainval, cfg.ss_seed())?;
    let predictions = fuse_and_decide(
        &m1.confidence(test.x.view())?,
        &m2.confidence(test.x.view())?,
    )?;
    Ok(EnsembleOutcome {
        outcome: Outcome::score(&test.y, predictions, trainval.n_classes())?,
        tuning,
        second,
    })
}

pub fn tune_ensemble_member(
    data: TuningData<'_>,
    first: &Learner,
    second: &Learner,
    space: &HyperparameterSpace,
    opts: &BoOptions,
    metric: TuningMetric,
) -> Result<Tuned> {
    let names = space.names();
    let seed = model_seed(opts);
    let c = data.train.n_classes();
    let conf1 = first
        .fit_classifier(data.train, seed)?
        .confidence(data.val.x.view())?;
    let second_seed = derive_seed(seed, 2);
    let mut scores = Vec::new();
    let result = bayesian_optimize(
        |point| {
            let learner = second.with_hyperparameters(&names, point)?;
            let conf2 = learner
                .fit_classifier(data.train, second_seed)?
                .confidence(data.val.x.view())?;
            let pred = fuse(&conf1, &conf2)?;
            let score = ValidationScore {
                accuracy: accuracy_with_abstentions(&data.val.y, &pred)?,
                f1: macro_f1_with_abstentions(&data.val.y, &pred, c)?,
            };
            scores.push(score);
            Ok(match metric {
                TuningMetric::Accuracy => score.accuracy,
                TuningMetric::MacroF1 => score.f1,
            })
        },
        space,
        opts,
    )?;
    Ok(Tuned { result, scores })
}
