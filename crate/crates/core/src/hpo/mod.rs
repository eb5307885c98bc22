//! Bayesian optimization over hyperparameters and the tuning loops built on
//! it.
//!
//! [`bayesian_optimize`] evaluates a Latin-hypercube initial design and then
//! proposes points by maximizing expected improvement under a GP surrogate.
//! The initial design and each later iteration draw from their own seeded
//! streams, so the points evaluated with budget `b` are a prefix of those
//! evaluated with budget `b + 1`.

pub mod gp;

use std::collections::BTreeMap;

use log::debug;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::embeddings::LabelVectorSet;
use crate::error::{Error, Result};
use crate::fusion::{fuse, semantic_confidence};
use crate::metrics::{accuracy_with_abstentions, macro_f1_with_abstentions};
use crate::model::Learner;
use crate::rng::{derive_seed, rng_for};

pub use gp::{KernelParams, Surrogate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DimKind {
    Integer,
    Real,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dimension {
    pub name: String,
    pub kind: DimKind,
    pub lower: f64,
    pub upper: f64,
}

impl Dimension {
    pub fn integer(name: impl Into<String>, lower: i64, upper: i64) -> Self {
        Dimension {
            name: name.into(),
            kind: DimKind::Integer,
            lower: lower as f64,
            upper: upper as f64,
        }
    }

    pub fn real(name: impl Into<String>, lower: f64, upper: f64) -> Self {
        Dimension {
            name: name.into(),
            kind: DimKind::Real,
            lower,
            upper,
        }
    }

    fn scale_unit(&self, u: f64) -> f64 {
        let v = self.lower + u.clamp(0.0, 1.0) * (self.upper - self.lower);
        match self.kind {
            DimKind::Integer => v.round().clamp(self.lower, self.upper),
            DimKind::Real => v,
        }
    }

    fn to_unit(&self, v: f64) -> f64 {
        if self.upper > self.lower {
            (v - self.lower) / (self.upper - self.lower)
        } else {
            0.5
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperparameterSpace {
    pub dims: Vec<Dimension>,
}

impl HyperparameterSpace {
    pub fn new(dims: Vec<Dimension>) -> Result<Self> {
        let space = HyperparameterSpace { dims };
        space.validate()?;
        Ok(space)
    }

    /// Single-point dimensions (`lower == upper`) are allowed.
    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() {
            return Err(Error::InvalidArgument(
                "hyperparameter space has no dimensions".into(),
            ));
        }
        for d in &self.dims {
            if !(d.lower <= d.upper) || !d.lower.is_finite() || !d.upper.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "dimension '{}' has invalid bounds [{}, {}]",
                    d.name, d.lower, d.upper
                )));
            }
            if d.kind == DimKind::Integer && (d.lower.fract() != 0.0 || d.upper.fract() != 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "integer dimension '{}' needs integral bounds",
                    d.name
                )));
            }
        }
        Ok(())
    }

    pub fn names(&self) -> Vec<String> {
        self.dims.iter().map(|d| d.name.clone()).collect()
    }

    fn scale_unit(&self, u: &[f64]) -> Vec<f64> {
        self.dims
            .iter()
            .zip(u)
            .map(|(d, &v)| d.scale_unit(v))
            .collect()
    }

    fn to_unit(&self, p: &[f64]) -> Vec<f64> {
        self.dims
            .iter()
            .zip(p)
            .map(|(d, &v)| d.to_unit(v))
            .collect()
    }

    /// Number of grid points when every dimension is integer.
    pub fn grid_cardinality(&self) -> Option<u128> {
        self.dims.iter().try_fold(1u128, |acc, d| match d.kind {
            DimKind::Integer => Some(acc * ((d.upper - d.lower) as u128 + 1)),
            DimKind::Real if d.lower == d.upper => Some(acc),
            DimKind::Real => None,
        })
    }

    fn grid_points(&self) -> Vec<Vec<f64>> {
        let mut points = vec![Vec::new()];
        for d in &self.dims {
            let values: Vec<f64> = match d.kind {
                DimKind::Integer => (d.lower as i64..=d.upper as i64)
                    .map(|v| v as f64)
                    .collect(),
                DimKind::Real => vec![d.lower],
            };
            points = points
                .into_iter()
                .flat_map(|p| {
                    values.iter().map(move |&v| {
                        let mut q = p.clone();
                        q.push(v);
                        q
                    })
                })
                .collect();
        }
        points
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub point: Vec<f64>,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningResult {
    pub names: Vec<String>,
    pub best_point: Vec<f64>,
    pub best_objective: f64,
    pub best_index: usize,
    pub history: Vec<Evaluation>,
}

impl TuningResult {
    fn from_history(names: Vec<String>, history: Vec<Evaluation>) -> Self {
        let mut best_index = 0;
        for (i, e) in history.iter().enumerate() {
            if e.objective > history[best_index].objective {
                best_index = i;
            }
        }
        TuningResult {
            names,
            best_point: history[best_index].point.clone(),
            best_objective: history[best_index].objective,
            best_index,
            history,
        }
    }

    pub fn best_named(&self) -> BTreeMap<String, f64> {
        self.names
            .iter()
            .cloned()
            .zip(self.best_point.iter().copied())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoOptions {
    /// Number of objective evaluations (BOiter).
    pub budget: usize,
    pub seed: u64,
    /// Size of the space-filling initial design; `min(n_init, budget)` points
    /// are used.
    pub n_init: usize,
    pub n_candidates: usize,
    /// Diagonal noise on the standardized objective.
    pub noise: f64,
    /// Exploration margin in standardized objective units.
    pub xi: f64,
    /// When random candidates only round to already-evaluated integer points,
    /// pick the best unevaluated grid point instead.
    pub exhaustive_fallback: bool,
}

impl Default for BoOptions {
    fn default() -> Self {
        BoOptions {
            budget: 30,
            seed: 0,
            n_init: 5,
            n_candidates: 1000,
            noise: 1e-6,
            xi: 0.01,
            exhaustive_fallback: true,
        }
    }
}

impl BoOptions {
    pub fn with_budget(budget: usize, seed: u64) -> Self {
        BoOptions {
            budget,
            seed,
            ..Default::default()
        }
    }
}

const INIT_STREAM: u64 = 0;
const GP_STREAM: u64 = 1 << 32;

/// Maximizes `objective` over `space`.
///
/// Evaluates `budget` points unless the integer grid of the space is
/// exhausted first; re-evaluating a point would add no information.
pub fn bayesian_optimize<F>(
    mut objective: F,
    space: &HyperparameterSpace,
    opts: &BoOptions,
) -> Result<TuningResult>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    space.validate()?;
    if opts.budget == 0 {
        return Err(Error::InvalidArgument("budget must be at least 1".into()));
    }
    let cardinality = space.grid_cardinality();
    let budget = match cardinality {
        Some(c) if c < opts.budget as u128 => c as usize,
        _ => opts.budget,
    };
    let dim = space.dims.len();
    let mut history: Vec<Evaluation> = Vec::with_capacity(budget);

    let mut evaluate = |point: Vec<f64>, history: &mut Vec<Evaluation>| -> Result<()> {
        let value = match objective(&point) {
            Ok(v) => v,
            Err(e) => {
                return Err(Error::Tuning {
                    history: history.clone(),
                    source: Box::new(e),
                })
            }
        };
        if !value.is_finite() {
            return Err(Error::Tuning {
                history: history.clone(),
                source: Box::new(Error::NonFiniteObjective { point }),
            });
        }
        debug!("evaluation {}: {:?} -> {}", history.len() + 1, point, value);
        history.push(Evaluation {
            point,
            objective: value,
        });
        Ok(())
    };

    // Latin hypercube over n_init strata; the first min(n_init, budget) rows
    // are used so smaller budgets see a prefix of the same design.
    let n_strata = opts.n_init.max(1);
    let mut init_rng = rng_for(opts.seed, INIT_STREAM);
    let perms: Vec<Vec<usize>> = (0..dim)
        .map(|_| {
            let mut p: Vec<usize> = (0..n_strata).collect();
            p.shuffle(&mut init_rng);
            p
        })
        .collect();
    let n_init = opts.n_init.min(budget).max(1);
    for i in 0..n_init {
        let unit: Vec<f64> = (0..dim)
            .map(|d| (perms[d][i] as f64 + init_rng.gen::<f64>()) / n_strata as f64)
            .collect();
        let mut point = space.scale_unit(&unit);
        let mut attempts = 0;
        while is_evaluated(&history, &point) && attempts < 100 {
            let unit: Vec<f64> = (0..dim).map(|_| init_rng.gen::<f64>()).collect();
            point = space.scale_unit(&unit);
            attempts += 1;
        }
        if is_evaluated(&history, &point) {
            match first_unevaluated(space, &history) {
                Some(p) => point = p,
                None => break,
            }
        }
        evaluate(point, &mut history)?;
    }

    while history.len() < budget {
        let iteration = history.len() as u64;
        let mut rng = rng_for(opts.seed, GP_STREAM + iteration);
        let units: Vec<Vec<f64>> = history.iter().map(|e| space.to_unit(&e.point)).collect();
        let values: Vec<f64> = history.iter().map(|e| e.objective).collect();
        let gp = Surrogate::fit(&units, &values, opts.noise, &mut rng)?;
        let ei = |u: &[f64]| gp.expected_improvement(u, opts.xi);

        let mut scored: Vec<(f64, Vec<f64>)> = (0..opts.n_candidates.max(1))
            .map(|_| {
                let u: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>()).collect();
                (ei(&u), u)
            })
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0));
        let bounds = vec![(0.0, 1.0); dim];
        let refined: Vec<(f64, Vec<f64>)> = scored
            .iter()
            .take(5)
            .map(|(_, u)| {
                let (u, v) = gp::pattern_search(&ei, u.clone(), &bounds, 0.05, 1e-4, 200);
                (v, u)
            })
            .collect();
        scored.extend(refined);
        scored.sort_by(|a, b| b.0.total_cmp(&a.0));

        let proposal = scored
            .iter()
            .map(|(_, u)| space.scale_unit(u))
            .find(|p| !is_evaluated(&history, p));
        let point = match proposal {
            Some(p) => p,
            None if opts.exhaustive_fallback && cardinality.is_some() => {
                match best_unevaluated_grid_point(space, &history, &ei) {
                    Some(p) => p,
                    None => break,
                }
            }
            // continuous dimensions: duplicates carry no new information but
            // are harmless; re-evaluate the top candidate
            None => space.scale_unit(&scored[0].1),
        };
        evaluate(point, &mut history)?;
    }

    Ok(TuningResult::from_history(space.names(), history))
}

fn is_evaluated(history: &[Evaluation], point: &[f64]) -> bool {
    history.iter().any(|e| e.point == point)
}

fn first_unevaluated(space: &HyperparameterSpace, history: &[Evaluation]) -> Option<Vec<f64>> {
    match space.grid_cardinality() {
        Some(c) if c <= 1_000_000 => space
            .grid_points()
            .into_iter()
            .find(|p| !is_evaluated(history, p)),
        _ => None,
    }
}

fn best_unevaluated_grid_point(
    space: &HyperparameterSpace,
    history: &[Evaluation],
    ei: &dyn Fn(&[f64]) -> f64,
) -> Option<Vec<f64>> {
    if space.grid_cardinality()? > 1_000_000 {
        return None;
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for p in space.grid_points() {
        if is_evaluated(history, &p) {
            continue;
        }
        let v = ei(&space.to_unit(&p));
        if best.as_ref().is_none_or(|(b, _)| v > *b) {
            best = Some((v, p));
        }
    }
    best.map(|(_, p)| p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuningMetric {
    #[default]
    Accuracy,
    MacroF1,
}

impl TuningMetric {
    fn pick(self, accuracy: f64, f1: f64) -> f64 {
        match self {
            TuningMetric::Accuracy => accuracy,
            TuningMetric::MacroF1 => f1,
        }
    }
}

/// Training and validation parts of one tuning run, preprocessed with
/// statistics fit on `train`.
#[derive(Debug, Clone, Copy)]
pub struct TuningData<'a> {
    pub train: &'a Dataset,
    pub val: &'a Dataset,
}

/// Validation scores recorded alongside each tuning evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationScore {
    pub accuracy: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tuned {
    pub result: TuningResult,
    /// One entry per history item.
    pub scores: Vec<ValidationScore>,
}

impl Tuned {
    pub fn best_score(&self) -> ValidationScore {
        self.scores[self.result.best_index]
    }
}

/// Model seed shared by every evaluation of one tuning run.
pub(crate) fn model_seed(opts: &BoOptions) -> u64 {
    derive_seed(opts.seed, 0xF0)
}

/// Tunes a feature-space classifier alone on validation performance.
pub fn tune_feature_hyperparameters(
    data: TuningData<'_>,
    fs: &Learner,
    space: &HyperparameterSpace,
    opts: &BoOptions,
    metric: TuningMetric,
) -> Result<Tuned> {
    let names = space.names();
    let seed = model_seed(opts);
    let c = data.train.n_classes();
    let mut scores = Vec::new();
    let result = bayesian_optimize(
        |point| {
            let learner = fs.with_hyperparameters(&names, point)?;
            let model = learner.fit_classifier(data.train, seed)?;
            let pred: Vec<Option<usize>> = model.confidence(data.val.x.view())?.argmax();
            let score = ValidationScore {
                accuracy: accuracy_with_abstentions(&data.val.y, &pred)?,
                f1: macro_f1_with_abstentions(&data.val.y, &pred, c)?,
            };
            scores.push(score);
            Ok(metric.pick(score.accuracy, score.f1))
        },
        space,
        opts,
    )?;
    Ok(Tuned { result, scores })
}

/// Joint tuning loop: the feature-space classifier is fixed at its
/// hyperparameters, each candidate semantic regressor is trained on the
/// label vectors, semantic confidences are computed with zero additive
/// shift, both confidences are averaged, and validation accuracy is the
/// objective. Instances whose regressor output coincides with a label vector
/// cannot be labeled and count as misclassified.
pub fn tune_semantic_hyperparameters(
    data: TuningData<'_>,
    fs: &Learner,
    vs: &LabelVectorSet,
    ss: &Learner,
    space: &HyperparameterSpace,
    opts: &BoOptions,
    metric: TuningMetric,
) -> Result<Tuned> {
    let names = space.names();
    let seed = model_seed(opts);
    let c = data.train.n_classes();
    // identical for every evaluation: fixed hyperparameters, data and seed
    let fs_model = fs.fit_classifier(data.train, seed)?;
    let fs_conf = fs_model.confidence(data.val.x.view())?;
    let targets = vs.targets_for(&data.train.y);

    let mut scores = Vec::new();
    let result = bayesian_optimize(
        |point| {
            let learner = ss.with_hyperparameters(&names, point)?;
            let model = learner.fit_regressor(data.train.x.view(), targets.view(), seed)?;
            let out = model.predict(data.val.x.view())?;
            let ss_conf = semantic_confidence(out.view(), vs, 0.0)?;
            let pred = fuse(&fs_conf, &ss_conf)?;
            let score = ValidationScore {
                accuracy: accuracy_with_abstentions(&data.val.y, &pred)?,
                f1: macro_f1_with_abstentions(&data.val.y, &pred, c)?,
            };
            scores.push(score);
            Ok(metric.pick(score.accuracy, score.f1))
        },
        space,
        opts,
    )?;
    Ok(Tuned { result, scores })
}

/// Tunes a semantic regressor used on its own (nearest label vector).
pub fn tune_semantic_only(
    data: TuningData<'_>,
    vs: &LabelVectorSet,
    ss: &Learner,
    space: &HyperparameterSpace,
    opts: &BoOptions,
    metric: TuningMetric,
) -> Result<Tuned> {
    let names = space.names();
    let seed = model_seed(opts);
    let c = data.train.n_classes();
    let targets = vs.targets_for(&data.train.y);
    let mut scores = Vec::new();
    let result = bayesian_optimize(
        |point| {
            let learner = ss.with_hyperparameters(&names, point)?;
            let model = learner.fit_regressor(data.train.x.view(), targets.view(), seed)?;
            let out = model.predict(data.val.x.view())?;
            let pred: Vec<Option<usize>> = out
                .rows()
                .into_iter()
                .map(|r| Some(vs.nearest(r)))
                .collect();
            let score = ValidationScore {
                accuracy: accuracy_with_abstentions(&data.val.y, &pred)?,
                f1: macro_f1_with_abstentions(&data.val.y, &pred, c)?,
            };
            scores.push(score);
            Ok(metric.pick(score.accuracy, score.f1))
        },
        space,
        opts,
    )?;
    Ok(Tuned { result, scores })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_int(lo: i64, hi: i64) -> HyperparameterSpace {
        HyperparameterSpace::new(vec![Dimension::integer("x", lo, hi)]).unwrap()
    }

    #[test]
    fn grid_optimum_on_integer_quadratic() {
        let space = one_int(1, 10);
        // oracle: grid search
        let grid_best = (1..=10).max_by_key(|&x| -(x - 7) * (x - 7)).unwrap();
        let r = bayesian_optimize(
            |p| Ok(-(p[0] - 7.0).powi(2)),
            &space,
            &BoOptions::with_budget(10, 3),
        )
        .unwrap();
        assert_eq!(r.best_point, vec![grid_best as f64]);
        assert_eq!(r.best_objective, 0.0);
        assert_eq!(r.history.len(), 10);
    }

    #[test]
    fn budget_one_returns_the_single_point() {
        let r = bayesian_optimize(
            |p| Ok(p[0]),
            &one_int(0, 100),
            &BoOptions::with_budget(1, 0),
        )
        .unwrap();
        assert_eq!(r.history.len(), 1);
        assert_eq!(r.best_point, r.history[0].point);
    }

    #[test]
    fn constant_objective() {
        let space = HyperparameterSpace::new(vec![Dimension::real("a", 0.0, 1.0)]).unwrap();
        let r = bayesian_optimize(|_| Ok(2.5), &space, &BoOptions::with_budget(8, 1)).unwrap();
        assert_eq!(r.best_objective, 2.5);
    }

    #[test]
    fn objective_error_carries_partial_history() {
        let mut calls = 0;
        let err = bayesian_optimize(
            |_| {
                calls += 1;
                if calls == 3 {
                    Err(Error::InvalidArgument("boom".into()))
                } else {
                    Ok(1.0)
                }
            },
            &one_int(0, 50),
            &BoOptions::with_budget(6, 0),
        )
        .unwrap_err();
        match err {
            Error::Tuning { history, .. } => assert_eq!(history.len(), 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn one_point_space() {
        let r =
            bayesian_optimize(|p| Ok(p[0]), &one_int(4, 4), &BoOptions::with_budget(5, 0)).unwrap();
        assert_eq!(r.best_point, vec![4.0]);
        assert_eq!(r.history.len(), 1);
    }

    #[test]
    fn integer_points_are_never_repeated() {
        let r = bayesian_optimize(
            |p| Ok(-(p[0] - 2.0).abs() - (p[1] - 1.0).abs()),
            &HyperparameterSpace::new(vec![
                Dimension::integer("a", 0, 3),
                Dimension::integer("b", 0, 2),
            ])
            .unwrap(),
            &BoOptions::with_budget(12, 5),
        )
        .unwrap();
        assert_eq!(r.history.len(), 12);
        for (i, a) in r.history.iter().enumerate() {
            for b in &r.history[i + 1..] {
                assert_ne!(a.point, b.point);
            }
        }
        assert_eq!(r.best_point, vec![2.0, 1.0]);
    }

    #[test]
    fn finds_a_good_real_optimum() {
        let space = HyperparameterSpace::new(vec![Dimension::real("a", -2.0, 2.0)]).unwrap();
        let r = bayesian_optimize(
            |p| Ok(-(p[0] - 0.6).powi(2)),
            &space,
            &BoOptions::with_budget(15, 2),
        )
        .unwrap();
        assert!((r.best_point[0] - 0.6).abs() < 0.1, "{:?}", r.best_point);
    }

    #[test]
    fn invalid_bounds_rejected() {
        assert!(HyperparameterSpace::new(vec![Dimension::real("a", 1.0, 0.0)]).is_err());
        assert!(HyperparameterSpace::new(vec![Dimension {
            name: "n".into(),
            kind: DimKind::Integer,
            lower: 0.5,
            upper: 3.0
        }])
        .is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(16))]

            #[test]
            fn best_is_max_of_history(seed in any::<u64>(), budget in 1usize..9) {
                let space = HyperparameterSpace::new(vec![
                    Dimension::real("a", -1.0, 1.0),
                    Dimension::integer("b", 0, 20),
                ]).unwrap();
                let r = bayesian_optimize(
                    |p| Ok((3.0 * p[0]).sin() + (p[1] / 7.0).cos()),
                    &space,
                    &BoOptions::with_budget(budget, seed),
                ).unwrap();
                for e in &r.history {
                    prop_assert!(r.best_objective >= e.objective);
                }
            }
        }
    }
}
