//! Algorithm-agnostic wrappers so the fusion and tuning code can treat
//! forests and perceptrons alike.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::confidence::ConfidenceMatrix;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::forest::{
    forest_classifier_confidence, forest_regressor_predict, train_forest_classifier,
    train_forest_regressor, Forest, ForestParams,
};
use crate::hpo::{Dimension, HyperparameterSpace};
use crate::perceptron::{
    mlp_classifier_confidence, mlp_regressor_predict, train_mlp, MlpMode, MlpParams, MlpTargets,
    Perceptron,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Forest,
    Perceptron,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Forest => "forest",
            Algorithm::Perceptron => "perceptron",
        }
    }

    /// Name of the single tuned hyperparameter.
    pub fn tuned_hyperparameter(self) -> &'static str {
        match self {
            Algorithm::Forest => "n_trees",
            Algorithm::Perceptron => "hidden_units",
        }
    }

    pub fn default_space(self) -> HyperparameterSpace {
        let dim = match self {
            Algorithm::Forest => Dimension::integer("n_trees", 10, 150),
            Algorithm::Perceptron => Dimension::integer("hidden_units", 1, 100),
        };
        HyperparameterSpace { dims: vec![dim] }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Learner {
    Forest(ForestParams),
    Perceptron(MlpParams),
}

impl Learner {
    pub fn algorithm(&self) -> Algorithm {
        match self {
            Learner::Forest(_) => Algorithm::Forest,
            Learner::Perceptron(_) => Algorithm::Perceptron,
        }
    }

    pub fn with_hyperparameter(&self, name: &str, value: f64) -> Result<Learner> {
        let mut out = self.clone();
        match (&mut out, name) {
            (Learner::Forest(p), "n_trees") => p.n_trees = to_count(name, value)?,
            (Learner::Forest(p), "max_depth") => p.max_depth = Some(to_count(name, value)?),
            (Learner::Perceptron(p), "hidden_units") => p.hidden_units = to_count(name, value)?,
            (Learner::Perceptron(p), "learning_rate") => p.learning_rate = value,
            _ => {
                return Err(Error::UnknownHyperparameter {
                    name: name.to_owned(),
                    learner: self.algorithm().name(),
                })
            }
        }
        Ok(out)
    }

    pub fn with_hyperparameters(&self, names: &[String], values: &[f64]) -> Result<Learner> {
        names
            .iter()
            .zip(values)
            .try_fold(self.clone(), |l, (n, &v)| l.with_hyperparameter(n, v))
    }

    pub fn fit_classifier(&self, ds: &Dataset, seed: u64) -> Result<Classifier> {
        let c = ds.n_classes();
        Ok(match self {
            Learner::Forest(p) => {
                Classifier::Forest(train_forest_classifier(ds.x.view(), &ds.y, c, p, seed)?)
            }
            Learner::Perceptron(p) => Classifier::Perceptron(train_mlp(
                ds.x.view(),
                MlpTargets::Classes(&ds.y),
                MlpMode::Classifier { n_classes: c },
                p,
                seed,
            )?),
        })
    }

    pub fn fit_regressor(
        &self,
        x: ArrayView2<'_, f64>,
        targets: ArrayView2<'_, f64>,
        seed: u64,
    ) -> Result<Regressor> {
        Ok(match self {
            Learner::Forest(p) => Regressor::Forest(train_forest_regressor(x, targets, p, seed)?),
            Learner::Perceptron(p) => Regressor::Perceptron(train_mlp(
                x,
                MlpTargets::Vectors(targets),
                MlpMode::Regressor {
                    output_dim: targets.ncols(),
                },
                p,
                seed,
            )?),
        })
    }
}

fn to_count(name: &str, value: f64) -> Result<usize> {
    if value.is_finite() && value >= 1.0 && value.fract() == 0.0 {
        Ok(value as usize)
    } else {
        Err(Error::InvalidArgument(format!(
            "'{name}' must be a positive integer, got {value}"
        )))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Classifier {
    Forest(Forest),
    Perceptron(Perceptron),
}

impl Classifier {
    pub fn confidence(&self, x: ArrayView2<'_, f64>) -> Result<ConfidenceMatrix> {
        match self {
            Classifier::Forest(f) => forest_classifier_confidence(f, x),
            Classifier::Perceptron(m) => mlp_classifier_confidence(m, x),
        }
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        Ok(self
            .confidence(x)?
            .argmax()
            .into_iter()
            .map(|p| p.expect("classifier rows never diverge"))
            .collect())
    }

    pub fn forest(&self) -> Option<&Forest> {
        match self {
            Classifier::Forest(f) => Some(f),
            Classifier::Perceptron(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Regressor {
    Forest(Forest),
    Perceptron(Perceptron),
}

impl Regressor {
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        match self {
            Regressor::Forest(f) => forest_regressor_predict(f, x),
            Regressor::Perceptron(m) => mlp_regressor_predict(m, x),
        }
    }

    pub fn forest(&self) -> Option<&Forest> {
        match self {
            Regressor::Forest(f) => Some(f),
            Regressor::Perceptron(_) => None,
        }
    }
}
