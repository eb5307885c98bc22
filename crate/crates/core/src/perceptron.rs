//! Single-hidden-layer perceptron with a tanh hidden layer, trained by
//! mini-batch gradient descent with momentum.
//!
//! The classifier variant ends in a softmax and minimizes mean cross-entropy;
//! the regressor variant has a linear output and minimizes the mean squared
//! error over all output entries.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::confidence::ConfidenceMatrix;
use crate::error::{Error, Result};
use crate::rng::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MlpMode {
    Classifier { n_classes: usize },
    Regressor { output_dim: usize },
}

impl MlpMode {
    fn n_outputs(self) -> usize {
        match self {
            MlpMode::Classifier { n_classes } => n_classes,
            MlpMode::Regressor { output_dim } => output_dim,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpParams {
    pub hidden_units: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a training-loss improvement of at least `tol` before
    /// stopping.
    pub patience: usize,
    pub tol: f64,
}

impl Default for MlpParams {
    fn default() -> Self {
        MlpParams {
            hidden_units: 16,
            learning_rate: 1e-2,
            momentum: 0.9,
            batch_size: 32,
            max_epochs: 500,
            patience: 25,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum MlpTargets<'a> {
    Classes(&'a [usize]),
    Vectors(ArrayView2<'a, f64>),
}

impl MlpTargets<'_> {
    fn len(&self) -> usize {
        match self {
            MlpTargets::Classes(y) => y.len(),
            MlpTargets::Vectors(t) => t.nrows(),
        }
    }

    fn select(&self, idx: &[usize]) -> OwnedTargets {
        match self {
            MlpTargets::Classes(y) => OwnedTargets::Classes(idx.iter().map(|&i| y[i]).collect()),
            MlpTargets::Vectors(t) => OwnedTargets::Vectors(t.select(Axis(0), idx)),
        }
    }
}

enum OwnedTargets {
    Classes(Vec<usize>),
    Vectors(Array2<f64>),
}

impl OwnedTargets {
    fn view(&self) -> MlpTargets<'_> {
        match self {
            OwnedTargets::Classes(y) => MlpTargets::Classes(y),
            OwnedTargets::Vectors(t) => MlpTargets::Vectors(t.view()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perceptron {
    /// inputs x hidden
    w1: Array2<f64>,
    b1: Array1<f64>,
    /// hidden x outputs
    w2: Array2<f64>,
    b2: Array1<f64>,
    mode: MlpMode,
    activation: Activation,
}

impl Perceptron {
    pub fn from_weights(
        w1: Array2<f64>,
        b1: Array1<f64>,
        w2: Array2<f64>,
        b2: Array1<f64>,
        mode: MlpMode,
    ) -> Result<Self> {
        let hidden = w1.ncols();
        if hidden == 0 {
            return Err(Error::InvalidArgument(
                "hidden_units must be at least 1".into(),
            ));
        }
        if b1.len() != hidden
            || w2.nrows() != hidden
            || w2.ncols() != mode.n_outputs()
            || b2.len() != mode.n_outputs()
        {
            return Err(Error::Shape("inconsistent perceptron weight shapes".into()));
        }
        Ok(Perceptron {
            w1,
            b1,
            w2,
            b2,
            mode,
            activation: Activation::Tanh,
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(n_inputs: usize, hidden_units: usize, mode: MlpMode, seed: u64) -> Result<Self> {
        if hidden_units == 0 {
            return Err(Error::InvalidArgument(
                "hidden_units must be at least 1".into(),
            ));
        }
        let n_out = mode.n_outputs();
        let mut rng = rng_for(seed, 0);
        let mut glorot = |fan_in: usize, fan_out: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            Array2::from_shape_simple_fn((fan_in, fan_out), || rng.gen_range(-limit..=limit))
        };
        let w1 = glorot(n_inputs, hidden_units);
        let w2 = glorot(hidden_units, n_out);
        Self::from_weights(
            w1,
            Array1::zeros(hidden_units),
            w2,
            Array1::zeros(n_out),
            mode,
        )
    }

    pub fn mode(&self) -> MlpMode {
        self.mode
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn hidden_units(&self) -> usize {
        self.w1.ncols()
    }

    pub fn n_inputs(&self) -> usize {
        self.w1.nrows()
    }

    fn check_arity(&self, x: ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.n_inputs() {
            return Err(Error::Shape(format!(
                "perceptron expects {} inputs, got {}",
                self.n_inputs(),
                x.ncols()
            )));
        }
        Ok(())
    }

    fn forward(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, Array2<f64>) {
        let mut hidden = x.dot(&self.w1) + &self.b1;
        hidden.mapv_inplace(f64::tanh);
        let out = hidden.dot(&self.w2) + &self.b2;
        (hidden, out)
    }

    /// Raw output layer before any squashing.
    pub fn logits(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_arity(x)?;
        Ok(self.forward(x).1)
    }

    pub fn loss(&self, x: ArrayView2<'_, f64>, targets: MlpTargets<'_>) -> Result<f64> {
        Ok(self.loss_and_gradients(x, targets)?.0)
    }

    pub fn loss_and_gradients(
        &self,
        x: ArrayView2<'_, f64>,
        targets: MlpTargets<'_>,
    ) -> Result<(f64, Gradients)> {
        self.check_arity(x)?;
        let n = x.nrows();
        if targets.len() != n || n == 0 {
            return Err(Error::Shape(format!(
                "{} rows but {} targets",
                n,
                targets.len()
            )));
        }
        let (hidden, out) = self.forward(x);
        let (loss, d_out) = match (self.mode, targets) {
            (MlpMode::Classifier { n_classes }, MlpTargets::Classes(y)) => {
                let mut loss = 0.0;
                let mut d_out = softmax_rows(&out);
                for (j, &c) in y.iter().enumerate() {
                    if c >= n_classes {
                        return Err(Error::InvalidArgument(format!(
                            "class id {c} >= {n_classes}"
                        )));
                    }
                    let row = out.row(j);
                    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                    loss += lse - row[c];
                    d_out[[j, c]] -= 1.0;
                }
                d_out /= n as f64;
                (loss / n as f64, d_out)
            }
            (MlpMode::Regressor { output_dim }, MlpTargets::Vectors(t)) => {
                if t.ncols() != output_dim {
                    return Err(Error::Shape(format!(
                        "targets have {} dims, perceptron outputs {output_dim}",
                        t.ncols()
                    )));
                }
                let diff = &out - &t;
                let count = (n * output_dim) as f64;
                let loss = diff.iter().map(|d| d * d).sum::<f64>() / count;
                (loss, diff * (2.0 / count))
            }
            (MlpMode::Classifier { .. }, _) => {
                return Err(Error::WrongMode {
                    expected: "class-id targets",
                })
            }
            (MlpMode::Regressor { .. }, _) => {
                return Err(Error::WrongMode {
                    expected: "vector targets",
                })
            }
        };

        let w2 = hidden.t().dot(&d_out);
        let b2 = d_out.sum_axis(Axis(0));
        let mut d_hidden = d_out.dot(&self.w2.t());
        d_hidden.zip_mut_with(&hidden, |d, &h| *d *= 1.0 - h * h);
        let w1 = x.t().dot(&d_hidden);
        let b1 = d_hidden.sum_axis(Axis(0));
        Ok((loss, Gradients { w1, b1, w2, b2 }))
    }

    /// All weights flattened as `w1, b1, w2, b2` (row-major).
    pub fn parameters(&self) -> Vec<f64> {
        self.w1
            .iter()
            .chain(self.b1.iter())
            .chain(self.w2.iter())
            .chain(self.b2.iter())
            .copied()
            .collect()
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        let total = self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len();
        if params.len() != total {
            return Err(Error::Shape(format!(
                "{} parameters, expected {total}",
                params.len()
            )));
        }
        let mut it = params.iter().copied();
        for p in self
            .w1
            .iter_mut()
            .chain(self.b1.iter_mut())
            .chain(self.w2.iter_mut())
            .chain(self.b2.iter_mut())
        {
            *p = it.next().expect("length checked");
        }
        Ok(())
    }
}

impl Gradients {
    pub fn flatten(&self) -> Vec<f64> {
        self.w1
            .iter()
            .chain(self.b1.iter())
            .chain(self.w2.iter())
            .chain(self.b2.iter())
            .copied()
            .collect()
    }
}

fn softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut p = z.clone();
    for mut row in p.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    p
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    /// Full training loss after each epoch.
    pub loss_history: Vec<f64>,
    pub stopped_early: bool,
}

pub fn train_mlp(
    x: ArrayView2<'_, f64>,
    targets: MlpTargets<'_>,
    mode: MlpMode,
    params: &MlpParams,
    seed: u64,
) -> Result<Perceptron> {
    train_mlp_with_report(x, targets, mode, params, seed).map(|(m, _)| m)
}

pub fn train_mlp_with_report(
    x: ArrayView2<'_, f64>,
    targets: MlpTargets<'_>,
    mode: MlpMode,
    params: &MlpParams,
    seed: u64,
) -> Result<(Perceptron, TrainingReport)> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::Empty("training set"));
    }
    if params.batch_size == 0 {
        return Err(Error::InvalidArgument(
            "batch_size must be at least 1".into(),
        ));
    }
    let mut model = Perceptron::init(x.ncols(), params.hidden_units, mode, seed)?;
    // validates targets against the mode before any updates
    let mut best = model.loss(x, targets)?;
    if !best.is_finite() {
        return Err(Error::NonFiniteLoss { epoch: 0 });
    }

    let mut rng = rng_for(seed, 1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut velocity = vec![0.0; model.parameters().len()];
    let mut history = Vec::new();
    let mut stale = 0;
    let mut stopped_early = false;
    let batch = params.batch_size.min(n);

    for epoch in 1..=params.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let xb = x.select(Axis(0), chunk);
            let tb = targets.select(chunk);
            let (_, grad) = model.loss_and_gradients(xb.view(), tb.view())?;
            let mut weights = model.parameters();
            for ((w, v), g) in weights.iter_mut().zip(&mut velocity).zip(grad.flatten()) {
                *v = params.momentum * *v - params.learning_rate * g;
                *w += *v;
            }
            model.set_parameters(&weights)?;
        }
        let loss = model.loss(x, targets)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        history.push(loss);
        if loss < best - params.tol {
            best = loss;
            stale = 0;
        } else {
            stale += 1;
            if stale >= params.patience {
                stopped_early = true;
                break;
            }
        }
    }
    Ok((
        model,
        TrainingReport {
            loss_history: history,
            stopped_early,
        },
    ))
}

/// Softmax outputs of a classifier.
pub fn mlp_classifier_confidence(
    m: &Perceptron,
    x: ArrayView2<'_, f64>,
) -> Result<ConfidenceMatrix> {
    if !matches!(m.mode, MlpMode::Classifier { .. }) {
        return Err(Error::WrongMode {
            expected: "classifier",
        });
    }
    ConfidenceMatrix::new(softmax_rows(&m.logits(x)?))
}

/// Linear outputs of a regressor.
pub fn mlp_regressor_predict(m: &Perceptron, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if !matches!(m.mode, MlpMode::Regressor { .. }) {
        return Err(Error::WrongMode {
            expected: "regressor",
        });
    }
    m.logits(x)
}
