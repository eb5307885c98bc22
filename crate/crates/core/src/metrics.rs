use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Counts indexed by `(true class, predicted class)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn new(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Result<Self> {
        if y_true.len() != y_pred.len() {
            return Err(Error::Shape(format!(
                "{} true labels but {} predictions",
                y_true.len(),
                y_pred.len()
            )));
        }
        let mut counts = vec![vec![0; n_classes]; n_classes];
        for (&t, &p) in y_true.iter().zip(y_pred) {
            if t >= n_classes || p >= n_classes {
                return Err(Error::InvalidArgument(format!(
                    "class id out of range for {n_classes} classes"
                )));
            }
            counts[t][p] += 1;
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn get(&self, truth: usize, predicted: usize) -> usize {
        self.counts[truth][predicted]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn true_positives(&self, k: usize) -> usize {
        self.counts[k][k]
    }

    pub fn false_positives(&self, k: usize) -> usize {
        (0..self.n_classes())
            .filter(|&t| t != k)
            .map(|t| self.counts[t][k])
            .sum()
    }

    pub fn false_negatives(&self, k: usize) -> usize {
        (0..self.n_classes())
            .filter(|&p| p != k)
            .map(|p| self.counts[k][p])
            .sum()
    }

    /// Zero when the class was never predicted.
    pub fn precision(&self, k: usize) -> f64 {
        ratio(
            self.true_positives(k),
            self.true_positives(k) + self.false_positives(k),
        )
    }

    /// Zero when the class never occurs.
    pub fn recall(&self, k: usize) -> f64 {
        ratio(
            self.true_positives(k),
            self.true_positives(k) + self.false_negatives(k),
        )
    }

    pub fn f1(&self, k: usize) -> f64 {
        let (p, r) = (self.precision(k), self.recall(k));
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn accuracy(&self) -> f64 {
        let correct: usize = (0..self.n_classes()).map(|k| self.counts[k][k]).sum();
        ratio(correct, self.total())
    }

    /// Unweighted mean of per-class F1 over all declared classes.
    pub fn macro_f1(&self) -> f64 {
        if self.n_classes() == 0 {
            return 0.0;
        }
        (0..self.n_classes()).map(|k| self.f1(k)).sum::<f64>() / self.n_classes() as f64
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn accuracy(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Shape(format!(
            "{} true labels but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.is_empty() {
        return Err(Error::Empty("no predictions to score"));
    }
    let correct = y_true.iter().zip(y_pred).filter(|(t, p)| t == p).count();
    Ok(correct as f64 / y_true.len() as f64)
}

pub fn macro_f1(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Result<f64> {
    Ok(ConfusionMatrix::new(y_true, y_pred, n_classes)?.macro_f1())
}

/// Accuracy where `None` (no label assignable) always counts as wrong.
pub fn accuracy_with_abstentions(y_true: &[usize], y_pred: &[Option<usize>]) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Shape(format!(
            "{} true labels but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.is_empty() {
        return Err(Error::Empty("no predictions to score"));
    }
    let correct = y_true
        .iter()
        .zip(y_pred)
        .filter(|(t, p)| **p == Some(**t))
        .count();
    Ok(correct as f64 / y_true.len() as f64)
}

/// Macro F1 where abstentions are false negatives for their true class and
/// false positives for no class.
pub fn macro_f1_with_abstentions(
    y_true: &[usize],
    y_pred: &[Option<usize>],
    n_classes: usize,
) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Shape(format!(
            "{} true labels but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mut tp = vec![0usize; n_classes];
    let mut fp = vec![0usize; n_classes];
    let mut fn_ = vec![0usize; n_classes];
    for (&t, p) in y_true.iter().zip(y_pred) {
        if t >= n_classes || p.is_some_and(|p| p >= n_classes) {
            return Err(Error::InvalidArgument(format!(
                "class id out of range for {n_classes} classes"
            )));
        }
        match p {
            Some(p) if *p == t => tp[t] += 1,
            Some(p) => {
                fp[*p] += 1;
                fn_[t] += 1;
            }
            None => fn_[t] += 1,
        }
    }
    let f1: f64 = (0..n_classes)
        .map(|k| {
            let p = ratio(tp[k], tp[k] + fp[k]);
            let r = ratio(tp[k], tp[k] + fn_[k]);
            if p + r == 0.0 {
                0.0
            } else {
                2.0 * p * r / (p + r)
            }
        })
        .sum();
    Ok(if n_classes == 0 {
        0.0
    } else {
        f1 / n_classes as f64
    })
}
