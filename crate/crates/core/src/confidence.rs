use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ROW_SUM_TOL: f64 = 1e-9;

/// Instances-by-classes matrix of per-class scores. Every row that is not
/// flagged as diverged is a probability vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceMatrix {
    scores: Array2<f64>,
    diverged: Vec<bool>,
}

impl ConfidenceMatrix {
    pub fn new(scores: Array2<f64>) -> Result<Self> {
        let diverged = vec![false; scores.nrows()];
        Self::with_diverged(scores, diverged)
    }

    pub fn with_diverged(scores: Array2<f64>, diverged: Vec<bool>) -> Result<Self> {
        if diverged.len() != scores.nrows() {
            return Err(Error::Shape(format!(
                "{} divergence flags for {} rows",
                diverged.len(),
                scores.nrows()
            )));
        }
        for (j, row) in scores.rows().into_iter().enumerate() {
            if diverged[j] {
                continue;
            }
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL || row.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::InvalidArgument(format!(
                    "confidence row {j} is not a probability vector (sum {sum})"
                )));
            }
        }
        Ok(ConfidenceMatrix { scores, diverged })
    }

    pub fn uniform(n_instances: usize, n_classes: usize) -> Self {
        ConfidenceMatrix {
            scores: Array2::from_elem((n_instances, n_classes), 1.0 / n_classes as f64),
            diverged: vec![false; n_instances],
        }
    }

    pub fn scores(&self) -> &Array2<f64> {
        &self.scores
    }

    pub fn row(&self, j: usize) -> ArrayView1<'_, f64> {
        self.scores.row(j)
    }

    pub fn is_diverged(&self, j: usize) -> bool {
        self.diverged[j]
    }

    pub fn any_diverged(&self) -> bool {
        self.diverged.iter().any(|&d| d)
    }

    pub fn n_instances(&self) -> usize {
        self.scores.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.scores.ncols()
    }

    /// Row-wise argmax, lowest class id on ties. Diverged rows yield `None`.
    pub fn argmax(&self) -> Vec<Option<usize>> {
        self.scores
            .rows()
            .into_iter()
            .enumerate()
            .map(|(j, row)| (!self.diverged[j]).then(|| argmax(row)))
            .collect()
    }
}

pub(crate) fn argmax(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}
