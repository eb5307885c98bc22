//! Gaussian-process surrogate with an ARD Matérn 5/2 kernel.
//!
//! Inputs live in the unit cube; outputs are standardized internally. The
//! kernel length-scales and amplitude are fit by maximizing the log marginal
//! likelihood with a multi-start pattern search in log space.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::LN_10;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LOG_LENGTH_BOUNDS: (f64, f64) = (-2.0 * LN_10, LN_10); // ln 0.01, ln 10
const LOG_AMPLITUDE_BOUNDS: (f64, f64) = (-2.0 * LN_10, 2.0 * LN_10);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub length_scales: Vec<f64>,
    pub amplitude: f64,
}

fn matern52(r: f64) -> f64 {
    let s = 5f64.sqrt() * r;
    (1.0 + s + s * s / 3.0) * (-s).exp()
}

impl KernelParams {
    fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let r2: f64 = a
            .iter()
            .zip(b)
            .zip(&self.length_scales)
            .map(|((x, y), l)| ((x - y) / l).powi(2))
            .sum();
        self.amplitude * matern52(r2.sqrt())
    }

    fn to_log(&self) -> Vec<f64> {
        self.length_scales
            .iter()
            .map(|l| l.ln())
            .chain(std::iter::once(self.amplitude.ln()))
            .collect()
    }

    fn from_log(theta: &[f64]) -> Self {
        let (ls, amp) = theta.split_at(theta.len() - 1);
        KernelParams {
            length_scales: ls.iter().map(|v| v.exp()).collect(),
            amplitude: amp[0].exp(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Surrogate {
    points: Vec<Vec<f64>>,
    values: Vec<f64>,
    y_mean: f64,
    y_scale: f64,
    kernel: KernelParams,
    noise: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

impl Surrogate {
    /// Conditions a GP with fixed kernel parameters on the observations.
    pub fn with_kernel(
        points: &[Vec<f64>],
        values: &[f64],
        kernel: KernelParams,
        noise: f64,
    ) -> Result<Self> {
        if points.is_empty() || points.len() != values.len() {
            return Err(Error::Shape(format!(
                "{} points but {} values",
                points.len(),
                values.len()
            )));
        }
        if noise < 0.0 || kernel.amplitude <= 0.0 || kernel.length_scales.iter().any(|&l| l <= 0.0)
        {
            return Err(Error::InvalidArgument(
                "kernel parameters must be positive".into(),
            ));
        }
        let (y_mean, y_scale) = standardization(values);
        let y = DVector::from_iterator(values.len(), values.iter().map(|v| (v - y_mean) / y_scale));
        let (chol, noise) = factor(points, &kernel, noise)?;
        let alpha = chol.solve(&y);
        Ok(Surrogate {
            points: points.to_vec(),
            values: values.to_vec(),
            y_mean,
            y_scale,
            kernel,
            noise,
            chol,
            alpha,
        })
    }

    /// Fits kernel parameters by maximum marginal likelihood, then conditions.
    pub fn fit(
        points: &[Vec<f64>],
        values: &[f64],
        noise: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let dim = points.first().map_or(0, Vec::len);
        let (y_mean, y_scale) = standardization(values);
        let y: Vec<f64> = values.iter().map(|v| (v - y_mean) / y_scale).collect();

        let objective = |theta: &[f64]| -> f64 {
            let k = KernelParams::from_log(theta);
            log_marginal_likelihood(points, &y, &k, noise).unwrap_or(f64::NEG_INFINITY)
        };
        let mut bounds = vec![LOG_LENGTH_BOUNDS; dim];
        bounds.push(LOG_AMPLITUDE_BOUNDS);

        let default = KernelParams {
            length_scales: vec![0.5; dim],
            amplitude: 1.0,
        };
        let mut starts = vec![default.to_log()];
        for _ in 0..4 {
            starts.push(
                bounds
                    .iter()
                    .map(|&(lo, hi)| rng.gen_range(lo..hi))
                    .collect(),
            );
        }
        let mut best_theta = starts[0].clone();
        let mut best_value = objective(&best_theta);
        for start in starts {
            let (theta, value) = pattern_search(&objective, start, &bounds, 1.0, 1e-3, 400);
            if value > best_value {
                best_value = value;
                best_theta = theta;
            }
        }
        Self::with_kernel(points, values, KernelParams::from_log(&best_theta), noise)
    }

    pub fn kernel(&self) -> &KernelParams {
        &self.kernel
    }

    pub fn n_observations(&self) -> usize {
        self.points.len()
    }

    pub fn best_value(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Posterior mean and standard deviation in the original output units.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let k = DVector::from_iterator(
            self.points.len(),
            self.points.iter().map(|p| self.kernel.eval(p, x)),
        );
        let mean = k.dot(&self.alpha);
        let v = self
            .chol
            .l()
            .solve_lower_triangular(&k)
            .unwrap_or_else(|| k.clone());
        let var = (self.kernel.amplitude - v.dot(&v)).max(0.0);
        (self.y_mean + self.y_scale * mean, self.y_scale * var.sqrt())
    }

    /// Expected improvement over the best observation (maximization).
    pub fn expected_improvement(&self, x: &[f64], xi: f64) -> f64 {
        let (mean, sd) = self.predict(x);
        expected_improvement(mean, sd, self.best_value() + xi * self.y_scale)
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }
}

pub(crate) fn expected_improvement(mean: f64, sd: f64, incumbent: f64) -> f64 {
    use statrs::distribution::{Continuous, ContinuousCDF, Normal};
    let improvement = mean - incumbent;
    if sd <= 1e-12 {
        return improvement.max(0.0);
    }
    let z = improvement / sd;
    let n = Normal::standard();
    improvement * n.cdf(z) + sd * n.pdf(z)
}

fn standardization(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    (mean, if sd > 1e-12 { sd } else { 1.0 })
}

/// Cholesky of `K + noise I`, raising the jitter if the matrix is not
/// numerically positive definite.
fn factor(
    points: &[Vec<f64>],
    kernel: &KernelParams,
    noise: f64,
) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let n = points.len();
    let base = DMatrix::from_fn(n, n, |i, j| kernel.eval(&points[i], &points[j]));
    let mut jitter = noise;
    for _ in 0..8 {
        let mut k = base.clone();
        for i in 0..n {
            k[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(k) {
            return Ok((chol, jitter));
        }
        jitter = if jitter > 0.0 { jitter * 10.0 } else { 1e-10 };
    }
    Err(Error::InvalidArgument(
        "kernel matrix is not positive definite".into(),
    ))
}

pub(crate) fn log_marginal_likelihood(
    points: &[Vec<f64>],
    y: &[f64],
    kernel: &KernelParams,
    noise: f64,
) -> Result<f64> {
    let (chol, _) = factor(points, kernel, noise)?;
    let yv = DVector::from_column_slice(y);
    let alpha = chol.solve(&yv);
    let log_det: f64 = chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
    let n = y.len() as f64;
    Ok(-0.5 * yv.dot(&alpha) - 0.5 * log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln())
}

/// Hooke-Jeeves style coordinate search maximizing `f` within `bounds`.
pub(crate) fn pattern_search(
    f: &dyn Fn(&[f64]) -> f64,
    start: Vec<f64>,
    bounds: &[(f64, f64)],
    initial_step: f64,
    min_step: f64,
    max_evals: usize,
) -> (Vec<f64>, f64) {
    let clamp = |x: &mut Vec<f64>| {
        for (v, &(lo, hi)) in x.iter_mut().zip(bounds) {
            *v = v.clamp(lo, hi);
        }
    };
    let mut x = start;
    clamp(&mut x);
    let mut fx = f(&x);
    let mut step = initial_step;
    let mut evals = 1;
    while step >= min_step && evals < max_evals {
        let mut improved = false;
        for d in 0..x.len() {
            for dir in [1.0, -1.0] {
                let mut cand = x.clone();
                cand[d] += dir * step;
                clamp(&mut cand);
                if cand[d] == x[d] {
                    continue;
                }
                let fc = f(&cand);
                evals += 1;
                if fc > fx {
                    x = cand;
                    fx = fc;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            step /= 2.0;
        }
    }
    (x, fx)
}
