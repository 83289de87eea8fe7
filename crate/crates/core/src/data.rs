//! Weighted data samples `(x_i, y_i, a_i)` defining the empirical data law.

use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::rng::RngSpec;

pub const WEIGHT_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct DataSample {
    inputs: Vec<f64>,
    labels: Vec<f64>,
    weights: Vec<f64>,
    d: usize,
}

impl DataSample {
    /// Uniform weights `1/n`.
    pub fn uniform(inputs: Vec<f64>, labels: Vec<f64>, d: usize) -> Result<Self> {
        let n = labels.len();
        Self::weighted(inputs, labels, vec![1.0 / n.max(1) as f64; n], d)
    }

    pub fn weighted(inputs: Vec<f64>, labels: Vec<f64>, weights: Vec<f64>, d: usize) -> Result<Self> {
        let n = labels.len();
        if d == 0 || n == 0 {
            return Err(invalid("data sample needs n >= 1 and d >= 1"));
        }
        if inputs.len() != n * d {
            return Err(Error::DimensionMismatch { expected: n * d, got: inputs.len() });
        }
        if weights.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: weights.len() });
        }
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(invalid("data weights must be nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(invalid(format!("data weights sum to {total}, expected 1")));
        }
        Ok(Self { inputs, labels, weights, d })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.d..(i + 1) * self.d]
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn with_labels(&self, labels: Vec<f64>) -> Result<Self> {
        Self::weighted(self.inputs.clone(), labels, self.weights.clone(), self.d)
    }

    /// Adds i.i.d. `N(0, sigma^2)` label noise.
    pub fn with_label_noise(&self, sigma: f64, rng: RngSpec) -> Result<Self> {
        let labels = self
            .labels
            .iter()
            .enumerate()
            .map(|(i, y)| {
                let z: f64 = StandardNormal.sample(&mut rng.row_rng(i as u64));
                y + sigma * z
            })
            .collect();
        self.with_labels(labels)
    }

    /// `sum_i a_i g(i)` in index order.
    #[inline]
    pub fn expect(&self, g: impl Fn(usize) -> f64) -> f64 {
        self.weights.iter().enumerate().map(|(i, a)| a * g(i)).sum()
    }
}
