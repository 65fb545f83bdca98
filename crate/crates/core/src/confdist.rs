//! Discrete confidence distributions over the grid {0, 1/n, ..., 1}.
//!
//! A scalar confidence s is expanded into a length-(n+1) vector of
//! description degrees by sampling a Gaussian density centred at s at
//! each grid label and normalizing to sum 1. Neighbouring labels then
//! carry supervision signal alongside the observed confidence itself.

use crate::error::{Error, Result};

/// Log-clamp floor shared by the scalar KL here and the tape losses.
pub const LOG_EPS: f64 = 1e-12;

/// The confidence label grid {0, 1/n, 2/n, ..., 1}.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConfidenceGrid {
    n: usize,
}

impl ConfidenceGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 1 {
            return Err(Error::InvalidConfig("grid n must be >= 1".into()));
        }
        Ok(Self { n })
    }

    /// Number of labels, n + 1.
    pub fn len(&self) -> usize {
        self.n + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// The confidence value of label index i, i.e. i/n.
    pub fn label(&self, i: usize) -> f64 {
        i as f64 / self.n as f64
    }

    /// Index of the grid label nearest to s, ties broken toward the
    /// lower index.
    pub fn nearest_label(&self, s: f64) -> usize {
        let mut best = 0usize;
        let mut best_dist = f64::INFINITY;
        for i in 0..=self.n {
            let d = (self.label(i) - s).abs();
            if d < best_dist {
                best_dist = d;
                best = i;
            }
        }
        best
    }
}

impl Default for ConfidenceGrid {
    fn default() -> Self {
        Self { n: 100 }
    }
}

/// A normalized vector of description degrees, one per grid label.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceDistribution {
    degrees: Vec<f64>,
}

impl ConfidenceDistribution {
    /// Wrap raw degrees. Callers must supply a nonnegative vector
    /// summing to 1 within 1e-9.
    pub fn from_degrees(degrees: Vec<f64>) -> Result<Self> {
        let sum: f64 = degrees.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || degrees.iter().any(|&d| d < 0.0) {
            return Err(Error::InvalidConfig(format!(
                "degrees must be nonnegative and sum to 1 (sum = {sum})"
            )));
        }
        Ok(Self { degrees })
    }

    /// One-hot distribution at label index i.
    pub fn one_hot(i: usize, grid: ConfidenceGrid) -> Self {
        let mut degrees = vec![0.0; grid.len()];
        degrees[i] = 1.0;
        Self { degrees }
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn len(&self) -> usize {
        self.degrees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.degrees.is_empty()
    }
}

/// Expand a scalar confidence into a distribution by evaluating the
/// Gaussian density N(s, sigma^2) pointwise at each grid label and
/// normalizing. The argmax lands on the grid label nearest to s.
pub fn discretize(s: f64, sigma: f64, grid: ConfidenceGrid) -> Result<ConfidenceDistribution> {
    if sigma <= 0.0 {
        return Err(Error::InvalidConfig(format!("sigma must be > 0, got {sigma}")));
    }
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::InvalidConfig(format!("confidence must be in [0,1], got {s}")));
    }
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut degrees: Vec<f64> = (0..grid.len())
        .map(|i| {
            let d = grid.label(i) - s;
            (-d * d * inv).exp()
        })
        .collect();
    let z: f64 = degrees.iter().sum();
    for d in &mut degrees {
        *d /= z;
    }
    Ok(ConfidenceDistribution { degrees })
}

/// Expectation of the distribution: sum_i (i/n) * degrees[i].
pub fn expectation(dist: &ConfidenceDistribution, grid: ConfidenceGrid) -> f64 {
    dist.degrees
        .iter()
        .enumerate()
        .map(|(i, &d)| grid.label(i) * d)
        .sum()
}

/// KL(target || predicted). Predicted entries are clamped to LOG_EPS
/// before the log; target entries equal to 0 contribute 0.
pub fn kl_divergence(target: &ConfidenceDistribution, predicted: &ConfidenceDistribution) -> f64 {
    debug_assert_eq!(target.len(), predicted.len());
    target
        .degrees
        .iter()
        .zip(&predicted.degrees)
        .map(|(&t, &p)| {
            if t > 0.0 {
                t * (t / p.max(LOG_EPS)).ln()
            } else {
                0.0
            }
        })
        .sum()
}

/// Argmax label index and its degree, ties broken toward the lower index.
pub fn max_degree(dist: &ConfidenceDistribution) -> (usize, f64) {
    let mut best = 0usize;
    let mut best_val = f64::NEG_INFINITY;
    for (i, &d) in dist.degrees.iter().enumerate() {
        if d > best_val {
            best_val = d;
            best = i;
        }
    }
    (best, best_val)
}
