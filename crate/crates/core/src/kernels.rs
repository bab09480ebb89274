//! Translation-invariant kernels and the median-heuristic bandwidth.
//!
//! All kernels are stored in the nonnegative form with `k(x, x) = 0`. The
//! Gaussian kernel is kept as `1 − exp(−‖x − y‖²/γ²)`; the constant offset
//! from `−exp(·)` cancels in every entropy and divergence.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum KernelSpec {
    /// `‖x − y‖²`
    SquaredEuclidean,
    /// `‖x − y‖^β`, `β ∈ (0, 2)`
    Power { beta: f64 },
    /// `1 − exp(−‖x − y‖²/γ²)`
    Gaussian { gamma: f64 },
}

impl KernelSpec {
    /// Power kernel; `β = 2` collapses to [`KernelSpec::SquaredEuclidean`].
    pub fn power(beta: f64) -> Result<Self> {
        if beta == 2.0 {
            Ok(Self::SquaredEuclidean)
        } else if beta > 0.0 && beta < 2.0 {
            Ok(Self::Power { beta })
        } else {
            Err(Error::InvalidArgument(format!("power kernel exponent {beta} outside (0, 2]")))
        }
    }

    pub fn gaussian(gamma: f64) -> Result<Self> {
        if gamma > 0.0 && gamma.is_finite() {
            Ok(Self::Gaussian { gamma })
        } else {
            Err(Error::InvalidArgument(format!("Gaussian bandwidth {gamma} must be positive")))
        }
    }

    pub fn bounded(&self) -> bool {
        matches!(self, Self::Gaussian { .. })
    }

    pub fn translation_invariant(&self) -> bool {
        true
    }

    pub fn homogeneous_degree(&self) -> Option<f64> {
        match self {
            Self::SquaredEuclidean => Some(2.0),
            Self::Power { beta } => Some(*beta),
            Self::Gaussian { .. } => None,
        }
    }

    /// Kernel as a function of the squared distance `r2 = ‖x − y‖²`.
    #[inline]
    pub fn of_sq_dist(&self, r2: f64) -> f64 {
        match *self {
            Self::SquaredEuclidean => r2,
            Self::Power { beta } => {
                if beta == 1.0 {
                    r2.sqrt()
                } else {
                    r2.powf(0.5 * beta)
                }
            }
            Self::Gaussian { gamma } => -(-r2 / (gamma * gamma)).exp_m1(),
        }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch { expected: x.len(), found: y.len() });
        }
        Ok(self.of_sq_dist(sq_dist(x, y)))
    }
}

#[inline]
pub(crate) fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Median of the pairwise Euclidean distances; the lower median for an even
/// number of pairs.
pub fn median_heuristic(points: &[Vec<f64>]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::InvalidArgument("median heuristic needs at least two points".into()));
    }
    let d = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, found: p.len() });
    }
    let mut dists = Vec::with_capacity(points.len() * (points.len() - 1) / 2);
    for (i, x) in points.iter().enumerate() {
        for y in &points[i + 1..] {
            dists.push(sq_dist(x, y).sqrt());
        }
    }
    if dists.iter().all(|r| *r == 0.0) {
        return Err(Error::DegenerateBandwidth);
    }
    let k = (dists.len() - 1) / 2;
    let (_, median, _) = dists.select_nth_unstable_by(k, f64::total_cmp);
    if *median > 0.0 {
        Ok(*median)
    } else {
        // More than half the pairs coincide; fall back to the smallest positive distance.
        Ok(dists.iter().copied().filter(|r| *r > 0.0).fold(f64::INFINITY, f64::min))
    }
}
