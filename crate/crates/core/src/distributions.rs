//! First-order predictive distributions and second-order ensembles.
//!
//! Every value type here is immutable after construction. Gaussians are
//! diagonal; a Gaussian whose variances are all zero is stored as a
//! [`FirstOrderDist::PointMass`] so that score code never sees a singular
//! density.

use crate::error::{Error, Result};
use crate::numeric::compensated_sum;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

const WEIGHT_TOL: f64 = 1e-12;

/// Deterministic generator for `(seed, stream)`; distinct streams are independent.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn check_finite(xs: &[f64], what: &str) -> Result<()> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidDistribution(format!("{what} must be finite")))
    }
}

pub(crate) fn check_weights(weights: &[f64], what: &str) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::InvalidDistribution(format!("{what}: no weights")));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidDistribution(format!("{what}: weights must be nonnegative")));
    }
    let total = compensated_sum(weights.iter().copied());
    if (total - 1.0).abs() > WEIGHT_TOL {
        return Err(Error::InvalidDistribution(format!("{what}: weights sum to {total}, expected 1")));
    }
    Ok(())
}

/// Diagonal Gaussian `N(mean, diag(var))`. Zero variances are allowed here
/// (mixture atoms); [`FirstOrderDist::gaussian`] normalizes a fully degenerate
/// Gaussian to a point mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl Gaussian {
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::InvalidDistribution("empty mean vector".into()));
        }
        if mean.len() != var.len() {
            return Err(Error::DimensionMismatch { expected: mean.len(), found: var.len() });
        }
        check_finite(&mean, "mean")?;
        check_finite(&var, "variance")?;
        if var.iter().any(|v| *v < 0.0) {
            return Err(Error::InvalidDistribution("variance must be nonnegative".into()));
        }
        Ok(Self { mean, var })
    }

    pub fn univariate(mean: f64, var: f64) -> Result<Self> {
        Self::new(vec![mean], vec![var])
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn var(&self) -> &[f64] {
        &self.var
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn is_degenerate(&self) -> bool {
        self.var.iter().all(|v| *v == 0.0)
    }

    fn log_density(&self, y: &[f64]) -> Option<f64> {
        let mut acc = 0.0;
        for ((m, v), y) in self.mean.iter().zip(&self.var).zip(y) {
            if *v <= 0.0 {
                return None;
            }
            acc += -0.5 * (2.0 * PI * v).ln() - (y - m) * (y - m) / (2.0 * v);
        }
        Some(acc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    components: Vec<Gaussian>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, components: Vec<Gaussian>) -> Result<Self> {
        if weights.len() != components.len() {
            return Err(Error::InvalidDistribution(format!(
                "mixture has {} weights but {} components",
                weights.len(),
                components.len()
            )));
        }
        check_weights(&weights, "mixture")?;
        let d = components[0].dim();
        if let Some(c) = components.iter().find(|c| c.dim() != d) {
            return Err(Error::DimensionMismatch { expected: d, found: c.dim() });
        }
        Ok(Self { weights, components })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[Gaussian] {
        &self.components
    }
}

/// A sample set treated as draws from an unknown distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Empirical {
    samples: Vec<Vec<f64>>,
}

impl Empirical {
    pub fn new(samples: Vec<Vec<f64>>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::InvalidDistribution("empirical distribution needs at least 2 samples".into()));
        }
        let d = samples[0].len();
        if d == 0 {
            return Err(Error::InvalidDistribution("zero-dimensional samples".into()));
        }
        for s in &samples {
            if s.len() != d {
                return Err(Error::DimensionMismatch { expected: d, found: s.len() });
            }
            check_finite(s, "samples")?;
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// A predictive distribution over targets in `ℝ^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FirstOrderDist {
    Gaussian(Gaussian),
    Mixture(GaussianMixture),
    PointMass(Vec<f64>),
    Empirical(Empirical),
}

/// One Gaussian piece of a parametric distribution; `var == None` is an atom.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Component<'a> {
    pub weight: f64,
    pub mean: &'a [f64],
    pub var: Option<&'a [f64]>,
}

impl FirstOrderDist {
    pub fn gaussian(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        let g = Gaussian::new(mean, var)?;
        Ok(Self::from(g))
    }

    pub fn gaussian_1d(mean: f64, var: f64) -> Result<Self> {
        Self::gaussian(vec![mean], vec![var])
    }

    pub fn mixture(weights: Vec<f64>, components: Vec<Gaussian>) -> Result<Self> {
        Ok(Self::Mixture(GaussianMixture::new(weights, components)?))
    }

    pub fn point_mass(location: Vec<f64>) -> Result<Self> {
        if location.is_empty() {
            return Err(Error::InvalidDistribution("empty location".into()));
        }
        check_finite(&location, "location")?;
        Ok(Self::PointMass(location))
    }

    pub fn point_mass_1d(location: f64) -> Result<Self> {
        Self::point_mass(vec![location])
    }

    pub fn empirical(samples: Vec<Vec<f64>>) -> Result<Self> {
        Ok(Self::Empirical(Empirical::new(samples)?))
    }

    pub fn empirical_1d(samples: &[f64]) -> Result<Self> {
        Self::empirical(samples.iter().map(|x| vec![*x]).collect())
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Gaussian(g) => g.dim(),
            Self::Mixture(m) => m.components[0].dim(),
            Self::PointMass(x) => x.len(),
            Self::Empirical(e) => e.samples[0].len(),
        }
    }

    pub fn is_parametric(&self) -> bool {
        !matches!(self, Self::Empirical(_))
    }

    /// Gaussian pieces, or `None` for sample sets.
    pub(crate) fn components(&self) -> Option<Vec<Component<'_>>> {
        match self {
            Self::Gaussian(g) => Some(vec![Component { weight: 1.0, mean: &g.mean, var: Some(&g.var) }]),
            Self::PointMass(x) => Some(vec![Component { weight: 1.0, mean: x, var: None }]),
            Self::Mixture(m) => Some(
                m.weights
                    .iter()
                    .zip(&m.components)
                    .map(|(w, c)| Component {
                        weight: *w,
                        mean: &c.mean,
                        var: if c.is_degenerate() { None } else { Some(&c.var) },
                    })
                    .collect(),
            ),
            Self::Empirical(_) => None,
        }
    }

    /// Draws `n` samples; bit-identical for equal seeds.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        self.sample_with(&mut rng_for(seed, 0), n)
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<Vec<f64>> {
        match self {
            Self::PointMass(x) => vec![x.clone(); n],
            Self::Gaussian(g) => (0..n).map(|_| draw_gaussian(rng, g)).collect(),
            Self::Mixture(m) => {
                let index = WeightedIndex::new(&m.weights).expect("validated weights");
                (0..n)
                    .map(|_| {
                        let k = index.sample(rng);
                        draw_gaussian(rng, &m.components[k])
                    })
                    .collect()
            }
            Self::Empirical(e) => (0..n).map(|_| e.samples[rng.random_range(0..e.samples.len())].clone()).collect(),
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        match self {
            Self::Gaussian(g) => g.mean.clone(),
            Self::PointMass(x) => x.clone(),
            Self::Mixture(m) => {
                let d = self.dim();
                (0..d)
                    .map(|j| compensated_sum(m.weights.iter().zip(&m.components).map(|(w, c)| w * c.mean[j])))
                    .collect()
            }
            Self::Empirical(e) => {
                let n = e.samples.len() as f64;
                (0..self.dim()).map(|j| compensated_sum(e.samples.iter().map(|s| s[j])) / n).collect()
            }
        }
    }

    /// Trace of the covariance; the unbiased sample covariance for sample sets.
    pub fn cov_trace(&self) -> f64 {
        match self {
            Self::Gaussian(g) => compensated_sum(g.var.iter().copied()),
            Self::PointMass(_) => 0.0,
            Self::Mixture(m) => {
                let mu = self.mean();
                // law of total variance: E[tr Σ_k] + E‖μ_k − μ‖²
                compensated_sum(m.weights.iter().zip(&m.components).map(|(w, c)| {
                    let within: f64 = c.var.iter().sum();
                    let between: f64 = c.mean.iter().zip(&mu).map(|(a, b)| (a - b) * (a - b)).sum();
                    w * (within + between)
                }))
            }
            Self::Empirical(e) => {
                let mu = self.mean();
                let n = e.samples.len() as f64;
                compensated_sum(
                    e.samples.iter().map(|s| s.iter().zip(&mu).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()),
                ) / (n - 1.0)
            }
        }
    }

    pub fn mean_and_cov_trace(&self) -> (Vec<f64>, f64) {
        (self.mean(), self.cov_trace())
    }

    /// Log density at `y`; errors for atoms and sample sets.
    pub fn log_density(&self, y: &[f64]) -> Result<f64> {
        if y.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: y.len() });
        }
        match self {
            Self::Gaussian(g) => {
                g.log_density(y).ok_or_else(|| Error::NoDensity("Gaussian with a zero variance".into()))
            }
            Self::Mixture(m) => {
                let mut terms = Vec::with_capacity(m.components.len());
                for (w, c) in m.weights.iter().zip(&m.components) {
                    let ld = c
                        .log_density(y)
                        .ok_or_else(|| Error::NoDensity("mixture has a degenerate component".into()))?;
                    if *w > 0.0 {
                        terms.push(w.ln() + ld);
                    }
                }
                Ok(log_sum_exp(&terms))
            }
            Self::PointMass(_) => Err(Error::NoDensity("point mass".into())),
            Self::Empirical(_) => Err(Error::NoDensity("empirical sample set".into())),
        }
    }

    pub fn has_density(&self) -> bool {
        match self {
            Self::Gaussian(g) => g.var.iter().all(|v| *v > 0.0),
            Self::Mixture(m) => m.components.iter().all(|c| c.var.iter().all(|v| *v > 0.0)),
            _ => false,
        }
    }

    /// The `j`-th univariate marginal.
    pub fn marginal(&self, j: usize) -> Result<Self> {
        let d = self.dim();
        if j >= d {
            return Err(Error::InvalidArgument(format!("marginal {j} of a {d}-dimensional distribution")));
        }
        Ok(match self {
            Self::Gaussian(g) => Self::gaussian(vec![g.mean[j]], vec![g.var[j]])?,
            Self::PointMass(x) => Self::PointMass(vec![x[j]]),
            Self::Mixture(m) => Self::Mixture(GaussianMixture {
                weights: m.weights.clone(),
                components: m
                    .components
                    .iter()
                    .map(|c| Gaussian { mean: vec![c.mean[j]], var: vec![c.var[j]] })
                    .collect(),
            }),
            Self::Empirical(e) => {
                Self::Empirical(Empirical { samples: e.samples.iter().map(|s| vec![s[j]]).collect() })
            }
        })
    }

    /// Pushforward under `y ↦ c·y + h`.
    pub fn affine(&self, c: f64, h: &[f64]) -> Result<Self> {
        if h.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: h.len() });
        }
        let map = |x: &[f64]| x.iter().zip(h).map(|(x, h)| c * x + h).collect::<Vec<_>>();
        let map_g = |g: &Gaussian| Gaussian { mean: map(&g.mean), var: g.var.iter().map(|v| c * c * v).collect() };
        Ok(match self {
            Self::Gaussian(g) => Self::from(map_g(g)),
            Self::PointMass(x) => Self::PointMass(map(x)),
            Self::Mixture(m) => Self::Mixture(GaussianMixture {
                weights: m.weights.clone(),
                components: m.components.iter().map(map_g).collect(),
            }),
            Self::Empirical(e) => Self::Empirical(Empirical { samples: e.samples.iter().map(|s| map(s)).collect() }),
        })
    }
}

impl From<Gaussian> for FirstOrderDist {
    fn from(g: Gaussian) -> Self {
        if g.is_degenerate() {
            Self::PointMass(g.mean)
        } else {
            Self::Gaussian(g)
        }
    }
}

fn draw_gaussian<R: Rng + ?Sized>(rng: &mut R, g: &Gaussian) -> Vec<f64> {
    g.mean
        .iter()
        .zip(&g.var)
        .map(|(m, v)| {
            let z: f64 = rng.sample(StandardNormal);
            m + v.sqrt() * z
        })
        .collect()
}

pub(crate) fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + compensated_sum(terms.iter().map(|t| (t - max).exp())).ln()
}

/// Bayesian model average of an ensemble: the mixture `Σ w_m P_m`.
pub type BmaDist = FirstOrderDist;

/// A weighted finite collection of first-order distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondOrderEnsemble {
    members: Vec<FirstOrderDist>,
    weights: Vec<f64>,
}

impl SecondOrderEnsemble {
    pub fn new(members: Vec<FirstOrderDist>, weights: Vec<f64>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidEnsemble("ensemble needs at least one member".into()));
        }
        if members.len() != weights.len() {
            return Err(Error::InvalidEnsemble(format!("{} members but {} weights", members.len(), weights.len())));
        }
        check_weights(&weights, "ensemble").map_err(|e| Error::InvalidEnsemble(e.to_string()))?;
        let d = members[0].dim();
        if let Some(m) = members.iter().find(|m| m.dim() != d) {
            return Err(Error::DimensionMismatch { expected: d, found: m.dim() });
        }
        Ok(Self { members, weights })
    }

    pub fn uniform(members: Vec<FirstOrderDist>) -> Result<Self> {
        let m = members.len().max(1);
        Self::new(members, vec![1.0 / m as f64; m])
    }

    pub fn members(&self) -> &[FirstOrderDist] {
        &self.members
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.members[0].dim()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &FirstOrderDist)> {
        self.weights.iter().copied().zip(&self.members)
    }

    /// The model average. Parametric members are flattened into one Gaussian
    /// mixture; if any member is a sample set, the average is a pooled
    /// resample of `Σ n_m` draws (seed 0), see [`Self::bma_pooled`].
    pub fn bma(&self) -> BmaDist {
        if self.members.len() == 1 {
            return self.members[0].clone();
        }
        if self.members.iter().all(FirstOrderDist::is_parametric) {
            let mut weights = Vec::new();
            let mut comps = Vec::new();
            for (w, m) in self.iter() {
                for c in m.components().expect("parametric") {
                    weights.push(w * c.weight);
                    comps.push(Gaussian {
                        mean: c.mean.to_vec(),
                        var: c.var.map_or_else(|| vec![0.0; c.mean.len()], <[f64]>::to_vec),
                    });
                }
            }
            return FirstOrderDist::Mixture(GaussianMixture { weights, components: comps });
        }
        let pool: usize = self
            .members
            .iter()
            .map(|m| match m {
                FirstOrderDist::Empirical(e) => e.len(),
                _ => 0,
            })
            .sum();
        self.bma_pooled(pool.max(2), 0)
    }

    /// Model average as `pool_size` weighted resamples.
    pub fn bma_pooled(&self, pool_size: usize, seed: u64) -> BmaDist {
        let mut rng = rng_for(seed, 1);
        let index = WeightedIndex::new(&self.weights).expect("validated weights");
        let samples = (0..pool_size.max(2))
            .map(|_| {
                let m = &self.members[index.sample(&mut rng)];
                m.sample_with(&mut rng, 1).pop().expect("one sample")
            })
            .collect();
        FirstOrderDist::Empirical(Empirical { samples })
    }

    /// `(1 − ε)·Q + ε·δ_contaminant`.
    pub fn contaminate(&self, contaminant: FirstOrderDist, eps: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eps) {
            return Err(Error::InvalidArgument(format!("contamination {eps} outside [0, 1]")));
        }
        let mut members = self.members.clone();
        let mut weights: Vec<f64> = self.weights.iter().map(|w| (1.0 - eps) * w).collect();
        members.push(contaminant);
        weights.push(eps);
        Self::new(members, weights)
    }

    /// Member means (parametric) or member samples (sample sets), pooled.
    pub fn reference_points(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for m in &self.members {
            match m {
                FirstOrderDist::Empirical(e) => out.extend(e.samples.iter().cloned()),
                other => out.push(other.mean()),
            }
        }
        out
    }
}
