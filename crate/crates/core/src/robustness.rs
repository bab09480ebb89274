//! Robustness of aleatoric uncertainty under contamination of the
//! second-order distribution.
//!
//! For `Q_ε = (1 − ε)Q + ε δ_{θ₀}` the influence function of
//! `AU(Q) = E_Q H(P)` is `IF(θ₀) = H(P_{θ₀}) − AU(Q)`. It is bounded exactly
//! when the entropy is bounded, which among the supported scores holds only
//! for the Gaussian kernel (`H < ½`).

use crate::distributions::{rng_for, FirstOrderDist, Gaussian, GaussianMixture, SecondOrderEnsemble};
use crate::error::{Error, Result};
use crate::kernels::median_heuristic;
use crate::numeric::compensated_sum;
use crate::scores::{entropy, EvalPolicy, ScoreKind};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::fmt;

/// `AU(Q) = Σ w_m H(P_m)`.
pub fn aleatoric(base: &SecondOrderEnsemble, score: &ScoreKind, policy: &EvalPolicy) -> Result<f64> {
    let terms = base
        .iter()
        .enumerate()
        .map(|(i, (w, p))| entropy(score, &policy.reseeded(i as u64), p).map(|h| w * h.value))
        .collect::<Result<Vec<_>>>()?;
    Ok(compensated_sum(terms))
}

/// `IF(θ₀; AU, Q) = H(P_{θ₀}) − E_Q H(P)`.
pub fn influence(
    base: &SecondOrderEnsemble,
    contaminant: &FirstOrderDist,
    score: &ScoreKind,
    policy: &EvalPolicy,
) -> Result<f64> {
    Ok(entropy(score, policy, contaminant)?.value - aleatoric(base, score, policy)?)
}

/// Richardson-extrapolated finite difference of `ε ↦ AU(Q_ε)` at zero, from
/// steps `h` and `h/10`.
pub fn influence_finite_difference(
    base: &SecondOrderEnsemble,
    contaminant: &FirstOrderDist,
    score: &ScoreKind,
    policy: &EvalPolicy,
    h: f64,
) -> Result<f64> {
    let au0 = aleatoric(base, score, policy)?;
    let slope = |eps: f64| -> Result<f64> {
        let q = base.contaminate(contaminant.clone(), eps)?;
        Ok((aleatoric(&q, score, policy)? - au0) / eps)
    };
    let coarse = slope(h)?;
    let fine = slope(h / 10.0)?;
    Ok((10.0 * fine - coarse) / 9.0)
}

/// Influence of a Gaussian contaminant `N(mean, σ₀²)` swept over `σ₀²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluencePath {
    pub contaminant: FirstOrderDist,
    pub base: SecondOrderEnsemble,
    pub score: ScoreKind,
    /// Influence of `contaminant` itself.
    pub if_value: f64,
    /// `(σ₀², IF)` along the sweep.
    pub sweep: Vec<(f64, f64)>,
}

impl InfluencePath {
    pub fn new(
        base: SecondOrderEnsemble,
        contaminant: FirstOrderDist,
        score: ScoreKind,
        policy: &EvalPolicy,
        sigma0_grid: &[f64],
    ) -> Result<Self> {
        let if_value = influence(&base, &contaminant, &score, policy)?;
        let mean = contaminant.mean();
        let d = mean.len();
        let sweep = sigma0_grid
            .iter()
            .map(|&s2| {
                let c = FirstOrderDist::gaussian(mean.clone(), vec![s2; d])?;
                Ok((s2, influence(&base, &c, &score, policy)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { contaminant, base, score, if_value, sweep })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GrowthClass {
    Log,
    Sqrt,
    Linear,
    Bounded,
}

impl fmt::Display for GrowthClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Log => "log",
            Self::Sqrt => "sqrt",
            Self::Linear => "linear",
            Self::Bounded => "bounded",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthFit {
    /// Least-squares slope of `ln H` against `ln σ₀²` (NaN if some `H ≤ 0`).
    pub loglog_slope: f64,
    /// Least-squares slope of `H` against `ln σ₀²`.
    pub semilog_slope: f64,
    /// `H` at the largest `σ₀²`.
    pub terminal: f64,
    pub classification: GrowthClass,
    /// `(σ₀², H(N(0, σ₀²)))` on the grid.
    pub entropies: Vec<(f64, f64)>,
}

fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Growth of `H(N(0, σ₀²))` as `σ₀² → ∞`, which is the growth of the
/// influence function along that contamination path.
pub fn growth_fit(score: &ScoreKind, sigma0_grid: &[f64]) -> Result<GrowthFit> {
    if sigma0_grid.len() < 2 || sigma0_grid.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(Error::InvalidArgument("growth grid needs at least two positive variances".into()));
    }
    let mut grid = sigma0_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let (lo, hi) = (grid[0], grid[grid.len() - 1]);
    if hi / lo < 1e4 * (1.0 - 1e-12) || grid.len() < 2 {
        return Err(Error::InvalidArgument(format!("growth grid must span at least four decades, got [{lo}, {hi}]")));
    }
    let policy = EvalPolicy::ClosedForm;
    let entropies = grid
        .iter()
        .map(|&s2| Ok((s2, entropy(score, &policy, &FirstOrderDist::gaussian_1d(0.0, s2)?)?.value)))
        .collect::<Result<Vec<_>>>()?;
    let lx: Vec<f64> = grid.iter().map(|s| s.ln()).collect();
    let hs: Vec<f64> = entropies.iter().map(|e| e.1).collect();
    let loglog_slope = if hs.iter().all(|h| *h > 0.0) {
        ls_slope(&lx, &hs.iter().map(|h| h.ln()).collect::<Vec<_>>())
    } else {
        f64::NAN
    };
    let semilog_slope = ls_slope(&lx, &hs);
    let terminal = *hs.last().expect("non-empty");

    // Increments per unit of ln σ₀² at both ends of the grid; a bounded entropy
    // has geometrically shrinking increments, a logarithmic one constant ones.
    let rate = |i: usize| (hs[i + 1] - hs[i]) / (lx[i + 1] - lx[i]);
    let first_rate = rate(0);
    let last_rate = rate(hs.len() - 2);
    let shrinking = first_rate > 0.0 && last_rate < 0.5 * first_rate;
    let classification = if !loglog_slope.is_nan() && (loglog_slope - 1.0).abs() < 0.25 {
        GrowthClass::Linear
    } else if !loglog_slope.is_nan() && (loglog_slope - 0.5).abs() < 0.15 {
        GrowthClass::Sqrt
    } else if shrinking {
        GrowthClass::Bounded
    } else {
        GrowthClass::Log
    };
    Ok(GrowthFit { loglog_slope, semilog_slope, terminal, classification, entropies })
}

/// Mean absolute percentage error `100/n Σ |(distorted − base)/base|`.
pub fn mape(base: &[f64], distorted: &[f64]) -> Result<f64> {
    if base.len() != distorted.len() {
        return Err(Error::DimensionMismatch { expected: base.len(), found: distorted.len() });
    }
    if base.is_empty() {
        return Err(Error::InvalidArgument("MAPE of empty vectors".into()));
    }
    if let Some(i) = base.iter().position(|b| *b == 0.0) {
        return Err(Error::MapeUndefined(i));
    }
    let n = base.len() as f64;
    Ok(100.0 / n * compensated_sum(base.iter().zip(distorted).map(|(b, d)| ((d - b) / b).abs())))
}

/// Shifts the location of `p` by `shift` and adds `extra_var` to every variance.
fn distort(p: &FirstOrderDist, shift: f64, extra_var: f64) -> Result<FirstOrderDist> {
    let inflate = |g: &Gaussian| -> Result<Gaussian> {
        Gaussian::new(g.mean().iter().map(|m| m + shift).collect(), g.var().iter().map(|v| v + extra_var).collect())
    };
    match p {
        FirstOrderDist::Gaussian(g) => Ok(inflate(g)?.into()),
        FirstOrderDist::PointMass(x) => {
            FirstOrderDist::gaussian(x.iter().map(|m| m + shift).collect(), vec![extra_var; x.len()])
        }
        FirstOrderDist::Mixture(m) => Ok(FirstOrderDist::Mixture(GaussianMixture::new(
            m.weights().to_vec(),
            m.components().iter().map(inflate).collect::<Result<Vec<_>>>()?,
        )?)),
        FirstOrderDist::Empirical(_) => {
            Err(Error::InvalidArgument("distortion experiment needs parametric members".into()))
        }
    }
}

/// Variance added to the distorted member per unit of `δ²`.
pub const DISTORTION_VARIANCE_INFLATION: f64 = 1.0;

/// Appends one distorted member to `base`: a copy of a randomly chosen member
/// whose mean is shifted by `δ·z`, `z ~ N(0, 1)`, and whose variance grows by
/// `δ²`. The member and `z` depend only on `(seed, instance)`, so the same draw
/// is reused across `δ`.
pub fn distorted_ensemble(
    base: &SecondOrderEnsemble,
    delta: f64,
    seed: u64,
    instance: u64,
) -> Result<SecondOrderEnsemble> {
    let mut rng = rng_for(seed, instance);
    let j = rng.random_range(0..base.len());
    let z: f64 = rng.sample(StandardNormal);
    let contaminant = distort(&base.members()[j], delta * z, DISTORTION_VARIANCE_INFLATION * delta * delta)?;
    let mut members = base.members().to_vec();
    members.push(contaminant);
    SecondOrderEnsemble::uniform(members)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapeRow {
    pub score: ScoreKind,
    pub delta: f64,
    pub mape: f64,
}

/// MAPE of AU between each base ensemble and its distorted copy, per score and `δ`.
pub fn distortion_experiment(
    base: &[SecondOrderEnsemble],
    deltas: &[f64],
    kinds: &[ScoreKind],
    seed: u64,
) -> Result<Vec<MapeRow>> {
    if deltas.iter().any(|d| d.is_nan() || *d < 0.0) {
        return Err(Error::InvalidArgument("distortions must be nonnegative".into()));
    }
    let policy = EvalPolicy::ClosedForm;
    let mut rows = Vec::with_capacity(kinds.len() * deltas.len());
    for kind in kinds {
        let base_au = base.iter().map(|q| aleatoric(q, kind, &policy)).collect::<Result<Vec<_>>>()?;
        for &delta in deltas {
            let distorted = base
                .iter()
                .enumerate()
                .map(|(i, q)| aleatoric(&distorted_ensemble(q, delta, seed, i as u64)?, kind, &policy))
                .collect::<Result<Vec<_>>>()?;
            rows.push(MapeRow { score: kind.clone(), delta, mape: mape(&base_au, &distorted)? });
        }
    }
    Ok(rows)
}

/// Synthetic base ensembles standing in for trained deep ensembles: instance
/// `i` has center `c_i ~ N(0, 1)` and scale `s_i ~ U(0.5, 1.5)`; each member is
/// `N(c_i + 0.1·s_i·z, s_i²·u)` with `z ~ N(0, 1)`, `u ~ U(0.8, 1.2)`.
pub fn synthetic_base_ensembles(instances: usize, members: usize, seed: u64) -> Result<Vec<SecondOrderEnsemble>> {
    let mut rng = rng_for(seed, u64::MAX);
    (0..instances)
        .map(|_| {
            let c: f64 = rng.sample(StandardNormal);
            let s: f64 = rng.random_range(0.5..1.5);
            let ms = (0..members)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    let u: f64 = rng.random_range(0.8..1.2);
                    FirstOrderDist::gaussian_1d(c + 0.1 * s * z, s * s * u)
                })
                .collect::<Result<Vec<_>>>()?;
            SecondOrderEnsemble::uniform(ms)
        })
        .collect()
}

/// Median-heuristic bandwidth over the pooled member means of `ensembles`.
pub fn pooled_median_bandwidth(ensembles: &[SecondOrderEnsemble]) -> Result<f64> {
    let points: Vec<Vec<f64>> = ensembles.iter().flat_map(|q| q.reference_points()).collect();
    median_heuristic(&points)
}

/// The δ grid of the distortion table.
pub const DEFAULT_DELTAS: [f64; 6] = [0.0, 0.2, 0.5, 1.5, 2.5, 5.0];

#[cfg(test)]
mod tests {
    use super::*;

    const CF: EvalPolicy = EvalPolicy::ClosedForm;

    fn n(m: f64, v: f64) -> FirstOrderDist {
        FirstOrderDist::gaussian_1d(m, v).unwrap()
    }

    #[test]
    fn no_contamination_effect() {
        let p = n(0.5, 2.0);
        let q = SecondOrderEnsemble::uniform(vec![p.clone()]).unwrap();
        for kind in [ScoreKind::Log, ScoreKind::SquaredError, ScoreKind::crps(), ScoreKind::GaussianKernel(1.0)] {
            assert_eq!(influence(&q, &p, &kind, &CF).unwrap(), 0.0);
        }
    }

    #[test]
    fn gaussian_kernel_influence_limit() {
        let q = SecondOrderEnsemble::uniform(vec![n(0.0, 1.0), n(1.0, 2.0)]).unwrap();
        let kind = ScoreKind::GaussianKernel(1.0);
        let a = aleatoric(&q, &kind, &CF).unwrap();
        let v = influence(&q, &n(0.0, 1e14), &kind, &CF).unwrap();
        assert!((v - (0.5 - a)).abs() < 1e-6);
        assert!(v.abs() < 0.5);
    }

    #[test]
    fn squared_error_influence() {
        let q = SecondOrderEnsemble::uniform(vec![n(0.0, 1.0)]).unwrap();
        assert_eq!(influence(&q, &n(3.0, 1e6), &ScoreKind::SquaredError, &CF).unwrap(), 1e6 - 1.0);
    }

    #[test]
    fn growth_rates() {
        let grid = [1e2, 1e3, 1e4, 1e5, 1e6];
        let se = growth_fit(&ScoreKind::SquaredError, &grid).unwrap();
        assert!((se.loglog_slope - 1.0).abs() < 0.01);
        assert_eq!(se.classification, GrowthClass::Linear);
        let es = growth_fit(&ScoreKind::crps(), &grid).unwrap();
        assert!((es.loglog_slope - 0.5).abs() < 0.01);
        assert_eq!(es.classification, GrowthClass::Sqrt);
        let gk = growth_fit(&ScoreKind::GaussianKernel(1.0), &grid).unwrap();
        assert!((gk.terminal - 0.5).abs() < 1e-3);
        assert_eq!(gk.classification, GrowthClass::Bounded);
        let log = growth_fit(&ScoreKind::Log, &grid).unwrap();
        assert!((log.semilog_slope - 0.5).abs() < 1e-12);
        assert_eq!(log.classification, GrowthClass::Log);
    }

    #[test]
    fn growth_grid_must_span_four_decades() {
        assert!(growth_fit(&ScoreKind::SquaredError, &[1.0, 10.0, 100.0]).is_err());
        assert!(growth_fit(&ScoreKind::SquaredError, &[1.0]).is_err());
        assert!(growth_fit(&ScoreKind::SquaredError, &[0.0, 1e6]).is_err());
    }

    #[test]
    fn mape_examples() {
        assert_eq!(mape(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(mape(&[1.0, 2.0], &[2.0, 2.0]).unwrap(), 50.0);
        assert!((mape(&[10.0], &[9.0]).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(mape(&[1.0, 0.0], &[1.0, 1.0]), Err(Error::MapeUndefined(1)));
        assert!(mape(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn zero_distortion_of_homoscedastic_ensemble() {
        let base: Vec<_> = (0..5)
            .map(|i| {
                let v = 0.5 + i as f64 * 0.3;
                SecondOrderEnsemble::uniform(vec![n(0.0, v), n(0.4, v), n(-0.2, v)]).unwrap()
            })
            .collect();
        let kinds = [ScoreKind::Log, ScoreKind::SquaredError, ScoreKind::crps(), ScoreKind::GaussianKernel(1.0)];
        for row in distortion_experiment(&base, &[0.0], &kinds, 9).unwrap() {
            assert!(row.mape.abs() < 1e-12, "{row:?}");
        }
    }

    #[test]
    fn distortion_is_deterministic() {
        let base = synthetic_base_ensembles(5, 4, 2).unwrap();
        let a = distortion_experiment(&base, &[0.5, 2.0], &[ScoreKind::crps()], 1).unwrap();
        let b = distortion_experiment(&base, &[0.5, 2.0], &[ScoreKind::crps()], 1).unwrap();
        assert_eq!(a, b);
    }
}
