//! Scoring rules `S(P, y)`, their entropies `H(P) = S(P, P)` and divergences
//! `D(P, Q) = S(P, Q) − H(Q)`.
//!
//! Kernel scores follow
//! `S_k(P, y) = E k(X, y) − ½ E k(X, X') − ½ k(y, y)`, so `H_k(P) = ½ E k(X, X')`
//! and `D_k` is the squared MMD. Everything reduces to expectations
//! `E k(X − Y)` over pairs of Gaussian pieces, which have closed forms for the
//! squared-error and Gaussian kernels in any dimension and for the power
//! kernel in one dimension. Sample sets use U-statistics; remaining cases fall
//! back to Monte Carlo and say so in [`Evaluation::path`].

use crate::distributions::{rng_for, Component, FirstOrderDist};
use crate::error::{Error, Result};
use crate::kernels::{median_heuristic, sq_dist, KernelSpec};
use crate::numeric::{compensated_sum, integrate_with_breaks, CompensatedSum};
use crate::special::gaussian_abs_moment;
use serde::{Deserialize, Serialize};
use std::f64::consts::{E, PI};
use std::fmt;
use std::str::FromStr;

/// Sample count and seed used when a closed form is requested but unavailable.
pub const FALLBACK_MC_SAMPLES: usize = 100_000;
pub const FALLBACK_MC_SEED: u64 = 0;
/// Absolute tolerance for log-score quadrature under [`EvalPolicy::ClosedForm`].
pub const DEFAULT_QUAD_TOL: f64 = 1e-8;
/// Closed-form divergences this far below zero (relative to the magnitude of
/// their terms) are rounding noise and get clamped; anything lower is an error.
pub const CLAMP_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ScoreKind {
    Log,
    SquaredError,
    /// Energy score with exponent `β ∈ (0, 2)`; `β = 1` in one dimension is the CRPS.
    Energy(f64),
    /// Gaussian kernel score with bandwidth `γ > 0`.
    GaussianKernel(f64),
    /// Sum of a univariate score over the coordinates.
    Marginal(Box<ScoreKind>),
}

impl ScoreKind {
    pub fn crps() -> Self {
        Self::Energy(1.0)
    }

    pub fn energy(beta: f64) -> Result<Self> {
        match KernelSpec::power(beta)? {
            KernelSpec::SquaredEuclidean => Ok(Self::SquaredError),
            _ => Ok(Self::Energy(beta)),
        }
    }

    pub fn gaussian_kernel(gamma: f64) -> Result<Self> {
        KernelSpec::gaussian(gamma)?;
        Ok(Self::GaussianKernel(gamma))
    }

    pub fn marginal(inner: ScoreKind) -> Result<Self> {
        if matches!(inner, Self::Marginal(_)) {
            return Err(Error::InvalidArgument("marginal score needs a univariate inner score".into()));
        }
        Ok(Self::Marginal(Box::new(inner)))
    }

    pub fn kernel(&self) -> Option<KernelSpec> {
        match *self {
            Self::SquaredError => Some(KernelSpec::SquaredEuclidean),
            Self::Energy(beta) => Some(KernelSpec::Power { beta }),
            Self::GaussianKernel(gamma) => Some(KernelSpec::Gaussian { gamma }),
            Self::Log | Self::Marginal(_) => None,
        }
    }

    pub fn is_kernel_score(&self) -> bool {
        match self {
            Self::Marginal(inner) => inner.is_kernel_score(),
            other => other.kernel().is_some(),
        }
    }

    pub fn is_strictly_proper(&self) -> bool {
        match self {
            Self::SquaredError => false,
            Self::Marginal(inner) => inner.is_strictly_proper(),
            _ => true,
        }
    }
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Log => write!(f, "log"),
            Self::SquaredError => write!(f, "se"),
            Self::Energy(b) if *b == 1.0 => write!(f, "crps"),
            Self::Energy(b) => write!(f, "energy:{b}"),
            Self::GaussianKernel(g) => write!(f, "gauss:{g}"),
            Self::Marginal(inner) => write!(f, "marginal:{inner}"),
        }
    }
}

/// A score as named on the command line; `gauss:median` defers the bandwidth
/// until reference points are known.
#[derive(Debug, Clone, PartialEq)]
pub enum ScoreSpec {
    Fixed(ScoreKind),
    GaussianMedian,
    Marginal(Box<ScoreSpec>),
}

impl ScoreSpec {
    pub fn resolve(&self, reference_points: &[Vec<f64>]) -> Result<ScoreKind> {
        match self {
            Self::Fixed(kind) => Ok(kind.clone()),
            Self::GaussianMedian => ScoreKind::gaussian_kernel(median_heuristic(reference_points)?),
            Self::Marginal(inner) => ScoreKind::marginal(inner.resolve(reference_points)?),
        }
    }

    pub fn needs_reference_points(&self) -> bool {
        match self {
            Self::Fixed(_) => false,
            Self::GaussianMedian => true,
            Self::Marginal(inner) => inner.needs_reference_points(),
        }
    }
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::Parse(format!("invalid {what} `{s}`")))
}

impl FromStr for ScoreSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        match (head, arg) {
            ("log", None) => Ok(Self::Fixed(ScoreKind::Log)),
            ("se", None) => Ok(Self::Fixed(ScoreKind::SquaredError)),
            ("crps", None) => Ok(Self::Fixed(ScoreKind::crps())),
            ("energy", None) => Ok(Self::Fixed(ScoreKind::crps())),
            ("energy", Some(b)) => Ok(Self::Fixed(ScoreKind::energy(parse_f64(b, "energy exponent")?)?)),
            ("gauss", Some("median")) => Ok(Self::GaussianMedian),
            ("gauss", Some(g)) => Ok(Self::Fixed(ScoreKind::gaussian_kernel(parse_f64(g, "bandwidth")?)?)),
            ("marginal", Some(inner)) => {
                let inner: ScoreSpec = inner.parse()?;
                if matches!(inner, Self::Marginal(_)) {
                    return Err(Error::Parse("nested marginal score".into()));
                }
                Ok(Self::Marginal(Box::new(inner)))
            }
            _ => Err(Error::Parse(format!("unknown score `{s}`"))),
        }
    }
}

/// How expectations are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EvalPolicy {
    ClosedForm,
    MonteCarlo { n_samples: usize, seed: u64 },
    Quadrature { abs_tol: f64 },
}

impl EvalPolicy {
    pub fn monte_carlo(n_samples: usize, seed: u64) -> Result<Self> {
        if n_samples < 2 {
            return Err(Error::InvalidArgument("Monte Carlo needs at least 2 samples".into()));
        }
        Ok(Self::MonteCarlo { n_samples, seed })
    }

    pub fn quadrature(abs_tol: f64) -> Result<Self> {
        if abs_tol > 0.0 && abs_tol.is_finite() {
            Ok(Self::Quadrature { abs_tol })
        } else {
            Err(Error::InvalidArgument(format!("quadrature tolerance {abs_tol} must be positive")))
        }
    }

    /// Same policy with the Monte Carlo seed shifted by `offset`.
    pub fn reseeded(&self, offset: u64) -> Self {
        match *self {
            Self::MonteCarlo { n_samples, seed } => Self::MonteCarlo { n_samples, seed: seed.wrapping_add(offset) },
            other => other,
        }
    }

    fn mc(&self) -> Option<(usize, u64)> {
        match *self {
            Self::MonteCarlo { n_samples, seed } => Some((n_samples, seed)),
            _ => None,
        }
    }

    fn quad_tol(&self) -> f64 {
        match *self {
            Self::Quadrature { abs_tol } => abs_tol,
            _ => DEFAULT_QUAD_TOL,
        }
    }
}

impl fmt::Display for EvalPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ClosedForm => write!(f, "closed"),
            Self::MonteCarlo { n_samples, seed } => write!(f, "mc:{n_samples}:{seed}"),
            Self::Quadrature { abs_tol } => write!(f, "quad:{abs_tol:e}"),
        }
    }
}

impl FromStr for EvalPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        match parts.as_slice() {
            ["closed"] => Ok(Self::ClosedForm),
            ["mc", n, seed] => {
                let n = n.parse().map_err(|_| Error::Parse(format!("invalid sample count `{n}`")))?;
                let seed = seed.parse().map_err(|_| Error::Parse(format!("invalid seed `{seed}`")))?;
                Self::monte_carlo(n, seed)
            }
            ["quad", tol] => Self::quadrature(parse_f64(tol, "tolerance")?),
            _ => Err(Error::Parse(format!("unknown policy `{s}`"))),
        }
    }
}

/// Which numerical route produced a value, ordered from exact to noisy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EvalPath {
    ClosedForm,
    Quadrature,
    UStatistic,
    MonteCarlo,
}

impl EvalPath {
    fn is_stochastic(self) -> bool {
        matches!(self, Self::UStatistic | Self::MonteCarlo)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub value: f64,
    /// The least exact route used by any term.
    pub path: EvalPath,
    /// A slightly negative divergence or score was clamped to zero.
    pub clamped: bool,
}

impl Evaluation {
    fn exact(value: f64) -> Self {
        Self { value, path: EvalPath::ClosedForm, clamped: false }
    }

    fn new(value: f64, path: EvalPath) -> Self {
        Self { value, path, clamped: false }
    }

    fn merge(&self, other: &Evaluation, value: f64) -> Self {
        Self { value, path: self.path.max(other.path), clamped: self.clamped || other.clamped }
    }
}

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected: a, found: b })
    }
}

// ---------------------------------------------------------------------------
// Kernel expectations

/// `E k(Z)` for `Z ~ N(delta, diag(var))`.
fn gaussian_diff_expectation(
    kernel: KernelSpec,
    delta: &[f64],
    var: &[f64],
    policy: &EvalPolicy,
) -> Option<(f64, EvalPath)> {
    if var.iter().all(|v| *v == 0.0) {
        return Some((kernel.of_sq_dist(delta.iter().map(|d| d * d).sum()), EvalPath::ClosedForm));
    }
    if let (EvalPolicy::Quadrature { abs_tol }, 1) = (policy, delta.len()) {
        return Some((quad_kernel_1d(kernel, delta[0], var[0], *abs_tol), EvalPath::Quadrature));
    }
    match kernel {
        KernelSpec::SquaredEuclidean => {
            Some((delta.iter().zip(var).map(|(d, v)| d * d + v).sum(), EvalPath::ClosedForm))
        }
        KernelSpec::Gaussian { gamma } => {
            let g2 = gamma * gamma;
            let mut log_mgf = 0.0;
            for (d, v) in delta.iter().zip(var) {
                let s = g2 + 2.0 * v;
                log_mgf += 0.5 * (g2 / s).ln() - d * d / s;
            }
            Some((-log_mgf.exp_m1(), EvalPath::ClosedForm))
        }
        KernelSpec::Power { beta } if delta.len() == 1 => {
            Some((gaussian_abs_moment(delta[0], var[0], beta), EvalPath::ClosedForm))
        }
        KernelSpec::Power { .. } => None,
    }
}

fn quad_kernel_1d(kernel: KernelSpec, delta: f64, var: f64, abs_tol: f64) -> f64 {
    let s = var.sqrt();
    let f =
        |z: f64| kernel.of_sq_dist(z * z) * (-(z - delta) * (z - delta) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt();
    let mut breaks = vec![delta - 14.0 * s, delta, delta + 14.0 * s];
    if breaks[0] < 0.0 && breaks[2] > 0.0 && delta != 0.0 {
        breaks.push(0.0);
    }
    breaks.sort_by(f64::total_cmp);
    integrate_with_breaks(&f, &breaks, abs_tol).value
}

fn component_pair(
    kernel: KernelSpec,
    a: &Component<'_>,
    b: &Component<'_>,
    policy: &EvalPolicy,
) -> Option<(f64, EvalPath)> {
    let delta: Vec<f64> = a.mean.iter().zip(b.mean).map(|(x, y)| x - y).collect();
    let var: Vec<f64> = (0..delta.len()).map(|j| a.var.map_or(0.0, |v| v[j]) + b.var.map_or(0.0, |v| v[j])).collect();
    gaussian_diff_expectation(kernel, &delta, &var, policy)
}

fn atoms(samples: &[Vec<f64>]) -> Vec<Component<'_>> {
    let w = 1.0 / samples.len() as f64;
    samples.iter().map(|s| Component { weight: w, mean: s, var: None }).collect()
}

fn mc_pair(kernel: KernelSpec, p: &FirstOrderDist, q: &FirstOrderDist, n: usize, seed: u64, stream: u64) -> f64 {
    let xs = p.sample_with(&mut rng_for(seed, stream), n);
    let ys = q.sample_with(&mut rng_for(seed, stream + 1), n);
    compensated_sum(xs.iter().zip(&ys).map(|(x, y)| kernel.of_sq_dist(sq_dist(x, y)))) / n as f64
}

/// `E k(X, Y)` with `X ~ p`, `Y ~ q` independent. With `same`, `q` is `p` and
/// the expectation is over two independent copies; for sample sets this is
/// the U-statistic over distinct pairs.
fn pair_expectation(
    kernel: KernelSpec,
    p: &FirstOrderDist,
    q: &FirstOrderDist,
    same: bool,
    policy: &EvalPolicy,
    stream: u64,
) -> Evaluation {
    if let (FirstOrderDist::Empirical(ep), FirstOrderDist::Empirical(eq)) = (p, q) {
        let (xs, ys) = (ep.samples(), eq.samples());
        let value = if same {
            let mut acc = CompensatedSum::new();
            for (i, x) in xs.iter().enumerate() {
                for y in &xs[i + 1..] {
                    acc.add(kernel.of_sq_dist(sq_dist(x, y)));
                }
            }
            let n = xs.len() as f64;
            acc.value() / (n * (n - 1.0) / 2.0)
        } else {
            let mut acc = CompensatedSum::new();
            for x in xs {
                for y in ys {
                    acc.add(kernel.of_sq_dist(sq_dist(x, y)));
                }
            }
            acc.value() / (xs.len() * ys.len()) as f64
        };
        return Evaluation::new(value, EvalPath::UStatistic);
    }

    if let Some((n, seed)) = policy.mc() {
        return match (p, q) {
            // Sample sets enter exactly; only the parametric side is simulated.
            (FirstOrderDist::Empirical(e), other) | (other, FirstOrderDist::Empirical(e)) => {
                let xs = e.samples();
                let ys = other.sample_with(&mut rng_for(seed, stream), n);
                let v = compensated_sum(
                    ys.iter().enumerate().map(|(i, y)| kernel.of_sq_dist(sq_dist(&xs[i % xs.len()], y))),
                );
                Evaluation::new(v / n as f64, EvalPath::MonteCarlo)
            }
            _ => Evaluation::new(mc_pair(kernel, p, q, n, seed, stream), EvalPath::MonteCarlo),
        };
    }

    let pc = match p {
        FirstOrderDist::Empirical(e) => atoms(e.samples()),
        other => other.components().expect("parametric"),
    };
    let qc = match q {
        FirstOrderDist::Empirical(e) => atoms(e.samples()),
        other => other.components().expect("parametric"),
    };
    let mut acc = CompensatedSum::new();
    let mut path = EvalPath::ClosedForm;
    for a in &pc {
        for b in &qc {
            match component_pair(kernel, a, b, policy) {
                Some((v, used)) => {
                    acc.add(a.weight * b.weight * v);
                    path = path.max(used);
                }
                None => {
                    let v = mc_pair(kernel, p, q, FALLBACK_MC_SAMPLES, FALLBACK_MC_SEED, stream);
                    return Evaluation::new(v, EvalPath::MonteCarlo);
                }
            }
        }
    }
    let mut eval = Evaluation::new(acc.value(), path);
    if !p.is_parametric() || !q.is_parametric() {
        eval.path = eval.path.max(EvalPath::UStatistic);
    }
    eval
}

/// Applies the clamping rule to a quantity that must be nonnegative.
fn clamp_nonnegative(mut eval: Evaluation, scale: f64, what: &str) -> Result<Evaluation> {
    if eval.value >= 0.0 {
        return Ok(eval);
    }
    if eval.path.is_stochastic() || eval.path == EvalPath::Quadrature || eval.value >= -CLAMP_TOL * scale.max(1.0) {
        eval.value = 0.0;
        eval.clamped = true;
        return Ok(eval);
    }
    Err(Error::Inconsistent(format!("{what} evaluated to {} < 0", eval.value)))
}

fn kernel_entropy(kernel: KernelSpec, policy: &EvalPolicy, p: &FirstOrderDist) -> Result<Evaluation> {
    if kernel == KernelSpec::SquaredEuclidean && p.is_parametric() && policy.mc().is_none() {
        return Ok(Evaluation::exact(p.cov_trace()));
    }
    let e = pair_expectation(kernel, p, p, true, policy, 10);
    clamp_nonnegative(Evaluation { value: 0.5 * e.value, ..e }, e.value.abs(), "entropy")
}

fn kernel_divergence(
    kernel: KernelSpec,
    policy: &EvalPolicy,
    p: &FirstOrderDist,
    q: &FirstOrderDist,
) -> Result<Evaluation> {
    if kernel == KernelSpec::SquaredEuclidean && p.is_parametric() && q.is_parametric() && policy.mc().is_none() {
        let d = sq_dist(&p.mean(), &q.mean());
        return Ok(Evaluation::exact(d));
    }
    let cross = pair_expectation(kernel, p, q, false, policy, 20);
    let self_p = pair_expectation(kernel, p, p, true, policy, 30);
    let self_q = pair_expectation(kernel, q, q, true, policy, 40);
    let value = cross.value - 0.5 * self_p.value - 0.5 * self_q.value;
    let scale = cross.value.abs().max(self_p.value.abs()).max(self_q.value.abs());
    let eval = cross.merge(&self_p, value).merge(&self_q, value);
    clamp_nonnegative(eval, scale, "divergence")
}

fn kernel_score(kernel: KernelSpec, policy: &EvalPolicy, p: &FirstOrderDist, y: &[f64]) -> Result<Evaluation> {
    if kernel == KernelSpec::SquaredEuclidean && p.is_parametric() && policy.mc().is_none() {
        return Ok(Evaluation::exact(sq_dist(&p.mean(), y)));
    }
    let atom = FirstOrderDist::PointMass(y.to_vec());
    let cross = pair_expectation(kernel, p, &atom, false, policy, 50);
    let self_p = pair_expectation(kernel, p, p, true, policy, 60);
    let value = cross.value - 0.5 * self_p.value;
    let scale = cross.value.abs().max(self_p.value.abs());
    clamp_nonnegative(cross.merge(&self_p, value), scale, "score")
}

// ---------------------------------------------------------------------------
// Log score

/// Integration range and breakpoints covering the mass of `dists`.
fn log_quad_breaks(dists: &[&FirstOrderDist]) -> Vec<f64> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut breaks = Vec::new();
    for d in dists {
        let (mean, trace) = d.mean_and_cov_trace();
        let s = trace.sqrt();
        lo = lo.min(mean[0] - 12.0 * s);
        hi = hi.max(mean[0] + 12.0 * s);
        for c in d.components().expect("parametric") {
            let s = c.var.map_or(0.0, |v| v[0].sqrt());
            lo = lo.min(c.mean[0] - 12.0 * s);
            hi = hi.max(c.mean[0] + 12.0 * s);
            breaks.push(c.mean[0]);
            for k in [3.0, 6.0, 12.0] {
                breaks.push(c.mean[0] - k * s);
                breaks.push(c.mean[0] + k * s);
            }
        }
    }
    breaks.push(lo);
    breaks.push(hi);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    breaks
}

fn require_density(p: &FirstOrderDist) -> Result<()> {
    if p.has_density() {
        Ok(())
    } else {
        Err(Error::NoDensity(format!("log score needs a density, got {}", variant_name(p))))
    }
}

fn variant_name(p: &FirstOrderDist) -> &'static str {
    match p {
        FirstOrderDist::Gaussian(_) => "a Gaussian with a zero variance",
        FirstOrderDist::Mixture(_) => "a mixture with a degenerate component",
        FirstOrderDist::PointMass(_) => "a point mass",
        FirstOrderDist::Empirical(_) => "a sample set",
    }
}

fn log_entropy(policy: &EvalPolicy, p: &FirstOrderDist) -> Result<Evaluation> {
    require_density(p)?;
    let mc = |n: usize, seed: u64| -> Result<Evaluation> {
        let xs = p.sample_with(&mut rng_for(seed, 70), n);
        let mut acc = CompensatedSum::new();
        for x in &xs {
            acc.add(-p.log_density(x)?);
        }
        Ok(Evaluation::new(acc.value() / n as f64, EvalPath::MonteCarlo))
    };
    if let Some((n, seed)) = policy.mc() {
        return mc(n, seed);
    }
    match p {
        FirstOrderDist::Gaussian(g) if !matches!(policy, EvalPolicy::Quadrature { .. }) => {
            Ok(Evaluation::exact(compensated_sum(g.var().iter().map(|v| 0.5 * (2.0 * PI * E * v).ln()))))
        }
        _ if p.dim() == 1 => {
            let f = |x: f64| {
                let lp = p.log_density(&[x]).expect("density checked");
                let d = lp.exp();
                if d == 0.0 {
                    0.0
                } else {
                    -d * lp
                }
            };
            let r = integrate_with_breaks(&f, &log_quad_breaks(&[p]), policy.quad_tol());
            Ok(Evaluation::new(r.value, EvalPath::Quadrature))
        }
        _ => mc(FALLBACK_MC_SAMPLES, FALLBACK_MC_SEED),
    }
}

/// `KL(q ‖ p)`, the log-score divergence `D(p, q)`.
fn log_divergence(policy: &EvalPolicy, p: &FirstOrderDist, q: &FirstOrderDist) -> Result<Evaluation> {
    require_density(p)?;
    require_density(q)?;
    let mc = |n: usize, seed: u64| -> Result<Evaluation> {
        let ys = q.sample_with(&mut rng_for(seed, 80), n);
        let mut acc = CompensatedSum::new();
        for y in &ys {
            acc.add(q.log_density(y)? - p.log_density(y)?);
        }
        Ok(Evaluation::new(acc.value() / n as f64, EvalPath::MonteCarlo))
    };
    let eval = if let Some((n, seed)) = policy.mc() {
        mc(n, seed)?
    } else {
        match (p, q) {
            (FirstOrderDist::Gaussian(gp), FirstOrderDist::Gaussian(gq))
                if !matches!(policy, EvalPolicy::Quadrature { .. }) =>
            {
                let kl = compensated_sum((0..gp.dim()).map(|j| {
                    let (mu, s2) = (gp.mean()[j], gp.var()[j]);
                    let (nu, t2) = (gq.mean()[j], gq.var()[j]);
                    0.5 * (s2 / t2).ln() + (t2 + (nu - mu) * (nu - mu)) / (2.0 * s2) - 0.5
                }));
                Evaluation::exact(kl)
            }
            _ if p.dim() == 1 => {
                let f = |y: f64| {
                    let lq = q.log_density(&[y]).expect("density checked");
                    let dq = lq.exp();
                    if dq == 0.0 {
                        0.0
                    } else {
                        dq * (lq - p.log_density(&[y]).expect("density checked"))
                    }
                };
                let r = integrate_with_breaks(&f, &log_quad_breaks(&[p, q]), policy.quad_tol());
                Evaluation::new(r.value, EvalPath::Quadrature)
            }
            _ => mc(FALLBACK_MC_SAMPLES, FALLBACK_MC_SEED)?,
        }
    };
    clamp_nonnegative(eval, 1.0, "KL divergence")
}

// ---------------------------------------------------------------------------
// Public operations

/// `S(p, y)`.
pub fn score(kind: &ScoreKind, policy: &EvalPolicy, p: &FirstOrderDist, y: &[f64]) -> Result<Evaluation> {
    check_dims(p.dim(), y.len())?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("observation must be finite".into()));
    }
    match kind {
        ScoreKind::Marginal(inner) => sum_marginals(p.dim(), |j| score(inner, policy, &p.marginal(j)?, &y[j..=j])),
        ScoreKind::Log => {
            require_density(p)?;
            Ok(Evaluation::exact(-p.log_density(y)?))
        }
        _ => kernel_score(kind.kernel().expect("kernel score"), policy, p, y),
    }
}

/// `H(p) = S(p, p)`.
pub fn entropy(kind: &ScoreKind, policy: &EvalPolicy, p: &FirstOrderDist) -> Result<Evaluation> {
    match kind {
        ScoreKind::Marginal(inner) => sum_marginals(p.dim(), |j| entropy(inner, policy, &p.marginal(j)?)),
        ScoreKind::Log => log_entropy(policy, p),
        _ => kernel_entropy(kind.kernel().expect("kernel score"), policy, p),
    }
}

/// `D(p, q) = S(p, q) − H(q)`; the squared MMD for kernel scores and
/// `KL(q ‖ p)` for the log score.
pub fn divergence(kind: &ScoreKind, policy: &EvalPolicy, p: &FirstOrderDist, q: &FirstOrderDist) -> Result<Evaluation> {
    check_dims(p.dim(), q.dim())?;
    if p == q {
        if matches!(kind, ScoreKind::Log) {
            require_density(p)?;
        }
        return Ok(Evaluation::exact(0.0));
    }
    match kind {
        ScoreKind::Marginal(inner) => {
            sum_marginals(p.dim(), |j| divergence(inner, policy, &p.marginal(j)?, &q.marginal(j)?))
        }
        ScoreKind::Log => log_divergence(policy, p, q),
        _ => kernel_divergence(kind.kernel().expect("kernel score"), policy, p, q),
    }
}

/// `S(p, q) = ∫ S(p, y) dq(y) = D(p, q) + H(q)`.
pub fn expected_score(
    kind: &ScoreKind,
    policy: &EvalPolicy,
    p: &FirstOrderDist,
    q: &FirstOrderDist,
) -> Result<Evaluation> {
    let d = divergence(kind, policy, p, q)?;
    let h = entropy(kind, policy, q)?;
    Ok(d.merge(&h, d.value + h.value))
}

fn sum_marginals<F: FnMut(usize) -> Result<Evaluation>>(d: usize, mut f: F) -> Result<Evaluation> {
    let mut acc = CompensatedSum::new();
    let mut out = Evaluation::exact(0.0);
    for j in 0..d {
        let e = f(j)?;
        acc.add(e.value);
        out = out.merge(&e, 0.0);
    }
    out.value = acc.value();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::Gaussian;

    const CF: EvalPolicy = EvalPolicy::ClosedForm;

    fn n(m: f64, v: f64) -> FirstOrderDist {
        FirstOrderDist::gaussian_1d(m, v).unwrap()
    }

    fn atom(x: f64) -> FirstOrderDist {
        FirstOrderDist::point_mass_1d(x).unwrap()
    }

    #[test]
    fn squared_error_at_mean() {
        assert_eq!(score(&ScoreKind::SquaredError, &CF, &n(2.0, 7.0), &[2.0]).unwrap().value, 0.0);
    }

    #[test]
    fn energy_of_point_mass() {
        assert_eq!(score(&ScoreKind::crps(), &CF, &atom(0.0), &[1.0]).unwrap().value, 1.0);
    }

    #[test]
    fn log_score_standard_normal() {
        let v = score(&ScoreKind::Log, &CF, &n(0.0, 1.0), &[0.0]).unwrap().value;
        assert!((v - 0.5 * (2.0 * PI).ln()).abs() < 1e-15);
        assert!((v - 0.9189).abs() < 1e-4);
    }

    #[test]
    fn log_score_needs_density() {
        assert!(matches!(score(&ScoreKind::Log, &CF, &atom(0.0), &[0.0]), Err(Error::NoDensity(_))));
        assert!(matches!(entropy(&ScoreKind::Log, &CF, &atom(0.0)), Err(Error::NoDensity(_))));
        let e = FirstOrderDist::empirical_1d(&[0.0, 1.0]).unwrap();
        assert!(matches!(divergence(&ScoreKind::Log, &CF, &e, &n(0.0, 1.0)), Err(Error::NoDensity(_))));
    }

    #[test]
    fn gaussian_kernel_entropy_closed_form() {
        let h = entropy(&ScoreKind::GaussianKernel(2.0), &CF, &n(5.0, 3.0)).unwrap();
        assert!((h.value - 0.25).abs() < 1e-15);
        assert_eq!(h.path, EvalPath::ClosedForm);
    }

    #[test]
    fn entropy_of_atom_is_zero() {
        for kind in [ScoreKind::crps(), ScoreKind::SquaredError, ScoreKind::GaussianKernel(1.0)] {
            assert_eq!(entropy(&kind, &CF, &n(1.0, 0.0)).unwrap().value, 0.0);
        }
    }

    #[test]
    fn empirical_energy_entropy() {
        let e = FirstOrderDist::empirical_1d(&[0.0, 2.0]).unwrap();
        let h = entropy(&ScoreKind::crps(), &CF, &e).unwrap();
        assert_eq!(h.value, 1.0);
        assert_eq!(h.path, EvalPath::UStatistic);
    }

    #[test]
    fn divergence_examples() {
        for kind in [ScoreKind::Log, ScoreKind::SquaredError, ScoreKind::crps(), ScoreKind::GaussianKernel(1.0)] {
            assert_eq!(divergence(&kind, &CF, &n(1.0, 2.0), &n(1.0, 2.0)).unwrap().value, 0.0);
        }
        assert_eq!(divergence(&ScoreKind::SquaredError, &CF, &n(1.0, 4.0), &n(3.0, 9.0)).unwrap().value, 4.0);
        assert_eq!(divergence(&ScoreKind::crps(), &CF, &atom(0.0), &atom(1.0)).unwrap().value, 1.0);
        let d = divergence(&ScoreKind::GaussianKernel(1.0), &CF, &atom(0.0), &atom(1.0)).unwrap().value;
        // direct kernel evaluation on atoms: k(0,1) − 0 − 0 with the offset kernel
        let direct = KernelSpec::Gaussian { gamma: 1.0 }.eval(&[0.0], &[1.0]).unwrap();
        assert!((d - direct).abs() < 1e-15);
        assert!((d - 0.632_120_558_828_557_7).abs() < 1e-12);
    }

    #[test]
    fn gaussian_kernel_divergence_formula() {
        let (mu, s2, nu, t2, g) = (0.3, 1.7, -1.1, 0.4, 1.5);
        let g2: f64 = g * g;
        let expect = 0.5 * g / (g2 + 4.0 * s2).sqrt() + 0.5 * g / (g2 + 4.0 * t2).sqrt()
            - g / (g2 + 2.0 * (s2 + t2)).sqrt() * (-(mu - nu) * (mu - nu) / (g2 + 2.0 * (s2 + t2))).exp();
        let d = divergence(&ScoreKind::GaussianKernel(g), &CF, &n(mu, s2), &n(nu, t2)).unwrap().value;
        assert!((d - expect).abs() < 1e-14);
    }

    #[test]
    fn crps_divergence_formula() {
        // erf-form E|X − Y| minus the two entropies σ/√π and τ/√π
        let (mu, s2, nu, t2) = (0.3, 1.7, -1.1, 0.4);
        let expect = crate::special::crps_gaussian_mean_abs(mu - nu, s2 + t2) - (s2.sqrt() + t2.sqrt()) / PI.sqrt();
        let d = divergence(&ScoreKind::crps(), &CF, &n(mu, s2), &n(nu, t2)).unwrap().value;
        assert!((d - expect).abs() < 1e-14);
        let h = entropy(&ScoreKind::crps(), &CF, &n(0.0, 4.0)).unwrap().value;
        assert!((h - 2.0 / PI.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn expected_score_examples() {
        let se = ScoreKind::SquaredError;
        assert_eq!(expected_score(&se, &CF, &n(0.0, 1.0), &n(1.0, 1.0)).unwrap().value, 2.0);
        let p = n(0.4, 2.0);
        for kind in [ScoreKind::Log, se.clone(), ScoreKind::crps(), ScoreKind::GaussianKernel(0.7)] {
            let s = expected_score(&kind, &CF, &p, &p).unwrap().value;
            assert_eq!(s, entropy(&kind, &CF, &p).unwrap().value);
        }
        let s = expected_score(&ScoreKind::crps(), &CF, &n(0.0, 1e-16), &n(1.0, 1e-16)).unwrap().value;
        assert!((s - 1.0).abs() < 1e-7);
    }

    #[test]
    fn log_divergence_direction_matches_quadrature() {
        let p = n(0.0, 1.0);
        let q = n(1.0, 4.0);
        let closed = divergence(&ScoreKind::Log, &CF, &p, &q).unwrap();
        let quad = divergence(&ScoreKind::Log, &EvalPolicy::quadrature(1e-12).unwrap(), &p, &q).unwrap();
        assert_eq!(quad.path, EvalPath::Quadrature);
        assert!((closed.value - quad.value).abs() < 1e-9);
        // KL(q‖p) for q = N(1, 4), p = N(0, 1): ½ln(1/4) + (4 + 1)/2 − ½
        assert!((closed.value - (0.5 * 0.25f64.ln() + 2.5 - 0.5)).abs() < 1e-14);
    }

    #[test]
    fn log_entropy_zero_and_negative() {
        let s2 = 1.0 / (2.0 * PI * E);
        assert!(entropy(&ScoreKind::Log, &CF, &n(3.0, s2)).unwrap().value.abs() < 1e-15);
        assert!(entropy(&ScoreKind::Log, &CF, &n(3.0, 0.5 * s2)).unwrap().value < 0.0);
    }

    #[test]
    fn mixture_log_entropy_by_quadrature() {
        let mix = FirstOrderDist::mixture(
            vec![0.3, 0.7],
            vec![Gaussian::univariate(-1.0, 0.5).unwrap(), Gaussian::univariate(2.0, 1.5).unwrap()],
        )
        .unwrap();
        let h = entropy(&ScoreKind::Log, &CF, &mix).unwrap();
        assert_eq!(h.path, EvalPath::Quadrature);
        let mc = entropy(&ScoreKind::Log, &EvalPolicy::monte_carlo(400_000, 3).unwrap(), &mix).unwrap();
        assert!((h.value - mc.value).abs() < 0.01, "{} vs {}", h.value, mc.value);
    }

    #[test]
    fn quadrature_policy_agrees_with_closed_form_for_kernels() {
        let quad = EvalPolicy::quadrature(1e-12).unwrap();
        let (p, q) = (n(0.5, 0.8), n(-1.0, 2.5));
        for kind in [ScoreKind::crps(), ScoreKind::Energy(0.6), ScoreKind::GaussianKernel(0.9), ScoreKind::SquaredError]
        {
            let a = divergence(&kind, &CF, &p, &q).unwrap().value;
            let b = divergence(&kind, &quad, &p, &q).unwrap().value;
            assert!((a - b).abs() < 1e-9, "{kind}: {a} vs {b}");
        }
    }

    #[test]
    fn multivariate_energy_falls_back_to_monte_carlo() {
        let p = FirstOrderDist::gaussian(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let h = entropy(&ScoreKind::crps(), &CF, &p).unwrap();
        assert_eq!(h.path, EvalPath::MonteCarlo);
        // E‖X − X'‖ for X − X' ~ N(0, 2I₂) is 2·√(π)/2 = √π; half of it
        assert!((h.value - 0.5 * PI.sqrt()).abs() < 0.02);
        // the Gaussian kernel factorizes over coordinates and stays exact
        let g = entropy(&ScoreKind::GaussianKernel(1.0), &CF, &p).unwrap();
        assert_eq!(g.path, EvalPath::ClosedForm);
        assert!((g.value - 0.5 * (1.0 - 1.0 / 5.0)).abs() < 1e-15);
    }

    #[test]
    fn marginal_sums_coordinates() {
        let p = FirstOrderDist::gaussian(vec![0.0, 1.0], vec![1.0, 4.0]).unwrap();
        let kind = ScoreKind::marginal(ScoreKind::crps()).unwrap();
        let s = score(&kind, &CF, &p, &[0.5, -1.0]).unwrap().value;
        let a = score(&ScoreKind::crps(), &CF, &n(0.0, 1.0), &[0.5]).unwrap().value;
        let b = score(&ScoreKind::crps(), &CF, &n(1.0, 4.0), &[-1.0]).unwrap().value;
        assert!((s - (a + b)).abs() < 1e-15);
        assert!(ScoreKind::marginal(kind).is_err());
    }

    #[test]
    fn parse_surfaces() {
        let parse = |s: &str| s.parse::<ScoreSpec>().unwrap();
        assert_eq!(parse("log"), ScoreSpec::Fixed(ScoreKind::Log));
        assert_eq!(parse("se"), ScoreSpec::Fixed(ScoreKind::SquaredError));
        assert_eq!(parse("crps"), ScoreSpec::Fixed(ScoreKind::Energy(1.0)));
        assert_eq!(parse("energy:0.5"), ScoreSpec::Fixed(ScoreKind::Energy(0.5)));
        assert_eq!(parse("energy:2"), ScoreSpec::Fixed(ScoreKind::SquaredError));
        assert_eq!(parse("gauss:2"), ScoreSpec::Fixed(ScoreKind::GaussianKernel(2.0)));
        assert_eq!(parse("gauss:median"), ScoreSpec::GaussianMedian);
        assert_eq!(parse("marginal:crps"), ScoreSpec::Marginal(Box::new(ScoreSpec::Fixed(ScoreKind::crps()))));
        assert!("energy:3".parse::<ScoreSpec>().is_err());
        assert!("gauss:-1".parse::<ScoreSpec>().is_err());
        assert!("marginal:marginal:se".parse::<ScoreSpec>().is_err());
        assert!("foo".parse::<ScoreSpec>().is_err());

        let pts = vec![vec![0.0], vec![1.0], vec![2.0]];
        assert_eq!(parse("gauss:median").resolve(&pts).unwrap(), ScoreKind::GaussianKernel(1.0));

        assert_eq!("closed".parse::<EvalPolicy>().unwrap(), EvalPolicy::ClosedForm);
        assert_eq!("mc:1000:7".parse::<EvalPolicy>().unwrap(), EvalPolicy::MonteCarlo { n_samples: 1000, seed: 7 });
        assert_eq!("quad:1e-9".parse::<EvalPolicy>().unwrap(), EvalPolicy::Quadrature { abs_tol: 1e-9 });
        assert!("mc:1:7".parse::<EvalPolicy>().is_err());
        for k in [ScoreKind::Log, ScoreKind::crps(), ScoreKind::Energy(0.5), ScoreKind::GaussianKernel(0.25)] {
            assert_eq!(k.to_string().parse::<ScoreSpec>().unwrap(), ScoreSpec::Fixed(k));
        }
    }
}
