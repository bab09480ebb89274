//! Synthetic regression experiments: out-of-distribution ranking by epistemic
//! uncertainty, and active learning driven by it.
//!
//! Inputs are one-dimensional. Ensembles come from bootstrap-resampled
//! polynomial least-squares fits with Gaussian predictive distributions.

use crate::decomposition::{decompose, EstimatorKind};
use crate::distributions::{rng_for, FirstOrderDist, SecondOrderEnsemble};
use crate::error::{Error, Result};
use crate::numeric::compensated_sum;
use crate::scores::{score, EvalPolicy, ScoreKind, ScoreSpec};
use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;

const STREAM_TRAIN: u64 = 100;
const STREAM_POOL: u64 = 101;
const STREAM_TEST: u64 = 102;
const STREAM_INITIAL: u64 = 103;
const STREAM_RANDOM_ACQ: u64 = 104;
const STREAM_BOOTSTRAP: u64 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FunctionFamily {
    /// `sin(frequency · x)`
    Sine { frequency: f64 },
    /// `slope · x + intercept`
    Linear { slope: f64, intercept: f64 },
}

impl FunctionFamily {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Self::Sine { frequency } => (frequency * x).sin(),
            Self::Linear { slope, intercept } => slope * x + intercept,
        }
    }
}

/// Noise standard deviation `scale · (1 + growth · |x|)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseProfile {
    pub scale: f64,
    pub growth: f64,
}

impl NoiseProfile {
    pub const NONE: Self = Self { scale: 0.0, growth: 0.0 };

    pub fn sd(&self, x: f64) -> f64 {
        self.scale * (1.0 + self.growth * x.abs())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub function: FunctionFamily,
    pub noise: NoiseProfile,
    /// Closed interval the training inputs are drawn from.
    pub train_region: (f64, f64),
    /// Closed interval covered by the evaluation grid and the acquisition pool.
    pub domain: (f64, f64),
    pub grid_points: usize,
    pub n_train: usize,
    pub seed: u64,
}

/// A point of the evaluation grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub x: f64,
    pub in_region: bool,
}

impl SyntheticTask {
    /// `y = sin(3x) + 0.1(1 + |x|)ε` trained on `[−1, 1]`, evaluated on 601
    /// points over `[−3, 3]`.
    pub fn default_task(seed: u64) -> Self {
        Self {
            function: FunctionFamily::Sine { frequency: 3.0 },
            noise: NoiseProfile { scale: 0.1, growth: 1.0 },
            train_region: (-1.0, 1.0),
            domain: (-3.0, 3.0),
            grid_points: 601,
            n_train: 200,
            seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    fn validate(&self) -> Result<()> {
        let (a, b) = self.train_region;
        let (lo, hi) = self.domain;
        if !(a < b && lo <= a && b <= hi) {
            return Err(Error::InvalidArgument("train region must be a proper sub-interval of the domain".into()));
        }
        if !(lo < a || b < hi) {
            return Err(Error::InvalidArgument("domain must extend beyond the train region".into()));
        }
        if self.grid_points < 2 {
            return Err(Error::InvalidArgument("evaluation grid needs at least two points".into()));
        }
        if self.noise.scale < 0.0 || self.noise.growth < 0.0 {
            return Err(Error::InvalidArgument("noise profile must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn in_region(&self, x: f64) -> bool {
        self.train_region.0 <= x && x <= self.train_region.1
    }

    pub fn eval_grid(&self) -> Vec<GridPoint> {
        let (lo, hi) = self.domain;
        let step = (hi - lo) / (self.grid_points - 1) as f64;
        (0..self.grid_points)
            .map(|i| {
                let x = if i + 1 == self.grid_points { hi } else { lo + step * i as f64 };
                GridPoint { x, in_region: self.in_region(x) }
            })
            .collect()
    }

    fn observe<R: Rng>(&self, x: f64, rng: &mut R) -> f64 {
        let eps: f64 = rng.sample(StandardNormal);
        self.function.eval(x) + self.noise.sd(x) * eps
    }

    fn draw(&self, n: usize, (a, b): (f64, f64), stream: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = rng_for(self.seed, stream);
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(a..=b)).collect();
        let ys = xs.iter().map(|&x| self.observe(x, &mut rng)).collect();
        (xs, ys)
    }

    /// Noisy training data from the train region.
    pub fn training_data(&self) -> (Vec<f64>, Vec<f64>) {
        self.draw(self.n_train, self.train_region, STREAM_TRAIN)
    }

    /// Noisy targets at the grid inputs.
    pub fn grid_targets(&self) -> Vec<f64> {
        let mut rng = rng_for(self.seed, STREAM_TEST);
        self.eval_grid().iter().map(|p| self.observe(p.x, &mut rng)).collect()
    }
}

/// Fits an ensemble of predictive models to 1-D data.
pub trait EnsembleBuilder: Sync {
    type Model: EnsembleModel;

    fn fit(&self, xs: &[f64], ys: &[f64], seed: u64) -> Result<Self::Model>;
}

pub trait EnsembleModel: Sync {
    fn predict(&self, x: f64) -> Result<SecondOrderEnsemble>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolynomialEnsemble {
    pub degree: usize,
    pub members: usize,
}

impl Default for PolynomialEnsemble {
    fn default() -> Self {
        Self { degree: 3, members: 10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialFit {
    /// Coefficients in increasing powers of `x`.
    pub coefficients: Vec<f64>,
    /// Residual variance `RSS / (n − p)`; zero for an exact fit.
    pub noise_var: f64,
}

impl PolynomialFit {
    pub fn mean(&self, x: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    pub fn predictive(&self, x: f64) -> Result<FirstOrderDist> {
        FirstOrderDist::gaussian_1d(self.mean(x), self.noise_var)
    }
}

/// Least-squares polynomial fit of the given degree.
pub fn fit_polynomial(xs: &[f64], ys: &[f64], degree: usize) -> Result<PolynomialFit> {
    let n = xs.len();
    let p = degree + 1;
    if ys.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: ys.len() });
    }
    if n <= p {
        return Err(Error::InvalidArgument(format!(
            "{n} points cannot fit a degree-{degree} polynomial with a noise estimate"
        )));
    }
    let design = DMatrix::from_fn(n, p, |i, j| xs[i].powi(j as i32));
    let target = DVector::from_column_slice(ys);
    let coefficients = design
        .clone()
        .svd(true, true)
        .solve(&target, 1e-12)
        .map_err(|e| Error::InvalidArgument(format!("least squares failed: {e}")))?;
    let residual = &design * &coefficients - &target;
    let rss = residual.norm_squared();
    let scale = 1.0 + ys.iter().map(|y| y * y).fold(0.0, f64::max);
    // Round-off residue of an exact fit collapses to a point prediction.
    let noise_var = if rss <= 1e-24 * n as f64 * scale { 0.0 } else { rss / (n - p) as f64 };
    Ok(PolynomialFit { coefficients: coefficients.iter().copied().collect(), noise_var })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialEnsembleModel {
    pub fits: Vec<PolynomialFit>,
}

impl EnsembleModel for PolynomialEnsembleModel {
    fn predict(&self, x: f64) -> Result<SecondOrderEnsemble> {
        SecondOrderEnsemble::uniform(self.fits.iter().map(|f| f.predictive(x)).collect::<Result<_>>()?)
    }
}

impl PolynomialEnsembleModel {
    /// Model average at `x` as an equally weighted Gaussian mixture.
    pub fn bma(&self, x: f64) -> Result<FirstOrderDist> {
        Ok(self.predict(x)?.bma())
    }
}

impl EnsembleBuilder for PolynomialEnsemble {
    type Model = PolynomialEnsembleModel;

    fn fit(&self, xs: &[f64], ys: &[f64], seed: u64) -> Result<Self::Model> {
        if self.members == 0 {
            return Err(Error::InvalidEnsemble("no members".into()));
        }
        let n = xs.len();
        let fits = (0..self.members)
            .map(|m| {
                let mut rng = rng_for(seed, STREAM_BOOTSTRAP + m as u64);
                let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                let bx: Vec<f64> = idx.iter().map(|&i| xs[i]).collect();
                let by: Vec<f64> = idx.iter().map(|&i| ys[i]).collect();
                fit_polynomial(&bx, &by, self.degree)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PolynomialEnsembleModel { fits })
    }
}

/// Area under the ROC curve of `scores` separating `positive` from the rest,
/// with ties counted as one half.
pub fn auroc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::DimensionMismatch { expected: scores.len(), found: positive.len() });
    }
    let pos: Vec<f64> = scores.iter().zip(positive).filter(|(_, p)| **p).map(|(s, _)| *s).collect();
    let mut neg: Vec<f64> = scores.iter().zip(positive).filter(|(_, p)| !**p).map(|(s, _)| *s).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::InvalidArgument("AUROC needs both classes".into()));
    }
    neg.sort_by(f64::total_cmp);
    let wins = compensated_sum(pos.iter().map(|s| {
        let below = neg.partition_point(|n| n < s);
        let upto = neg.partition_point(|n| n <= s);
        below as f64 + 0.5 * (upto - below) as f64
    }));
    Ok(wins / (pos.len() as f64 * neg.len() as f64))
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch { expected: xs.len(), found: ys.len() });
    }
    if xs.len() < 2 {
        return Err(Error::InvalidArgument("rank correlation needs two observations".into()));
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = xs.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mean) * (b - mean);
        sxx += (a - mean) * (a - mean);
        syy += (b - mean) * (b - mean);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::InvalidArgument("rank correlation of a constant sequence".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Mean CRPS of `predictions` at `targets`.
pub fn crps_eval(predictions: &[FirstOrderDist], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::DimensionMismatch { expected: predictions.len(), found: targets.len() });
    }
    if predictions.is_empty() {
        return Err(Error::InvalidArgument("no predictions".into()));
    }
    let kind = ScoreKind::crps();
    let values = predictions
        .iter()
        .zip(targets)
        .map(|(p, y)| score(&kind, &EvalPolicy::ClosedForm, p, &[*y]).map(|e| e.value))
        .collect::<Result<Vec<_>>>()?;
    Ok(compensated_sum(values) / predictions.len() as f64)
}

/// Epistemic uncertainty at one grid point, or why it is missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodRow {
    pub x: f64,
    pub in_region: bool,
    pub score: ScoreKind,
    pub eu: Option<f64>,
    pub flag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodSummary {
    pub score: ScoreKind,
    pub mean_eu_in: f64,
    pub mean_eu_out: f64,
    /// AUROC of EU for out-of-region vs in-region; `None` if some points were flagged.
    pub auroc: Option<f64>,
    pub flagged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodReport {
    pub rows: Vec<OodRow>,
    pub summaries: Vec<OodSummary>,
}

/// Fits `builder` on the task's training data and ranks grid points by EU.
///
/// `gauss:median` takes its bandwidth from the training targets.
pub fn ood_rank<B: EnsembleBuilder>(
    task: &SyntheticTask,
    builder: &B,
    scores: &[ScoreSpec],
    estimator: EstimatorKind,
) -> Result<OodReport> {
    task.validate()?;
    let (xs, ys) = task.training_data();
    let model = builder.fit(&xs, &ys, task.seed)?;
    let grid = task.eval_grid();
    let ensembles = grid.par_iter().map(|p| model.predict(p.x)).collect::<Result<Vec<_>>>()?;
    let reference: Vec<Vec<f64>> = ys.iter().map(|y| vec![*y]).collect();

    let mut rows = Vec::with_capacity(grid.len() * scores.len());
    let mut summaries = Vec::with_capacity(scores.len());
    for spec in scores {
        let kind = spec.resolve(&reference)?;
        let evals: Vec<Result<f64>> = ensembles
            .par_iter()
            .map(|q| decompose(q, &kind, estimator, &EvalPolicy::ClosedForm).map(|d| d.eu))
            .collect();
        let (mut inside, mut outside, mut flagged) = (Vec::new(), Vec::new(), 0);
        for (p, eu) in grid.iter().zip(evals) {
            let (eu, flag) = match eu {
                Ok(v) => {
                    if p.in_region {
                        inside.push(v)
                    } else {
                        outside.push(v)
                    }
                    (Some(v), None)
                }
                Err(e) => {
                    flagged += 1;
                    (None, Some(e.to_string()))
                }
            };
            rows.push(OodRow { x: p.x, in_region: p.in_region, score: kind.clone(), eu, flag });
        }
        let mean =
            |v: &[f64]| if v.is_empty() { f64::NAN } else { compensated_sum(v.iter().copied()) / v.len() as f64 };
        let auroc = if flagged == 0 {
            let s: Vec<f64> = inside.iter().chain(&outside).copied().collect();
            let labels: Vec<bool> =
                std::iter::repeat_n(false, inside.len()).chain(std::iter::repeat_n(true, outside.len())).collect();
            Some(auroc(&s, &labels)?)
        } else {
            None
        };
        summaries.push(OodSummary {
            score: kind,
            mean_eu_in: mean(&inside),
            mean_eu_out: mean(&outside),
            auroc,
            flagged,
        });
    }
    Ok(OodReport { rows, summaries })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Acquisition {
    /// Highest epistemic uncertainty under `score` first.
    Eu {
        score: ScoreKind,
        estimator: EstimatorKind,
    },
    Random,
}

impl fmt::Display for Acquisition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Eu { score, estimator } => write!(f, "eu:{score}:{estimator}"),
            Self::Random => f.write_str("random"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActiveLearningConfig {
    pub rounds: usize,
    pub batch_size: usize,
    /// Unlabeled candidates drawn uniformly over the task domain.
    pub pool_size: usize,
    /// Initial labeled points drawn from the train region.
    pub initial_size: usize,
    pub builder: PolynomialEnsemble,
}

impl Default for ActiveLearningConfig {
    fn default() -> Self {
        Self { rounds: 40, batch_size: 20, pool_size: 1000, initial_size: 20, builder: PolynomialEnsemble::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionRun {
    pub rounds: usize,
    pub batch_size: usize,
    /// Pool candidates `(x, y)`.
    pub pool: Vec<(f64, f64)>,
    pub acquisition: Acquisition,
    /// CRPS on the evaluation grid before any acquisition.
    pub initial_crps: f64,
    /// CRPS after each round.
    pub crps_trace: Vec<f64>,
    /// Pool indices acquired, in order.
    pub selected: Vec<usize>,
}

impl AcquisitionRun {
    pub fn final_crps(&self) -> f64 {
        self.crps_trace.last().copied().unwrap_or(self.initial_crps)
    }
}

fn grid_crps(model: &PolynomialEnsembleModel, grid: &[GridPoint], targets: &[f64]) -> Result<f64> {
    let preds = grid.par_iter().map(|p| model.bma(p.x)).collect::<Result<Vec<_>>>()?;
    crps_eval(&preds, targets)
}

/// Pool-based active learning on `task`, refitting the ensemble every round.
pub fn active_learning(
    task: &SyntheticTask,
    acquisition: &Acquisition,
    config: &ActiveLearningConfig,
    seed: u64,
) -> Result<AcquisitionRun> {
    task.validate()?;
    if config.rounds * config.batch_size > config.pool_size {
        return Err(Error::InvalidArgument(format!(
            "{} rounds of {} exceed a pool of {}",
            config.rounds, config.batch_size, config.pool_size
        )));
    }
    let run_task = task.with_seed(seed);
    let (px, py) = run_task.draw(config.pool_size, task.domain, STREAM_POOL);
    let (mut lx, mut ly) = run_task.draw(config.initial_size, task.train_region, STREAM_INITIAL);
    let grid = run_task.eval_grid();
    let targets = run_task.grid_targets();

    let mut labeled = vec![false; config.pool_size];
    let mut selected = Vec::with_capacity(config.rounds * config.batch_size);
    let mut random = rng_for(seed, STREAM_RANDOM_ACQ);
    let fit_seed = |round: usize| seed.wrapping_add((round as u64) << 32);

    let mut model = config.builder.fit(&lx, &ly, fit_seed(0))?;
    let initial_crps = grid_crps(&model, &grid, &targets)?;
    let mut crps_trace = Vec::with_capacity(config.rounds);
    for round in 0..config.rounds {
        let open: Vec<usize> = (0..config.pool_size).filter(|&i| !labeled[i]).collect();
        let batch: Vec<usize> = match acquisition {
            Acquisition::Random => {
                sample_indices(&mut random, open.len(), config.batch_size).into_iter().map(|k| open[k]).collect()
            }
            Acquisition::Eu { score, estimator } => {
                let eu = open
                    .par_iter()
                    .map(|&i| {
                        let q = model.predict(px[i])?;
                        decompose(&q, score, *estimator, &EvalPolicy::ClosedForm).map(|d| d.eu)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let mut order: Vec<usize> = (0..open.len()).collect();
                order.sort_by(|&a, &b| eu[b].total_cmp(&eu[a]).then(a.cmp(&b)));
                order.into_iter().take(config.batch_size).map(|k| open[k]).collect()
            }
        };
        for &i in &batch {
            labeled[i] = true;
            lx.push(px[i]);
            ly.push(py[i]);
        }
        selected.extend(batch);
        model = config.builder.fit(&lx, &ly, fit_seed(round + 1))?;
        crps_trace.push(grid_crps(&model, &grid, &targets)?);
    }
    Ok(AcquisitionRun {
        rounds: config.rounds,
        batch_size: config.batch_size,
        pool: px.into_iter().zip(py).collect(),
        acquisition: acquisition.clone(),
        initial_crps,
        crps_trace,
        selected,
    })
}

/// Active learning with pairwise Gaussian-kernel EU for each bandwidth.
pub fn bandwidth_sweep(
    task: &SyntheticTask,
    gammas: &[f64],
    config: &ActiveLearningConfig,
    seed: u64,
) -> Result<Vec<(f64, AcquisitionRun)>> {
    gammas
        .iter()
        .map(|&g| {
            let acq = Acquisition::Eu { score: ScoreKind::gaussian_kernel(g)?, estimator: EstimatorKind::Pairwise };
            Ok((g, active_learning(task, &acq, config, seed)?))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub gammas: Vec<f64>,
    /// Final CRPS per bandwidth, averaged over seeds.
    pub mean_final_crps: Vec<f64>,
    /// Rank correlation between bandwidth and mean final CRPS.
    pub spearman: f64,
}

/// `(seed, γ, run)` for every run of a sweep.
pub type SweepRuns = Vec<(u64, f64, AcquisitionRun)>;

/// Runs [`bandwidth_sweep`] for every seed and summarizes the final CRPS.
pub fn sweep_summary(
    task: &SyntheticTask,
    gammas: &[f64],
    config: &ActiveLearningConfig,
    seeds: &[u64],
) -> Result<(SweepSummary, SweepRuns)> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("no seeds".into()));
    }
    let mut runs = Vec::with_capacity(seeds.len() * gammas.len());
    for &s in seeds {
        runs.extend(bandwidth_sweep(task, gammas, config, s)?.into_iter().map(|(g, r)| (s, g, r)));
    }
    let mean_final_crps: Vec<f64> = (0..gammas.len())
        .map(|k| runs.iter().skip(k).step_by(gammas.len()).map(|r| r.2.final_crps()).sum::<f64>() / seeds.len() as f64)
        .collect();
    let spearman = spearman(gammas, &mean_final_crps)?;
    Ok((SweepSummary { gammas: gammas.to_vec(), mean_final_crps, spearman }, runs))
}
