//! Total / epistemic / aleatoric decomposition of a second-order ensemble.
//!
//! With members `P_m` weighted by `w_m` and model average `P̄ = Σ w_m P_m`:
//!
//! * BMA: `AU = Σ w_m H(P_m)`, `EU = Σ w_m D(P̄, P_m)`, `TU = Σ w_m S(P̄, P_m)`.
//! * Pairwise: `AU` as above, `EU = Σ_{m,m'} w_m w_m' D(P_m', P_m)`,
//!   `TU = Σ_{m,m'} w_m w_m' S(P_m', P_m)`, diagonal included.
//!
//! Both satisfy `TU = EU + AU`; the gap `Δ = TU_P − TU_B` is nonnegative for
//! scores convex in their first argument.

use crate::distributions::SecondOrderEnsemble;
use crate::error::{Error, Result};
use crate::numeric::CompensatedSum;
use crate::scores::{divergence, entropy, EvalPath, EvalPolicy, Evaluation, ScoreKind};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EstimatorKind {
    Bma,
    Pairwise,
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Bma => "bma",
            Self::Pairwise => "pairwise",
        })
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bma" | "b" => Ok(Self::Bma),
            "pairwise" | "p" => Ok(Self::Pairwise),
            other => Err(Error::Parse(format!("unknown estimator `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub policy: EvalPolicy,
    /// Least exact route used by any term.
    pub path: EvalPath,
    /// Some divergence was clamped to zero.
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyDecomposition {
    pub tu: f64,
    pub eu: f64,
    pub au: f64,
    pub estimator: EstimatorKind,
    pub score: ScoreKind,
    pub diagnostics: Diagnostics,
}

struct Tally {
    path: EvalPath,
    clamped: bool,
}

impl Tally {
    fn new() -> Self {
        Self { path: EvalPath::ClosedForm, clamped: false }
    }

    fn note(&mut self, e: &Evaluation) -> f64 {
        self.path = self.path.max(e.path);
        self.clamped |= e.clamped;
        e.value
    }
}

/// Decomposes the uncertainty of `ensemble` under `score`.
pub fn decompose(
    ensemble: &SecondOrderEnsemble,
    score: &ScoreKind,
    estimator: EstimatorKind,
    policy: &EvalPolicy,
) -> Result<UncertaintyDecomposition> {
    let m = ensemble.len();
    let mut tally = Tally::new();
    let members = ensemble.members();
    let weights = ensemble.weights();

    let mut entropies = Vec::with_capacity(m);
    for (i, p) in members.iter().enumerate() {
        entropies.push(tally.note(&entropy(score, &policy.reseeded(i as u64), p)?));
    }
    let au = weights.iter().zip(&entropies).map(|(w, h)| w * h).collect::<CompensatedSum>().value();

    let mut eu = CompensatedSum::new();
    let mut tu = CompensatedSum::new();
    match estimator {
        EstimatorKind::Bma => {
            let bma = ensemble.bma();
            for (i, p) in members.iter().enumerate() {
                let d = tally.note(&divergence(score, &policy.reseeded((m + i) as u64), &bma, p)?);
                eu.add(weights[i] * d);
                tu.add(weights[i] * (d + entropies[i]));
            }
        }
        EstimatorKind::Pairwise => {
            let symmetric = score.is_kernel_score();
            let mut div = vec![0.0; m * m];
            for i in 0..m {
                for j in 0..m {
                    if i == j || (symmetric && j < i) {
                        continue;
                    }
                    let seed_offset = (2 * m + i * m + j) as u64;
                    // D(P_j, P_i): member j scored under member i
                    let d = tally.note(&divergence(score, &policy.reseeded(seed_offset), &members[j], &members[i])?);
                    div[i * m + j] = d;
                    if symmetric {
                        div[j * m + i] = d;
                    }
                }
            }
            for i in 0..m {
                for j in 0..m {
                    let w = weights[i] * weights[j];
                    let d = div[i * m + j];
                    eu.add(w * d);
                    tu.add(w * (d + entropies[i]));
                }
            }
        }
    }

    Ok(UncertaintyDecomposition {
        tu: tu.value(),
        eu: eu.value(),
        au,
        estimator,
        score: score.clone(),
        diagnostics: Diagnostics { policy: *policy, path: tally.path, clamped: tally.clamped },
    })
}

/// `Δ = TU_P − TU_B = EU_P − EU_B`.
pub fn gap(ensemble: &SecondOrderEnsemble, score: &ScoreKind, policy: &EvalPolicy) -> Result<f64> {
    let p = decompose(ensemble, score, EstimatorKind::Pairwise, policy)?;
    let b = decompose(ensemble, score, EstimatorKind::Bma, policy)?;
    Ok(p.eu - b.eu)
}

/// Decomposes every instance in parallel. Output order matches input order and
/// does not depend on scheduling; a failing instance yields its own error.
pub fn decompose_batch(
    instances: &[SecondOrderEnsemble],
    score: &ScoreKind,
    estimator: EstimatorKind,
    policy: &EvalPolicy,
) -> Vec<Result<UncertaintyDecomposition>> {
    instances.par_iter().map(|q| decompose(q, score, estimator, policy)).collect()
}
