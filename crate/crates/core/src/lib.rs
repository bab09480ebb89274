//! Kernel-score uncertainty quantification for regression.
//!
//! A second-order ensemble of predictive distributions is decomposed into
//! total (TU), epistemic (EU) and aleatoric (AU) uncertainty, TU = EU + AU,
//! using the entropy and divergence induced by a proper scoring rule:
//!
//! | score | entropy `H(P)` | divergence `D(P, Q)` |
//! |-------|----------------|----------------------|
//! | log | Shannon entropy | `KL(Q ‖ P)` |
//! | squared error | `tr Cov_P` | `‖μ_P − μ_Q‖²` |
//! | energy / CRPS | `½ E‖X − X'‖^β` | energy distance |
//! | Gaussian kernel | `½ E[1 − exp(−‖X − X'‖²/γ²)]` | MMD² |
//!
//! Gaussians, Gaussian mixtures and point masses are handled in closed form;
//! sample sets use unbiased U-statistics. Two estimators are provided: one
//! based on the Bayesian model average (BMA) and one on pairwise comparisons
//! between members.
//!
//! ```
//! use kernel_uq::{decompose, EstimatorKind, EvalPolicy, FirstOrderDist, ScoreKind, SecondOrderEnsemble};
//!
//! let ensemble = SecondOrderEnsemble::uniform(vec![
//!     FirstOrderDist::gaussian_1d(0.0, 1.0).unwrap(),
//!     FirstOrderDist::gaussian_1d(1.0, 1.0).unwrap(),
//! ])
//! .unwrap();
//! let d = decompose(&ensemble, &ScoreKind::SquaredError, EstimatorKind::Pairwise, &EvalPolicy::ClosedForm).unwrap();
//! assert!((d.eu - 0.5).abs() < 1e-12);
//! assert!((d.au - 1.0).abs() < 1e-12);
//! ```

pub mod decomposition;
pub mod distributions;
mod error;
pub mod experiments;
pub mod io;
pub mod kernels;
pub mod numeric;
pub mod robustness;
pub mod scores;
pub mod special;

/// Library version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use decomposition::{decompose, decompose_batch, gap, EstimatorKind, UncertaintyDecomposition};
pub use distributions::{FirstOrderDist, Gaussian, SecondOrderEnsemble};
pub use error::{Error, Result};
pub use kernels::{median_heuristic, KernelSpec};
pub use scores::{divergence, entropy, expected_score, score, EvalPath, EvalPolicy, Evaluation, ScoreKind};
