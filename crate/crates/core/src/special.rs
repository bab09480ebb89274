//! Special functions behind the Gaussian closed forms.
//!
//! The error and log-gamma functions come from `libm`; Kummer's
//! confluent hypergeometric function `₁F₁(a; b; −x)` is evaluated here because
//! only the negative real axis is needed.

use std::f64::consts::PI;

pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

/// Kummer's function `₁F₁(a; b; −x)` for `x ≥ 0` and `b > 0`, `b − a > 0`.
///
/// Small arguments use the Kummer transformation
/// `₁F₁(a; b; −x) = e^{−x} ₁F₁(b − a; b; x)`, whose series has positive terms.
/// Large arguments use the leading asymptotic expansion, where the dropped term
/// is `O(e^{−x})`.
pub fn hyp1f1_neg(a: f64, b: f64, x: f64) -> f64 {
    debug_assert!(x >= 0.0 && b > 0.0 && b - a > 0.0);
    if x == 0.0 {
        return 1.0;
    }
    if x <= 60.0 {
        let c = b - a;
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 0.0;
        loop {
            term *= (c + k) / (b + k) * x / (k + 1.0);
            sum += term;
            k += 1.0;
            if term.abs() <= 1e-17 * sum.abs() || k > 10_000.0 {
                break;
            }
        }
        return (-x).exp() * sum;
    }
    // Γ(b)/Γ(b−a) · x^{−a} · Σ (a)_k (a−b+1)_k / (k! x^k), truncated at the smallest term.
    let prefactor = (libm::lgamma(b) - libm::lgamma(b - a) - a * x.ln()).exp();
    let a2 = a - b + 1.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut last = f64::INFINITY;
    for k in 0..60 {
        let k = k as f64;
        term *= (a + k) * (a2 + k) / (k + 1.0) / x;
        if term == 0.0 || term.abs() >= last {
            break;
        }
        sum += term;
        last = term.abs();
    }
    prefactor * sum
}

/// `E|Z|` for `Z ~ N(m, s2)`, in the error-function form
/// `s·√(2/π)·exp(−m²/2s²) + m·erf(m/(s√2))`.
pub fn crps_gaussian_mean_abs(m: f64, s2: f64) -> f64 {
    if s2 <= 0.0 {
        return m.abs();
    }
    let s = s2.sqrt();
    s * (2.0 / PI).sqrt() * (-m * m / (2.0 * s2)).exp() + m * erf(m / (s * std::f64::consts::SQRT_2))
}

/// Raw absolute moment `E|Z|^β` of `Z ~ N(m, s2)`:
/// `s^β 2^{β/2} Γ((β+1)/2)/√π · ₁F₁(−β/2; ½; −m²/2s²)`.
pub fn gaussian_abs_moment(m: f64, s2: f64, beta: f64) -> f64 {
    if s2 <= 0.0 {
        return m.abs().powf(beta);
    }
    if beta == 1.0 {
        return crps_gaussian_mean_abs(m, s2);
    }
    let log_pref = 0.5 * beta * s2.ln() + 0.5 * beta * 2f64.ln() + libm::lgamma(0.5 * (beta + 1.0)) - 0.5 * PI.ln();
    log_pref.exp() * hyp1f1_neg(-0.5 * beta, 0.5, m * m / (2.0 * s2))
}

/// Same moment through the hypergeometric expression for `β = 1`; kept
/// alongside the error-function form so the two can be compared.
pub fn crps_gaussian_mean_abs_hyp(m: f64, s2: f64) -> f64 {
    if s2 <= 0.0 {
        return m.abs();
    }
    s2.sqrt() * (2.0 / PI).sqrt() * hyp1f1_neg(-0.5, 0.5, m * m / (2.0 * s2))
}
