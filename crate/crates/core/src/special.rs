//! Scalar special functions in log-stable form.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// `0.5 * ln(2π)`
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn log_norm_pdf(x: f64) -> f64 {
    -0.5 * x * x - HALF_LN_2PI
}

/// `ln N(x | m, v)`.
pub fn log_gauss(x: f64, m: f64, v: f64) -> f64 {
    let d = x - m;
    -0.5 * d * d / v - 0.5 * v.ln() - HALF_LN_2PI
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// `ln Φ(x)`, accurate far into both tails.
pub fn log_norm_cdf(x: f64) -> f64 {
    if x > 5.0 {
        // Φ(x) = 1 - Φ(-x); ln(1 - t) for tiny t
        (-0.5 * libm::erfc(x * FRAC_1_SQRT_2)).ln_1p()
    } else if x > -30.0 {
        (0.5 * libm::erfc(-x * FRAC_1_SQRT_2)).ln()
    } else {
        // asymptotic Mills series: Φ(x) ≈ φ(x)/|x| · Σ (-1)^n (2n-1)!! / x^{2n}
        let r = 1.0 / (x * x);
        let mut term = 1.0;
        let mut sum = 1.0;
        for n in 1..=6 {
            term *= -((2 * n - 1) as f64) * r;
            sum += term;
        }
        log_norm_pdf(x) - (-x).ln() + sum.ln()
    }
}

/// Inverse Mills ratio `φ(x) / Φ(x)`.
pub fn mills(x: f64) -> f64 {
    (log_norm_pdf(x) - log_norm_cdf(x)).exp()
}

/// `ln(e^a + e^b)`.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// `ln Σ e^{x_i}`; `-inf` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// `ln C(n, k)` through the log-gamma function.
pub fn ln_binomial(n: u64, k: u64) -> f64 {
    debug_assert!(k <= n);
    libm::lgamma(n as f64 + 1.0) - libm::lgamma(k as f64 + 1.0) - libm::lgamma((n - k) as f64 + 1.0)
}
