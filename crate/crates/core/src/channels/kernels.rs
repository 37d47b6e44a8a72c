//! Innermost-level kernels and closed-form first smoothing levels.

use super::{ChannelSpec, Regime};
use crate::special::{ln_binomial, log_add_exp, log_gauss, log_norm_cdf, mills, HALF_LN_2PI};

/// Averages carried upward through the smoothing levels, as functions of the
/// level's centre `m_k`.
///
/// `b[j]` is the average of `⟨·⟩_j²`, the second moment shared by replicas
/// that agree up to level `j`.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Bracket {
    pub log_z: f64,
    pub a: f64,
    pub s0: f64,
    pub b: [f64; 2],
}

/// Level-zero kernel at centre `m` and variance `v0`.
pub(crate) fn level0(ch: &ChannelSpec, regime: Regime, y: Option<f64>, m: f64, v0: f64) -> Bracket {
    let (log_z, a, s0) = match *ch {
        ChannelSpec::AwgnLikelihood { var } => {
            gaussian_kernel(regime, y.unwrap_or(0.0), var, m, v0)
        }
        ChannelSpec::GaussianPrior { mean, var } => gaussian_kernel(regime, mean, var, m, v0),
        ChannelSpec::BpskPrior { amplitude: a } => match regime {
            Regime::Mmse => {
                let u = a * m / v0;
                let lz =
                    log_add_exp(log_gauss(a, m, v0), log_gauss(-a, m, v0)) - std::f64::consts::LN_2;
                // sech² without overflow
                let e = (-2.0 * u.abs()).exp();
                let sech2 = 4.0 * e / ((1.0 + e) * (1.0 + e));
                (lz, a * u.tanh(), a * a * sech2)
            }
            Regime::Map => {
                let d = m.abs() - a;
                let x = if m > 0.0 {
                    a
                } else if m < 0.0 {
                    -a
                } else {
                    0.0
                };
                (-d * d / (2.0 * v0), x, 0.0)
            }
        },
        ChannelSpec::RelaxedBpskPrior { relax: c } => match regime {
            Regime::Mmse => relaxed_mmse(c, m, v0),
            Regime::Map => {
                let d = m.abs() - 1.0;
                let x = m.signum() * (v0 + c * m.abs()) / (v0 + c);
                let x = if m == 0.0 { 0.0 } else { x };
                (
                    -d * d / (2.0 * (c + v0)) - relaxed_log_norm(c),
                    x,
                    v0 * c / (v0 + c),
                )
            }
        },
    };
    Bracket {
        log_z,
        a,
        s0,
        b: [0.0; 2],
    }
}

fn gaussian_kernel(regime: Regime, t: f64, s: f64, m: f64, v0: f64) -> (f64, f64, f64) {
    let tot = v0 + s;
    let a = (m * s + t * v0) / tot;
    let s0 = v0 * s / tot;
    let lz = match regime {
        Regime::Mmse => log_gauss(t, m, tot),
        Regime::Map => -(t - m).powi(2) / (2.0 * tot) - 0.5 * s.ln() - HALF_LN_2PI,
    };
    (lz, a, s0)
}

/// `ln ∫ exp(−(|x|−1)²/(2c)) dx`
fn relaxed_log_norm(c: f64) -> f64 {
    std::f64::consts::LN_2
        + 0.5 * (2.0 * std::f64::consts::PI * c).ln()
        + log_norm_cdf(1.0 / c.sqrt())
}

/// Posterior of `x` under `N(x | m, v) p(x)` for the relaxed BPSK prior: a
/// two-component mixture of truncated Gaussians.
fn relaxed_mmse(c: f64, m: f64, v: f64) -> (f64, f64, f64) {
    let s = v * c / (v + c);
    let sd = s.sqrt();
    let mp = (m * c + v) / (v + c);
    let mn = (m * c - v) / (v + c);
    let up = mp / sd;
    let un = -mn / sd;
    let lp = log_gauss(m, 1.0, v + c) + log_norm_cdf(up);
    let ln = log_gauss(m, -1.0, v + c) + log_norm_cdf(un);
    let lz =
        log_add_exp(lp, ln) + 0.5 * (2.0 * std::f64::consts::PI * c).ln() - relaxed_log_norm(c);
    let wp = 1.0 / (1.0 + (ln - lp).exp());
    let wn = 1.0 - wp;
    let (rp, rn) = (mills(up), mills(un));
    let ep = mp + sd * rp;
    let en = mn - sd * rn;
    let vp = (s * (1.0 - up * rp - rp * rp)).max(0.0);
    let vn = (s * (1.0 - un * rn - rn * rn)).max(0.0);
    let mean = wp * ep + wn * en;
    let second = wp * (vp + ep * ep) + wn * (vn + en * en);
    (lz, mean, (second - mean * mean).max(0.0))
}

/// Points where the level-zero output jumps (MAP only), with jump sizes.
pub(crate) fn jumps(ch: &ChannelSpec, regime: Regime, v0: f64) -> Vec<(f64, f64)> {
    match (regime, *ch) {
        (Regime::Map, ChannelSpec::BpskPrior { amplitude }) => vec![(0.0, 2.0 * amplitude)],
        (Regime::Map, ChannelSpec::RelaxedBpskPrior { relax }) => {
            vec![(0.0, 2.0 * v0 / (relax + v0))]
        }
        _ => Vec::new(),
    }
}

/// Where the level-zero tilt concentrates.
pub(crate) fn anchors(ch: &ChannelSpec, y: Option<f64>) -> Vec<f64> {
    match *ch {
        ChannelSpec::AwgnLikelihood { .. } => vec![y.unwrap_or(0.0)],
        ChannelSpec::GaussianPrior { mean, .. } => vec![mean],
        ChannelSpec::BpskPrior { amplitude } => vec![-amplitude, 0.0, amplitude],
        ChannelSpec::RelaxedBpskPrior { .. } => vec![-1.0, 0.0, 1.0],
    }
}

/// Width of `exp(g_0)` seen as a function of `m_0`, squared.
pub(crate) fn spread(ch: &ChannelSpec, v0: f64) -> f64 {
    match *ch {
        ChannelSpec::AwgnLikelihood { var } => v0 + var,
        ChannelSpec::GaussianPrior { var, .. } => v0 + var,
        ChannelSpec::BpskPrior { .. } => v0,
        ChannelSpec::RelaxedBpskPrior { relax } => v0 + relax,
    }
}

/// First smoothing level in closed form, when the prior admits one.
///
/// `n` is the tilt `L_1`, `(v0, v1)` the two innermost level variances.
pub(crate) fn closed_level1(
    ch: &ChannelSpec,
    regime: Regime,
    m: f64,
    v0: f64,
    v1: f64,
    n: f64,
) -> Option<Bracket> {
    match (regime, *ch) {
        (Regime::Map, ChannelSpec::BpskPrior { amplitude }) if v1 > 0.0 => {
            Some(bpsk_map_level1(amplitude, m, v0, v1, n))
        }
        (Regime::Mmse, ChannelSpec::BpskPrior { amplitude }) if n >= 2.0 => {
            Some(bpsk_mmse_level1(amplitude, m, v0, v1, n as u64))
        }
        _ => None,
    }
}

/// `∫ N(m_0 | m, v1) exp(−n(|m_0| − a)²/(2 v0)) dm_0` split over the two
/// half-lines, with the bracket averages of `a·sign(m_0)`.
pub(crate) fn bpsk_map_level1(a: f64, m: f64, v0: f64, v1: f64, n: f64) -> Bracket {
    let s = v0 + n * v1;
    let d = (v1 * v0 * s).sqrt();
    let up = (n * v1 * a + v0 * m) / d;
    let un = (n * v1 * a - v0 * m) / d;
    let lp = -n * (m - a).powi(2) / (2.0 * s) + log_norm_cdf(up);
    let ln = -n * (m + a).powi(2) / (2.0 * s) + log_norm_cdf(un);
    let log_z = 0.5 * v0.ln() - 0.5 * s.ln() + log_add_exp(lp, ln);
    let mean = a * (0.5 * (lp - ln)).tanh();
    // the jump of 2a at m_0 = 0 feeds the level-zero slope average
    let s0 = v0 * 2.0 * a * (log_gauss(0.0, m, v1) - n * a * a / (2.0 * v0) - log_z).exp();
    Bracket {
        log_z,
        a: mean,
        s0,
        b: [a * a, 0.0],
    }
}

/// Binomial expansion of `exp(n g_0)` for the equiprobable two-atom prior:
/// each monomial is a Gaussian in `m_0`, so the smoothing integral is exact.
pub(crate) fn bpsk_mmse_level1(a: f64, m: f64, v0: f64, v1: f64, n: u64) -> Bracket {
    let nf = n as f64;
    let var = v1 + v0 / nf;
    let base = -0.5 * nf * (2.0 * std::f64::consts::PI * v0).ln()
        + 0.5 * (2.0 * std::f64::consts::PI * v0 / nf).ln()
        - nf * std::f64::consts::LN_2;
    let terms: Vec<f64> = (0..=n)
        .map(|j| {
            let k = 2.0 * j as f64 - nf;
            let mu = a * k / nf;
            base - (nf * a * a - a * a * k * k / nf) / (2.0 * v0) + log_gauss(m, mu, var)
        })
        .collect();
    let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let binom = |nn: u64, j: i64| -> f64 {
        if j < 0 || j as u64 > nn {
            0.0
        } else {
            ln_binomial(nn, j as u64).exp()
        }
    };
    let mut z = 0.0;
    let mut x1 = 0.0;
    let mut x2 = 0.0;
    // 1 − tanh² = 4pq/(p+q)², expanded separately to avoid cancellation
    let mut sech2 = 0.0;
    for (j, &t) in terms.iter().enumerate() {
        let e = (t - top).exp();
        let j = j as i64;
        z += binom(n, j) * e;
        x1 += (binom(n - 1, j - 1) - binom(n - 1, j)) * e;
        x2 += (binom(n - 2, j - 2) - 2.0 * binom(n - 2, j - 1) + binom(n - 2, j)) * e;
        sech2 += 4.0 * binom(n - 2, j - 1) * e;
    }
    let mean = a * x1 / z;
    let b0 = a * a * x2 / z;
    Bracket {
        log_z: top + z.ln(),
        a: mean,
        s0: a * a * sech2 / z,
        b: [b0, 0.0],
    }
}
