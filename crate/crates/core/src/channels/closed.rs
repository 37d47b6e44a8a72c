//! Closed-form denoisers.

use super::kernels::bpsk_map_level1;
use super::nested::check_levels;
use super::{levels_to_ladder, PosteriorMoments, Regime, RsbLadder};
use crate::error::{Error, Result};
use crate::special::{log_norm_cdf, mills};

/// Gaussian closure: every smoothing level stays Gaussian, so each rung of
/// the posterior ladder is the conjugate variance computed with the
/// cumulative prior variance `c_k`.
fn gaussian_closed(
    t: f64,
    s: f64,
    mu: f64,
    levels: &[f64],
    ladder: &RsbLadder,
) -> Result<PosteriorMoments> {
    check_levels(levels, ladder, false)?;
    if !(s > 0.0) {
        return Err(Error::numeric(format!(
            "noise variance {s} must be positive"
        )));
    }
    let c = levels_to_ladder(levels, ladder);
    let c_hat: Vec<f64> = c.iter().map(|&ck| ck * s / (ck + s)).collect();
    let ck = c[c.len() - 1];
    let mean = (mu * s + t * ck) / (ck + s);
    if !mean.is_finite() || c_hat.iter().any(|x| !(*x > 0.0)) {
        return Err(Error::numeric(format!(
            "Gaussian closed form broke down: c = {c:?}, noise {s}"
        )));
    }
    Ok(PosteriorMoments {
        mean,
        c_hat,
        log_partition: None,
    })
}

/// Likelihood denoiser for `q(y | z) = N(y | z, v_noise)`.
pub fn meanvar_awgn(
    y: f64,
    mu: f64,
    levels: &[f64],
    ladder: &RsbLadder,
    v_noise: f64,
) -> Result<PosteriorMoments> {
    gaussian_closed(y, v_noise, mu, levels, ladder)
}

/// Prior denoiser for `q(x) = N(x | mean, var)`.
pub fn meanvar_gaussian_prior(
    mean: f64,
    var: f64,
    mu: f64,
    levels: &[f64],
    ladder: &RsbLadder,
) -> Result<PosteriorMoments> {
    gaussian_closed(mean, var, mu, levels, ladder)
}

/// BPSK prior, one survey level, MAP regime, through the derivative route on
/// the closed-form log-partition.
pub fn meanvar_bpsk_k1(mu: f64, v0: f64, v1: f64, l1: f64, a: f64) -> Result<PosteriorMoments> {
    if !(v0 > 0.0) || !(v1 > 0.0) || !(l1 > 0.0) || !(a > 0.0) {
        return Err(Error::invalid(format!(
            "bpsk_k1 needs positive v0, v1, L1, a (got {v0}, {v1}, {l1}, {a})"
        )));
    }
    let l = l1;
    let s = v0 + l * v1;
    let d = (v1 * v0 * s).sqrt();
    let mut g = 0.5 * v0.ln() - 0.5 * s.ln();
    let mut parts = [(0.0f64, 0.0f64, 0.0f64, 0.0f64); 2];
    let mut logs = [0.0f64; 2];
    for (i, sg) in [1.0f64, -1.0].into_iter().enumerate() {
        let e = mu - sg * a;
        let num = l * v1 * a + sg * v0 * mu;
        let u = num / d;
        logs[i] = -l * e * e / (2.0 * s) + log_norm_cdf(u);
        let r = mills(u);
        let dd_v0 = (v1 * s + v1 * v0) / (2.0 * d);
        let dd_v1 = (v0 * s + v1 * v0 * l) / (2.0 * d);
        let du_mu = sg * v0 / d;
        let du_v0 = sg * mu / d - num * dd_v0 / (d * d);
        let du_v1 = l * a / d - num * dd_v1 / (d * d);
        let d_mu = -l * e / s + r * du_mu;
        let d_v0 = l * e * e / (2.0 * s * s) + r * du_v0;
        let d_v1 = l * l * e * e / (2.0 * s * s) + r * du_v1;
        parts[i] = (d_mu, d_v0, d_v1, 0.0);
    }
    let top = logs[0].max(logs[1]);
    let wp = (logs[0] - top).exp();
    let wn = (logs[1] - top).exp();
    g += top + (wp + wn).ln();
    let (wp, wn) = (wp / (wp + wn), wn / (wp + wn));
    let mix = |f: fn(&(f64, f64, f64, f64)) -> f64| wp * f(&parts[0]) + wn * f(&parts[1]);
    let g1_mu = mix(|p| p.0);
    let g1_v0 = mix(|p| p.1) + 1.0 / (2.0 * v0) - 1.0 / (2.0 * s);
    let g1_v1 = mix(|p| p.2) - l / (2.0 * s);
    // g = g_1 / L_1
    let (g_mu, g_v0, g_v1) = (g1_mu / l, g1_v0 / l, g1_v1 / l);
    let gamma1 = -2.0 * g_v1 + l * g_mu * g_mu;
    let gamma0 = -2.0 * (g_v1 - l * g_v0);
    let c = [v0, s];
    let c_hat = vec![
        (c[0] - c[0] * c[0] * gamma0).max(0.0),
        (c[1] - c[1] * c[1] * gamma1).max(0.0),
    ];
    let mean = c[1] * g_mu + mu;
    if !mean.is_finite() || c_hat.iter().any(|x| !x.is_finite()) {
        return Err(Error::numeric(format!(
            "bpsk_k1 produced non-finite output at μ = {mu}"
        )));
    }
    Ok(PosteriorMoments {
        mean,
        c_hat,
        log_partition: Some(g / l),
    })
}

/// The same quantity through the closed-form bracket averages; kept for
/// cross-checks of the derivative route.
#[allow(dead_code)]
pub(crate) fn bpsk_k1_brackets(mu: f64, v0: f64, v1: f64, l1: f64, a: f64) -> PosteriorMoments {
    let b = bpsk_map_level1(a, mu, v0, v1, l1);
    let ladder = RsbLadder::new(vec![l1], Regime::Map).expect("valid ladder");
    let v = [b.s0, a * a - b.a * b.a];
    PosteriorMoments {
        mean: b.a,
        c_hat: levels_to_ladder(&v, &ladder),
        log_partition: Some(b.log_z / l1),
    }
}
