//! Derivative route: the posterior ladder from partial derivatives of the
//! log-partition `g = g_K / L_K`, used to cross-check the bracket route.

use super::nested::{check_levels, Nested};
use super::{levels_to_ladder, ChannelSpec, PosteriorMoments, Regime, RsbLadder};
use crate::error::{Error, Result};
use crate::quadrature::QuadratureConfig;

/// `g = g_K / L_K` (or `g_0` at `K = 0`) by nested quadrature.
pub fn log_partition(
    channel: &ChannelSpec,
    y: Option<f64>,
    mu: f64,
    levels: &[f64],
    ladder: &RsbLadder,
    quad: &QuadratureConfig,
) -> Result<f64> {
    check_levels(levels, ladder, true)?;
    let top = Nested {
        ch: channel,
        y,
        levels,
        ladder,
        quad,
        closed_first: false,
    }
    .eval(ladder.k(), mu)?;
    Ok(top.log_z / ladder.size(ladder.k()))
}

/// Five-point central difference.
fn deriv(f: &dyn Fn(f64) -> Result<f64>, x: f64, h: f64) -> Result<f64> {
    Ok((-f(x + 2.0 * h)? + 8.0 * f(x + h)? - 8.0 * f(x - h)? + f(x - 2.0 * h)?) / (12.0 * h))
}

fn second_deriv(f: &dyn Fn(f64) -> Result<f64>, x: f64, h: f64) -> Result<f64> {
    Ok(
        (-f(x + 2.0 * h)? + 16.0 * f(x + h)? - 30.0 * f(x)? + 16.0 * f(x - h)? - f(x - 2.0 * h)?)
            / (12.0 * h * h),
    )
}

/// Posterior moments from finite differences of `g`.
pub fn gamma_route(
    channel: &ChannelSpec,
    y: Option<f64>,
    mu: f64,
    levels: &[f64],
    ladder: &RsbLadder,
    quad: &QuadratureConfig,
) -> Result<PosteriorMoments> {
    let kk = ladder.k();
    let g_at = |m: f64, lv: &[f64]| log_partition(channel, y, m, lv, ladder, quad);
    let c = levels_to_ladder(levels, ladder);
    let hm = 1e-3 * c[kk].sqrt();
    let g_mu = deriv(&|m| g_at(m, levels), mu, hm)?;
    let g_v: Vec<f64> = (0..=kk)
        .map(|k| {
            let h = 1e-3 * levels[k];
            deriv(
                &|x| {
                    let mut lv = levels.to_vec();
                    lv[k] = x;
                    g_at(mu, &lv)
                },
                levels[k],
                h,
            )
        })
        .collect::<Result<_>>()?;
    let mut gamma = vec![0.0; kk + 1];
    if kk == 0 {
        gamma[0] = match ladder.regime() {
            Regime::Mmse => -2.0 * g_v[0] + g_mu * g_mu,
            Regime::Map => -second_deriv(&|m| g_at(m, levels), mu, hm)?,
        };
    } else {
        gamma[kk] = -2.0 * g_v[kk] + ladder.size(kk) * g_mu * g_mu;
        for k in 1..kk {
            let r = ladder.size(k + 1) / ladder.size(k);
            gamma[k] = 2.0 / (r - 1.0) * (g_v[k + 1] - r * g_v[k]);
        }
        let l1 = ladder.size(1);
        gamma[0] = match ladder.regime() {
            Regime::Mmse => {
                if l1 <= 1.0 {
                    return Err(Error::Unsupported(
                        "the β = 1 derivative route is singular at L_1 = 1".into(),
                    ));
                }
                2.0 / (l1 - 1.0) * (g_v[1] - l1 * g_v[0])
            }
            Regime::Map => -2.0 * (g_v[1] - l1 * g_v[0]),
        };
    }
    let c_hat = (0..=kk).map(|k| c[k] - c[k] * c[k] * gamma[k]).collect();
    Ok(PosteriorMoments {
        mean: c[kk] * g_mu + mu,
        c_hat,
        log_partition: Some(g_at(mu, levels)?),
    })
}

/// Maximum discrepancy between the bracket and derivative routes: ladder
/// entries relative to `c_k`, the mean relative to `√c_K`.
pub fn gamma_route_check(
    channel: &ChannelSpec,
    y: Option<f64>,
    mu: f64,
    levels: &[f64],
    ladder: &RsbLadder,
    quad: &QuadratureConfig,
) -> Result<f64> {
    let tight = QuadratureConfig {
        tol: quad.tol.min(1e-13),
        ..*quad
    };
    let br = super::meanvar_quadrature(channel, y, mu, levels, ladder, &tight)?;
    let gr = gamma_route(channel, y, mu, levels, ladder, &tight)?;
    let c = levels_to_ladder(levels, ladder);
    let mut worst = (br.mean - gr.mean).abs() / c[c.len() - 1].sqrt();
    for k in 0..c.len() {
        worst = worst.max((br.c_hat[k] - gr.c_hat[k]).abs() / c[k]);
    }
    Ok(worst)
}
