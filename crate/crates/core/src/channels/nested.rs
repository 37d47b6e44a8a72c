//! Nested-bracket route: integrate each Gaussian smoothing level adaptively
//! and read the posterior ladder off the bracket second moments.

use super::kernels::{anchors, closed_level1, jumps, level0, spread, Bracket};
use super::{levels_to_ladder, ChannelSpec, PosteriorMoments, RsbLadder};
use crate::error::{Error, Result};
use crate::quadrature::{integrate_tilted, QuadratureConfig};
use crate::special::{log_gauss, HALF_LN_2PI};

/// Level variances below this fraction of `v_0` are treated as point masses.
const COLLAPSE: f64 = 1e-14;

pub(crate) struct Nested<'a> {
    pub ch: &'a ChannelSpec,
    pub y: Option<f64>,
    pub levels: &'a [f64],
    pub ladder: &'a RsbLadder,
    pub quad: &'a QuadratureConfig,
    pub closed_first: bool,
}

impl Nested<'_> {
    /// Squared width of `exp(n_k g_{k−1})` as a function of `m_{k−1}`.
    fn width2(&self, k: usize) -> f64 {
        let mut w = spread(self.ch, self.levels[0]) / self.ladder.ratio(1);
        for j in 2..=k {
            w = (w + self.levels[j - 1]) / self.ladder.ratio(j);
        }
        w
    }

    pub fn eval(&self, k: usize, m: f64) -> Result<Bracket> {
        let regime = self.ladder.regime();
        if k == 0 {
            return Ok(level0(self.ch, regime, self.y, m, self.levels[0]));
        }
        let vk = self.levels[k];
        let n = self.ladder.ratio(k);
        if vk <= COLLAPSE * self.levels[0] {
            // collapsed level: the smoothing measure is a point mass at m
            let inner = self.eval(k - 1, m)?;
            let mut b = inner;
            b.log_z = n * inner.log_z;
            b.b[k - 1] = inner.a * inner.a;
            return Ok(b);
        }
        if k == 1 && self.closed_first {
            if let Some(b) = closed_level1(self.ch, regime, m, self.levels[0], vk, n) {
                return Ok(b);
            }
        }
        // The integrand is N(m'; m, v_k) times a tilt of squared width w2 peaked
        // near the anchors; their product sits between m and the anchors.
        let w2 = self.width2(k);
        let pull = (2.0 * vk / (vk + w2)).min(1.0);
        let sd = (vk * w2 / (vk + w2)).sqrt();
        let reach = 14.0 * sd;
        // integrate over the offset u = m' − m so the Gaussian weight stays
        // exact when v_k is tiny next to |m|
        let (mut lo, mut hi) = (0.0f64, 0.0f64);
        for p in anchors(self.ch, self.y) {
            let c = pull * (p - m);
            lo = lo.min(c);
            hi = hi.max(c);
        }
        let (lo, hi) = (lo - reach, hi + reach);
        let jump = if k == 1 {
            jumps(self.ch, regime, self.levels[0])
        } else {
            Vec::new()
        };
        let mut breaks = vec![lo, hi];
        // breaks only matter where the integrand is not smooth
        breaks.extend(jump.iter().map(|j| j.0 - m).filter(|&b| b > lo && b < hi));
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        let dim = k + 2;
        let mut err = None;
        // inner levels run tighter so their refinement noise stays below the
        // outer tolerance
        let tol = (self.quad.tol * 0.1f64.powi((self.ladder.k() - k) as i32)).max(1e-14);
        let half_prec = -0.5 / vk;
        let log_norm = -0.5 * vk.ln() - HALF_LN_2PI;
        let t = integrate_tilted(
            &breaks,
            0.5 * sd,
            dim,
            tol,
            self.quad.max_panels,
            |u, out| match self.eval(k - 1, m + u) {
                Ok(inner) => {
                    out[0] = inner.a;
                    out[1] = inner.s0;
                    out[2..k + 1].copy_from_slice(&inner.b[..k - 1]);
                    out[k + 1] = inner.a * inner.a;
                    half_prec * u * u + log_norm + n * inner.log_z
                }
                Err(e) => {
                    err.get_or_insert(e);
                    f64::NEG_INFINITY
                }
            },
        );
        if let Some(e) = err {
            return Err(e);
        }
        let t = t.map_err(|e| Error::numeric(format!("level {k}: {e}")))?;
        let mut out = Bracket {
            log_z: t.log_z,
            a: t.means[0],
            s0: t.means[1],
            b: [0.0; 2],
        };
        out.b[..k].copy_from_slice(&t.means[2..k + 2]);
        for &(bp, size) in &jump {
            let inner = self.eval(0, bp)?;
            out.s0 +=
                self.levels[0] * size * (log_gauss(bp, m, vk) + n * inner.log_z - t.log_z).exp();
        }
        Ok(out)
    }

    pub fn moments(&self, mu: f64) -> Result<PosteriorMoments> {
        let kk = self.ladder.k();
        let top = self.eval(kk, mu)?;
        if !top.log_z.is_finite() || !top.a.is_finite() || !top.s0.is_finite() {
            return Err(Error::numeric(format!(
                "non-finite bracket at the top level (μ = {mu})"
            )));
        }
        let mut v = vec![top.s0.max(0.0)];
        for j in 0..kk {
            let upper = if j + 1 == kk {
                top.a * top.a
            } else {
                top.b[j + 1]
            };
            v.push((top.b[j] - upper).max(0.0));
        }
        let log_partition = Some(top.log_z / self.ladder.size(kk));
        Ok(PosteriorMoments {
            mean: top.a,
            c_hat: levels_to_ladder(&v, self.ladder),
            log_partition,
        })
    }
}

pub(crate) fn check_levels(levels: &[f64], ladder: &RsbLadder, strict: bool) -> Result<()> {
    if levels.len() != ladder.k() + 1 {
        return Err(Error::invalid(format!(
            "expected {} levels, got {}",
            ladder.k() + 1,
            levels.len()
        )));
    }
    if !(levels[0] > 0.0) || !levels[0].is_finite() {
        return Err(Error::numeric(format!(
            "level variance v_0 = {} must be positive",
            levels[0]
        )));
    }
    for (k, &v) in levels.iter().enumerate().skip(1) {
        if !v.is_finite() || v < 0.0 || (strict && v == 0.0) {
            return Err(Error::numeric(format!(
                "level variance v_{k} = {v} out of range"
            )));
        }
    }
    Ok(())
}

pub(crate) fn meanvar_nested(
    ch: &ChannelSpec,
    y: Option<f64>,
    mu: f64,
    levels: &[f64],
    ladder: &RsbLadder,
    quad: &QuadratureConfig,
    closed_first: bool,
) -> Result<PosteriorMoments> {
    check_levels(levels, ladder, false)?;
    if ladder.k() > 2 {
        return Err(Error::Unsupported(format!(
            "nested quadrature depth K = {} > 2",
            ladder.k()
        )));
    }
    Nested {
        ch,
        y,
        levels,
        ladder,
        quad,
        closed_first,
    }
    .moments(mu)
}

/// Posterior mean and ladder by nested adaptive quadrature over every
/// smoothing level (no closed-form shortcuts beyond the innermost kernel).
pub fn meanvar_quadrature(
    channel: &ChannelSpec,
    y: Option<f64>,
    mu: f64,
    levels: &[f64],
    ladder: &RsbLadder,
    quad: &QuadratureConfig,
) -> Result<PosteriorMoments> {
    channel.validate()?;
    check_levels(levels, ladder, true)?;
    if matches!(channel, ChannelSpec::AwgnLikelihood { .. }) && y.is_none() {
        return Err(Error::invalid("likelihood denoiser needs an observation"));
    }
    meanvar_nested(channel, y, mu, levels, ladder, quad, false)
}
