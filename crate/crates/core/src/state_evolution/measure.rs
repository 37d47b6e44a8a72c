//! The four scalar blocks of the recursion: two denoiser measures and two
//! spectral averages over the eigenvalues of `HᵀH`.

use crate::channels::{ladder_to_levels, ChannelSpec, Denoiser, PosteriorMoments};
use crate::error::{Error, Result};
use crate::quadrature::{gauss_hermite, gauss_legendre, integrate_tilted, QuadratureConfig};
use crate::special::{norm_pdf, HALF_LN_2PI};

use super::Spectrum;

/// Overlaps of one block's posterior with the truth.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMoments {
    /// `D = E[s0 · m]`.
    pub d: f64,
    /// `F = E[m²]`.
    pub f: f64,
    /// Averaged posterior ladder `ĉ_0 ≤ … ≤ ĉ_K`.
    pub c_hat: Vec<f64>,
}

/// Natural-parameter statistics of a Gaussian message `μ/c_K = D̂·s0 + √F̂·ξ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MessageStats {
    pub d_hat: f64,
    pub f_hat: f64,
}

/// ξ is integrated over `[−XI_REACH, XI_REACH]`; the Gaussian tail beyond is ~1e−33.
const XI_REACH: f64 = 12.0;

/// Panel width and Gauss–Legendre order of the fixed ξ rule.
const XI_PANEL: f64 = 0.5;
const XI_NODES: usize = 12;
/// Halvings of the graded panels next to a sharp point.
const XI_GRADING: i32 = 34;

/// How the message noise `ξ` of the prior-side measure is integrated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XiRule {
    /// Composite Gauss–Legendre on a fixed grid: the measure is a smooth
    /// function of the message parameters, so the recursion settles to
    /// machine precision.
    Fixed,
    /// Adaptive Gauss–Kronrod to the configured tolerance.
    Adaptive,
}

/// Fixed composite rule for `E[f(ξ)]` on `[−9, 9]` (tail mass ~1e−19).
///
/// Around each point in `sharp` the uniform grid is replaced by panels
/// shrinking geometrically toward the point, so steps of any width down to
/// `XI_PANEL·2^−XI_GRADING` are resolved while the rule still moves
/// smoothly with the point.
fn fixed_xi_rule(sharp: &[f64]) -> Vec<(f64, f64)> {
    let r = gauss_legendre(XI_NODES);
    let reach = 9.0;
    let panels = (2.0 * reach / XI_PANEL).round() as usize;
    let near = |x: f64| sharp.iter().any(|&j| (x - j).abs() < XI_PANEL);
    let mut edges: Vec<f64> = (0..=panels)
        .map(|i| -reach + i as f64 * XI_PANEL)
        .filter(|&x| !near(x))
        .collect();
    for &j in sharp.iter().filter(|j| j.abs() < reach) {
        edges.push(j);
        for m in 0..=XI_GRADING {
            let d = XI_PANEL * 0.5f64.powi(m);
            edges.extend([j - d, j + d]);
        }
    }
    edges.retain(|x| x.abs() <= reach);
    edges.extend([-reach, reach]);
    edges.sort_by(f64::total_cmp);
    edges.dedup();
    let mut out = Vec::with_capacity(edges.len() * XI_NODES);
    for w in edges.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
        for (&x, &wx) in r.nodes.iter().zip(&r.weights) {
            let xi = c + h * x;
            out.push((xi, h * wx * norm_pdf(xi)));
        }
    }
    out
}

fn awgn_var(ch: &ChannelSpec, what: &str) -> Result<f64> {
    match *ch {
        ChannelSpec::AwgnLikelihood { var } => Ok(var),
        other => Err(Error::Unsupported(format!(
            "{what} likelihood {other:?}: only AWGN is tracked"
        ))),
    }
}

/// Likelihood-side measure: `z0 ~ N(0, C_z)`, `y = z0 + w` with the true noise,
/// and the incoming message built from `c_z^+`.
///
/// The AWGN denoiser mean is affine in `(μ, y)` and its ladder does not depend
/// on them, so the Gaussian averages are evaluated exactly.
pub fn measure_z(
    den: &Denoiser,
    true_likelihood: &ChannelSpec,
    c_z: f64,
    c_in: &[f64],
    msg: MessageStats,
) -> Result<BlockMoments> {
    let v_true = awgn_var(true_likelihood, "true")?;
    awgn_var(&den.channel, "postulated")?;
    if !(msg.f_hat >= 0.0) {
        return Err(Error::numeric(format!(
            "degenerate message measure: F̂ = {}",
            msg.f_hat
        )));
    }
    let levels = ladder_to_levels(c_in, &den.ladder);
    let at = |y: f64, mu: f64| den.meanvar(Some(y), mu, &levels);
    let base = at(0.0, 0.0)?;
    let a = at(0.0, 1.0)?.mean - base.mean;
    let b = at(1.0, 0.0)?.mean - base.mean;
    let ck = c_in[c_in.len() - 1];
    // m = a·c_K(D̂ z0 + √F̂ ξ) + b(z0 + w) + m(0, 0)
    let gain = a * ck * msg.d_hat + b;
    let d = gain * c_z;
    let f =
        gain * gain * c_z + a * a * ck * ck * msg.f_hat + b * b * v_true + base.mean * base.mean;
    Ok(BlockMoments {
        d,
        f,
        c_hat: base.c_hat,
    })
}

/// The message an AWGN factor sends toward `z`: `y` itself, on a flat ladder
/// at the postulated noise level, whatever arrives from the other side.
pub fn awgn_extrinsic(
    den: &Denoiser,
    true_likelihood: &ChannelSpec,
    depth: usize,
) -> Result<(Vec<f64>, MessageStats)> {
    let v_true = awgn_var(true_likelihood, "true")?;
    let v = awgn_var(&den.channel, "postulated")?;
    Ok((
        vec![v; depth],
        MessageStats {
            d_hat: 1.0 / v,
            f_hat: v_true / (v * v),
        },
    ))
}

/// Prior-side measure: `x0` from the true prior, incoming message built from
/// `c_x^-`, posterior from `denoise` (the postulated prior).
///
/// `x0` is integrated on the prior's quadrature nodes and `ξ` by `rule`, with
/// panel edges at `jumps`, the values of `μ` where the denoiser mean jumps
/// or turns sharply.
#[allow(clippy::too_many_arguments)]
pub fn measure_x<F>(
    true_prior: &ChannelSpec,
    odd: bool,
    c_in: &[f64],
    msg: MessageStats,
    jumps: &[f64],
    quad: &QuadratureConfig,
    rule: XiRule,
    denoise: F,
) -> Result<BlockMoments>
where
    F: Fn(f64) -> Result<PosteriorMoments>,
{
    if !(msg.f_hat > 0.0) {
        return Err(Error::numeric(format!(
            "degenerate message measure: F̂ = {}",
            msg.f_hat
        )));
    }
    let depth = c_in.len();
    let ck = c_in[depth - 1];
    let sd = msg.f_hat.sqrt();
    let nodes = true_prior.prior_nodes(quad.order);
    // an odd denoiser on a symmetric prior: (x0, ξ) and (−x0, −ξ) contribute alike
    let fold = odd && true_prior.is_symmetric();
    let mut acc = vec![0.0; depth + 2];
    for &(x0, w) in &nodes {
        let w = match (fold, x0) {
            (true, x) if x < 0.0 => continue,
            (true, x) if x > 0.0 => 2.0 * w,
            _ => w,
        };
        let jump_xi: Vec<f64> = jumps
            .iter()
            .map(|&j| (j / ck - msg.d_hat * x0) / sd)
            .collect();
        if rule == XiRule::Fixed {
            for (xi, wx) in fixed_xi_rule(&jump_xi) {
                let pm = denoise(ck * (msg.d_hat * x0 + sd * xi))?;
                let ww = w * wx;
                acc[0] += ww * x0 * pm.mean;
                acc[1] += ww * pm.mean * pm.mean;
                for (a, c) in acc[2..].iter_mut().zip(&pm.c_hat) {
                    *a += ww * c;
                }
            }
            continue;
        }
        let mut breaks = vec![-XI_REACH, XI_REACH];
        breaks.extend(jump_xi.into_iter().filter(|xi| xi.abs() < XI_REACH));
        breaks.sort_by(f64::total_cmp);
        let mut err = None;
        let t = integrate_tilted(
            &breaks,
            1.0,
            depth + 2,
            quad.tol,
            quad.max_panels,
            |xi, out| match denoise(ck * (msg.d_hat * x0 + sd * xi)) {
                Ok(pm) => {
                    out[0] = x0 * pm.mean;
                    out[1] = pm.mean * pm.mean;
                    out[2..].copy_from_slice(&pm.c_hat);
                    -0.5 * xi * xi - HALF_LN_2PI
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
        let t = t?;
        for (a, m) in acc.iter_mut().zip(&t.means) {
            *a += w * m;
        }
    }
    Ok(BlockMoments {
        d: acc[0],
        f: acc[1],
        c_hat: acc[2..].to_vec(),
    })
}

/// Which side of the linear node a spectral block reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    X,
    Z,
}

/// Hat parameters entering the linear node from both sides.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearInputs {
    pub d_hat_x: f64,
    pub f_hat_x: f64,
    pub d_hat_z: f64,
    pub f_hat_z: f64,
}

/// LMMSE block: with `den_k(λ) = 1/c_{x,k} + λ/c_{z,k}`,
/// `ĉ_k = E[w/den_k]`, `D = C_x E[w(D̂_x + λD̂_z)/den_K]`,
/// `F = C_x E[w(D̂_x + λD̂_z)²/den_K²] + E[w(F̂_x + λF̂_z)/den_K²]`,
/// with `w = 1` on the x side and `w = λ/α` on the z side.
pub fn spectral(
    spectrum: &Spectrum,
    side: Side,
    c_x: &[f64],
    c_z: &[f64],
    c_x0: f64,
    h: LinearInputs,
) -> BlockMoments {
    let depth = c_x.len();
    let kk = depth - 1;
    let n = spectrum.lambda.len() as f64;
    let mut c_hat = vec![0.0; depth];
    let (mut d, mut f) = (0.0, 0.0);
    for &lam in &spectrum.lambda {
        let w = match side {
            Side::X => 1.0,
            Side::Z => lam / spectrum.alpha,
        };
        for k in 0..depth {
            c_hat[k] += w / (1.0 / c_x[k] + lam / c_z[k]);
        }
        let den = 1.0 / c_x[kk] + lam / c_z[kk];
        let num = h.d_hat_x + lam * h.d_hat_z;
        d += w * c_x0 * num / den;
        f += w * (c_x0 * num * num + h.f_hat_x + lam * h.f_hat_z) / (den * den);
    }
    c_hat.iter_mut().for_each(|c| *c /= n);
    BlockMoments {
        d: d / n,
        f: f / n,
        c_hat,
    }
}

/// Extrinsic message the LMMSE block sends toward the prior, in the same
/// notation as [`spectral`]:
/// `D̂ = D̂_z E[λg]/ĉ`,
/// `F̂ = (C_x Var[g(D̂_x + λD̂_z)] + F̂_x Var[g] + F̂_z E[λg²])/ĉ²`, `g = 1/den_K`.
///
/// Algebraically the same as [`extrinsic`] applied to the x-side moments,
/// but without subtracting terms of order `1/ĉ²`.
pub fn spectral_extrinsic(
    spectrum: &Spectrum,
    c_x: &[f64],
    c_z: &[f64],
    c_x0: f64,
    h: LinearInputs,
) -> MessageStats {
    let kk = c_x.len() - 1;
    let n = spectrum.lambda.len() as f64;
    let g = |lam: f64| 1.0 / (1.0 / c_x[kk] + lam / c_z[kk]);
    let ga = |lam: f64| g(lam) * (h.d_hat_x + lam * h.d_hat_z);
    let mean = |f: &dyn Fn(f64) -> f64| spectrum.lambda.iter().map(|&l| f(l)).sum::<f64>() / n;
    let c_hat = mean(&g);
    let m_ga = mean(&ga);
    let var_g = mean(&|l| (g(l) - c_hat).powi(2));
    let var_ga = mean(&|l| (ga(l) - m_ga).powi(2));
    let lam_g2 = mean(&|l| l * g(l) * g(l));
    MessageStats {
        d_hat: h.d_hat_z * mean(&|l| l * g(l)) / c_hat,
        f_hat: (c_x0 * var_ga + h.f_hat_x * var_g + h.f_hat_z * lam_g2) / (c_hat * c_hat),
    }
}

/// Statistics of the extrinsic message leaving a block whose posterior has
/// overlaps `m` and whose incoming message had `incoming`:
/// `D̂ = D/(C ĉ_K) − D̂_in`, `F̂ = F/ĉ_K² − D²/(C ĉ_K²) − F̂_in`.
pub fn extrinsic(m: &BlockMoments, c0: f64, incoming: MessageStats) -> MessageStats {
    let ck = m.c_hat[m.c_hat.len() - 1];
    MessageStats {
        d_hat: m.d / (c0 * ck) - incoming.d_hat,
        f_hat: m.f / (ck * ck) - m.d * m.d / (c0 * ck * ck) - incoming.f_hat,
    }
}

/// Tensor Gauss–Hermite evaluation of the likelihood-side measure over
/// `(z0, ξ, w)` with an arbitrary per-point denoiser; an independent check of
/// [`measure_z`].
pub fn measure_z_tensor<F>(
    c_z: f64,
    v_true: f64,
    c_in: &[f64],
    msg: MessageStats,
    order: usize,
    denoise: F,
) -> Result<BlockMoments>
where
    F: Fn(f64, f64) -> Result<PosteriorMoments>,
{
    let r = gauss_hermite(order);
    let ck = c_in[c_in.len() - 1];
    let depth = c_in.len();
    let (mut d, mut f) = (0.0, 0.0);
    let mut c_hat = vec![0.0; depth];
    for (&a, &wa) in r.nodes.iter().zip(&r.weights) {
        let z0 = c_z.sqrt() * a;
        for (&b, &wb) in r.nodes.iter().zip(&r.weights) {
            let mu = ck * (msg.d_hat * z0 + msg.f_hat.sqrt() * b);
            for (&e, &we) in r.nodes.iter().zip(&r.weights) {
                let y = z0 + v_true.sqrt() * e;
                let pm = denoise(y, mu)?;
                let w = wa * wb * we;
                d += w * z0 * pm.mean;
                f += w * pm.mean * pm.mean;
                for (c, p) in c_hat.iter_mut().zip(&pm.c_hat) {
                    *c += w * p;
                }
            }
        }
    }
    Ok(BlockMoments { d, f, c_hat })
}
