//! State evolution of KVASP in the averaged-variance form, and the
//! saddle-point certificate of its fixed points.
//!
//! Every message is summarized by its natural parameter statistics: the
//! message `μ` with top rung `c_K` behaves like `c_K(D̂·s0 + √F̂·ξ)` with `s0`
//! the true signal and `ξ` standard noise. Index `1` marks messages entering
//! a denoiser, index `2` messages entering the linear node.

mod measure;
mod saddle;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channels::{ladder_to_levels, Denoiser, Role, RsbLadder};
use crate::ensembles::ProblemInstance;
use crate::error::{Error, Result};
use crate::kvasp::{cavity_combine, Channels, ClampBounds, ClampStats, KvaspConfig};
use crate::quadrature::QuadratureConfig;

pub use measure::{
    awgn_extrinsic, extrinsic, measure_x, measure_z, measure_z_tensor, spectral,
    spectral_extrinsic, BlockMoments, LinearInputs, MessageStats, Side, XiRule,
};
pub use saddle::{saddle_residual, Residual, SaddleParams, SaddleReport, CONVERGED};

/// Floor applied to `F̂` before it parameterizes a measure.
pub const F_HAT_FLOOR: f64 = 1e-12;

/// Sample spectrum of `HᵀH` with the aspect ratio `α = M/N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub lambda: Vec<f64>,
    pub alpha: f64,
}

impl Spectrum {
    pub fn new(lambda: Vec<f64>, alpha: f64) -> Result<Self> {
        if lambda.is_empty() {
            return Err(Error::invalid("spectrum is empty"));
        }
        if lambda.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::invalid("spectrum must be finite and nonnegative"));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::invalid(format!(
                "aspect ratio must be positive, got {alpha}"
            )));
        }
        Ok(Self { lambda, alpha })
    }

    pub fn from_instance(instance: &ProblemInstance) -> Result<Self> {
        Self::new(instance.lambda_samples.clone(), instance.alpha())
    }

    /// Eigenvalues of several instances of the same shape, merged.
    pub fn pooled<'a, I>(instances: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a ProblemInstance>,
    {
        let mut lambda = Vec::new();
        let mut alpha = None;
        for inst in instances {
            match alpha {
                None => alpha = Some(inst.alpha()),
                Some(a) if a != inst.alpha() => {
                    return Err(Error::invalid("pooled instances differ in aspect ratio"))
                }
                _ => {}
            }
            lambda.extend_from_slice(&inst.lambda_samples);
        }
        lambda.sort_by(f64::total_cmp);
        Self::new(
            lambda,
            alpha.ok_or_else(|| Error::invalid("no instances to pool"))?,
        )
    }

    pub fn mean(&self) -> f64 {
        self.lambda.iter().sum::<f64>() / self.lambda.len() as f64
    }
}

/// The true data-generating channels next to the postulated ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeChannels {
    pub truth: Channels,
    pub postulated: Channels,
}

impl SeChannels {
    pub fn matched(channels: Channels) -> Self {
        Self {
            truth: channels,
            postulated: channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.truth.validate()?;
        self.postulated.validate()
    }
}

/// What the zero-mean starting messages are taken to carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitConvention {
    /// `μ = 0` exactly: no signal and no noise, `D̂ = F̂ = 0`.
    #[default]
    ZeroMean,
    /// The starting message is read as pure noise of its own variance:
    /// `F̂_{1z} = C_z/c_{z,K}²`, `F̂_{2x} = C_x/c_{x,K}²`.
    UnitNoise,
}

impl FromStr for InitConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "zero_mean" => Ok(Self::ZeroMean),
            "unit_noise" => Ok(Self::UnitNoise),
            other => Err(Error::invalid(format!("unknown init convention '{other}'"))),
        }
    }
}

impl fmt::Display for InitConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ZeroMean => "zero_mean",
            Self::UnitNoise => "unit_noise",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeConfig {
    pub iterations: usize,
    pub ladder: RsbLadder,
    pub clamp_min: f64,
    pub clamp_max: f64,
    pub init_spread: f64,
    /// Stop once the relative change of every tracked scalar drops below this.
    pub stop_tol: f64,
    pub init: InitConvention,
    pub quad: QuadratureConfig,
}

impl SeConfig {
    pub fn new(ladder: RsbLadder) -> Self {
        Self::from(&KvaspConfig::new(ladder))
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("at least one iteration is required"));
        }
        if !(self.clamp_min > 0.0 && self.clamp_min < self.clamp_max && self.clamp_max.is_finite())
        {
            return Err(Error::invalid("need 0 < clamp_min < clamp_max < ∞"));
        }
        if !(self.init_spread >= 0.0 && self.init_spread.is_finite()) {
            return Err(Error::invalid("init_spread must be a nonnegative real"));
        }
        Ok(())
    }

    fn bounds(&self) -> ClampBounds {
        ClampBounds {
            min: self.clamp_min,
            max: self.clamp_max,
        }
    }
}

/// The recursion shares the engine's ladder, clamps, starting ladders and stopping rule.
impl From<&KvaspConfig> for SeConfig {
    fn from(c: &KvaspConfig) -> Self {
        Self {
            iterations: c.iterations,
            ladder: c.ladder.clone(),
            clamp_min: c.clamp_min,
            clamp_max: c.clamp_max,
            init_spread: c.init_spread,
            stop_tol: c.stop_tol,
            init: InitConvention::default(),
            quad: c.quad,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeState {
    pub d_hat_1x: f64,
    pub f_hat_1x: f64,
    pub d_hat_2x: f64,
    pub f_hat_2x: f64,
    pub d_hat_1z: f64,
    pub f_hat_1z: f64,
    pub d_hat_2z: f64,
    pub f_hat_2z: f64,
    pub c_x_plus: Vec<f64>,
    pub c_x_minus: Vec<f64>,
    pub c_z_plus: Vec<f64>,
    pub c_z_minus: Vec<f64>,
    pub c_hat_x_plus: Vec<f64>,
    pub c_hat_x_minus: Vec<f64>,
    pub c_hat_z_plus: Vec<f64>,
    pub c_hat_z_minus: Vec<f64>,
    pub d_x_plus: f64,
    pub f_x_plus: f64,
    pub d_x_minus: f64,
    pub f_x_minus: f64,
    pub d_z_plus: f64,
    pub f_z_plus: f64,
    pub d_z_minus: f64,
    pub f_z_minus: f64,
    /// `E[x0²]` under the true prior.
    pub c_x: f64,
    /// `E[λ]·C_x/α`.
    pub c_z: f64,
    pub iteration: usize,
    /// Largest relative change of a tracked scalar in the last iteration.
    pub change: f64,
    pub clamps: ClampStats,
    /// Negative `F̂` values raised to [`F_HAT_FLOOR`].
    pub degenerate: u64,
}

impl SeState {
    /// `(C_x + F_x^+ − 2 D_x^+)/C_x`.
    pub fn mse(&self) -> f64 {
        mse_from_overlaps(self.c_x, self.d_x_plus, self.f_x_plus)
    }

    fn tracked(&self) -> Vec<f64> {
        let mut v = vec![
            self.d_hat_1x,
            self.f_hat_1x,
            self.d_hat_2x,
            self.f_hat_2x,
            self.d_hat_1z,
            self.f_hat_1z,
            self.d_hat_2z,
            self.f_hat_2z,
            self.d_x_plus,
            self.f_x_plus,
            self.d_x_minus,
            self.f_x_minus,
            self.d_z_plus,
            self.f_z_plus,
            self.d_z_minus,
            self.f_z_minus,
        ];
        for l in [
            &self.c_x_plus,
            &self.c_x_minus,
            &self.c_z_plus,
            &self.c_z_minus,
        ] {
            v.extend_from_slice(l);
        }
        v
    }
}

pub fn mse_from_overlaps(c_x: f64, d_x: f64, f_x: f64) -> f64 {
    (c_x + f_x - 2.0 * d_x) / c_x
}

/// Starting state matching the engine's `init_state`: ladders
/// `c_{x,k} = Var_q[x](1 + k·spread)`, `c_z = (E[λ]/α)·c_x`, zero means.
pub fn se_init(spectrum: &Spectrum, channels: &SeChannels, config: &SeConfig) -> Result<SeState> {
    config.validate()?;
    channels.validate()?;
    let kk = config.ladder.k();
    let c_x = channels.truth.prior.second_moment();
    let c_z = spectrum.mean() * c_x / spectrum.alpha;
    let var = channels.postulated.prior.variance();
    let scale = spectrum.mean() / spectrum.alpha;
    let cx: Vec<f64> = (0..=kk)
        .map(|k| var * (1.0 + k as f64 * config.init_spread))
        .collect();
    let cz: Vec<f64> = cx.iter().map(|c| scale * c).collect();
    let (f_hat_1z, f_hat_2x) = match config.init {
        InitConvention::ZeroMean => (0.0, 0.0),
        InitConvention::UnitNoise => (c_z / cz[kk].powi(2), c_x / cx[kk].powi(2)),
    };
    Ok(SeState {
        d_hat_1x: 0.0,
        f_hat_1x: 0.0,
        d_hat_2x: 0.0,
        f_hat_2x,
        d_hat_1z: 0.0,
        f_hat_1z,
        d_hat_2z: 0.0,
        f_hat_2z: 0.0,
        c_x_plus: cx.clone(),
        c_x_minus: cx,
        c_z_plus: cz.clone(),
        c_z_minus: cz,
        c_hat_x_plus: vec![0.0; kk + 1],
        c_hat_x_minus: vec![0.0; kk + 1],
        c_hat_z_plus: vec![0.0; kk + 1],
        c_hat_z_minus: vec![0.0; kk + 1],
        d_x_plus: 0.0,
        f_x_plus: 0.0,
        d_x_minus: 0.0,
        f_x_minus: 0.0,
        d_z_plus: 0.0,
        f_z_plus: 0.0,
        d_z_minus: 0.0,
        f_z_minus: 0.0,
        c_x,
        c_z,
        iteration: 0,
        change: f64::INFINITY,
        clamps: ClampStats::default(),
        degenerate: 0,
    })
}

fn floored(f_hat: f64, degenerate: &mut u64) -> f64 {
    if f_hat < 0.0 {
        *degenerate += 1;
    }
    f_hat.max(F_HAT_FLOOR)
}

fn cavity(c_post: &[f64], c_in: &[f64], bounds: ClampBounds, stats: &mut ClampStats) -> Vec<f64> {
    cavity_combine(c_post, c_in, 0.0, 0.0, bounds, stats).0
}

/// Denoisers of the postulated model bound to the ladder.
pub(crate) struct Denoisers {
    pub prior: Denoiser,
    pub likelihood: Denoiser,
}

impl Denoisers {
    pub fn new(channels: &SeChannels, config: &SeConfig) -> Result<Self> {
        if channels.truth.prior.role() != Role::Prior
            || channels.truth.likelihood.role() != Role::Likelihood
        {
            return Err(Error::invalid("true channels have the wrong roles"));
        }
        Ok(Self {
            prior: Denoiser::new(
                channels.postulated.prior,
                config.ladder.clone(),
                config.quad,
            )?,
            likelihood: Denoiser::new(
                channels.postulated.likelihood,
                config.ladder.clone(),
                config.quad,
            )?,
        })
    }
}

/// Prior-side measure through the engine's denoiser.
pub(crate) fn prior_block(
    den: &Denoiser,
    channels: &SeChannels,
    c_in: &[f64],
    msg: MessageStats,
    quad: &QuadratureConfig,
) -> Result<BlockMoments> {
    let levels = ladder_to_levels(c_in, &den.ladder);
    let jumps = den.jump_points(&levels);
    measure_x(
        &channels.truth.prior,
        den.channel.is_symmetric(),
        c_in,
        msg,
        &jumps,
        quad,
        XiRule::Fixed,
        |mu| den.meanvar(None, mu, &levels),
    )
}

fn se_step(
    state: &SeState,
    spectrum: &Spectrum,
    channels: &SeChannels,
    config: &SeConfig,
    den: &Denoisers,
) -> Result<SeState> {
    let bounds = config.bounds();
    let mut s = state.clone();
    let mut clamps = ClampStats::default();

    // likelihood denoiser
    let msg_1z = MessageStats {
        d_hat: s.d_hat_1z,
        f_hat: floored(s.f_hat_1z, &mut s.degenerate),
    };
    let z = measure_z(
        &den.likelihood,
        &channels.truth.likelihood,
        s.c_z,
        &s.c_z_plus,
        msg_1z,
    )?;
    // The generic cavity and extrinsic formulas subtract quantities of
    // order 1/c_z^+², and the prior block amplifies that rounding into a
    // noise floor far above the convergence tolerance.
    let (c_z_minus, msg_2z) = awgn_extrinsic(
        &den.likelihood,
        &channels.truth.likelihood,
        s.c_z_plus.len(),
    )?;
    s.c_z_minus = c_z_minus
        .into_iter()
        .map(|c| c.clamp(bounds.min, bounds.max))
        .collect();
    (s.d_z_minus, s.f_z_minus, s.c_hat_z_minus) = (z.d, z.f, z.c_hat);

    // linear node toward x
    let msg_2x = MessageStats {
        d_hat: s.d_hat_2x,
        f_hat: s.f_hat_2x,
    };
    let lin = |m2x: MessageStats| LinearInputs {
        d_hat_x: m2x.d_hat,
        f_hat_x: m2x.f_hat,
        d_hat_z: msg_2z.d_hat,
        f_hat_z: msg_2z.f_hat,
    };
    let x = spectral(
        spectrum,
        Side::X,
        &s.c_x_plus,
        &s.c_z_minus,
        s.c_x,
        lin(msg_2x),
    );
    s.c_x_minus = cavity(&x.c_hat, &s.c_x_plus, bounds, &mut clamps);
    let raw_1x = spectral_extrinsic(spectrum, &s.c_x_plus, &s.c_z_minus, s.c_x, lin(msg_2x));
    (s.d_x_minus, s.f_x_minus, s.c_hat_x_minus) = (x.d, x.f, x.c_hat);

    // prior denoiser
    let msg_1x = MessageStats {
        d_hat: raw_1x.d_hat,
        f_hat: floored(raw_1x.f_hat, &mut s.degenerate),
    };
    let xp = prior_block(&den.prior, channels, &s.c_x_minus, msg_1x, &config.quad)?;
    s.c_x_plus = cavity(&xp.c_hat, &s.c_x_minus, bounds, &mut clamps);
    let msg_2x = extrinsic(&xp, s.c_x, msg_1x);
    (s.d_x_plus, s.f_x_plus, s.c_hat_x_plus) = (xp.d, xp.f, xp.c_hat);

    // linear node back toward z
    let zp = spectral(
        spectrum,
        Side::Z,
        &s.c_x_plus,
        &s.c_z_minus,
        s.c_x,
        lin(msg_2x),
    );
    s.c_z_plus = cavity(&zp.c_hat, &s.c_z_minus, bounds, &mut clamps);
    let msg_1z = extrinsic(&zp, s.c_z, msg_2z);
    (s.d_z_plus, s.f_z_plus, s.c_hat_z_plus) = (zp.d, zp.f, zp.c_hat);

    (s.d_hat_1x, s.f_hat_1x) = (msg_1x.d_hat, msg_1x.f_hat);
    (s.d_hat_2x, s.f_hat_2x) = (msg_2x.d_hat, msg_2x.f_hat);
    (s.d_hat_1z, s.f_hat_1z) = (msg_1z.d_hat, msg_1z.f_hat);
    (s.d_hat_2z, s.f_hat_2z) = (msg_2z.d_hat, msg_2z.f_hat);

    let all = s.tracked();
    if all.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric(format!(
            "state evolution produced a non-finite value at iteration {}",
            s.iteration + 1
        )));
    }
    s.change = all
        .iter()
        .zip(state.tracked())
        .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
        .fold(0.0, f64::max);
    s.clamps.merge(&clamps);
    s.iteration += 1;
    Ok(s)
}

/// One full sweep of the recursion.
pub fn se_iterate(
    state: &SeState,
    spectrum: &Spectrum,
    channels: &SeChannels,
    config: &SeConfig,
) -> Result<SeState> {
    let den = Denoisers::new(channels, config)?;
    se_step(state, spectrum, channels, config, &den)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeTrace {
    /// `MSE^t`, one entry per completed iteration.
    pub mse: Vec<f64>,
    pub state: SeState,
    /// Whether the stopping rule fired before the iteration budget ran out.
    pub converged: bool,
}

/// Runs up to `config.iterations` sweeps, stopping early once the state
/// stops moving.
pub fn se_run(spectrum: &Spectrum, channels: &SeChannels, config: &SeConfig) -> Result<SeTrace> {
    let den = Denoisers::new(channels, config)?;
    let mut s = se_init(spectrum, channels, config)?;
    let mut mse = Vec::with_capacity(config.iterations);
    let mut converged = false;
    for _ in 0..config.iterations {
        s = se_step(&s, spectrum, channels, config, &den)?;
        mse.push(s.mse());
        if s.iteration > 1 && s.change < config.stop_tol {
            converged = true;
            break;
        }
    }
    Ok(SeTrace {
        mse,
        state: s,
        converged,
    })
}

#[cfg(test)]
mod tests;
