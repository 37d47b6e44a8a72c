//! The KVASP message-passing engine.
//!
//! A sweep visits four factors in turn: the likelihood denoiser on `z`, the
//! linear node toward `x`, the prior denoiser on `x`, and the linear node back
//! toward `z`. Each message is a mean plus a per-coordinate variance ladder
//! `c_0 ≤ … ≤ c_K`; outgoing messages are formed by cavity subtraction of
//! natural parameters level by level.
//!
//! With `K = 0` the engine is VAMP; [`vamp`] holds an independent reference
//! implementation of that special case.

mod lmmse;
pub mod vamp;

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::channels::{ladder_to_levels, ChannelSpec, Denoiser, Role, RsbLadder};
use crate::ensembles::ProblemInstance;
use crate::error::{Error, Result};
use crate::quadrature::QuadratureConfig;

pub use lmmse::{lmmse_stage, LmmseOutput, SpectralLmmse};

/// Variance ladders stored level-major: `ladder[k][i]` is `c_k` of coordinate `i`.
pub type Ladders = Vec<Vec<f64>>;

// Stages of one sweep, in order; failures are tagged with them.
const STEP_Z_DENOISE: u32 = 1;
const STEP_X_LMMSE: u32 = 2;
const STEP_X_DENOISE: u32 = 3;
const STEP_Z_LMMSE: u32 = 4;

/// How denoiser and LMMSE variances are shared across coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMode {
    /// One ladder per coordinate; the linear node factorizes `K + 1`
    /// matrices per half-sweep.
    PerCoordinate,
    /// Ladders averaged over coordinates after every step, so the linear
    /// node runs in the eigenbasis of `HᵀH`.
    #[default]
    Averaged,
}

impl FromStr for VarianceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "per_coordinate" | "percoordinate" => Ok(Self::PerCoordinate),
            "averaged" => Ok(Self::Averaged),
            other => Err(Error::invalid(format!("unknown variance mode '{other}'"))),
        }
    }
}

impl fmt::Display for VarianceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::PerCoordinate => "per_coordinate",
            Self::Averaged => "averaged",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KvaspConfig {
    /// Number of sweeps `T`.
    pub iterations: usize,
    pub ladder: RsbLadder,
    /// Weight of the new message in the damped `(μ, 1/c)` update; 1 disables damping.
    pub damping: f64,
    pub clamp_min: f64,
    pub clamp_max: f64,
    /// Initial ladder `c_k = Var[x]·(1 + k·init_spread)`.
    pub init_spread: f64,
    pub variance_mode: VarianceMode,
    /// Early stop once the relative change of the estimate drops below this.
    pub stop_tol: f64,
    pub quad: QuadratureConfig,
}

impl KvaspConfig {
    pub fn new(ladder: RsbLadder) -> Self {
        Self {
            iterations: 30,
            ladder,
            damping: 1.0,
            clamp_min: 1e-11,
            clamp_max: 1e8,
            init_spread: 1.0,
            variance_mode: VarianceMode::default(),
            stop_tol: 1e-10,
            quad: QuadratureConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("at least one iteration is required"));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::invalid(format!(
                "damping must lie in (0, 1], got {}",
                self.damping
            )));
        }
        if !(self.clamp_min > 0.0 && self.clamp_min < self.clamp_max && self.clamp_max.is_finite())
        {
            return Err(Error::invalid(format!(
                "need 0 < clamp_min < clamp_max < ∞, got [{}, {}]",
                self.clamp_min, self.clamp_max
            )));
        }
        if !(self.init_spread >= 0.0 && self.init_spread.is_finite()) {
            return Err(Error::invalid("init_spread must be a nonnegative real"));
        }
        if !(self.stop_tol >= 0.0) {
            return Err(Error::invalid("stop_tol must be nonnegative"));
        }
        Ok(())
    }

    pub fn bounds(&self) -> ClampBounds {
        ClampBounds {
            min: self.clamp_min,
            max: self.clamp_max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClampBounds {
    pub min: f64,
    pub max: f64,
}

/// How often cavity variances had to be repaired.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClampStats {
    /// Precision difference ≤ 0; variance set to `clamp_max`.
    pub nonpositive: u64,
    /// Variance below `clamp_min` (including vanishing posterior variances).
    pub floor: u64,
    /// Variance above `clamp_max`.
    pub ceiling: u64,
    /// Ladder entries raised to keep `c_k` nondecreasing in `k`.
    pub reordered: u64,
}

impl ClampStats {
    pub fn total(&self) -> u64 {
        self.nonpositive + self.floor + self.ceiling + self.reordered
    }

    pub fn merge(&mut self, other: &ClampStats) {
        self.nonpositive += other.nonpositive;
        self.floor += other.floor;
        self.ceiling += other.ceiling;
        self.reordered += other.reordered;
    }
}

/// Postulated prior and likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Channels {
    pub prior: ChannelSpec,
    pub likelihood: ChannelSpec,
}

impl Channels {
    pub fn validate(&self) -> Result<()> {
        self.prior.validate()?;
        self.likelihood.validate()?;
        if self.prior.role() != Role::Prior || self.likelihood.role() != Role::Likelihood {
            return Err(Error::invalid("channels must be a prior and a likelihood"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KvaspState {
    pub mu_x_plus: DVector<f64>,
    pub mu_x_minus: DVector<f64>,
    pub mu_z_plus: DVector<f64>,
    pub mu_z_minus: DVector<f64>,
    pub c_x_plus: Ladders,
    pub c_x_minus: Ladders,
    pub c_z_plus: Ladders,
    pub c_z_minus: Ladders,
    /// Latest prior-denoiser output `μ̂_x^+`.
    pub x_hat: DVector<f64>,
    /// Level variances `v̂_{x,k}^+` of the latest prior-denoiser output.
    pub v_hat_x: Ladders,
    /// Completed sweeps.
    pub iteration: usize,
    pub clamps: ClampStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub x_hat: DVector<f64>,
    pub v_hat: Ladders,
    /// `‖x̂ − x0‖² / ‖x0‖²` after each sweep; empty without truth.
    pub mse_trace: Vec<f64>,
    /// Relative change of `x̂` after each sweep.
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub clamps: ClampStats,
}

/// Starting messages: zero means, `c_{x,k} = Var_q[x]·(1 + k·spread)` and
/// `c_{z,k} = (E[λ]/α)·c_{x,k}`.
pub fn init_state(
    instance: &ProblemInstance,
    config: &KvaspConfig,
    channels: &Channels,
) -> Result<KvaspState> {
    config.validate()?;
    channels.validate()?;
    let (m, n) = (instance.m(), instance.n());
    if instance.y.len() != m || instance.lambda_samples.is_empty() {
        return Err(Error::invalid("instance dimensions are inconsistent"));
    }
    let kk = config.ladder.k();
    let var = channels.prior.variance();
    let scale = instance.mean_lambda() / instance.alpha();
    let cx: Vec<f64> = (0..=kk)
        .map(|k| var * (1.0 + k as f64 * config.init_spread))
        .collect();
    let c_x: Ladders = cx.iter().map(|&c| vec![c; n]).collect();
    let c_z: Ladders = cx.iter().map(|&c| vec![scale * c; m]).collect();
    Ok(KvaspState {
        mu_x_plus: DVector::zeros(n),
        mu_x_minus: DVector::zeros(n),
        mu_z_plus: DVector::zeros(m),
        mu_z_minus: DVector::zeros(m),
        c_x_minus: c_x.clone(),
        c_z_minus: c_z.clone(),
        c_x_plus: c_x,
        c_z_plus: c_z,
        x_hat: DVector::zeros(n),
        v_hat_x: vec![vec![0.0; n]; kk + 1],
        iteration: 0,
        clamps: ClampStats::default(),
    })
}

/// Outgoing message from a posterior `(μ̂, ĉ)` and the incoming message
/// `(μ_in, c_in)`: `c_k = (1/ĉ_k − 1/c_in,k)⁻¹`, `μ = c_K (μ̂/ĉ_K − μ_in/c_in,K)`.
///
/// A posterior variance is floored at `(1/clamp_min + 1/c_in)⁻¹`, the value
/// whose cavity variance is exactly `clamp_min`, so an incoming variance that
/// already sits at the floor passes through intact. Nonpositive precision
/// differences give `clamp_max`; the result is clamped into the bounds and
/// made nondecreasing in `k`. Every repair is counted in `stats`.
pub fn cavity_combine(
    c_post: &[f64],
    c_in: &[f64],
    mu_post: f64,
    mu_in: f64,
    bounds: ClampBounds,
    stats: &mut ClampStats,
) -> (Vec<f64>, f64) {
    let kk = c_post.len() - 1;
    let post: Vec<f64> = c_post
        .iter()
        .zip(c_in)
        .map(|(&c, &cin)| {
            let lo = (bounds.min.recip() + cin.recip()).recip();
            if c < lo {
                stats.floor += 1;
                lo
            } else {
                c
            }
        })
        .collect();
    let mut out: Vec<f64> = post
        .iter()
        .zip(c_in)
        .map(|(&p, &c)| {
            let prec = p.recip() - c.recip();
            if !(prec > 0.0) {
                stats.nonpositive += 1;
                return bounds.max;
            }
            let v = prec.recip();
            if v < bounds.min {
                stats.floor += 1;
                bounds.min
            } else if v > bounds.max {
                stats.ceiling += 1;
                bounds.max
            } else {
                v
            }
        })
        .collect();
    for k in 1..out.len() {
        if out[k] < out[k - 1] {
            stats.reordered += 1;
            out[k] = out[k - 1];
        }
    }
    let mu = out[kk] * (mu_post / post[kk] - mu_in / c_in[kk]);
    (out, mu)
}

fn column(l: &Ladders, i: usize) -> Vec<f64> {
    l.iter().map(|row| row[i]).collect()
}

fn average_levels(l: &mut Ladders) {
    for row in l.iter_mut() {
        let mean = row.iter().sum::<f64>() / row.len() as f64;
        row.iter_mut().for_each(|v| *v = mean);
    }
}

fn check_finite(v: &DVector<f64>, step: u32, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Sweep {
            step,
            detail: format!("non-finite {what}"),
        })
    }
}

/// Denoise every coordinate and form the outgoing cavity messages.
#[allow(clippy::too_many_arguments)]
fn denoise_and_subtract(
    den: &Denoiser,
    obs: Option<&DVector<f64>>,
    mu_in: &DVector<f64>,
    c_in: &Ladders,
    averaged: bool,
    bounds: ClampBounds,
    stats: &mut ClampStats,
    step: u32,
) -> Result<(DVector<f64>, Ladders, DVector<f64>, Ladders)> {
    let len = mu_in.len();
    let depth = c_in.len();
    let mut mean = DVector::zeros(len);
    let mut c_hat: Ladders = vec![vec![0.0; len]; depth];
    for i in 0..len {
        let levels = ladder_to_levels(&column(c_in, i), &den.ladder);
        let pm = den
            .meanvar(obs.map(|y| y[i]), mu_in[i], &levels)
            .map_err(|e| e.at_step(step))?;
        if !pm.mean.is_finite() || pm.c_hat.iter().any(|c| !c.is_finite()) {
            return Err(Error::Sweep {
                step,
                detail: format!("non-finite denoiser output at coordinate {i}"),
            });
        }
        mean[i] = pm.mean;
        for k in 0..depth {
            c_hat[k][i] = pm.c_hat[k];
        }
    }
    if averaged {
        average_levels(&mut c_hat);
    }
    let (mu_out, c_out) = subtract(&c_hat, &mean, c_in, mu_in, bounds, stats);
    Ok((mean, c_hat, mu_out, c_out))
}

fn subtract(
    c_hat: &Ladders,
    mu_hat: &DVector<f64>,
    c_in: &Ladders,
    mu_in: &DVector<f64>,
    bounds: ClampBounds,
    stats: &mut ClampStats,
) -> (DVector<f64>, Ladders) {
    let len = mu_in.len();
    let mut mu_out = DVector::zeros(len);
    let mut c_out: Ladders = vec![vec![0.0; len]; c_in.len()];
    for i in 0..len {
        let (c, mu) = cavity_combine(
            &column(c_hat, i),
            &column(c_in, i),
            mu_hat[i],
            mu_in[i],
            bounds,
            stats,
        );
        mu_out[i] = mu;
        for (k, v) in c.into_iter().enumerate() {
            c_out[k][i] = v;
        }
    }
    (mu_out, c_out)
}

/// Convex combination of `(μ, 1/c)` pairs with weight `d` on the new message.
fn damp(
    d: f64,
    mu_new: &mut DVector<f64>,
    c_new: &mut Ladders,
    mu_old: &DVector<f64>,
    c_old: &Ladders,
) {
    if d >= 1.0 {
        return;
    }
    mu_new.axpy(1.0 - d, mu_old, d);
    for (row_new, row_old) in c_new.iter_mut().zip(c_old) {
        for (c, &o) in row_new.iter_mut().zip(row_old) {
            *c = (d / *c + (1.0 - d) / o).recip();
        }
    }
}

/// A configured engine bound to one problem instance.
pub struct Kvasp<'a> {
    instance: &'a ProblemInstance,
    config: &'a KvaspConfig,
    channels: Channels,
    prior: Denoiser,
    likelihood: Denoiser,
    spectral: Option<SpectralLmmse>,
}

impl<'a> Kvasp<'a> {
    pub fn new(
        instance: &'a ProblemInstance,
        channels: &Channels,
        config: &'a KvaspConfig,
    ) -> Result<Self> {
        config.validate()?;
        channels.validate()?;
        let prior = Denoiser::new(channels.prior, config.ladder.clone(), config.quad)?;
        let likelihood = Denoiser::new(channels.likelihood, config.ladder.clone(), config.quad)?;
        let spectral = (config.variance_mode == VarianceMode::Averaged)
            .then(|| SpectralLmmse::new(&instance.h));
        Ok(Self {
            instance,
            config,
            channels: *channels,
            prior,
            likelihood,
            spectral,
        })
    }

    pub fn init_state(&self) -> Result<KvaspState> {
        init_state(self.instance, self.config, &self.channels)
    }

    fn linear(
        &self,
        c_x: &Ladders,
        c_z: &Ladders,
        mu_x: &DVector<f64>,
        mu_z: &DVector<f64>,
        project_z: bool,
    ) -> Result<LmmseOutput> {
        let h = &self.instance.h;
        match &self.spectral {
            None => lmmse_stage(h, c_x, c_z, mu_x, mu_z, project_z),
            Some(sp) => {
                let mut out =
                    sp.solve(h, &column(c_x, 0), &column(c_z, 0), mu_x, mu_z, project_z)?;
                average_levels(&mut out.c_hat_x);
                if let Some(cz) = out.c_hat_z.as_mut() {
                    average_levels(cz);
                }
                Ok(out)
            }
        }
    }

    /// Likelihood denoiser and the linear node toward `x`: produces the
    /// messages `(μ_x^-, c_x^-)` entering the prior denoiser.
    pub fn half_sweep_z(&self, s: &mut KvaspState) -> Result<()> {
        let bounds = self.config.bounds();
        let averaged = self.spectral.is_some();
        let (_, _, mu_z_minus, c_z_minus) = denoise_and_subtract(
            &self.likelihood,
            Some(&self.instance.y),
            &s.mu_z_plus,
            &s.c_z_plus,
            averaged,
            bounds,
            &mut s.clamps,
            STEP_Z_DENOISE,
        )?;
        check_finite(&mu_z_minus, STEP_Z_DENOISE, "likelihood cavity mean")?;
        let lin = self
            .linear(&s.c_x_plus, &c_z_minus, &s.mu_x_plus, &mu_z_minus, false)
            .map_err(|e| e.at_step(STEP_X_LMMSE))?;
        check_finite(&lin.mu_hat_x, STEP_X_LMMSE, "LMMSE mean")?;
        let (mu_x_minus, c_x_minus) = subtract(
            &lin.c_hat_x,
            &lin.mu_hat_x,
            &s.c_x_plus,
            &s.mu_x_plus,
            bounds,
            &mut s.clamps,
        );
        s.mu_z_minus = mu_z_minus;
        s.c_z_minus = c_z_minus;
        s.mu_x_minus = mu_x_minus;
        s.c_x_minus = c_x_minus;
        Ok(())
    }

    /// Prior denoiser and the linear node back toward `z`: produces the
    /// estimate and the messages `(μ_x^+, c_x^+)`, `(μ_z^+, c_z^+)` of the next sweep.
    pub fn half_sweep_x(&self, s: &mut KvaspState) -> Result<()> {
        let bounds = self.config.bounds();
        let averaged = self.spectral.is_some();
        let (x_hat, c_hat, mut mu_x_plus, mut c_x_plus) = denoise_and_subtract(
            &self.prior,
            None,
            &s.mu_x_minus,
            &s.c_x_minus,
            averaged,
            bounds,
            &mut s.clamps,
            STEP_X_DENOISE,
        )?;
        damp(
            self.config.damping,
            &mut mu_x_plus,
            &mut c_x_plus,
            &s.mu_x_plus,
            &s.c_x_plus,
        );
        check_finite(&mu_x_plus, STEP_X_DENOISE, "prior cavity mean")?;
        let lin = self
            .linear(&c_x_plus, &s.c_z_minus, &mu_x_plus, &s.mu_z_minus, true)
            .map_err(|e| e.at_step(STEP_Z_LMMSE))?;
        let (c_hat_z, mu_hat_z) = (
            lin.c_hat_z.expect("projection requested"),
            lin.mu_hat_z.expect("projection requested"),
        );
        check_finite(&mu_hat_z, STEP_Z_LMMSE, "projected LMMSE mean")?;
        let (mut mu_z_plus, mut c_z_plus) = subtract(
            &c_hat_z,
            &mu_hat_z,
            &s.c_z_minus,
            &s.mu_z_minus,
            bounds,
            &mut s.clamps,
        );
        damp(
            self.config.damping,
            &mut mu_z_plus,
            &mut c_z_plus,
            &s.mu_z_plus,
            &s.c_z_plus,
        );
        let ladder = &self.config.ladder;
        let n = x_hat.len();
        let mut v_hat_x: Ladders = vec![vec![0.0; n]; c_hat.len()];
        for i in 0..n {
            for (k, v) in ladder_to_levels(&column(&c_hat, i), ladder)
                .into_iter()
                .enumerate()
            {
                v_hat_x[k][i] = v;
            }
        }
        s.x_hat = x_hat;
        s.v_hat_x = v_hat_x;
        s.mu_x_plus = mu_x_plus;
        s.c_x_plus = c_x_plus;
        s.mu_z_plus = mu_z_plus;
        s.c_z_plus = c_z_plus;
        Ok(())
    }

    pub fn iterate(&self, s: &mut KvaspState) -> Result<()> {
        self.half_sweep_z(s)?;
        self.half_sweep_x(s)?;
        s.iteration += 1;
        Ok(())
    }

    pub fn run(&self, truth: Option<&DVector<f64>>) -> Result<EstimateReport> {
        let mut s = self.init_state()?;
        let mut mse_trace = Vec::new();
        let mut residuals = Vec::new();
        for t in 0..self.config.iterations {
            let prev = s.x_hat.clone();
            self.iterate(&mut s)?;
            let norm = s.x_hat.norm();
            let change = (&s.x_hat - &prev).norm();
            let r = if norm > 0.0 { change / norm } else { change };
            residuals.push(r);
            if let Some(x0) = truth {
                mse_trace.push(normalized_mse(&s.x_hat, x0)?);
            }
            if t > 0 && r < self.config.stop_tol {
                break;
            }
        }
        Ok(EstimateReport {
            x_hat: s.x_hat,
            v_hat: s.v_hat_x,
            mse_trace,
            residuals,
            iterations: s.iteration,
            clamps: s.clamps,
        })
    }
}

/// `‖x̂ − x0‖² / ‖x0‖²`.
pub fn normalized_mse(x_hat: &DVector<f64>, x0: &DVector<f64>) -> Result<f64> {
    if x_hat.len() != x0.len() {
        return Err(Error::invalid("estimate and truth differ in length"));
    }
    let den = x0.norm_squared();
    if !(den > 0.0) {
        return Err(Error::invalid("truth vector is zero"));
    }
    Ok((x_hat - x0).norm_squared() / den)
}

/// One sweep on an owned state.
pub fn iterate(
    state: &KvaspState,
    instance: &ProblemInstance,
    channels: &Channels,
    config: &KvaspConfig,
) -> Result<KvaspState> {
    let engine = Kvasp::new(instance, channels, config)?;
    let mut s = state.clone();
    engine.iterate(&mut s)?;
    Ok(s)
}

pub fn run(
    instance: &ProblemInstance,
    channels: &Channels,
    config: &KvaspConfig,
    truth: Option<&DVector<f64>>,
) -> Result<EstimateReport> {
    Kvasp::new(instance, channels, config)?.run(truth)
}
