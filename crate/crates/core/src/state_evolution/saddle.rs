//! Saddle-point residuals of a converged state.
//!
//! A fixed point of the recursion is rewritten in the replica unknowns
//! (`χ`, `H_k`, `D`, `F` and their hatted conjugates) and every saddle-point
//! equation is evaluated as `LHS − RHS`. The measure equations are evaluated
//! with the fully nested quadrature denoisers rather than the closed forms
//! used by the recursion, so a small residual is an independent certificate.

use serde::{Deserialize, Serialize};

use crate::channels::{
    ladder_to_levels, meanvar_quadrature, ChannelSpec, Denoiser, PosteriorMoments, RsbLadder,
};
use crate::error::{Error, Result};

use super::measure::{
    measure_x, measure_z_tensor, spectral, BlockMoments, LinearInputs, MessageStats, Side, XiRule,
};
use super::{SeChannels, SeConfig, SeState, Spectrum};

/// Iterate-to-iterate change below which a state counts as a fixed point.
pub const CONVERGED: f64 = 1e-10;

/// Per-axis Gauss–Hermite order of the likelihood-side tensor rule; the
/// AWGN integrand is quadratic, so this is exact.
const TENSOR_ORDER: usize = 8;

/// The replica unknowns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddleParams {
    pub c_x: f64,
    pub c_z: f64,
    pub c_hat_1x: f64,
    pub c_hat_2x: f64,
    pub c_hat_1z: f64,
    pub c_hat_2z: f64,
    pub d_x: f64,
    pub f_x: f64,
    pub chi_x: f64,
    pub h_x: Vec<f64>,
    pub d_z: f64,
    pub f_z: f64,
    pub chi_z: f64,
    pub h_z: Vec<f64>,
    pub d_hat_1x: f64,
    pub f_hat_1x: f64,
    pub chi_hat_1x: f64,
    pub h_hat_1x: Vec<f64>,
    pub d_hat_2x: f64,
    pub f_hat_2x: f64,
    pub chi_hat_2x: f64,
    pub h_hat_2x: Vec<f64>,
    pub d_hat_1z: f64,
    pub f_hat_1z: f64,
    pub chi_hat_1z: f64,
    pub h_hat_1z: Vec<f64>,
    pub d_hat_2z: f64,
    pub f_hat_2z: f64,
    pub chi_hat_2z: f64,
    pub h_hat_2z: Vec<f64>,
}

/// `χ̂ = 1/c_0`, `Ĥ_k = −(1/L_k)(1/c_k − 1/c_{k−1})`.
fn precision_steps(c: &[f64], ladder: &RsbLadder) -> (f64, Vec<f64>) {
    let h = (1..c.len())
        .map(|k| -(1.0 / c[k] - 1.0 / c[k - 1]) / ladder.size(k))
        .collect();
    (1.0 / c[0], h)
}

/// Inverse of [`precision_steps`]: `1/c_k = χ̂ − Σ_{i≤k} L_i Ĥ_i`.
fn ladder_from_precision(chi_hat: f64, h_hat: &[f64], ladder: &RsbLadder) -> Vec<f64> {
    let mut p = chi_hat;
    let mut c = vec![1.0 / p];
    for (k, h) in h_hat.iter().enumerate() {
        p -= ladder.size(k + 1) * h;
        c.push(1.0 / p);
    }
    c
}

/// `χ = ĉ_0`, `H_k = (ĉ_k − ĉ_{k−1})/L_k`.
fn variance_steps(c_hat: &[f64], ladder: &RsbLadder) -> (f64, Vec<f64>) {
    let v = ladder_to_levels(c_hat, ladder);
    (v[0], v[1..].to_vec())
}

/// `ĉ_k = χ + Σ_{i≤k} L_i H_i`.
fn cumulative(chi: f64, h: &[f64], ladder: &RsbLadder) -> Vec<f64> {
    let mut c = vec![chi];
    for (k, v) in h.iter().enumerate() {
        c.push(c[k] + ladder.size(k + 1) * v);
    }
    c
}

impl SaddleParams {
    /// The fixed-point dictionary: conjugates from the message ladders
    /// (`1x ← c_x^-`, `2x ← c_x^+`, `1z ← c_z^+`, `2z ← c_z^-`), overlaps
    /// and susceptibilities from the denoiser side of each variable.
    pub fn from_state(s: &SeState, ladder: &RsbLadder) -> Self {
        let (chi_hat_1x, h_hat_1x) = precision_steps(&s.c_x_minus, ladder);
        let (chi_hat_2x, h_hat_2x) = precision_steps(&s.c_x_plus, ladder);
        let (chi_hat_1z, h_hat_1z) = precision_steps(&s.c_z_plus, ladder);
        let (chi_hat_2z, h_hat_2z) = precision_steps(&s.c_z_minus, ladder);
        let (chi_x, h_x) = variance_steps(&s.c_hat_x_plus, ladder);
        let (chi_z, h_z) = variance_steps(&s.c_hat_z_minus, ladder);
        Self {
            c_x: s.c_x,
            c_z: s.c_z,
            c_hat_1x: 0.0,
            c_hat_2x: 1.0 / s.c_x,
            c_hat_1z: 1.0 / s.c_z,
            c_hat_2z: 0.0,
            d_x: s.d_x_plus,
            f_x: s.f_x_plus,
            chi_x,
            h_x,
            d_z: s.d_z_minus,
            f_z: s.f_z_minus,
            chi_z,
            h_z,
            d_hat_1x: s.d_hat_1x,
            f_hat_1x: s.f_hat_1x,
            chi_hat_1x,
            h_hat_1x,
            d_hat_2x: s.d_hat_2x,
            f_hat_2x: s.f_hat_2x,
            chi_hat_2x,
            h_hat_2x,
            d_hat_1z: s.d_hat_1z,
            f_hat_1z: s.f_hat_1z,
            chi_hat_1z,
            h_hat_1z,
            d_hat_2z: s.d_hat_2z,
            f_hat_2z: s.f_hat_2z,
            chi_hat_2z,
            h_hat_2z,
        }
    }
}

/// One evaluated equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    /// Equation group, numbered in evaluation order; `0` for the merge identities.
    pub group: u32,
    pub label: String,
    /// `LHS − RHS`.
    pub value: f64,
    /// `value / max(1, |LHS|, |RHS|)`.
    pub scaled: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddleReport {
    pub params: SaddleParams,
    pub residuals: Vec<Residual>,
}

impl SaddleReport {
    pub fn max_abs(&self) -> f64 {
        self.residuals
            .iter()
            .map(|r| r.value.abs())
            .fold(0.0, f64::max)
    }

    pub fn max_scaled(&self) -> f64 {
        self.residuals
            .iter()
            .map(|r| r.scaled.abs())
            .fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&Residual> {
        self.residuals
            .iter()
            .max_by(|a, b| a.scaled.abs().total_cmp(&b.scaled.abs()))
    }
}

struct Sink(Vec<Residual>);

impl Sink {
    fn push(&mut self, group: u32, label: impl Into<String>, lhs: f64, rhs: f64) {
        let value = lhs - rhs;
        let scale = lhs.abs().max(rhs.abs()).max(1.0);
        self.0.push(Residual {
            group,
            label: label.into(),
            value,
            scaled: value / scale,
        });
    }
}

struct Variable<'a> {
    name: &'a str,
    c0: f64,
    d: f64,
    f: f64,
    chi: f64,
    h: &'a [f64],
    one: (f64, f64, f64, &'a [f64]),
    two: (f64, f64, f64, &'a [f64]),
}

/// Conjugate equations: the two messages' hats add up to the posterior's.
fn conjugate_lines(out: &mut Sink, base: u32, s: &Variable, ladder: &RsbLadder) {
    let c_hat = cumulative(s.chi, s.h, ladder);
    let ck = c_hat[c_hat.len() - 1];
    let (d1, f1, chi1, h1) = s.one;
    let (d2, f2, chi2, h2) = s.two;
    let n = s.name;
    out.push(base, format!("D̂_1{n} + D̂_2{n}"), d1 + d2, s.d / (s.c0 * ck));
    out.push(
        base + 1,
        format!("F̂_1{n} + F̂_2{n}"),
        f1 + f2 + s.d * s.d / (s.c0 * ck * ck),
        s.f / (ck * ck),
    );
    out.push(
        base + 2,
        format!("χ̂_1{n} + χ̂_2{n}"),
        chi1 + chi2,
        1.0 / s.chi,
    );
    for k in 1..c_hat.len() {
        let group = if k == 1 { base + 3 } else { base + 4 };
        let rhs = -(1.0 / c_hat[k] - 1.0 / c_hat[k - 1]) / ladder.size(k);
        out.push(
            group,
            format!("Ĥ_1{n},{k} + Ĥ_2{n},{k}"),
            h1[k - 1] + h2[k - 1],
            rhs,
        );
    }
}

/// Overlap equations against a block evaluated from the hats.
fn block_lines(
    out: &mut Sink,
    base: u32,
    name: &str,
    d: f64,
    f: f64,
    chi: f64,
    h: &[f64],
    m: &BlockMoments,
    ladder: &RsbLadder,
) {
    let (chi_m, h_m) = variance_steps(&m.c_hat, ladder);
    out.push(base, format!("D_{name}"), d, m.d);
    out.push(base + 1, format!("F_{name}"), f, m.f);
    out.push(base + 2, format!("χ_{name}"), chi, chi_m);
    for k in 1..=h.len() {
        out.push(
            if k == 1 { base + 3 } else { base + 4 },
            format!("H_{name},{k}"),
            h[k - 1],
            h_m[k - 1],
        );
    }
}

/// Measure equations: the level-resolved bracket moments
/// `E⟨…⟨x⟩_j²…⟩ = F + Σ_{i>j} H_i` and, for the innermost level,
/// `E[⟨x²⟩_0 − ⟨x⟩_0²] = χ/β` (read as `χ = E[ŝ_0]`, the level-zero
/// susceptibility, which covers both regimes).
fn measure_lines(
    out: &mut Sink,
    base: u32,
    name: &str,
    d: f64,
    f: f64,
    chi: f64,
    h: &[f64],
    m: &BlockMoments,
    ladder: &RsbLadder,
) {
    let kk = h.len();
    let (chi_m, h_m) = variance_steps(&m.c_hat, ladder);
    out.push(base, format!("D_{name} (measure)"), d, m.d);
    out.push(base + 1, format!("F_{name} (measure)"), f, m.f);
    let all: f64 = h.iter().sum();
    let all_m: f64 = h_m.iter().sum();
    out.push(
        base + 2,
        format!("F_{name} + ΣH_{name} (measure)"),
        f + all,
        m.f + all_m,
    );
    out.push(base + 2, format!("χ_{name} (measure)"), chi, chi_m);
    // the bracket at level K − k carries the k outermost level variances
    for k in 1..=kk {
        let top: f64 = h[kk - k..].iter().sum();
        let top_m: f64 = h_m[kk - k..].iter().sum();
        out.push(
            base + 3,
            format!("F_{name} + Σ_(i>{}) H_{name},i (measure)", kk - k),
            f + top,
            m.f + top_m,
        );
    }
}

/// Evaluates every saddle-point equation at a converged state.
pub fn saddle_residual(
    state: &SeState,
    spectrum: &Spectrum,
    channels: &SeChannels,
    config: &SeConfig,
) -> Result<SaddleReport> {
    if !(state.change < CONVERGED) {
        return Err(Error::Precondition(format!(
            "saddle residuals need a converged state (change {:.3e} ≥ {CONVERGED:e})",
            state.change
        )));
    }
    let ladder = &config.ladder;
    let p = SaddleParams::from_state(state, ladder);
    let mut out = Sink(Vec::new());

    let prior = channels.truth.prior;
    let nodes = prior.prior_nodes(config.quad.order);
    let m2: f64 = nodes.iter().map(|(x, w)| w * x * x).sum();
    out.push(1, "C_x", p.c_x, m2);
    out.push(2, "Ĉ_1x", p.c_hat_1x, 0.0);
    out.push(3, "Ĉ_2x", p.c_hat_2x, 1.0 / p.c_x);
    out.push(4, "C_z", p.c_z, spectrum.mean() * p.c_x / spectrum.alpha);
    out.push(5, "Ĉ_1z", p.c_hat_1z, 1.0 / p.c_z);
    out.push(6, "Ĉ_2z", p.c_hat_2z, 0.0);

    let x = Variable {
        name: "x",
        c0: p.c_x,
        d: p.d_x,
        f: p.f_x,
        chi: p.chi_x,
        h: &p.h_x,
        one: (p.d_hat_1x, p.f_hat_1x, p.chi_hat_1x, &p.h_hat_1x),
        two: (p.d_hat_2x, p.f_hat_2x, p.chi_hat_2x, &p.h_hat_2x),
    };
    conjugate_lines(&mut out, 7, &x, ladder);
    let z = Variable {
        name: "z",
        c0: p.c_z,
        d: p.d_z,
        f: p.f_z,
        chi: p.chi_z,
        h: &p.h_z,
        one: (p.d_hat_1z, p.f_hat_1z, p.chi_hat_1z, &p.h_hat_1z),
        two: (p.d_hat_2z, p.f_hat_2z, p.chi_hat_2z, &p.h_hat_2z),
    };
    conjugate_lines(&mut out, 12, &z, ladder);

    // linear node, from the hats entering it
    let c_x_in = ladder_from_precision(p.chi_hat_2x, &p.h_hat_2x, ladder);
    let c_z_in = ladder_from_precision(p.chi_hat_2z, &p.h_hat_2z, ladder);
    let lin = LinearInputs {
        d_hat_x: p.d_hat_2x,
        f_hat_x: p.f_hat_2x,
        d_hat_z: p.d_hat_2z,
        f_hat_z: p.f_hat_2z,
    };
    let sx = spectral(spectrum, Side::X, &c_x_in, &c_z_in, p.c_x, lin);
    block_lines(
        &mut out, 17, "x", p.d_x, p.f_x, p.chi_x, &p.h_x, &sx, ladder,
    );
    let sz = spectral(spectrum, Side::Z, &c_x_in, &c_z_in, p.c_x, lin);
    block_lines(
        &mut out, 22, "z", p.d_z, p.f_z, p.chi_z, &p.h_z, &sz, ladder,
    );

    // denoiser measures, from the hats entering them, via nested quadrature
    let c_x_den = ladder_from_precision(p.chi_hat_1x, &p.h_hat_1x, ladder);
    let postulated = channels.postulated;
    let den_x = Denoiser::new(postulated.prior, ladder.clone(), config.quad)?;
    let lx = ladder_to_levels(&c_x_den, ladder);
    let jumps = den_x.jump_points(&lx);
    let mx = measure_x(
        &prior,
        postulated.prior.is_symmetric(),
        &c_x_den,
        MessageStats {
            d_hat: p.d_hat_1x,
            f_hat: p.f_hat_1x,
        },
        &jumps,
        &config.quad,
        XiRule::Adaptive,
        |mu| nested_or_engine(&den_x, None, mu, &lx),
    )?;
    measure_lines(
        &mut out, 27, "x", p.d_x, p.f_x, p.chi_x, &p.h_x, &mx, ladder,
    );

    let c_z_den = ladder_from_precision(p.chi_hat_1z, &p.h_hat_1z, ladder);
    let den_z = Denoiser::new(postulated.likelihood, ladder.clone(), config.quad)?;
    let lz = ladder_to_levels(&c_z_den, ladder);
    let v_true = match channels.truth.likelihood {
        ChannelSpec::AwgnLikelihood { var } => var,
        other => return Err(Error::Unsupported(format!("true likelihood {other:?}"))),
    };
    let mz = measure_z_tensor(
        p.c_z,
        v_true,
        &c_z_den,
        MessageStats {
            d_hat: p.d_hat_1z,
            f_hat: p.f_hat_1z,
        },
        TENSOR_ORDER,
        |y, mu| nested_or_engine(&den_z, Some(y), mu, &lz),
    )?;
    measure_lines(
        &mut out, 31, "z", p.d_z, p.f_z, p.chi_z, &p.h_z, &mz, ladder,
    );

    // both sides of each variable agree at a fixed point
    out.push(0, "D_z^- = D_z^+", state.d_z_minus, state.d_z_plus);
    out.push(0, "F_z^- = F_z^+", state.f_z_minus, state.f_z_plus);
    out.push(0, "D_x^+ = D_x^-", state.d_x_plus, state.d_x_minus);
    out.push(0, "F_x^+ = F_x^-", state.f_x_plus, state.f_x_minus);
    for k in 0..state.c_hat_z_minus.len() {
        out.push(
            0,
            format!("ĉ_z,{k}^- = ĉ_z,{k}^+"),
            state.c_hat_z_minus[k],
            state.c_hat_z_plus[k],
        );
        out.push(
            0,
            format!("ĉ_x,{k}^+ = ĉ_x,{k}^-"),
            state.c_hat_x_plus[k],
            state.c_hat_x_minus[k],
        );
    }
    Ok(SaddleReport {
        params: p,
        residuals: out.0,
    })
}

/// The fully nested quadrature route when every smoothing level is open,
/// the engine's denoiser when a level has collapsed.
fn nested_or_engine(
    den: &Denoiser,
    y: Option<f64>,
    mu: f64,
    levels: &[f64],
) -> Result<PosteriorMoments> {
    if levels[1..].iter().all(|v| *v > 0.0) {
        meanvar_quadrature(&den.channel, y, mu, levels, &den.ladder, &den.quad)
    } else {
        den.meanvar(y, mu, levels)
    }
}
