//! A plain single-level VAMP, written without the survey machinery, used as
//! the reference the `K = 0` engine must reproduce.

use nalgebra::{DMatrix, DVector};

use crate::channels::{ChannelSpec, Regime};
use crate::ensembles::ProblemInstance;
use crate::error::{Error, Result};

/// Messages after one VAMP iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct VampIterate {
    pub x_hat: DVector<f64>,
    pub mu_x_minus: DVector<f64>,
    pub c_x_minus: DVector<f64>,
    pub mu_x_plus: DVector<f64>,
    pub c_x_plus: DVector<f64>,
    pub mu_z_minus: DVector<f64>,
    pub c_z_minus: DVector<f64>,
    pub mu_z_plus: DVector<f64>,
    pub c_z_plus: DVector<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct VampSettings {
    pub iterations: usize,
    pub clamp_min: f64,
    pub clamp_max: f64,
}

/// Scalar posterior mean and variance of `prior(x)·N(x; r, g)`.
fn prior_denoise(prior: &ChannelSpec, regime: Regime, r: f64, g: f64) -> Result<(f64, f64)> {
    match (*prior, regime) {
        (ChannelSpec::GaussianPrior { mean, var }, _) => {
            let v = 1.0 / (1.0 / var + 1.0 / g);
            Ok((v * (mean / var + r / g), v))
        }
        (ChannelSpec::BpskPrior { amplitude: a }, Regime::Mmse) => {
            let u = a * r / g;
            Ok((a * u.tanh(), (a / u.cosh()).powi(2)))
        }
        (ChannelSpec::BpskPrior { amplitude: a }, Regime::Map) => {
            Ok((if r >= 0.0 { a } else { -a }, 0.0))
        }
        (ChannelSpec::RelaxedBpskPrior { relax }, Regime::Map) => {
            // argmin (x − r)²/(2g) + (|x| − 1)²/(2 relax)
            let s = if r >= 0.0 { 1.0 } else { -1.0 };
            let x = s * (relax * r.abs() + g) / (relax + g);
            Ok((x, g * relax / (relax + g)))
        }
        (other, _) => Err(Error::Unsupported(format!(
            "reference VAMP has no denoiser for {other:?} in {regime} regime"
        ))),
    }
}

fn extrinsic(post_m: f64, post_v: f64, in_m: f64, in_v: f64, s: &VampSettings) -> (f64, f64) {
    // the smallest posterior whose extrinsic variance is still clamp_min
    let pv = post_v.max(1.0 / (1.0 / s.clamp_min + 1.0 / in_v));
    let prec = 1.0 / pv - 1.0 / in_v;
    let v = if prec <= 0.0 {
        s.clamp_max
    } else {
        (1.0 / prec).clamp(s.clamp_min, s.clamp_max)
    };
    (v * (post_m / pv - in_m / in_v), v)
}

/// Posterior `N(x; (Diag(1/cx) + Hᵀ Diag(1/cz) H)⁻¹ (...), ...)` by dense inversion.
fn gaussian_node(
    h: &DMatrix<f64>,
    cx: &DVector<f64>,
    cz: &DVector<f64>,
    mx: &DVector<f64>,
    mz: &DVector<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let (m, n) = h.shape();
    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        a[(i, i)] = 1.0 / cx[i];
    }
    for r in 0..m {
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] += h[(r, i)] * h[(r, j)] / cz[r];
            }
        }
    }
    let cov = a
        .try_inverse()
        .ok_or_else(|| Error::Singular("reference VAMP system".into()))?;
    let mut b = DVector::zeros(n);
    for i in 0..n {
        b[i] = mx[i] / cx[i];
        for r in 0..m {
            b[i] += h[(r, i)] * mz[r] / cz[r];
        }
    }
    let mean = &cov * b;
    Ok((cov, mean))
}

/// Runs VAMP with per-coordinate variances on `y = Hx + w`, `w ~ N(0, noise_var)`,
/// in the same factor schedule and initialization as the survey engine.
pub fn reference_vamp(
    instance: &ProblemInstance,
    prior: &ChannelSpec,
    regime: Regime,
    noise_var: f64,
    settings: VampSettings,
) -> Result<Vec<VampIterate>> {
    let h = &instance.h;
    let (m, n) = h.shape();
    let alpha = m as f64 / n as f64;
    let mean_lambda =
        instance.lambda_samples.iter().sum::<f64>() / instance.lambda_samples.len() as f64;
    let mut mu_x_plus = DVector::zeros(n);
    let mut c_x_plus = DVector::from_element(n, prior.variance());
    let mut mu_z_plus = DVector::zeros(m);
    let mut c_z_plus = DVector::from_element(m, prior.variance() * mean_lambda / alpha);
    let mut out = Vec::with_capacity(settings.iterations);
    for _ in 0..settings.iterations {
        // likelihood: N(y; z, noise_var)·N(z; μ, c)
        let mut mu_z_minus = DVector::zeros(m);
        let mut c_z_minus = DVector::zeros(m);
        for j in 0..m {
            let v = 1.0 / (1.0 / c_z_plus[j] + 1.0 / noise_var);
            let mean = v * (mu_z_plus[j] / c_z_plus[j] + instance.y[j] / noise_var);
            let (a, b) = extrinsic(mean, v, mu_z_plus[j], c_z_plus[j], &settings);
            mu_z_minus[j] = a;
            c_z_minus[j] = b;
        }
        let (cov, mean) = gaussian_node(h, &c_x_plus, &c_z_minus, &mu_x_plus, &mu_z_minus)?;
        let mut mu_x_minus = DVector::zeros(n);
        let mut c_x_minus = DVector::zeros(n);
        for i in 0..n {
            let (a, b) = extrinsic(mean[i], cov[(i, i)], mu_x_plus[i], c_x_plus[i], &settings);
            mu_x_minus[i] = a;
            c_x_minus[i] = b;
        }
        let mut x_hat = DVector::zeros(n);
        for i in 0..n {
            let (pm, pv) = prior_denoise(prior, regime, mu_x_minus[i], c_x_minus[i])?;
            x_hat[i] = pm;
            let (a, b) = extrinsic(pm, pv, mu_x_minus[i], c_x_minus[i], &settings);
            mu_x_plus[i] = a;
            c_x_plus[i] = b;
        }
        let (cov, mean) = gaussian_node(h, &c_x_plus, &c_z_minus, &mu_x_plus, &mu_z_minus)?;
        let hc = h * &cov;
        let zm = h * &mean;
        for j in 0..m {
            let zv: f64 = (0..n).map(|i| hc[(j, i)] * h[(j, i)]).sum();
            let (a, b) = extrinsic(zm[j], zv, mu_z_minus[j], c_z_minus[j], &settings);
            mu_z_plus[j] = a;
            c_z_plus[j] = b;
        }
        out.push(VampIterate {
            x_hat,
            mu_x_minus,
            c_x_minus,
            mu_x_plus: mu_x_plus.clone(),
            c_x_plus: c_x_plus.clone(),
            mu_z_minus,
            c_z_minus,
            mu_z_plus: mu_z_plus.clone(),
            c_z_plus: c_z_plus.clone(),
        });
    }
    Ok(out)
}
