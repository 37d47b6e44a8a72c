//! Hierarchical survey denoisers.
//!
//! A denoiser takes a Gaussian message `(μ, c_0 ≤ … ≤ c_K)` and returns the
//! posterior mean together with the posterior variance ladder
//! `ĉ_0 ≤ … ≤ ĉ_K`. Level variances and cumulative variances are related by
//! `v_0 = c_0`, `v_k = (c_k − c_{k−1}) / L_k`.
//!
//! Three routes are available:
//! - closed forms (AWGN / Gaussian at every depth, BPSK at depth one);
//! - the nested-bracket route ([`meanvar_quadrature`]), which integrates the
//!   Gaussian smoothing levels adaptively and reads the ladder off second
//!   moments of the bracket averages;
//! - the derivative route ([`gamma_route_check`]), finite differences of the
//!   log-partition, kept as an independent check.

mod closed;
mod gamma;
mod kernels;
mod nested;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{gauss_hermite, gauss_legendre, QuadratureConfig};
use crate::special::{mills, norm_cdf};

pub use closed::{meanvar_awgn, meanvar_bpsk_k1, meanvar_gaussian_prior};
pub use gamma::{gamma_route_check, log_partition};
pub use nested::meanvar_quadrature;

/// Which thermodynamic limit the denoisers implement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    /// `β = 1`: posterior averages at the innermost level.
    Mmse,
    /// `β → ∞`: the innermost level is a maximization.
    Map,
}

impl std::str::FromStr for Regime {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mmse" => Ok(Regime::Mmse),
            "map" => Ok(Regime::Map),
            other => Err(Error::Config(format!(
                "unknown regime '{other}' (expected mmse or map)"
            ))),
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::Mmse => "mmse",
            Regime::Map => "map",
        })
    }
}

/// Replica-breaking structure: `K` levels with sizes `L_1 < … < L_K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RsbLadder {
    sizes: Vec<f64>,
    regime: Regime,
}

impl RsbLadder {
    pub fn new(sizes: Vec<f64>, regime: Regime) -> Result<Self> {
        let mut prev = 1.0;
        for (i, &l) in sizes.iter().enumerate() {
            if !(l > 0.0) || !l.is_finite() {
                return Err(Error::invalid(format!(
                    "ladder size L_{} = {l} must be positive",
                    i + 1
                )));
            }
            if i == 0 {
                if regime == Regime::Mmse && (l < 1.0 || (l - l.round()).abs() > 1e-9) {
                    return Err(Error::invalid(format!(
                        "MMSE ladder needs an integer L_1 ≥ 1, got {l}"
                    )));
                }
            } else {
                let r = l / prev;
                if !(l > prev) || (r - r.round()).abs() > 1e-9 {
                    return Err(Error::invalid(format!(
                        "L_{} / L_{} = {r} must be an integer greater than one",
                        i + 1,
                        i
                    )));
                }
            }
            prev = l;
        }
        Ok(Self { sizes, regime })
    }

    /// The replica-symmetric (VAMP) ladder.
    pub fn replica_symmetric(regime: Regime) -> Self {
        Self {
            sizes: Vec::new(),
            regime,
        }
    }

    pub fn k(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[f64] {
        &self.sizes
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    /// `L_k` for `k ≥ 1`, and `1` for `k = 0`.
    pub fn size(&self, k: usize) -> f64 {
        if k == 0 {
            1.0
        } else {
            self.sizes[k - 1]
        }
    }

    /// Tilt exponent of level `k ≥ 1`: `L_1` at the first level, `L_k / L_{k−1}` above.
    pub fn ratio(&self, k: usize) -> f64 {
        if k == 1 {
            self.sizes[0]
        } else {
            (self.sizes[k - 1] / self.sizes[k - 2]).round()
        }
    }
}

/// `v_0 = c_0`, `v_k = (c_k − c_{k−1}) / L_k`.
pub fn ladder_to_levels(c: &[f64], ladder: &RsbLadder) -> Vec<f64> {
    debug_assert_eq!(c.len(), ladder.k() + 1);
    (0..c.len())
        .map(|k| {
            if k == 0 {
                c[0]
            } else {
                (c[k] - c[k - 1]) / ladder.size(k)
            }
        })
        .collect()
}

/// Inverse of [`ladder_to_levels`].
pub fn levels_to_ladder(v: &[f64], ladder: &RsbLadder) -> Vec<f64> {
    let mut c = Vec::with_capacity(v.len());
    for (k, &x) in v.iter().enumerate() {
        c.push(if k == 0 {
            x
        } else {
            c[k - 1] + ladder.size(k) * x
        });
    }
    c
}

/// Output of a denoiser.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMoments {
    pub mean: f64,
    pub c_hat: Vec<f64>,
    /// `g_K / L_K` when the route computed it.
    pub log_partition: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Prior,
    Likelihood,
}

/// A scalar prior or likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelSpec {
    /// `q(y | z) = N(y | z, var)`.
    AwgnLikelihood {
        var: f64,
    },
    /// Equiprobable atoms at `±amplitude`.
    BpskPrior {
        amplitude: f64,
    },
    /// `p(x) ∝ exp(−(|x| − 1)² / (2 relax))`.
    RelaxedBpskPrior {
        relax: f64,
    },
    GaussianPrior {
        mean: f64,
        var: f64,
    },
}

impl ChannelSpec {
    pub fn role(&self) -> Role {
        match self {
            ChannelSpec::AwgnLikelihood { .. } => Role::Likelihood,
            _ => Role::Prior,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ChannelSpec::AwgnLikelihood { var } => var > 0.0 && var.is_finite(),
            ChannelSpec::BpskPrior { amplitude } => amplitude > 0.0 && amplitude.is_finite(),
            ChannelSpec::RelaxedBpskPrior { relax } => relax > 0.0 && relax.is_finite(),
            ChannelSpec::GaussianPrior { mean, var } => {
                var > 0.0 && var.is_finite() && mean.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid channel {self:?}")))
        }
    }

    /// `E[x²]` under a prior.
    pub fn second_moment(&self) -> f64 {
        match *self {
            ChannelSpec::BpskPrior { amplitude } => amplitude * amplitude,
            ChannelSpec::RelaxedBpskPrior { relax } => {
                let (m, v) = relaxed_half_moments(relax);
                v + m * m
            }
            ChannelSpec::GaussianPrior { mean, var } => var + mean * mean,
            ChannelSpec::AwgnLikelihood { .. } => f64::NAN,
        }
    }

    /// `Var[x]` under a prior.
    pub fn variance(&self) -> f64 {
        match *self {
            ChannelSpec::GaussianPrior { var, .. } => var,
            _ => self.second_moment(),
        }
    }

    /// One draw from a prior.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ChannelSpec::BpskPrior { amplitude } => {
                if rng.random::<bool>() {
                    amplitude
                } else {
                    -amplitude
                }
            }
            ChannelSpec::RelaxedBpskPrior { relax } => {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let sd = relax.sqrt();
                loop {
                    let g: f64 = StandardNormal.sample(rng);
                    let t = 1.0 + sd * g;
                    if t > 0.0 {
                        break sign * t;
                    }
                }
            }
            ChannelSpec::GaussianPrior { mean, var } => {
                let g: f64 = StandardNormal.sample(rng);
                mean + var.sqrt() * g
            }
            ChannelSpec::AwgnLikelihood { .. } => panic!("cannot sample from a likelihood"),
        }
    }

    /// Whether a prior is invariant under `x → −x`.
    pub fn is_symmetric(&self) -> bool {
        match *self {
            ChannelSpec::GaussianPrior { mean, .. } => mean == 0.0,
            ChannelSpec::AwgnLikelihood { .. } => false,
            _ => true,
        }
    }

    /// Finite support of a discrete prior.
    pub fn atoms(&self) -> Option<Vec<f64>> {
        match *self {
            ChannelSpec::BpskPrior { amplitude } => Some(vec![-amplitude, amplitude]),
            _ => None,
        }
    }

    /// Quadrature nodes `(x, w)` representing expectations under a prior;
    /// weights sum to one.
    pub fn prior_nodes(&self, order: usize) -> Vec<(f64, f64)> {
        match *self {
            ChannelSpec::BpskPrior { amplitude } => vec![(-amplitude, 0.5), (amplitude, 0.5)],
            ChannelSpec::GaussianPrior { mean, var } => {
                let r = gauss_hermite(order);
                r.nodes
                    .iter()
                    .zip(&r.weights)
                    .map(|(&x, &w)| (mean + var.sqrt() * x, w))
                    .collect()
            }
            ChannelSpec::RelaxedBpskPrior { relax } => {
                let sd = relax.sqrt();
                let half: Vec<(f64, f64)> = if norm_cdf(-1.0 / sd) < 1e-17 {
                    // truncation is invisible: the half-line Gaussian is N(1, c)
                    let r = gauss_hermite(order);
                    r.nodes
                        .iter()
                        .zip(&r.weights)
                        .map(|(&x, &w)| (1.0 + sd * x, w))
                        .collect()
                } else {
                    // composite Gauss–Legendre on [0, 1 + 12 sd] with the density as weight
                    let r = gauss_legendre(order);
                    let top = 1.0 + 12.0 * sd;
                    let panels = 8;
                    let h = top / panels as f64;
                    let mut v = Vec::new();
                    for p in 0..panels {
                        let c = h * (p as f64 + 0.5);
                        for (&x, &w) in r.nodes.iter().zip(&r.weights) {
                            let t = c + 0.5 * h * x;
                            v.push((t, 0.5 * h * w * (-(t - 1.0).powi(2) / (2.0 * relax)).exp()));
                        }
                    }
                    let s: f64 = v.iter().map(|p| p.1).sum();
                    v.into_iter().map(|(t, w)| (t, w / s)).collect()
                };
                let mut nodes: Vec<(f64, f64)> =
                    half.iter().rev().map(|&(t, w)| (-t, 0.5 * w)).collect();
                nodes.extend(half.iter().map(|&(t, w)| (t, 0.5 * w)));
                nodes
            }
            ChannelSpec::AwgnLikelihood { .. } => panic!("likelihoods have no prior nodes"),
        }
    }
}

/// Compact text form used by config files and flags: `awgn:0.1`, `bpsk:1`,
/// `relaxed_bpsk:0.01`, `gaussian:0,1` (mean, variance).
impl std::str::FromStr for ChannelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::Config(format!("cannot parse channel '{s}' (try awgn:0.1, bpsk:1, relaxed_bpsk:0.01, gaussian:0,1)"))
        };
        let (kind, args) = s.trim().split_once(':').ok_or_else(bad)?;
        let nums = args
            .split(',')
            .map(|a| a.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad())?;
        let spec = match (
            kind.trim().to_ascii_lowercase().replace('-', "_").as_str(),
            nums.as_slice(),
        ) {
            ("awgn", &[var]) => ChannelSpec::AwgnLikelihood { var },
            ("bpsk", &[amplitude]) => ChannelSpec::BpskPrior { amplitude },
            ("relaxed_bpsk", &[relax]) => ChannelSpec::RelaxedBpskPrior { relax },
            ("gaussian", &[mean, var]) => ChannelSpec::GaussianPrior { mean, var },
            _ => return Err(bad()),
        };
        Ok(spec)
    }
}

impl std::fmt::Display for ChannelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            ChannelSpec::AwgnLikelihood { var } => write!(f, "awgn:{var}"),
            ChannelSpec::BpskPrior { amplitude } => write!(f, "bpsk:{amplitude}"),
            ChannelSpec::RelaxedBpskPrior { relax } => write!(f, "relaxed_bpsk:{relax}"),
            ChannelSpec::GaussianPrior { mean, var } => write!(f, "gaussian:{mean},{var}"),
        }
    }
}

/// Mean and variance of `N(1, c)` truncated to the positive half-line.
pub fn relaxed_half_moments(c: f64) -> (f64, f64) {
    let sd = c.sqrt();
    let lam = mills(1.0 / sd);
    let mean = 1.0 + sd * lam;
    let var = (c * (1.0 - lam / sd - lam * lam)).max(0.0);
    (mean, var)
}

/// A channel bound to a ladder: the `MeanVar` map of the sweep.
#[derive(Debug, Clone)]
pub struct Denoiser {
    pub channel: ChannelSpec,
    pub ladder: RsbLadder,
    pub quad: QuadratureConfig,
}

impl Denoiser {
    pub fn new(channel: ChannelSpec, ladder: RsbLadder, quad: QuadratureConfig) -> Result<Self> {
        channel.validate()?;
        if ladder.k() > 2
            && !matches!(
                channel,
                ChannelSpec::AwgnLikelihood { .. } | ChannelSpec::GaussianPrior { .. }
            )
        {
            return Err(Error::Unsupported(format!(
                "survey depth K = {} > 2 for {channel:?}",
                ladder.k()
            )));
        }
        Ok(Self {
            channel,
            ladder,
            quad,
        })
    }

    /// Posterior moments for one coordinate given the level variances.
    ///
    /// Picks the fastest exact route: closed forms where they exist, the
    /// nested-bracket integrals (with a closed-form first level when the
    /// prior allows it) otherwise.
    pub fn meanvar(&self, y: Option<f64>, mu: f64, levels: &[f64]) -> Result<PosteriorMoments> {
        let ladder = &self.ladder;
        match self.channel {
            ChannelSpec::AwgnLikelihood { var } => {
                let y =
                    y.ok_or_else(|| Error::invalid("likelihood denoiser needs an observation"))?;
                meanvar_awgn(y, mu, levels, ladder, var)
            }
            ChannelSpec::GaussianPrior { mean, var } => {
                meanvar_gaussian_prior(mean, var, mu, levels, ladder)
            }
            _ => nested::meanvar_nested(&self.channel, None, mu, levels, ladder, &self.quad, true),
        }
    }

    /// Values of `μ` where the level-zero MAP output jumps. Without
    /// smoothing levels the posterior mean jumps there; with them it turns
    /// as sharply as the smoothing variances are small.
    pub fn jump_points(&self, levels: &[f64]) -> Vec<f64> {
        kernels::jumps(&self.channel, self.ladder.regime(), levels[0])
            .into_iter()
            .map(|j| j.0)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn channel_text_form_round_trips() {
        for c in [
            ChannelSpec::AwgnLikelihood { var: 0.1 },
            ChannelSpec::BpskPrior { amplitude: 1.0 },
            ChannelSpec::RelaxedBpskPrior { relax: 1e-12 },
            ChannelSpec::GaussianPrior {
                mean: -0.3,
                var: 2.5,
            },
        ] {
            assert_eq!(c.to_string().parse::<ChannelSpec>().unwrap(), c);
        }
        assert_eq!(
            " Relaxed-BPSK : 0.01".parse::<ChannelSpec>().unwrap(),
            ChannelSpec::RelaxedBpskPrior { relax: 0.01 }
        );
        for bad in ["awgn", "awgn:x", "gaussian:1", "laplace:1"] {
            assert!(
                matches!(bad.parse::<ChannelSpec>(), Err(Error::Config(_))),
                "{bad}"
            );
        }
    }

    #[test]
    fn level_conversions() {
        let l0 = RsbLadder::replica_symmetric(Regime::Map);
        assert_eq!(ladder_to_levels(&[0.5], &l0), vec![0.5]);
        let l1 = RsbLadder::new(vec![4.0], Regime::Map).unwrap();
        assert_eq!(ladder_to_levels(&[1.0, 3.0], &l1), vec![1.0, 0.5]);
        let l2 = RsbLadder::new(vec![2.0, 4.0], Regime::Mmse).unwrap();
        let v = ladder_to_levels(&[1.0, 2.0, 4.0], &l2);
        assert_eq!(v, vec![1.0, 0.5, 0.5]);
        assert_eq!(levels_to_ladder(&v, &l2), vec![1.0, 2.0, 4.0]);
    }

    #[test]
    fn ladder_validation() {
        assert!(RsbLadder::new(vec![2.0, 3.0], Regime::Map).is_err());
        assert!(RsbLadder::new(vec![4.0, 4.0], Regime::Map).is_err());
        assert!(RsbLadder::new(vec![2.5], Regime::Mmse).is_err());
        assert!(RsbLadder::new(vec![0.5, 1.5], Regime::Map).is_ok());
        assert!(RsbLadder::new(vec![-1.0], Regime::Map).is_err());
    }

    #[test]
    fn relaxed_prior_moments() {
        // tiny relaxation: a unit-modulus prior
        let p = ChannelSpec::RelaxedBpskPrior { relax: 1e-12 };
        assert_relative_eq!(p.second_moment(), 1.0, epsilon = 1e-10);
        // against the quadrature nodes in the truncated regime
        let p = ChannelSpec::RelaxedBpskPrior { relax: 0.5 };
        let nodes = p.prior_nodes(40);
        let m2: f64 = nodes.iter().map(|(x, w)| w * x * x).sum();
        assert_relative_eq!(m2, p.second_moment(), max_relative = 1e-12);
        let m1: f64 = nodes.iter().map(|(x, w)| w * x).sum();
        assert!(m1.abs() < 1e-14);
    }

    #[test]
    fn relaxed_sampler_spread() {
        let p = ChannelSpec::RelaxedBpskPrior { relax: 0.01 };
        let mut rng = crate::ensembles::stream_rng(3, 0);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| p.sample(&mut rng).abs() - 1.0).collect();
        let m = xs.iter().sum::<f64>() / n as f64;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64;
        assert!((v / 0.01 - 1.0).abs() < 0.05, "{v}");
    }
}

#[cfg(test)]
mod oracle_tests;
