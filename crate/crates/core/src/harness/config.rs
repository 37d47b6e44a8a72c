use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channels::{ChannelSpec, Regime, Role, RsbLadder};
use crate::ensembles::EnsembleConfig;
use crate::error::{Error, Result};
use crate::kvasp::{Channels, KvaspConfig, VarianceMode};

/// Largest dimension the exhaustive oracle accepts.
pub const BRUTE_FORCE_MAX_N: usize = 14;

/// What a trial runs. Variants are declared in name order, which is the row
/// order of the exported files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Single-level VAMP on the true channels (MMSE).
    BayesVamp,
    /// Exhaustive postulated posterior, `N ≤ 14`.
    BruteForce,
    Kvasp,
    /// State evolution, once per configuration.
    Se,
    /// Single-level VAMP on the postulated channels.
    Vamp,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Self::BayesVamp,
        Self::BruteForce,
        Self::Kvasp,
        Self::Se,
        Self::Vamp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::BayesVamp => "bayes_vamp",
            Self::BruteForce => "brute_force",
            Self::Kvasp => "kvasp",
            Self::Se => "se",
            Self::Vamp => "vamp",
        }
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|a| a.name() == key)
            .ok_or_else(|| Error::Config(format!("unknown algorithm '{s}' (expected one of kvasp, vamp, bayes_vamp, se, brute_force)")))
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which eigenvalues drive the state evolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumSource {
    /// The first trial's `HᵀH`.
    #[default]
    FirstTrial,
    /// All trials' eigenvalues merged.
    Pooled,
}

impl FromStr for SpectrumSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "first_trial" | "first" => Ok(Self::FirstTrial),
            "pooled" => Ok(Self::Pooled),
            other => Err(Error::Config(format!(
                "unknown spectrum source '{other}' (expected first_trial or pooled)"
            ))),
        }
    }
}

/// Serde through the `Display`/`FromStr` text form.
mod text {
    use std::fmt::Display;
    use std::str::FromStr;

    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<T: Display, S: Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(v)
    }

    pub fn deserialize<'de, T, D>(d: D) -> Result<T, D::Error>
    where
        T: FromStr,
        T::Err: Display,
        D: Deserializer<'de>,
    {
        String::deserialize(d)?.parse().map_err(de::Error::custom)
    }
}

/// One Monte Carlo experiment. Every field is a flat key of the config file
/// and can be overridden by name through [`ExperimentConfig::apply`].
///
/// Defaults are the benchmark setting at desk scale: `N = 400`, `α = 2`,
/// `ρ = 0`, relaxed BPSK truth with `c = 0.01`, BPSK postulate, AWGN
/// `v = 0.1` on both sides, `K = 1` with `L_1 = 4`, 30 iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    pub alpha: f64,
    pub rho: f64,
    pub seed: u64,
    /// `L_1 < … < L_K`; empty for the replica-symmetric ladder.
    pub sizes: Vec<f64>,
    pub regime: Regime,
    #[serde(with = "text")]
    pub true_prior: ChannelSpec,
    #[serde(with = "text")]
    pub postulated_prior: ChannelSpec,
    #[serde(with = "text")]
    pub true_likelihood: ChannelSpec,
    #[serde(with = "text")]
    pub postulated_likelihood: ChannelSpec,
    /// Iteration budget `T`.
    #[serde(alias = "T")]
    pub iterations: usize,
    pub trials: usize,
    pub algorithms: BTreeSet<Algorithm>,
    pub output: PathBuf,
    pub spectrum: SpectrumSource,
    pub variance_mode: VarianceMode,
    pub damping: f64,
    pub init_spread: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n: 400,
            alpha: 2.0,
            rho: 0.0,
            seed: 0,
            sizes: vec![4.0],
            regime: Regime::Map,
            true_prior: ChannelSpec::RelaxedBpskPrior { relax: 0.01 },
            postulated_prior: ChannelSpec::BpskPrior { amplitude: 1.0 },
            true_likelihood: ChannelSpec::AwgnLikelihood { var: 0.1 },
            postulated_likelihood: ChannelSpec::AwgnLikelihood { var: 0.1 },
            iterations: 30,
            trials: 50,
            algorithms: [
                Algorithm::Kvasp,
                Algorithm::Vamp,
                Algorithm::BayesVamp,
                Algorithm::Se,
            ]
            .into_iter()
            .collect(),
            output: PathBuf::from("results"),
            spectrum: SpectrumSource::FirstTrial,
            variance_mode: VarianceMode::Averaged,
            damping: 1.0,
            init_spread: 1.0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

fn list<T, F>(value: &str, mut f: F) -> Result<Vec<T>>
where
    F: FnMut(&str) -> Result<T>,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(&mut f)
        .collect()
}

/// Rejects a failure as a configuration problem.
fn config_err(e: Error) -> Error {
    match e {
        Error::InvalidParameter(m) => Error::Config(m),
        other => other,
    }
}

impl ExperimentConfig {
    /// Reads a TOML file of flat keys; missing keys keep their defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Overrides one field from its text form. List fields take
    /// comma-separated values; an empty `sizes` is the replica-symmetric
    /// ladder.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key.replace('-', "_").as_str() {
            "n" => self.n = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "rho" => self.rho = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "sizes" => self.sizes = list(value, |s| parse("sizes", s))?,
            "regime" => self.regime = value.parse()?,
            "true_prior" => self.true_prior = value.parse()?,
            "postulated_prior" => self.postulated_prior = value.parse()?,
            "true_likelihood" => self.true_likelihood = value.parse()?,
            "postulated_likelihood" => self.postulated_likelihood = value.parse()?,
            "iterations" | "T" | "t" => self.iterations = parse(key, value)?,
            "trials" => self.trials = parse(key, value)?,
            "algorithms" => {
                self.algorithms = list(value, Algorithm::from_str)?.into_iter().collect()
            }
            "output" => self.output = PathBuf::from(value),
            "spectrum" => self.spectrum = value.parse()?,
            "variance_mode" => self.variance_mode = value.parse().map_err(config_err)?,
            "damping" => self.damping = parse(key, value)?,
            "init_spread" => self.init_spread = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    pub fn ensemble(&self) -> EnsembleConfig {
        EnsembleConfig {
            n: self.n,
            alpha: self.alpha,
            rho: self.rho,
            seed: self.seed,
        }
    }

    pub fn ladder(&self) -> Result<RsbLadder> {
        RsbLadder::new(self.sizes.clone(), self.regime).map_err(config_err)
    }

    pub fn truth(&self) -> Channels {
        Channels {
            prior: self.true_prior,
            likelihood: self.true_likelihood,
        }
    }

    pub fn postulated(&self) -> Channels {
        Channels {
            prior: self.postulated_prior,
            likelihood: self.postulated_likelihood,
        }
    }

    /// Engine settings for `ladder`, sharing everything else with the config.
    /// Runs never stop early.
    pub fn engine(&self, ladder: RsbLadder) -> KvaspConfig {
        let mut c = KvaspConfig::new(ladder);
        c.iterations = self.iterations;
        c.damping = self.damping;
        c.init_spread = self.init_spread;
        c.variance_mode = self.variance_mode;
        // a hard-decision estimate can sit still while the messages move,
        // so every run uses the whole budget
        c.stop_tol = 0.0;
        c
    }

    /// Variance of the noise that generates `y`.
    pub fn true_noise(&self) -> Result<f64> {
        match self.true_likelihood {
            ChannelSpec::AwgnLikelihood { var } => Ok(var),
            other => Err(Error::Config(format!(
                "true likelihood must be AWGN, got {other}"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.ensemble().validate().map_err(config_err)?;
        self.ladder()?;
        if self.algorithms.is_empty() {
            return Err(Error::Config("no algorithms requested".into()));
        }
        if self.iterations == 0 || self.trials == 0 {
            return Err(Error::Config(
                "iterations and trials must be positive".into(),
            ));
        }
        for (what, c, role) in [
            ("true_prior", self.true_prior, Role::Prior),
            ("postulated_prior", self.postulated_prior, Role::Prior),
            (
                "postulated_likelihood",
                self.postulated_likelihood,
                Role::Likelihood,
            ),
        ] {
            if c.role() != role {
                return Err(Error::Config(format!("{what} = {c} is not a {role:?}")));
            }
            c.validate().map_err(config_err)?;
        }
        if !matches!(
            self.postulated_likelihood,
            ChannelSpec::AwgnLikelihood { .. }
        ) {
            return Err(Error::Config("postulated likelihood must be AWGN".into()));
        }
        // the generating noise may vanish
        let v = self.true_noise()?;
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::Config(format!(
                "true noise variance must be nonnegative, got {v}"
            )));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Config(format!(
                "damping must lie in (0, 1], got {}",
                self.damping
            )));
        }
        if !(self.init_spread >= 0.0 && self.init_spread.is_finite()) {
            return Err(Error::Config("init_spread must be nonnegative".into()));
        }
        if self.algorithms.contains(&Algorithm::BruteForce) {
            if self.n > BRUTE_FORCE_MAX_N {
                return Err(Error::Config(format!(
                    "brute_force needs n ≤ {BRUTE_FORCE_MAX_N}, got {}",
                    self.n
                )));
            }
            if self.postulated_prior.atoms().is_none() {
                return Err(Error::Config(
                    "brute_force needs a postulated prior with finite support".into(),
                ));
            }
        }
        Ok(())
    }
}
