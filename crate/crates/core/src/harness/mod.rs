//! Seeded Monte Carlo experiments on the correlated MIMO detection problem.
//!
//! Trial `i` draws everything it needs — `H`, `x0` and the noise, in that
//! order — from substream `i` of the experiment seed, so results do not
//! depend on how trials are spread over threads. Aggregation walks trials
//! in index order.

mod config;
mod export;
mod oracle;

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::DVector;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channels::{Regime, RsbLadder};
use crate::ensembles::{gram_spectrum, sample_measurement, stream_rng, ProblemInstance};
use crate::error::{Error, Result};
use crate::kvasp::{normalized_mse, run, ClampStats};
use crate::state_evolution::{se_run, SeChannels, SeConfig, Spectrum};

pub use config::{Algorithm, ExperimentConfig, SpectrumSource, BRUTE_FORCE_MAX_N};
pub use export::{export, write_csv, write_summary, CSV_NAME, SUMMARY_NAME};
pub use oracle::brute_force_posterior;

/// The benchmark instance of trial `trial_index`: `H` from the ensemble,
/// `x0` i.i.d. from the true prior, `y = H x0 + w` with the true noise.
pub fn generate_instance(config: &ExperimentConfig, trial_index: u64) -> Result<ProblemInstance> {
    let ens = config.ensemble();
    let noise = config.true_noise()?;
    let mut rng = stream_rng(config.seed, trial_index);
    let h = sample_measurement(&ens, &mut rng)?;
    let x0 = DVector::from_fn(ens.n, |_, _| config.true_prior.sample(&mut rng));
    let z0 = &h * &x0;
    let sd = noise.sqrt();
    let y = DVector::from_fn(z0.len(), |j, _| {
        let g: f64 = StandardNormal.sample(&mut rng);
        z0[j] + sd * g
    });
    let lambda_samples = gram_spectrum(&h);
    Ok(ProblemInstance {
        h,
        x0,
        z0,
        y,
        lambda_samples,
    })
}

/// `‖x̂ − x0‖² / ‖x0‖²`.
pub fn mse(x_hat: &DVector<f64>, x0: &DVector<f64>) -> Result<f64> {
    normalized_mse(x_hat, x0)
}

/// Everything one trial produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: u64,
    /// Experiment seed; the trial's stream is `trial`.
    pub seed: u64,
    /// `MSE^t` for `t = 1, …`; shorter than the budget when a run stopped early.
    pub traces: BTreeMap<Algorithm, Vec<f64>>,
    pub final_mse: BTreeMap<Algorithm, f64>,
    pub clamps: BTreeMap<Algorithm, ClampStats>,
    pub failures: BTreeMap<Algorithm, String>,
    /// Seconds; kept out of the exported files.
    pub wall_time: f64,
}

/// The once-per-configuration state evolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeRecord {
    pub mse: Vec<f64>,
    /// Last iterate-to-iterate change.
    pub change: Option<f64>,
    pub failure: Option<String>,
}

/// Sample mean and standard error; all zero when nothing was sampled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub stderr: f64,
    pub count: usize,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self {
                mean: 0.0,
                stderr: 0.0,
                count: 0,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            stderr,
            count: n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSummary {
    /// Entry `t − 1` aggregates `MSE^t` over successful trials; a trace
    /// that stopped early contributes its last value.
    pub per_iteration: Vec<Stat>,
    pub final_mse: Stat,
    pub clamps: ClampStats,
    pub failures: usize,
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config: ExperimentConfig,
    pub version: String,
    pub trials: usize,
    pub algorithms: BTreeMap<Algorithm, AlgorithmSummary>,
    pub se: Option<SeRecord>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub records: Vec<TrialRecord>,
    pub se: Option<SeRecord>,
    pub summary: Summary,
}

impl ExperimentOutcome {
    /// Whether no trial produced a single result.
    pub fn all_failed(&self) -> bool {
        self.records.iter().all(|r| r.traces.is_empty())
    }
}

struct Plan {
    kvasp: crate::kvasp::KvaspConfig,
    vamp: crate::kvasp::KvaspConfig,
    bayes: crate::kvasp::KvaspConfig,
}

fn run_trial(
    config: &ExperimentConfig,
    plan: &Plan,
    trial: u64,
) -> (TrialRecord, Option<Vec<f64>>) {
    let start = Instant::now();
    let mut rec = TrialRecord {
        trial,
        seed: config.seed,
        traces: BTreeMap::new(),
        final_mse: BTreeMap::new(),
        clamps: BTreeMap::new(),
        failures: BTreeMap::new(),
        wall_time: 0.0,
    };
    let per_trial = config
        .algorithms
        .iter()
        .copied()
        .filter(|a| *a != Algorithm::Se);
    let inst = match generate_instance(config, trial) {
        Ok(i) => i,
        Err(e) => {
            for a in per_trial {
                rec.failures.insert(a, format!("instance: {e}"));
            }
            rec.wall_time = start.elapsed().as_secs_f64();
            return (rec, None);
        }
    };
    for alg in per_trial {
        let out: Result<(Vec<f64>, ClampStats)> = match alg {
            Algorithm::Kvasp => run(&inst, &config.postulated(), &plan.kvasp, Some(&inst.x0))
                .map(|r| (r.mse_trace, r.clamps)),
            Algorithm::Vamp => run(&inst, &config.postulated(), &plan.vamp, Some(&inst.x0))
                .map(|r| (r.mse_trace, r.clamps)),
            Algorithm::BayesVamp => run(&inst, &config.truth(), &plan.bayes, Some(&inst.x0))
                .map(|r| (r.mse_trace, r.clamps)),
            Algorithm::BruteForce => {
                brute_force_posterior(&inst, &config.postulated(), config.regime)
                    .and_then(|x| mse(&x, &inst.x0))
                    .map(|m| (vec![m], ClampStats::default()))
            }
            Algorithm::Se => unreachable!(),
        };
        match out {
            Ok((trace, clamps)) if !trace.is_empty() => {
                rec.final_mse.insert(alg, *trace.last().unwrap());
                rec.traces.insert(alg, trace);
                rec.clamps.insert(alg, clamps);
            }
            Ok(_) => {
                rec.failures.insert(alg, "empty trace".into());
            }
            Err(e) => {
                rec.failures.insert(alg, e.to_string());
            }
        }
    }
    rec.wall_time = start.elapsed().as_secs_f64();
    let lambda = (config.spectrum == SpectrumSource::Pooled).then_some(inst.lambda_samples);
    (rec, lambda)
}

fn run_se(config: &ExperimentConfig, ladder: &RsbLadder, spectrum: Result<Spectrum>) -> SeRecord {
    let go = || -> Result<SeRecord> {
        let spectrum = spectrum?;
        let mut sc = SeConfig::from(&config.engine(ladder.clone()));
        sc.iterations = config.iterations;
        // the full budget, so the prediction covers every t
        sc.stop_tol = 0.0;
        let channels = SeChannels {
            truth: config.truth(),
            postulated: config.postulated(),
        };
        let tr = se_run(&spectrum, &channels, &sc)?;
        Ok(SeRecord {
            mse: tr.mse,
            change: Some(tr.state.change),
            failure: None,
        })
    };
    go().unwrap_or_else(|e| SeRecord {
        mse: Vec::new(),
        change: None,
        failure: Some(e.to_string()),
    })
}

fn summarize(config: &ExperimentConfig, records: &[TrialRecord], se: Option<SeRecord>) -> Summary {
    let mut algorithms = BTreeMap::new();
    for &alg in config.algorithms.iter().filter(|a| **a != Algorithm::Se) {
        let traces: Vec<&Vec<f64>> = records.iter().filter_map(|r| r.traces.get(&alg)).collect();
        let len = traces.iter().map(|t| t.len()).max().unwrap_or(0);
        let per_iteration = (0..len)
            .map(|t| {
                let xs: Vec<f64> = traces
                    .iter()
                    .map(|tr| tr.get(t).copied().unwrap_or(*tr.last().unwrap()))
                    .collect();
                Stat::of(&xs)
            })
            .collect();
        let finals: Vec<f64> = records
            .iter()
            .filter_map(|r| r.final_mse.get(&alg).copied())
            .collect();
        let mut clamps = ClampStats::default();
        for c in records.iter().filter_map(|r| r.clamps.get(&alg)) {
            clamps.merge(c);
        }
        let failures = records
            .iter()
            .filter(|r| r.failures.contains_key(&alg))
            .count();
        algorithms.insert(
            alg,
            AlgorithmSummary {
                per_iteration,
                final_mse: Stat::of(&finals),
                clamps,
                failures,
            },
        );
    }
    Summary {
        config: config.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        trials: records.len(),
        algorithms,
        se,
    }
}

/// Runs every trial (in parallel on the current rayon pool), the state
/// evolution once, and aggregates. Per-trial failures are recorded, not
/// raised; only an invalid configuration is an error.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let ladder = config.ladder()?;
    let plan = Plan {
        kvasp: config.engine(ladder.clone()),
        vamp: config.engine(RsbLadder::replica_symmetric(config.regime)),
        bayes: config.engine(RsbLadder::replica_symmetric(Regime::Mmse)),
    };
    let results: Vec<(TrialRecord, Option<Vec<f64>>)> = (0..config.trials as u64)
        .into_par_iter()
        .map(|t| run_trial(config, &plan, t))
        .collect();
    let se = config.algorithms.contains(&Algorithm::Se).then(|| {
        let spectrum = match config.spectrum {
            SpectrumSource::FirstTrial => {
                generate_instance(config, 0).and_then(|i| Spectrum::from_instance(&i))
            }
            SpectrumSource::Pooled => {
                let mut lambda: Vec<f64> = results
                    .iter()
                    .filter_map(|r| r.1.as_ref())
                    .flatten()
                    .copied()
                    .collect();
                lambda.sort_by(f64::total_cmp);
                Spectrum::new(lambda, config.ensemble().m() as f64 / config.n as f64)
            }
        };
        run_se(config, &ladder, spectrum)
    });
    let records: Vec<TrialRecord> = results.into_iter().map(|r| r.0).collect();
    let summary = summarize(config, &records, se.clone());
    Ok(ExperimentOutcome {
        records,
        se,
        summary,
    })
}

/// One value of a swept parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: String,
    pub config: ExperimentConfig,
}

/// Parameters `sweep_configs` knows how to vary.
pub const SWEEP_PARAMETERS: [&str; 5] = ["rho", "c", "vF", "L1", "K"];

/// Copies of `base` with one parameter set to each grid value:
/// `rho`; `c`, the relaxation of a relaxed-BPSK truth; `vF`, the postulated
/// noise; `L1`, the first ladder size (higher sizes keep their ratios);
/// `K`, the depth, with `L_k = L_1·2^{k−1}`.
pub fn sweep_configs(
    base: &ExperimentConfig,
    parameter: &str,
    grid: &[f64],
) -> Result<Vec<SweepPoint>> {
    if grid.is_empty() {
        return Err(Error::Config("empty sweep grid".into()));
    }
    grid.iter()
        .map(|&g| {
            let mut c = base.clone();
            match parameter {
                "rho" => c.rho = g,
                "c" => c.true_prior = crate::channels::ChannelSpec::RelaxedBpskPrior { relax: g },
                "vF" | "vf" => {
                    c.postulated_likelihood =
                        crate::channels::ChannelSpec::AwgnLikelihood { var: g }
                }
                "L1" | "l1" => {
                    let first = *base
                        .sizes
                        .first()
                        .ok_or_else(|| Error::Config("L1 sweep needs K ≥ 1".into()))?;
                    c.sizes = base.sizes.iter().map(|l| l / first * g).collect();
                }
                "K" | "k" => {
                    if g < 0.0 || g.fract() != 0.0 {
                        return Err(Error::Config(format!(
                            "K must be a nonnegative integer, got {g}"
                        )));
                    }
                    let l1 = base.sizes.first().copied().unwrap_or(4.0);
                    c.sizes = (0..g as u32).map(|k| l1 * 2f64.powi(k as i32)).collect();
                }
                other => {
                    return Err(Error::Config(format!(
                        "cannot sweep '{other}' (expected one of {})",
                        SWEEP_PARAMETERS.join(", ")
                    )))
                }
            }
            c.validate()?;
            Ok(SweepPoint {
                value: g.to_string(),
                config: c,
            })
        })
        .collect()
}
