use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use kvasp::harness::{
    export, generate_instance, run_experiment, sweep_configs, Algorithm, ExperimentConfig,
    ExperimentOutcome, SpectrumSource, BRUTE_FORCE_MAX_N,
};
use kvasp::state_evolution::{saddle_residual, se_run, SeChannels, SeConfig, Spectrum, CONVERGED};
use kvasp::Error;

/// Monte Carlo experiments for K-step vector approximate survey propagation.
#[derive(Parser)]
#[command(name = "kvasp", version)]
struct Cli {
    /// Worker threads for the trials (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full experiment: every trial, every requested algorithm, then export.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// State evolution only, on the spectrum of the first instance (or pooled).
    Se {
        #[command(flatten)]
        config: ConfigArgs,
        /// Iterate to a fixed point and evaluate the saddle-point residuals.
        #[arg(long)]
        saddle: bool,
    },
    /// One experiment per grid value of a single parameter.
    Sweep {
        /// rho | c | vF | L1 | K
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        grid: Vec<f64>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Exhaustive posterior next to the message-passing estimates (small N).
    Oracle {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

/// A config file plus per-field overrides; each flag is named after the field.
#[derive(Args, Default)]
struct ConfigArgs {
    /// TOML file of config keys; missing keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    rho: Option<String>,
    /// Ladder sizes L_1,…,L_K; empty for replica symmetry.
    #[arg(long, allow_hyphen_values = true)]
    sizes: Option<String>,
    /// map | mmse
    #[arg(long)]
    regime: Option<String>,
    /// e.g. relaxed_bpsk:0.01
    #[arg(long, alias = "true_prior")]
    true_prior: Option<String>,
    /// e.g. bpsk:1
    #[arg(long, alias = "postulated_prior")]
    postulated_prior: Option<String>,
    /// e.g. awgn:0.1
    #[arg(long, alias = "true_likelihood")]
    true_likelihood: Option<String>,
    #[arg(long, alias = "postulated_likelihood")]
    postulated_likelihood: Option<String>,
    #[arg(long, short = 'T')]
    iterations: Option<String>,
    #[arg(long)]
    trials: Option<String>,
    /// Comma-separated subset of kvasp, vamp, bayes_vamp, se, brute_force.
    #[arg(long)]
    algorithms: Option<String>,
    /// Output directory.
    #[arg(long)]
    output: Option<String>,
    /// first_trial | pooled
    #[arg(long)]
    spectrum: Option<String>,
    #[arg(long, alias = "variance_mode")]
    variance_mode: Option<String>,
    #[arg(long)]
    damping: Option<String>,
    #[arg(long, alias = "init_spread")]
    init_spread: Option<String>,
}

impl ConfigArgs {
    fn overrides(&self) -> [(&'static str, &Option<String>); 18] {
        [
            ("seed", &self.seed),
            ("n", &self.n),
            ("alpha", &self.alpha),
            ("rho", &self.rho),
            ("sizes", &self.sizes),
            ("regime", &self.regime),
            ("true_prior", &self.true_prior),
            ("postulated_prior", &self.postulated_prior),
            ("true_likelihood", &self.true_likelihood),
            ("postulated_likelihood", &self.postulated_likelihood),
            ("iterations", &self.iterations),
            ("trials", &self.trials),
            ("algorithms", &self.algorithms),
            ("output", &self.output),
            ("spectrum", &self.spectrum),
            ("variance_mode", &self.variance_mode),
            ("damping", &self.damping),
            ("init_spread", &self.init_spread),
        ]
    }

    fn load(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::from_file(p)?,
            None => ExperimentConfig::default(),
        };
        for (key, value) in self.overrides() {
            if let Some(v) = value {
                c.apply(key, v)?;
            }
        }
        Ok(c)
    }
}

/// Exit statuses beyond the usual 0 / 1.
const EXIT_CONFIG: u8 = 2;
const EXIT_ALL_FAILED: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config = matches!(
                e.downcast_ref::<Error>(),
                Some(Error::Config(_) | Error::InvalidParameter(_))
            );
            ExitCode::from(if config { EXIT_CONFIG } else { 1 })
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Run { config } => {
            if config.seed.is_none() {
                return Err(Error::Config("run needs --seed".into()).into());
            }
            let c = config.load()?;
            let out = run_experiment(&c)?;
            finish(&out, &c.output)
        }
        Command::Se { config, saddle } => state_evolution(&config.load()?, saddle),
        Command::Sweep {
            param,
            grid,
            config,
        } => sweep(&config.load()?, &param, &grid),
        Command::Oracle { config } => {
            let mut c = config.load()?;
            if config.n.is_none() {
                c.n = 12;
            }
            if config.algorithms.is_none() {
                c.algorithms = [Algorithm::BruteForce, Algorithm::Kvasp, Algorithm::Vamp]
                    .into_iter()
                    .collect();
            }
            c.algorithms.insert(Algorithm::BruteForce);
            if c.n > BRUTE_FORCE_MAX_N {
                return Err(Error::Config(format!("oracle needs n ≤ {BRUTE_FORCE_MAX_N}")).into());
            }
            let out = run_experiment(&c)?;
            finish(&out, &c.output)
        }
    }
}

/// Writes the files, prints the table and picks the exit status.
fn finish(out: &ExperimentOutcome, dir: &Path) -> Result<ExitCode> {
    export(out, dir).with_context(|| format!("writing {}", dir.display()))?;
    print!("{}", table(out));
    println!("wrote {}", dir.display());
    Ok(if out.all_failed() {
        ExitCode::from(EXIT_ALL_FAILED)
    } else {
        ExitCode::SUCCESS
    })
}

fn table(out: &ExperimentOutcome) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<12} {:>14} {:>12} {:>8} {:>9}",
        "algorithm", "final mse", "stderr", "trials", "failures"
    );
    for (alg, a) in &out.summary.algorithms {
        let _ = writeln!(
            s,
            "{:<12} {:>14.6e} {:>12.3e} {:>8} {:>9}",
            alg.name(),
            a.final_mse.mean,
            a.final_mse.stderr,
            a.final_mse.count,
            a.failures
        );
    }
    if let Some(se) = &out.se {
        match (&se.failure, se.mse.last()) {
            (Some(f), _) => {
                let _ = writeln!(s, "{:<12} failed: {f}", "se");
            }
            (None, Some(m)) => {
                let _ = writeln!(s, "{:<12} {:>14.6e}", "se", m);
            }
            (None, None) => {}
        }
    }
    s
}

fn state_evolution(c: &ExperimentConfig, saddle: bool) -> Result<ExitCode> {
    c.validate()?;
    let spectrum = match c.spectrum {
        SpectrumSource::FirstTrial => Spectrum::from_instance(&generate_instance(c, 0)?)?,
        SpectrumSource::Pooled => {
            let instances = (0..c.trials as u64)
                .map(|t| generate_instance(c, t))
                .collect::<kvasp::Result<Vec<_>>>()?;
            Spectrum::pooled(&instances)?
        }
    };
    let mut sc = SeConfig::from(&c.engine(c.ladder()?));
    sc.iterations = c.iterations;
    sc.stop_tol = if saddle { CONVERGED } else { 0.0 };
    let channels = SeChannels {
        truth: c.truth(),
        postulated: c.postulated(),
    };
    let tr = se_run(&spectrum, &channels, &sc)?;
    println!("iteration,mse");
    for (t, m) in tr.mse.iter().enumerate() {
        println!("{},{m:?}", t + 1);
    }
    if !saddle {
        return Ok(ExitCode::SUCCESS);
    }
    if !tr.converged {
        eprintln!(
            "not converged after {} iterations (change {:e}); raise --iterations",
            tr.mse.len(),
            tr.state.change
        );
        return Ok(ExitCode::from(EXIT_ALL_FAILED));
    }
    let rep = saddle_residual(&tr.state, &spectrum, &channels, &sc)?;
    eprintln!("saddle residuals ({}):", rep.residuals.len());
    for r in &rep.residuals {
        eprintln!(
            "  {:>2} {:<24} {:>12.3e} (scaled {:.3e})",
            r.group, r.label, r.value, r.scaled
        );
    }
    eprintln!("max scaled residual {:.3e}", rep.max_scaled());
    Ok(ExitCode::SUCCESS)
}

fn sweep(base: &ExperimentConfig, param: &str, grid: &[f64]) -> Result<ExitCode> {
    let points = sweep_configs(base, param, grid)?;
    let mut rows = String::from("param,value,algorithm,final_mse,stderr,failures\n");
    let mut any_ok = false;
    for p in points {
        let mut c = p.config;
        c.output = base.output.join(format!("{param}={}", p.value));
        println!("== {param} = {}", p.value);
        let out = run_experiment(&c)?;
        export(&out, &c.output).with_context(|| format!("writing {}", c.output.display()))?;
        print!("{}", table(&out));
        any_ok |= !out.all_failed();
        for (alg, a) in &out.summary.algorithms {
            let _ = writeln!(
                rows,
                "{param},{},{},{:?},{:?},{}",
                p.value,
                alg.name(),
                a.final_mse.mean,
                a.final_mse.stderr,
                a.failures
            );
        }
        if let Some(m) = out.se.as_ref().and_then(|s| s.mse.last()) {
            let _ = writeln!(rows, "{param},{},se,{m:?},0.0,0", p.value);
        }
    }
    fs::create_dir_all(&base.output)?;
    let path = base.output.join("sweep.csv");
    fs::write(&path, rows)?;
    println!("wrote {}", path.display());
    Ok(if any_ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_ALL_FAILED)
    })
}
