use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use citest::harness::{
    apply_method, marginal_association_profile, method_by_name, mse_shared_vs_total, negative_result_demo, run_grid,
    write_results_csv, CalibrationCache, CalibrationContext, GridSpec, MarginalDesign,
};
use citest::inference::Sidedness;
use citest::model::{Dataset, Family};
use citest::rng::seeded;
use citest::Error;

mod theory;

const DEFAULT_SEED: u64 = 1;

#[derive(Parser, Debug)]
#[command(
    name = "citest",
    version,
    about = "Conditional independence tests and their Monte Carlo study"
)]
struct Cli {
    /// JSON configuration (the study grid for `simulate`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed for all randomness.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for replicate fan-out.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true, default_value_t = 0.05)]
    alpha: f64,
    /// Method name or alias (gcm-lasso, dcrt-lasso, gcm-plasso, dcrt-plasso,
    /// maxway, gcm-marginal, gcm-oracle). For `simulate`, a comma-separated
    /// subset of the roster.
    #[arg(long, global = true)]
    method: Option<String>,
    /// Reduced Monte Carlo sizes.
    #[arg(long, global = true)]
    fast: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FamilyArg {
    Gaussian,
    Binomial,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Family {
        match f {
            FamilyArg::Gaussian => Family::Gaussian,
            FamilyArg::Binomial => Family::Binomial,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SideArg {
    TwoSided,
    Greater,
}

impl From<SideArg> for Sidedness {
    fn from(s: SideArg) -> Sidedness {
        match s {
            SideArg::TwoSided => Sidedness::TwoSided,
            SideArg::Greater => Sidedness::Greater,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AuditDesign {
    Candes2016,
    Liu2022Spaced,
    Liu2022Clustered,
    Li2022,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Test X independent of Y given Z on a CSV with header x,y,z1..zp.
    Test {
        csv: PathBuf,
        #[arg(long, value_enum, default_value = "gaussian")]
        family: FamilyArg,
        #[arg(long, value_enum, default_value = "gaussian")]
        x_family: FamilyArg,
        #[arg(long, value_enum, default_value = "two-sided")]
        side: SideArg,
        /// Resamples for resampling-based tests.
        #[arg(long, default_value_t = 400)]
        resamples: usize,
        #[arg(long, default_value_t = 5)]
        folds: usize,
    },
    /// Run a study grid and write the results CSV.
    Simulate,
    /// Calibrate nu_max and theta_max for one cell.
    Calibrate {
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 400)]
        p: usize,
        #[arg(long, default_value_t = 5)]
        s: usize,
        #[arg(long, default_value_t = 0.4)]
        rho: f64,
        #[arg(long, value_enum, default_value = "gaussian")]
        family: FamilyArg,
        #[arg(long, default_value_t = 1000)]
        reps: usize,
    },
    /// MX(2) F-test rejection rates with a shrunk X fit and Y fit of zero,
    /// next to their closed-form limits.
    DemoNegative {
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,4")]
        c: Vec<f64>,
        #[arg(long, default_value_t = 5000)]
        n: usize,
        #[arg(long, default_value_t = 10000)]
        reps: usize,
        #[arg(long, default_value_t = 1.0)]
        beta_norm: f64,
    },
    /// Marginal association of each candidate variable in a published design.
    AuditMarginal {
        #[arg(long, value_enum, default_value = "li2022")]
        design: AuditDesign,
        #[arg(long, default_value_t = 100)]
        reps: usize,
    },
    /// Lasso versus post-lasso estimation error of the conditional means.
    MseCompare {
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 400)]
        p: usize,
        #[arg(long, default_value_t = 5)]
        s: usize,
        #[arg(long, default_value_t = 0.4)]
        rho: f64,
        #[arg(long, default_value_t = 0.3)]
        nu: f64,
        #[arg(long, default_value_t = 0.3)]
        theta: f64,
        #[arg(long, default_value_t = 200)]
        reps: usize,
    },
    /// Numerical checks of the large-sample theory.
    CheckTheory {
        /// all, negative-controls, appendix-b, critical-values, variance,
        /// agreement, power, clt, wlln or quantile.
        #[arg(default_value = "all")]
        selector: String,
    },
}

/// Exit status of a failed command.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::DegenerateVariance(_) => 3,
        Error::ConvergenceFailure { .. } | Error::CalibrationFailure(_) | Error::ReplicateFailures { .. } => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Some(w) = cli.workers {
        if w == 0 {
            eprintln!("error: --workers must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(w).build_global() {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: &Cli) -> citest::Result<u8> {
    let seed = cli.seed.unwrap_or(DEFAULT_SEED);
    match &cli.command {
        Command::Test {
            csv,
            family,
            x_family,
            side,
            resamples,
            folds,
        } => {
            let name = cli.method.as_deref().unwrap_or("gcm-lasso");
            let spec = method_by_name(name, *resamples)
                .ok_or_else(|| Error::InvalidParameter(format!("unknown method {name:?}")))?;
            let data = Dataset::read_csv(File::open(csv)?, (*family).into())?;
            let mut rng = seeded(seed);
            let mut result = apply_method(
                &spec,
                &data,
                (*x_family).into(),
                cli.alpha,
                (*side).into(),
                *folds,
                &mut rng,
            )?;
            result.diagnostics.remove("resample_statistics");
            emit(cli.out.as_deref(), &serde_json::to_string_pretty(&result)?)?;
            Ok(0)
        }
        Command::Simulate => {
            let mut spec = match &cli.config {
                Some(path) => serde_json::from_reader(io::BufReader::new(File::open(path)?))
                    .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?,
                None if cli.fast => GridSpec::fast(),
                None => GridSpec::default(),
            };
            if cli.fast {
                spec.n_reps = spec.n_reps.min(100);
            }
            if let Some(s) = cli.seed {
                spec.master_seed = s;
            }
            if let Some(names) = &cli.method {
                spec.methods = names
                    .split(',')
                    .map(|n| {
                        method_by_name(n.trim(), spec.methods.first().map_or(400, |m| m.m))
                            .ok_or_else(|| Error::InvalidParameter(format!("unknown method {n:?}")))
                    })
                    .collect::<citest::Result<_>>()?;
            }
            spec.alpha = cli.alpha;
            // Open the output before the run so an unwritable path fails fast.
            let sink: Box<dyn Write> = match &cli.out {
                Some(p) => Box::new(BufWriter::new(File::create(p)?)),
                None => Box::new(io::stdout().lock()),
            };
            let mut cache = CalibrationCache::from_env()?;
            let results = run_grid(&spec, &mut cache)?;
            write_results_csv(&results, sink)?;
            Ok(0)
        }
        Command::Calibrate {
            n,
            p,
            s,
            rho,
            family,
            reps,
        } => {
            let mut cache = CalibrationCache::from_env()?;
            let ctx = CalibrationContext {
                n: *n,
                p: *p,
                s: *s,
                rho: *rho,
                family: (*family).into(),
            };
            let cal = cache.get_or_calibrate(ctx, *reps, seed)?;
            emit(cli.out.as_deref(), &serde_json::to_string_pretty(&cal)?)?;
            Ok(0)
        }
        Command::DemoNegative { c, n, reps, beta_norm } => {
            let reps = if cli.fast { (*reps).min(1000) } else { *reps };
            let rows = negative_result_demo(c, *n, reps, *beta_norm, cli.alpha, seed)?;
            emit(cli.out.as_deref(), &serde_json::to_string_pretty(&rows)?)?;
            Ok(0)
        }
        Command::AuditMarginal { design, reps } => {
            let d = match design {
                AuditDesign::Candes2016 => MarginalDesign::candes2016(seed),
                AuditDesign::Liu2022Spaced => MarginalDesign::liu2022(true, seed),
                AuditDesign::Liu2022Clustered => MarginalDesign::liu2022(false, seed),
                AuditDesign::Li2022 => MarginalDesign::li2022(seed),
            };
            let reps = if cli.fast { (*reps).min(20) } else { *reps };
            let rates = marginal_association_profile(&d, reps, seed)?;
            let mut sorted = rates.clone();
            sorted.sort_by(f64::total_cmp);
            let signals = d.signal_positions();
            let out = json!({
                "design": d.name,
                "n": d.n,
                "p": d.p,
                "reps": reps,
                "median_rejection_rate": citest::stats::median(&rates),
                "max_rejection_rate": sorted.last(),
                "signal_positions": signals,
                "rejection_rates": rates,
            });
            emit(cli.out.as_deref(), &serde_json::to_string_pretty(&out)?)?;
            Ok(0)
        }
        Command::MseCompare {
            n,
            p,
            s,
            rho,
            nu,
            theta,
            reps,
        } => {
            let reps = if cli.fast { (*reps).min(40) } else { *reps };
            let cmp = mse_shared_vs_total(*n, *p, *s, *rho, *nu, *theta, reps, seed)?;
            emit(cli.out.as_deref(), &serde_json::to_string_pretty(&cmp)?)?;
            Ok(0)
        }
        Command::CheckTheory { selector } => theory::run(selector, seed, cli.fast, cli.out.as_deref()),
    }
}

/// Writes `text` to `out`, or to stdout.
fn emit(out: Option<&Path>, text: &str) -> citest::Result<()> {
    match out {
        Some(p) => std::fs::write(p, format!("{text}\n"))?,
        None => match writeln!(io::stdout().lock(), "{text}") {
            Err(e) if e.kind() != io::ErrorKind::BrokenPipe => return Err(e.into()),
            _ => {}
        },
    }
    Ok(())
}
