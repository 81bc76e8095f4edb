use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use otfpf::config::{parse_config, ExperimentConfig};
use otfpf::experiments::{chaos, decay, static_compare, sweep};
use otfpf::output::{self, RunManifest};
use otfpf::validate::self_check;
use otfpf::Error;

const EXIT_INPUT: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;
const EXIT_SELF_CHECK: u8 = 3;

#[derive(Parser)]
#[command(name = "otfpf", version, about = "Interacting particle filters for linear-Gaussian filtering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Matrix-equation and ensemble self-checks.
    Validate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Finite-N error against the Kalman filter (writes trajectory.csv and path.csv).
    Filter(RunArgs),
    /// Propagation-of-chaos experiment (writes chaos.csv).
    Chaos(RunArgs),
    /// Static example: importance sampling vs FPF (writes mse.csv).
    StaticCompare(RunArgs),
    /// (N, d) grid of the static example (writes mse.csv and levels.csv).
    Sweep(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides OTFPF_SEED and the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses all cores. Results do not depend on this.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

fn resolve_seed(flag: Option<u64>, cfg_seed: u64) -> Result<u64, Error> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("OTFPF_SEED") {
        Ok(v) => v.trim().parse().map_err(|_| Error::Config {
            key: "OTFPF_SEED".into(),
            message: format!("`{v}` is not a non-negative integer"),
        }),
        Err(_) => Ok(cfg_seed),
    }
}

fn run(args: &RunArgs, body: impl FnOnce(&ExperimentConfig, &Path) -> Result<Vec<String>, Error> + Send) -> Result<(), Error> {
    let start = Instant::now();
    let mut cfg = parse_config(&args.config)?;
    cfg.seed = resolve_seed(args.seed, cfg.seed)?;
    std::fs::create_dir_all(&args.out)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.threads)
        .build()
        .map_err(|e| Error::Config {
            key: "--threads".into(),
            message: e.to_string(),
        })?;
    let mut outputs = pool.install(|| body(&cfg, &args.out))?;
    outputs.push("manifest.json".into());
    let manifest = RunManifest {
        config_hash: cfg.hash(),
        master_seed: cfg.seed,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        outputs,
        runtime_secs: start.elapsed().as_secs_f64(),
    };
    output::write_manifest(&args.out.join("manifest.json"), &manifest)
}

fn filter(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<String>, Error> {
    let run = decay::run_error_decay(cfg)?;
    output::write_trajectory(&out.join("trajectory.csv"), &run)?;
    output::write_path(&out.join("path.csv"), &run.path)?;
    let fmt = |r: Option<f64>| r.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    eprintln!(
        "lambda0 {}  mean decay rate {}  covariance decay rate {}",
        fmt(run.lambda0),
        fmt(run.mean_rate),
        fmt(run.cov_rate)
    );
    Ok(vec!["trajectory.csv".into(), "path.csv".into()])
}

fn chaos(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<String>, Error> {
    let report = chaos::run_chaos(cfg)?;
    output::write_chaos(&out.join("chaos.csv"), &report.rows)?;
    if let (Some(a), Some(b)) = (report.err2_slope, report.cor1_slope) {
        eprintln!("log-log slope: coupling error {a:.3}, test-function RMS {b:.3}");
    }
    Ok(vec!["chaos.csv".into()])
}

fn static_compare(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<String>, Error> {
    let records = static_compare::run_static_compare(cfg)?;
    output::write_mse(&out.join("mse.csv"), &records)?;
    Ok(vec!["mse.csv".into()])
}

fn sweep(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<String>, Error> {
    let report = sweep::run_sweep(cfg)?;
    output::write_mse(&out.join("mse.csv"), &report.records)?;
    output::write_levels(&out.join("levels.csv"), &report.curves)?;
    for c in &report.curves {
        let fmt = |s: Option<f64>| s.map_or("n/a".to_string(), |v| format!("{v:.3}"));
        eprintln!(
            "{} level {}: slope of ln N vs d {}, vs ln d {}",
            c.estimator,
            c.level,
            fmt(c.loglinear_slope()),
            fmt(c.loglog_slope())
        );
    }
    Ok(vec!["mse.csv".into(), "levels.csv".into()])
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Validate { seed } => match self_check(*seed) {
            Ok(checks) => {
                let mut ok = true;
                for c in &checks {
                    let status = if c.passed() { "ok" } else { "FAILED" };
                    println!("{:<26} {status:<6} worst {:.3e} (tol {:.1e})", c.name, c.worst, c.tol);
                    ok &= c.passed();
                }
                if !ok {
                    return ExitCode::from(EXIT_SELF_CHECK);
                }
                Ok(())
            }
            Err(e) => Err(e),
        },
        Command::Filter(args) => run(args, filter),
        Command::Chaos(args) => run(args, chaos),
        Command::StaticCompare(args) => run(args, static_compare),
        Command::Sweep(args) => run(args, sweep),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_INPUT })
        }
    }
}
