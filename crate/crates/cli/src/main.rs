use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ioc_core::experiment::{self, Algorithm, ExperimentConfig};
use ioc_core::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

/// Recover state and input penalties from expert demonstrations.
#[derive(Parser)]
#[command(name = "ioc", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the expert and write its trajectory CSV.
    Simulate(Common),
    /// Forward-solve the expert cost for its value weights and policy gain.
    Forward(Common),
    /// Model-free estimator: learner dynamics are only simulated.
    Alg1(Common),
    /// Estimator with known input dynamics; no learner simulation.
    Alg2(Common),
    /// Sweep input-dynamics uncertainty with regenerated measurement noise.
    NoiseStudy {
        #[command(flatten)]
        common: Common,
        /// Overrides `[noise] trials`.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Solve for the policy of a recovered cost and compare with the expert.
    Verify {
        #[command(flatten)]
        common: Common,
        /// `report.json` from a previous run, or a bare cost estimate.
        #[arg(long)]
        cost: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to `[run] out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `[run] seed`.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<(ExperimentConfig, PathBuf), Error> {
        let mut cfg = ExperimentConfig::load(&self.config).map_err(|e| match e {
            Error::Io(io) => Error::Format {
                path: self.config.clone(),
                message: io.to_string(),
            },
            other => other,
        })?;
        if let Some(seed) = self.seed {
            cfg = cfg.with_seed(seed);
        }
        let out = self.out.clone().unwrap_or_else(|| cfg.out_dir.clone());
        Ok((cfg, out))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(if e.is_config() { EXIT_CONFIG } else { EXIT_NUMERICAL })
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Simulate(common) => {
            let (cfg, out) = common.load()?;
            let path = experiment::run_simulate(&cfg, &out)?;
            println!("wrote {}", path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Forward(common) => {
            let (cfg, out) = common.load()?;
            let report = experiment::run_forward(&cfg, &out)?;
            println!("iterations {}  residual {:.3e}", report.pair.iterations, report.pair.residual);
            println!("w_v {}", fmt_row(report.pair.w_v.as_slice()));
            println!("gain {}", fmt_row(report.pair.k.transpose().as_slice()));
            if let Some(d) = report.distance {
                println!(
                    "against reference: max deviation {:.3e}  normalized gain error {:.3e}",
                    d.max_deviation, d.normalized_gain_error
                );
            }
            println!("wrote {}", out.join("forward.json").display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Alg1(common) => estimate(common, Algorithm::Alg1),
        Command::Alg2(common) => estimate(common, Algorithm::Alg2),
        Command::NoiseStudy { common, trials } => {
            let (mut cfg, out) = common.load()?;
            if let Some(t) = trials {
                cfg.noise.trials = t;
            }
            std::fs::create_dir_all(&out)?;
            let cells = experiment::run_noise_study(&cfg)?;
            let path = out.join("noise_study.csv");
            experiment::write_noise_csv(&cells, &path)?;
            let failed = cells.iter().filter(|c| c.error.is_none()).count();
            let worst = cells.iter().filter_map(|c| c.error).fold(0.0, f64::max);
            println!("{} cells, {failed} failed, worst normalized error {worst:.3e}", cells.len());
            for c in cells.iter().filter(|c| c.failure.is_some()) {
                eprintln!(
                    "cell uncertainty {} trial {}: {}",
                    c.uncertainty,
                    c.trial,
                    c.failure.as_deref().unwrap_or("")
                );
            }
            println!("wrote {}", path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { common, cost } => {
            let (cfg, out) = common.load()?;
            let v = experiment::run_verify(&cfg, &cost, &out)?;
            print_distance(&v);
            println!("wrote {}", out.join("verification.json").display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn estimate(common: Common, algorithm: Algorithm) -> Result<ExitCode, Error> {
    let (mut cfg, out) = common.load()?;
    cfg.algorithm = algorithm;
    let report = experiment::run_experiment(&cfg, &out)?;
    println!(
        "converged {}  q psd {}  restarts {}  iterations {}  final E {:.3e}  ({:.2} s)",
        report.converged, report.q_psd, report.restarts, report.iterations, report.final_e, report.wall_clock_s
    );
    println!("w_q {}", fmt_row(report.estimate.w_q.as_slice()));
    println!("r {}", fmt_row(report.estimate.r.as_slice()));
    println!("w_v {}", fmt_row(report.estimate.w_v.as_slice()));
    match &report.verification {
        Some(v) => print_distance(v),
        None => eprintln!(
            "verification failed: {}",
            report.verification_error.as_deref().unwrap_or("unknown")
        ),
    }
    if !report.converged {
        eprintln!("warning: iteration cap reached; the lowest-error state was kept");
    }
    println!("wrote {}", display_dir(&out));
    Ok(if report.verification.is_some() && report.q_psd {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_NUMERICAL)
    })
}

fn print_distance(v: &experiment::Verification) {
    println!(
        "verification ({}): max deviation {:.3e}  normalized gain error {:.3e}",
        v.method, v.distance.max_deviation, v.distance.normalized_gain_error
    );
}

fn fmt_row(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(" ")
}

fn display_dir(p: &Path) -> String {
    format!("{}/", p.display())
}
