use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedcom::sim::{self, RunConfig};
use fedcom::{oracle, Error};

#[derive(Parser)]
#[command(name = "fedcom", version, about = "Federated learning simulator with commitment-based robust aggregation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write metrics.csv and summary.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write each worker's commitment under commitments/.
        #[arg(long)]
        dump_commitments: bool,
    },
    /// Run once per Byzantine fraction, each into its own subdirectory.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        fractions: Vec<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-check Wasserstein and Krum against brute-force oracles.
    OracleCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load(path: &Path, seed: Option<u64>) -> fedcom::Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Ok(raw) = std::env::var("FEDCOM_SEED") {
        cfg.seed = raw
            .trim()
            .parse()
            .map_err(|e| Error::Config { field: "FEDCOM_SEED".into(), message: format!("`{raw}`: {e}") })?;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn out_dir(cli: Option<PathBuf>, cfg: &RunConfig) -> PathBuf {
    cli.or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out"))
}

fn execute(command: Command) -> fedcom::Result<()> {
    match command {
        Command::Run { config, seed, out, dump_commitments } => {
            let mut cfg = load(&config, seed)?;
            cfg.dump_commitments |= dump_commitments;
            cfg.validate()?;
            let dir = out_dir(out, &cfg);
            let report = sim::run_to_dir(&cfg, &dir)?;
            println!(
                "final benign accuracy {:.4}; outputs in {}",
                report.final_benign_accuracy(),
                dir.display()
            );
        }
        Command::Sweep { config, fractions, seed, out } => {
            let cfg = load(&config, seed)?;
            let dir = out_dir(out, &cfg);
            for (fraction, report) in fractions.iter().zip(sim::sweep(&cfg, &fractions, &dir)?) {
                println!("fraction {fraction}: final benign accuracy {:.4}", report.final_benign_accuracy());
            }
        }
        Command::OracleCheck { seed } => {
            let w = oracle::wasserstein_suite(500, 1e-9, seed)?;
            println!(
                "wasserstein: {} cases, {} failures, max error {:.3e}",
                w.cases, w.failures, w.max_error
            );
            let k = oracle::krum_suite(200, seed)?;
            println!("krum: {} cases, {} failures", k.cases, k.failures);
            if !(w.passed() && k.passed()) {
                return Err(Error::InvalidArgument("oracle disagreement".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
