use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tclsc::harness::{self, ExperimentConfig, SweepOutput};
use tclsc::HarnessError;

#[derive(Parser)]
#[command(name = "tclsc", version = harness::VERSION, about = "Cooperative semantic text communication experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train TCL-SC for every R in `rounds.list` and score at one SNR.
    RoundSweep(Common),
    /// Train every configured scheme and score it across the SNR grid.
    SnrSweep(Common),
    /// Self-training and classic baselines across the SNR grid.
    Baseline(Common),
    /// Per-tensor INT8 overhead of one exchange message.
    QuantizeBench(Common),
    /// Quick checks of the channel, quantizer, codecs and metrics.
    Selftest,
}

#[derive(Args)]
struct Common {
    /// Experiment config (sectioned key = value); defaults apply when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overriding `run.out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds, overriding `run.seeds`.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Worker threads, overriding `run.threads` (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, HarnessError> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(o) = &self.out {
            cfg.run.out = o.clone();
        }
        if let Some(s) = &self.seeds {
            cfg.run.seeds = s.clone();
        }
        if let Some(t) = self.threads {
            cfg.run.threads = t;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn sweep(c: &Common, run: fn(&ExperimentConfig) -> Result<SweepOutput, HarnessError>) -> Result<ExitCode, HarnessError> {
    let cfg = c.load()?;
    let out = run(&cfg)?;
    harness::write_outputs(&cfg, &out, &cfg.run.out)?;
    print!("{}", harness::results_csv(&out.rows));
    if !out.plateau.is_empty() {
        print!("{}", harness::plateau_summary(&out.plateau, cfg.rounds.plateau_delta));
    }
    eprintln!("wrote {} rows to {}", out.rows.len(), cfg.run.out.join("results.csv").display());
    if out.any_diverged() {
        eprintln!("some runs diverged; their rows are flagged");
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode, HarnessError> {
    match cli.command {
        Command::RoundSweep(c) => sweep(&c, harness::run_round_sweep),
        Command::SnrSweep(c) => sweep(&c, harness::run_snr_sweep),
        Command::Baseline(c) => sweep(&c, harness::run_baseline),
        Command::QuantizeBench(c) => {
            let cfg = c.load()?;
            let bench = harness::run_quantize_bench(&cfg)?;
            let csv = bench.csv();
            let path = cfg.run.out.join("quantize_bench.csv");
            std::fs::create_dir_all(&cfg.run.out)
                .and_then(|_| std::fs::write(&path, &csv))
                .map_err(|source| HarnessError::Io { path: path.display().to_string(), source })?;
            print!("{csv}");
            Ok(ExitCode::SUCCESS)
        }
        Command::Selftest => {
            let checks = harness::selftest();
            for c in &checks {
                println!("{} {} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            Ok(if checks.iter().all(|c| c.passed) { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e @ HarnessError::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
