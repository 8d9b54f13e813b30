//! Command-line front end: `run`, `fit`, `compare` and `validate`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use mfcov::harness::{
    compare, fit, pin_fit, run_batch, write_aggregate, write_metrics, BatchResult,
    ExperimentConfig, Series,
};

#[derive(Debug, Parser)]
#[command(
    name = "mfcov",
    version,
    about = "Multi-fidelity learning and coverage experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the configured algorithm and write its metric logs.
    Run(Common),
    /// Fit hyperparameters by maximum likelihood and print a pinned config.
    Fit(Common),
    /// Run every algorithm and fidelity mode from one config.
    Compare(Common),
    /// Check a config file.
    Validate(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Config file; the built-in default when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; `results` for `run` and `compare`. `fit` writes
    /// `fitted.toml` here only when given.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the number of runs.
    #[arg(long)]
    runs: Option<usize>,
}

impl Common {
    fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("results"))
    }

    fn load(&self) -> mfcov::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(runs) = self.runs {
            cfg.runs = runs;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write_batch(dir: &Path, series: Series, batch: &BatchResult, seed: u64) -> mfcov::Result<()> {
    std::fs::create_dir_all(dir)?;
    let label = series.label();
    let runs = dir.join(format!("{label}.csv"));
    let agg = dir.join(format!("{label}_aggregate.csv"));
    write_metrics(&batch.records, seed, &runs)?;
    write_aggregate(&batch.aggregate, seed, &agg)?;
    let last = batch.aggregate.last();
    println!(
        "{label}: cum_regret {:.4} mse {:.4} max_var {:.4} mean_distance {:.4} ({} runs) -> {}",
        last.cum_regret.mean,
        last.mse.mean,
        last.max_var.mean,
        last.mean_distance.mean,
        batch.aggregate.runs,
        runs.display()
    );
    Ok(())
}

fn execute(command: Command) -> mfcov::Result<()> {
    match command {
        Command::Validate(args) => {
            args.load()?;
            println!("config ok");
        }
        Command::Run(args) => {
            let cfg = args.load()?;
            let batch = run_batch(&cfg)?;
            write_batch(
                &args.out_dir(),
                Series::new(cfg.algorithm, cfg.fidelity),
                &batch,
                cfg.seed,
            )?;
        }
        Command::Compare(args) => {
            let cfg = args.load()?;
            let dir = args.out_dir();
            for (series, batch) in compare(&cfg)? {
                write_batch(&dir, series, &batch, cfg.seed)?;
            }
        }
        Command::Fit(args) => {
            let cfg = args.load()?;
            let report = fit(&cfg)?;
            for (name, outcome) in [("multi", &report.multi), ("single", &report.single)] {
                log::info!(
                    "{name}: log likelihood {:.6} -> {:.6} in {} evaluations",
                    outcome.initial_log_likelihood,
                    outcome.log_likelihood,
                    outcome.evaluations
                );
            }
            let text = pin_fit(&cfg, &report).to_toml_string();
            print!("{text}");
            if let Some(dir) = &args.out {
                std::fs::create_dir_all(dir)?;
                std::fs::write(dir.join("fitted.toml"), &text)?;
            }
        }
    }
    Ok(())
}

/// Parses `argv` (program name first) and executes it. Returns the process
/// exit code: 0 on success, 2 on usage errors, 1 on any other failure.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
