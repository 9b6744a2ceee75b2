use clap::{Parser, Subcommand};
use scatlab::experiment::{self, ExperimentConfig, TIMING_FILE};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

const EXIT_CONTRACT: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(name = "scatlab", version, about = "Batch runner for quantum scattering experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a configuration file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `output_dir` in the configuration.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Cap on worker threads.
        #[arg(long)]
        workers: Option<usize>,
        /// Reserved; the pipeline is deterministic and ignores it.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// List catalog potentials, sources and experiments.
    Describe {
        /// Case-insensitive substring filter on entry names.
        filter: Option<String>,
    },
    /// Parse and validate a configuration file.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match cli.command {
        Command::Describe { filter } => match experiment::describe(filter.as_deref().unwrap_or("")) {
            Ok(entries) => {
                for e in entries {
                    print!("{e}");
                }
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_USAGE)
            }
        },
        Command::ValidateConfig { config } => match experiment::validate_config(&config) {
            Ok(cfg) => {
                println!("{}: valid {} experiment", config.display(), cfg.kind);
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_USAGE)
            }
        },
        Command::Run { config, out, workers, seed: _ } => run(config, out, workers),
    }
}

fn run(config: PathBuf, out: Option<PathBuf>, workers: Option<usize>) -> ExitCode {
    let cfg = match ExperimentConfig::from_path(&config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let Some(out) = out.or_else(|| cfg.output_dir.clone()) else {
        eprintln!("error: no output directory; pass --out or set output_dir");
        return ExitCode::from(EXIT_USAGE);
    };
    if let Some(n) = workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: cannot configure {n} workers: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    let start = Instant::now();
    let result = experiment::run(&cfg, &out);
    let _ = std::fs::write(out.join(TIMING_FILE), format!("wall_seconds = {:.3}\n", start.elapsed().as_secs_f64()));
    match result {
        Ok(report) => {
            for c in &report.checks {
                println!(
                    "{} {}: {:.3e} (threshold {:.3e})",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.value,
                    c.threshold
                );
            }
            println!("report: {}", out.join(experiment::REPORT_FILE).display());
            if report.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_CONTRACT)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { EXIT_USAGE } else { EXIT_NUMERIC })
        }
    }
}
