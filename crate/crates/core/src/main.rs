use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nslab::experiment::{self, ExperimentConfig, RunOutcome};
use nslab::function_spaces::SpaceNorm;
use nslab::GridSpec;

/// Overrides the configured output directory when set.
const OUTPUT_ENV: &str = "NSLAB_OUTPUT_DIR";

#[derive(Parser)]
#[command(name = "nslab", version, about = "Stability experiments for perturbed periodic Navier-Stokes flows")]
struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Run on a single thread.
    #[arg(long, global = true, conflicts_with = "threads")]
    serial: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Continue a run from a checkpoint.
    Replay {
        checkpoint: PathBuf,
        #[arg(long)]
        extra_time: f64,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Estimate the Hardy-type constant of a space and print the trials as CSV.
    Hardy {
        /// sobolev_half, lebesgue3, weighted_linfty, le_jan_sznitman,
        /// marcinkiewicz3 or morrey3p:<p>
        space: SpaceNorm,
        #[arg(long, default_value_t = 16)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        points: usize,
        /// Box side; defaults to the large box.
        #[arg(long)]
        box_length: Option<f64>,
    },
}

fn output_dir(flag: Option<PathBuf>) -> Option<PathBuf> {
    flag.or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
}

fn summarize(o: &RunOutcome) -> ExitCode {
    for s in &o.suites {
        println!("{:<20} {}", s.name, if s.passed { "PASS" } else { "FAIL" });
        if !s.passed {
            for d in s.details.iter().filter(|d| d.starts_with("[FAIL]")) {
                println!("    {d}");
            }
        }
    }
    if let Some(f) = &o.failure {
        println!("run stopped early: {f}");
    }
    println!("artifacts in {}", o.output_dir.display());
    if o.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn main_inner(cli: Cli) -> nslab::Result<ExitCode> {
    match cli.command {
        Command::Run { config, output_dir: out } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            print!("{}", cfg.to_toml_string()?);
            let o = experiment::run(&cfg, output_dir(out).as_deref())?;
            Ok(summarize(&o))
        }
        Command::Replay { checkpoint, extra_time, output_dir: out } => {
            let o = experiment::replay(&checkpoint, extra_time, output_dir(out).as_deref())?;
            Ok(summarize(&o))
        }
        Command::Hardy { space, trials, seed, points, box_length } => {
            let grid = GridSpec::new(
                box_length.unwrap_or_else(|| GridSpec::default_box().box_length()),
                points,
                GridSpec::default_box().dealias_fraction(),
            )?;
            let est = experiment::hardy(space, &grid, trials, seed)?;
            est.write_csv(std::io::stdout().lock())?;
            eprintln!("K_hat {:e} over {} trials", est.k_hat, est.trials);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = if cli.serial { Some(1) } else { cli.threads };
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match main_inner(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
