use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use crgrowth::cli::{exit_code, parse_spec_as, run_experiment, Kind};
use crgrowth::Error;

/// Continuum growth experiments.
#[derive(Parser)]
#[command(name = "crgrowth", version)]
struct Args {
    /// simulate, estimate-mu, shape-check, coexist, couple-check, brw-speed or effective-count
    kind: Kind,
    /// Flat `key = value` config file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the `seed` key.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    parallelism: usize,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn run(args: &Args) -> Result<i32, Error> {
    let text = std::fs::read_to_string(&args.config)?;
    let mut spec = parse_spec_as(&text, Some(args.kind))?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
        spec.process.seed = seed;
    }
    let report = run_experiment(&spec, args.parallelism, &args.out)?;
    for (name, e) in &report.results {
        println!("{name}: {} [{}, {}] (n = {})", e.point, e.ci_low, e.ci_high, e.replicas);
    }
    if report.exit_code() != 0 {
        eprintln!("certificate failures; see {}", args.out.join("certificates.csv").display());
    }
    Ok(report.exit_code())
}

fn main() -> ExitCode {
    let args = Args::parse();
    let code = match run(&args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    };
    ExitCode::from(code as u8)
}
