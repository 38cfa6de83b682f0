mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use rlmc_core::benchmarks::BENCHMARKS;

use config::ExperimentConfig;
use run::{run_experiment, Failure};

/// Runs solver sweeps on the bundled benchmarks and writes result tables.
#[derive(Debug, Parser)]
#[command(name = "rlmc", version)]
struct Args {
    /// Experiment configuration (TOML).
    #[arg(long, required_unless_present = "list_benchmarks")]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads, 0 for one per core.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[arg(long)]
    list_benchmarks: bool,
    /// Also write the simulated exogenous paths as CSV.
    #[arg(long)]
    dump_paths: bool,
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(&Failure::Config(e.to_string())),
    };
    if args.list_benchmarks {
        for name in BENCHMARKS {
            println!("{name}");
        }
        return ExitCode::SUCCESS;
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(args.threads)
        .build_global()
    {
        return fail(&Failure::Runtime(e.into()));
    }
    match execute(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => fail(&f),
    }
}

fn execute(args: &Args) -> Result<(), Failure> {
    let path = args.config.as_ref().expect("clap enforces --config");
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let config = ExperimentConfig::parse(&text).map_err(Failure::Config)?;
    let out = args
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .ok_or_else(|| {
            Failure::Config("no output directory: pass --out or set output_dir".into())
        })?;
    let rows = run_experiment(&config, &out, args.dump_paths)?;
    eprintln!("{} run(s) written to {}", rows.len(), out.display());
    Ok(())
}

fn fail(f: &Failure) -> ExitCode {
    eprintln!("{}", f.record());
    ExitCode::from(f.exit_code() as u8)
}
