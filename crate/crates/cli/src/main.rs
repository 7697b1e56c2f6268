//! Scenario runner: declarative configuration in, CSV/VTK artifacts out.

mod config;
mod tasks;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use config::Config;

#[derive(Parser)]
#[command(
    name = "cmcg",
    about = "Controllability-method solvers for the Helmholtz equation"
)]
struct Args {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Worker threads for the sparse matrix-vector kernels.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory for CSV/VTK artifacts.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Suppress progress output.
    #[arg(long)]
    quiet: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Some(n) = args.threads {
        // A global pool can only be installed once; a failure here means a
        // pool already exists, which is fine for repeated in-process use.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", args.config.display());
            return ExitCode::FAILURE;
        }
    };
    let cfg: Config = match toml::from_str(&text) {
        Ok(c) => c,
        Err(e) => {
            // The parser reports line/column positions in its message.
            eprintln!("error: {}: {e}", args.config.display());
            return ExitCode::FAILURE;
        }
    };
    if let Err(e) = std::fs::create_dir_all(&args.out) {
        eprintln!("error: cannot create {}: {e}", args.out.display());
        return ExitCode::FAILURE;
    }
    match tasks::run(&cfg, &args.out, args.quiet) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
