use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use itelab::cli::{exit_code, load_config, run_command, Command, EXIT_VALIDATION};

#[derive(Parser)]
#[command(name = "itelab", version, about = "Interior transmission eigenvalue toolkit")]
struct Args {
    /// Config file with `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    mesh_n: Option<usize>,
    #[arg(long, global = true)]
    refine: Option<usize>,
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Check a discreteness hypothesis on the configured coefficients.
    Check,
    /// Limiting-absorption solve with a unit source.
    Solve,
    /// Ritz values of the configured operator.
    Eigs,
    /// Half-space scaling study.
    Halfspace,
    /// Exponential decay fit for a single field.
    Decay,
    /// Exact disk eigenvalues from the Bessel matching determinant.
    Oracle,
    /// Runs every diagnostic suite against its tolerance.
    Verify,
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Some(n) = std::env::var("ITELAB_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let mut cfg = match load_config(args.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code(&e) as u8);
        }
    };
    if let Some(o) = args.out {
        cfg.out_dir = o;
    }
    if let Some(n) = args.mesh_n {
        if n == 0 {
            eprintln!("error: --mesh-n must be positive");
            return ExitCode::from(EXIT_VALIDATION as u8);
        }
        cfg.mesh_n = n;
    }
    if let Some(r) = args.refine {
        cfg.refine = r;
    }
    let cmd = match args.cmd {
        Cmd::Check => Command::Check,
        Cmd::Solve => Command::Solve,
        Cmd::Eigs => Command::Eigs,
        Cmd::Halfspace => Command::HalfSpace,
        Cmd::Decay => Command::Decay,
        Cmd::Oracle => Command::Oracle,
        Cmd::Verify => Command::Verify,
    };
    ExitCode::from(run_command(cmd, &cfg, args.quiet) as u8)
}
