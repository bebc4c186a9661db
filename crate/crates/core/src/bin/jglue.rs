use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use jglue::scenario::{compare, run_to_dir, StructureRegistry, BUILTIN};
use jglue::GlueError;

/// Batch front end for the gluing pipelines.
#[derive(Parser)]
#[command(name = "jglue", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or a builtin scenario by name.
    Run {
        config: String,
        /// Artifact directory (default: runs/<scenario name>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for the sweep (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Compare the fields of two run directories.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        tol_w1p: f64,
        #[arg(long, default_value_t = 1e-6)]
        tol_c0: f64,
    },
    /// List the builtin scenarios.
    List,
}

const EXIT_UNCERTIFIED: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_PIPELINE: u8 = 3;
const EXIT_IO: u8 = 4;

fn code(e: &GlueError) -> u8 {
    match e {
        GlueError::ConfigInvalid { .. } => EXIT_CONFIG,
        GlueError::Io(_) => EXIT_IO,
        _ => EXIT_PIPELINE,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, out, seed, threads } => {
            let out = out.unwrap_or_else(|| {
                let stem = PathBuf::from(&config).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
                PathBuf::from("runs").join(stem)
            });
            match run_to_dir(&config, &out, seed, threads, &StructureRegistry::default()) {
                Ok(report) => {
                    for o in &report.outcomes {
                        let g = o.point.gamma.map(|g| format!(" gamma={g}")).unwrap_or_default();
                        println!(
                            "run {} h={} delta={}{g}: {} after {} steps, residual {:.3e}",
                            o.point.run, o.point.h, o.point.delta, o.verdict, o.iterations, o.final_residual
                        );
                    }
                    println!("artifacts in {}", out.display());
                    if report.all_ok() {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(EXIT_UNCERTIFIED)
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(code(&e))
                }
            }
        }
        Command::Compare { a, b, tol_w1p, tol_c0 } => match compare(&a, &b, tol_w1p, tol_c0) {
            Ok(report) => {
                for d in &report.diffs {
                    println!("run {} {}: w1p {:.3e} c0 {:.3e} {}", d.run, d.domain, d.w1p, d.c0, if d.pass { "pass" } else { "FAIL" });
                }
                if report.pass() {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::from(EXIT_UNCERTIFIED)
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_CONFIG)
            }
        },
        Command::List => {
            for (name, _) in BUILTIN {
                println!("{name}");
            }
            ExitCode::SUCCESS
        }
    }
}
