//! `hmflow run | validate | analyze | report`.
//!
//! Exit codes: 0 when every enabled assertion passes, 1 on an assertion
//! failure or a module abort, 2 on an invalid config.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hmflow::config::{self, AnalysisConfig, AssertionOutcome, RunManifest};
use hmflow::Error;

#[derive(Parser)]
#[command(name = "hmflow", version, about = "Harmonic map flow experiments")]
struct Cli {
    /// Root for run directories.
    #[arg(long, env = "HMFLOW_OUTPUT_ROOT", global = true)]
    output_root: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        config: PathBuf,
        /// Run directory; overrides the config's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config and list every violation.
    Validate { config: PathBuf },
    /// Analyse a snapshot directory written by a run.
    Analyze {
        snapshot_dir: PathBuf,
        analysis: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify a run directory's checksums and print its assertions.
    Report { run_dir: PathBuf },
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    match e {
        Error::Config(_) | Error::InvalidParameter(_) => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}

fn print_assertions(items: &[AssertionOutcome]) {
    for a in items {
        let tag = if a.passed { "PASS" } else { "FAIL" };
        println!("{tag} {:<32} value {:.6e}  limit {:.6e}", a.name, a.value, a.limit);
    }
}

fn finish(dir: &Path, m: &RunManifest) -> ExitCode {
    print_assertions(&m.assertions);
    for n in &m.notes {
        println!("note: {n}");
    }
    println!("{} files in {}", m.files.len(), dir.display());
    if m.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let root = cli.output_root.as_deref();
    match cli.command {
        Command::Validate { config } => match config::load_config(&config) {
            Ok(_) => {
                println!("{}: valid", config.display());
                ExitCode::SUCCESS
            }
            Err(e) => fail(&e),
        },
        Command::Run { config, out } => {
            let cfg = match config::load_config(&config) {
                Ok(c) => c,
                Err(e) => return fail(&e),
            };
            let dir = out.unwrap_or_else(|| config::resolve_output_dir(&cfg, root));
            match config::run_experiment(&cfg, &dir) {
                Ok(o) => finish(&o.dir, &o.manifest),
                Err(e) => fail(&e),
            }
        }
        Command::Analyze { snapshot_dir, analysis, out } => {
            let parsed = std::fs::read_to_string(&analysis)
                .map_err(Error::from)
                .and_then(|t| serde_json::from_str::<AnalysisConfig>(&t).map_err(|e| Error::Config(vec![format!("invalid analysis config: {e}")])));
            let a = match parsed {
                Ok(a) => a,
                Err(e) => return fail(&e),
            };
            let dir = out.unwrap_or_else(|| {
                let name = snapshot_dir.parent().and_then(Path::file_name).map_or("snapshots".into(), |s| s.to_string_lossy().into_owned());
                root.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(".")).join(format!("{name}-analysis"))
            });
            match config::analyze_snapshots(&snapshot_dir, &a, &dir) {
                Ok(o) => finish(&o.dir, &o.manifest),
                Err(e) => fail(&e),
            }
        }
        Command::Report { run_dir } => match config::report_run(&run_dir) {
            Ok(r) => {
                for m in &r.mismatches {
                    println!("MISMATCH {m}");
                }
                let code = finish(&run_dir, &r.manifest);
                if r.mismatches.is_empty() {
                    code
                } else {
                    ExitCode::from(1)
                }
            }
            Err(e) => fail(&e),
        },
    }
}
