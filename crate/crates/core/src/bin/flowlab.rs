use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};
use flowlab::lab::{self, Check, ExperimentSpec, RunOptions};
use flowlab::{LabError, Result};

/// Environment variable naming the default output root.
const OUT_ENV: &str = "FLOWLAB_OUT";

#[derive(Parser)]
#[command(
    name = "flowlab",
    version,
    about = "Flow matching laboratory: recipes, checks and plots"
)]
struct Cli {
    /// Output directory (overrides the spec's `output`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Added to every seed in the spec.
    #[arg(long, global = true, default_value_t = 0)]
    seed_offset: u64,
    /// Seeds run concurrently when determinism is off.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Run seeds sequentially.
    #[arg(long, global = true, default_value_t = true, action = ArgAction::Set)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute an experiment spec.
    Run { spec: PathBuf },
    /// Run a built-in numerical check and print its JSON report.
    Verify {
        #[arg(value_enum)]
        check: Check,
    },
    /// Render a samples-over-reference scatter plot.
    Plot {
        samples: PathBuf,
        reference: PathBuf,
        output: PathBuf,
    },
}

fn out_dir(cli_out: Option<PathBuf>, spec: &ExperimentSpec) -> PathBuf {
    cli_out.or_else(|| spec.output.clone()).unwrap_or_else(|| {
        let root = std::env::var_os(OUT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"));
        root.join(&spec.recipe)
    })
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { spec } => {
            let spec = ExperimentSpec::from_path(&spec)?;
            let opts = RunOptions {
                out: out_dir(cli.out, &spec),
                seed_offset: cli.seed_offset,
                jobs: cli.jobs,
                deterministic: cli.deterministic,
            };
            let manifest = lab::run(&spec, &opts)?;
            println!("{}", opts.out.join(lab::MANIFEST_NAME).display());
            for r in &manifest.runs {
                eprintln!("seed {} finished in {:.1}s", r.seed, r.wall_clock_seconds);
            }
            Ok(())
        }
        Command::Verify { check } => {
            let report = lab::verify(check)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            if report.passed {
                Ok(())
            } else {
                Err(LabError::Check(format!(
                    "{check:?}: worst error {} exceeds tolerance {}",
                    report.worst, report.tolerance
                )))
            }
        }
        Command::Plot {
            samples,
            reference,
            output,
        } => lab::plot_files(&samples, &reference, &output),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
