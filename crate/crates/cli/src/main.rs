use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};
use planeml::backends::ModelShape;
use planeml::driver::{
    estimate_report, render_report, run_compile, run_search_only, DriverError, Job, Overrides, RunSummary,
};
use planeml::frontend::parse_platform;

#[derive(Parser)]
#[command(
    name = "planeml",
    version,
    about = "Compile declarative pipeline specs into data-plane ML programs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Pipeline spec file.
    spec: PathBuf,
    /// Output directory.
    #[arg(long, visible_alias = "out-dir")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    doe: Option<usize>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            budget: self.budget,
            doe: self.doe,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Search, train, emit code and compose every model of a spec.
    Compile(RunArgs),
    /// Search only; writes regret traces and best configurations.
    Search(RunArgs),
    /// Estimate resources and performance of a model shape without training.
    #[command(group(ArgGroup::new("shape").required(true).args(["kmeans", "svm", "mlp"])))]
    Estimate {
        /// Platform descriptor file.
        #[arg(long)]
        target: PathBuf,
        /// k-means with K clusters.
        #[arg(long)]
        kmeans: Option<usize>,
        /// Linear SVM over D features.
        #[arg(long)]
        svm: Option<usize>,
        /// MLP layer widths, input first.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        mlp: Option<Vec<usize>>,
    },
    /// Verify a bundle and print a summary.
    Report { dir: PathBuf },
}

fn finish(summary: &RunSummary) -> ExitCode {
    for m in &summary.infeasible_models {
        eprintln!("error: no feasible configuration for model `{m}`");
    }
    if summary.infeasible_models.is_empty() && !summary.composition_feasible {
        eprintln!("error: composed pipeline violates the platform constraints");
    }
    ExitCode::from(summary.exit_code() as u8)
}

fn fail(e: DriverError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn run_command(cmd: Command) -> Result<ExitCode, DriverError> {
    match cmd {
        Command::Compile(a) => {
            let job = Job::load(&a.spec, a.overrides())?;
            Ok(finish(&run_compile(&job, &a.out)?))
        }
        Command::Search(a) => {
            let job = Job::load(&a.spec, a.overrides())?;
            Ok(finish(&run_search_only(&job, &a.out)?))
        }
        Command::Estimate {
            target,
            kmeans,
            svm,
            mlp,
        } => {
            let platform = read_platform(&target)?;
            let shape = match (kmeans, svm, mlp) {
                (Some(k), _, _) => ModelShape::Kmeans { k },
                (_, Some(d), _) => ModelShape::Svm { features: d },
                (_, _, Some(topology)) => ModelShape::Mlp { topology },
                _ => unreachable!("clap requires one shape"),
            };
            let report = estimate_report(&platform, &shape)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("json serializes"));
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { dir } => {
            print!("{}", render_report(&dir)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn read_platform(path: &Path) -> Result<planeml::frontend::PlatformSpec, DriverError> {
    let text = std::fs::read_to_string(path).map_err(|source| DriverError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(parse_platform(&text)?)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    run_command(cli.command).unwrap_or_else(fail)
}
