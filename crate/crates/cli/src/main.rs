use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use rom_cli::commands::{self, SampleMode, SobolTarget};
use rom_cli::{CliError, Context, PipelineConfig};

#[derive(Parser)]
#[command(name = "romkit", version, about = "Reduced order modeling pipeline for parametric wave propagation")]
struct Cli {
    /// Pipeline configuration (TOML); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the root seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for independent high-fidelity solves.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Bo,
    Lhs,
}

#[derive(Args)]
struct ThetaArgs {
    /// Comma-separated parameter vector; repeatable.
    #[arg(long)]
    theta: Vec<String>,
    /// File with one comma-separated parameter vector per line.
    #[arg(long)]
    theta_file: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the high-fidelity solver.
    Simulate(ThetaArgs),
    /// Select training parameters and build the reduced basis.
    Sample {
        #[arg(long, value_enum, default_value = "bo")]
        mode: Mode,
        /// LHS design size.
        #[arg(long)]
        count: Option<usize>,
        /// Completed BO run whose size and test set the LHS run reuses.
        #[arg(long)]
        bo_run: Option<PathBuf>,
    },
    /// Train the networks on a sampled training set.
    Train {
        #[arg(long)]
        data: PathBuf,
    },
    /// Predict full fields with a trained bundle.
    Predict {
        #[arg(long)]
        bundle: PathBuf,
        #[command(flatten)]
        thetas: ThetaArgs,
        /// Directory of `simulate` outputs, in the same order, for nRMSE.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Monte Carlo mean and standard deviation fields.
    Uq {
        #[arg(long)]
        bundle: PathBuf,
        /// Also write plot-data files.
        #[arg(long)]
        report: bool,
    },
    /// First-order and total Sobol indices.
    Sobol {
        #[arg(long, required_unless_present = "ishigami")]
        bundle: Option<PathBuf>,
        /// Analyze the built-in Ishigami function instead of a bundle.
        #[arg(long, conflicts_with = "bundle")]
        ishigami: bool,
        #[arg(long)]
        report: bool,
    },
    /// Normalized damage indices at one node.
    Di {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        node: Option<usize>,
        #[arg(long)]
        report: bool,
    },
    /// UQ, damage and Sobol outputs with plot data.
    Report {
        #[arg(long)]
        bundle: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    config.validate()?;
    let dim = config.space()?.dim();
    let ctx = Context::new(config, cli.out, cli.jobs);
    match cli.command {
        Command::Simulate(t) => {
            let thetas = commands::collect_thetas(&t.theta, t.theta_file.as_deref(), dim)?;
            commands::simulate(&ctx, &thetas)?;
        }
        Command::Sample { mode, count, bo_run } => {
            let mode = match mode {
                Mode::Bo => SampleMode::Bo,
                Mode::Lhs => SampleMode::Lhs,
            };
            commands::sample(&ctx, mode, count, bo_run.as_deref())?;
        }
        Command::Train { data } => {
            commands::train(&ctx, &data)?;
        }
        Command::Predict { bundle, thetas, truth } => {
            let thetas = commands::collect_thetas(&thetas.theta, thetas.theta_file.as_deref(), dim)?;
            commands::predict(&ctx, &bundle, &thetas, truth.as_deref())?;
        }
        Command::Uq { bundle, report } => {
            commands::uq_cmd(&ctx, &bundle, report)?;
        }
        Command::Sobol { bundle, ishigami, report } => {
            let target = match &bundle {
                Some(b) if !ishigami => SobolTarget::Bundle(b),
                _ => SobolTarget::Ishigami,
            };
            commands::sobol_cmd(&ctx, target, report)?;
        }
        Command::Di { bundle, node, report } => {
            commands::di_cmd(&ctx, &bundle, node, report)?;
        }
        Command::Report { bundle } => commands::report(&ctx, &bundle)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("romkit: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
