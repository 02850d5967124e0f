use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use penalty_path::Mode;
use ppath_cli::{DenoiseOptions, Overrides, SolveOptions};

#[derive(Parser)]
#[command(name = "ppath", version, about = "Exact-penalty solution paths for convex programs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Constrained,
    Regularization,
}

#[derive(Args)]
struct EngineArgs {
    /// Stop a constrained path once rho exceeds this value.
    #[arg(long)]
    rho_cap: Option<f64>,
    /// Maximum number of segments.
    #[arg(long)]
    segments: Option<usize>,
    /// Lower end of a regularization path.
    #[arg(long)]
    rho_min: Option<f64>,
    /// Stationarity residual accepted on reported points.
    #[arg(long)]
    tol_stat: Option<f64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
}

impl EngineArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            rho_cap: self.rho_cap,
            segments: self.segments,
            rho_min: self.rho_min,
            tol_stat: self.tol_stat,
            mode: self.mode.map(|m| match m {
                ModeArg::Constrained => Mode::Constrained,
                ModeArg::Regularization => Mode::Regularization,
            }),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Follow the path of a problem file and print a summary.
    Solve {
        problem: PathBuf,
        /// Write the trace CSV here.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Also write the summary here.
        #[arg(long)]
        summary: Option<PathBuf>,
        /// Integrate the path ODE even for quadratic programs.
        #[arg(long)]
        integrate: bool,
        #[command(flatten)]
        engine: EngineArgs,
    },
    /// Total-variation regularization path of a graymap.
    Denoise {
        image: PathBuf,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Snapshot positions as fractions of rho_max.
        #[arg(long, value_delimiter = ',', default_value = "1,0.5,0.25,0.1,0")]
        snapshots: Vec<f64>,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[command(flatten)]
        engine: EngineArgs,
    },
    /// Turn a trace into per-coordinate polylines split at events.
    PlotData {
        trace: PathBuf,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve {
            problem,
            trace,
            summary,
            integrate,
            engine,
        } => ppath_cli::solve(
            &problem,
            &SolveOptions {
                trace,
                summary,
                integrate,
                overrides: engine.overrides(),
            },
        ),
        Command::Denoise {
            image,
            out_dir,
            snapshots,
            trace,
            engine,
        } => ppath_cli::denoise(
            &image,
            &DenoiseOptions {
                out_dir,
                snapshots,
                trace,
                overrides: engine.overrides(),
            },
        ),
        Command::PlotData { trace, output } => ppath_cli::plot_data(&trace, output.as_deref()),
    };
    match result {
        Ok(out) => {
            let _ = std::io::stdout().write_all(out.report.as_bytes());
            ExitCode::from(out.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
