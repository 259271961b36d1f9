mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ntp_core::{CompareAxis, Precision};

/// Profile neural-network topologies described in XML.
#[derive(Debug, Parser)]
#[command(name = "ntp", version, about)]
pub(crate) struct Cli {
    #[command(subcommand)]
    pub(crate) command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse and validate a topology, then print its shape table.
    Validate {
        topology: PathBuf,
    },
    /// Cost-model report without executing anything.
    Describe(DescribeArgs),
    /// Build, execute and profile a topology.
    Run(RunArgs),
    /// Compare two or more reports against the first.
    Compare(CompareArgs),
    /// Run one topology per value of a single attribute and compare the results.
    Sweep(SweepArgs),
    /// Measure this machine's compute and bandwidth roofs.
    Calibrate(CalibrateArgs),
}

#[derive(Debug, Args)]
pub(crate) struct ModelArgs {
    pub(crate) topology: PathBuf,
    /// Rewrite the B axis of every input.
    #[arg(long)]
    pub(crate) batch: Option<usize>,
    /// Weight storage precision.
    #[arg(long, default_value = "fp32")]
    pub(crate) precision: Precision,
    /// Machine spec JSON for the cost model (defaults to a generic CPU).
    #[arg(long)]
    pub(crate) machine: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub(crate) struct DescribeArgs {
    #[command(flatten)]
    pub(crate) model: ModelArgs,
    /// Also project the bounds onto this machine.
    #[arg(long)]
    pub(crate) project: Option<PathBuf>,
    #[arg(long)]
    pub(crate) out: Option<PathBuf>,
    #[arg(long)]
    pub(crate) csv: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub(crate) struct ExecArgs {
    #[arg(long, env = "NTP_THREADS", default_value_t = 1)]
    pub(crate) threads: usize,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    pub(crate) reps: u64,
    #[arg(long, default_value_t = 1)]
    pub(crate) warmup: usize,
    /// time, time+alloc or hwc
    #[arg(long, default_value = "time+alloc")]
    pub(crate) collector: String,
    #[arg(long, default_value_t = 0)]
    pub(crate) seed: u64,
    /// Profile the whole graph, ignoring markers.
    #[arg(long)]
    pub(crate) whole: bool,
    /// Timestamp recorded in the report (defaults to now, UTC).
    #[arg(long)]
    pub(crate) timestamp: Option<String>,
}

#[derive(Debug, Args)]
pub(crate) struct RunArgs {
    #[command(flatten)]
    pub(crate) model: ModelArgs,
    #[command(flatten)]
    pub(crate) exec: ExecArgs,
    /// Load weights from an NTPW container instead of generating them.
    #[arg(long)]
    pub(crate) weights: Option<PathBuf>,
    /// Write the generated weights to an NTPW container.
    #[arg(long)]
    pub(crate) save_weights: Option<PathBuf>,
    /// Write the generated inputs to an NTPW container.
    #[arg(long)]
    pub(crate) save_inputs: Option<PathBuf>,
    /// Write every node output of the first collected repetition to an NTPW container.
    #[arg(long)]
    pub(crate) dump_outputs: Option<PathBuf>,
    /// Report JSON path (stdout when omitted).
    #[arg(long)]
    pub(crate) out: Option<PathBuf>,
    #[arg(long)]
    pub(crate) csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub(crate) struct CompareArgs {
    #[arg(required = true, num_args = 1..)]
    pub(crate) reports: Vec<PathBuf>,
    #[arg(long, default_value = "layers")]
    pub(crate) axis: CompareAxis,
    #[arg(long)]
    pub(crate) out: Option<PathBuf>,
    #[arg(long)]
    pub(crate) csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub(crate) struct SweepArgs {
    #[command(flatten)]
    pub(crate) model: ModelArgs,
    #[command(flatten)]
    pub(crate) exec: ExecArgs,
    /// Attribute to vary, as `element_id.attribute`.
    #[arg(long)]
    pub(crate) param: String,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub(crate) values: Vec<String>,
    /// Directory for the per-variant reports and the comparison.
    #[arg(long)]
    pub(crate) out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub(crate) struct CalibrateArgs {
    #[arg(long)]
    pub(crate) out: PathBuf,
    #[arg(long, env = "NTP_THREADS", default_value_t = 1)]
    pub(crate) threads: usize,
    /// Use this last-level cache size instead of probing for it.
    #[arg(long)]
    pub(crate) llc_bytes: Option<u64>,
    #[arg(long, default_value = "calibrated")]
    pub(crate) name: String,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Validate { topology } => commands::validate(&topology),
        Command::Describe(a) => commands::describe(&a),
        Command::Run(a) => commands::run(&a),
        Command::Compare(a) => commands::compare(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Calibrate(a) => commands::calibrate(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ntp: {e}");
            ExitCode::from(e.code())
        }
    }
}
