use clap::{Parser, Subcommand, ValueEnum};
use drowsy_mpc_cli::{commands, CliError, Format};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "dmpc", version, about = "Drowsiness-minimizing control of office temperature and lighting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Text,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Text => Format::Text,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fit drowsiness, temperature-lag and illuminance models from telemetry.
    Identify {
        /// Telemetry CSV (step,worker_id,dl,effort,temp_c,illum_lx,temp_set_c,illum_set_lx).
        telemetry: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Ridge penalty on the drowsiness slopes.
        #[arg(long, default_value_t = 0.0)]
        ridge: f64,
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
    },
    /// Solve one horizon for a snapshot and print the schedule.
    Solve {
        /// Snapshot CSV (worker_id,dl,dl_prev,effort,temp_c,illum_lx).
        snapshot: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
    },
    /// Run a closed-loop scenario and write trace, metrics and telemetry.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
    },
    /// Compare arms across trace files.
    Report {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        format: FormatArg,
    },
    /// Turn a stream of JSON instant records into setpoint records.
    Daemon {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Read records from a file instead of standard input.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Write setpoint records to a file instead of standard output.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut stdout = std::io::stdout().lock();
    let mut stderr = std::io::stderr();
    match cli.command {
        Command::Identify {
            telemetry,
            out_dir,
            ridge,
            format,
        } => commands::identify(&telemetry, &out_dir, ridge, format.into(), &mut stdout).map(drop),
        Command::Solve {
            snapshot,
            config,
            model,
            seed,
            out_dir,
            format,
        } => commands::solve(
            &config,
            &model,
            &snapshot,
            seed,
            out_dir.as_deref(),
            format.into(),
            &mut stdout,
        )
        .map(drop),
        Command::Simulate {
            config,
            seed,
            out_dir,
            format,
        } => commands::simulate(&config, seed, &out_dir, format.into(), &mut stdout).map(drop),
        Command::Report {
            traces,
            out_dir,
            format,
        } => commands::report(&traces, out_dir.as_deref(), format.into(), &mut stdout, &mut stderr)
            .map(drop),
        Command::Daemon {
            config,
            model,
            seed,
            input,
            output,
            out_dir,
        } => commands::daemon(
            &config,
            &model,
            seed,
            input.as_deref(),
            output.as_deref(),
            out_dir.as_deref(),
            &mut stdout,
            &mut stderr,
        )
        .map(drop),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
