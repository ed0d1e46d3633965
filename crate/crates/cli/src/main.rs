//! `hri-shield` command-line tool.

mod commands;

use std::net::IpAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use commands::CliError;

#[derive(Debug, Parser)]
#[command(name = "hri-shield", version, about = "Uncertainty-aware safety filter for human-robot interaction")]
struct Cli {
    /// Overrides the seed for data generation, training and scenario runs.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory for checkpoints, traces and reports.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,

    #[arg(long, global = true, default_value = "info")]
    log_level: log::LevelFilter,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic hand-motion corpus as CSV recordings.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        sequences: Option<usize>,
    },
    /// Train the forecaster and write `model.json`.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        sequences: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// ADE/FDE of the model and the baselines on held-out data.
    ForecastEval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 1000.0)]
        horizon_ms: f64,
        #[arg(long)]
        sequences: Option<usize>,
    },
    /// Empirical interval coverage on held-out data.
    Calibrate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        sequences: Option<usize>,
        /// Central interval levels, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "0.9,0.95,0.99")]
        levels: Vec<f64>,
    },
    /// Run one scenario over its seeds, writing traces and metrics.
    RunScenario {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run every cell of a sweep grid and write the report.
    Sweep {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Live WebSocket service.
    Serve {
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 30.0)]
        rate_hz: f64,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().filter_level(cli.log_level).format_timestamp_millis().init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let ctx = commands::Context::new(cli.out_dir, cli.seed)?;
    match cli.command {
        Command::Synth { config, sequences } => commands::synth(&ctx, config.as_deref(), sequences),
        Command::Train { config, sequences, epochs } => commands::train(&ctx, config.as_deref(), sequences, epochs),
        Command::ForecastEval { config, checkpoint, horizon_ms, sequences } => {
            commands::forecast_eval(&ctx, config.as_deref(), checkpoint, horizon_ms, sequences)
        }
        Command::Calibrate { config, checkpoint, sequences, levels } => {
            commands::calibrate(&ctx, config.as_deref(), checkpoint, sequences, &levels)
        }
        Command::RunScenario { config, checkpoint } => commands::run_scenario(&ctx, &config, checkpoint),
        Command::Sweep { grid, checkpoint, format } => {
            let format = match format {
                Format::Csv => hri_shield::harness::ReportFormat::Csv,
                Format::Json => hri_shield::harness::ReportFormat::Json,
            };
            commands::sweep(&ctx, &grid, checkpoint, format)
        }
        Command::Serve { port, host, config, rate_hz, checkpoint } => {
            commands::serve(&ctx, (host, port).into(), config.as_deref(), rate_hz, checkpoint)
        }
    }
}
