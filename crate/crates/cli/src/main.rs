use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bsm_cli::commands::{self, Logger};
use bsm_cli::{CliError, ExperimentConfig};
use clap::{Args, Parser, Subcommand};

/// Binaural signal matching: filter design, evaluation and rendering.
#[derive(Parser)]
#[command(name = "bsm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML) or a run manifest to replay.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (design/evaluate/report) or file (render/simulate).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the iMagLS weight and disables any configured sweep.
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// Overrides the MSE crossover frequency.
    #[arg(long = "crossover-hz", global = true)]
    crossover_hz: Option<f64>,
    /// Worker threads (0 = automatic).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Progress messages on stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Design MSE, MagLS and iMagLS banks.
    Design,
    /// Write error CSVs for the banks of a design run.
    Evaluate {
        /// Directory holding mse.bsmf, magls.bsmf and imagls.bsmf
        /// (default: the output directory).
        #[arg(long)]
        banks: Option<PathBuf>,
    },
    /// Render a multichannel recording to binaural stereo.
    Render {
        /// Filter bank or FIR set (BSMF container).
        bank: PathBuf,
        /// Input WAVE file, one channel per microphone.
        input: PathBuf,
        /// FIR length used when converting a filter bank (default: the
        /// configured render length).
        #[arg(long)]
        taps: Option<usize>,
    },
    /// Simulate microphone signals of a far-field source.
    Simulate {
        /// Mono source WAVE file.
        input: PathBuf,
        /// Source direction `theta_deg,phi_deg`.
        #[arg(long, allow_hyphen_values = true)]
        direction: String,
        /// Array geometry file (default: the configured array).
        #[arg(long)]
        geometry: Option<PathBuf>,
        /// Length of the simulated array impulse responses (default: the
        /// configured render length).
        #[arg(long)]
        taps: Option<usize>,
    },
    /// Merge the CSVs of an evaluation directory into a plot-ready bundle.
    Report {
        /// Evaluation output directory.
        input: PathBuf,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(l) = common.lambda {
        cfg.imagls.lambda = l;
        cfg.imagls.lambda_sweep.clear();
    }
    if let Some(x) = common.crossover_hz {
        cfg.design.crossover_hz = x;
    }
    if let Some(t) = common.threads {
        cfg.run.threads = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn require_out(common: &Common) -> Result<&Path, CliError> {
    common
        .out
        .as_deref()
        .ok_or_else(|| CliError::Config("--out is required".into()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let common = &cli.common;
    let cfg = load_config(common)?;
    if cfg.run.threads > 0 {
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.run.threads)
            .build_global();
    }
    let log = Logger {
        verbose: common.verbose,
    };
    let config_path = common.config.as_deref();
    match &cli.command {
        Command::Design => {
            let out = require_out(common)?;
            commands::cmd_design(&cfg, config_path, out, &log)?;
            log.log(&format!("wrote {}", out.display()));
        }
        Command::Evaluate { banks } => {
            let out = require_out(common)?;
            let banks = banks.as_deref().unwrap_or(out);
            let (_, summary) = commands::cmd_evaluate(&cfg, config_path, banks, out, &log)?;
            if let Some(g) = summary.ild_gain_db {
                log.log(&format!("ILD gain imagls vs magls: {g:.2} dB"));
            }
        }
        Command::Render { bank, input, taps } => {
            let out = require_out(common)?;
            commands::cmd_render(bank, input, out, taps.unwrap_or(cfg.render.taps), &cfg)?;
        }
        Command::Simulate {
            input,
            direction,
            geometry,
            taps,
        } => {
            let out = require_out(common)?;
            let dir = commands::parse_direction(direction)?;
            commands::cmd_simulate(
                &cfg,
                geometry.as_deref(),
                &dir,
                input,
                out,
                taps.unwrap_or(cfg.render.taps),
            )?;
        }
        Command::Report { input } => {
            let default_out = input.join("report");
            let out = common.out.as_deref().unwrap_or(&default_out);
            commands::cmd_report(input, out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("bsm: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
