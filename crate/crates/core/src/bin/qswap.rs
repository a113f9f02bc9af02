use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qswap::cli::{
    cmd_analyze, cmd_simulate, cmd_stability, configure_threads, AnalyzeOptions, SimulateOptions,
    StabilityOptions,
};
use qswap::engine::config::ChshSettings;
use qswap::polarization::BellKind;
use qswap::Error;

#[derive(Parser)]
#[command(
    name = "qswap",
    version,
    about = "Entanglement-swapping network simulator and time-tag analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario into a directory of tag files.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Use full-length dwells.
        #[arg(long)]
        paper_scale: bool,
        /// Multiply every dwell duration by this factor.
        #[arg(long)]
        duration_scale: Option<f64>,
    },
    /// Count four-folds and compute fringes, correlations and S.
    Analyze {
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated ROI half-widths in ps.
        #[arg(long, value_delimiter = ',')]
        roi: Option<Vec<f64>>,
        /// psi+ or psi-.
        #[arg(long)]
        herald: Option<String>,
        /// Waveplate angles a,a',b,b' in degrees.
        #[arg(long)]
        settings: Option<String>,
        /// Output directory; defaults to <data>/analysis.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Long-run pair rate, visibility and S under polarization drift.
    Stability {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        hours: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        no_apc: bool,
    },
}

fn run(cli: Cli) -> Result<(), Error> {
    configure_threads()?;
    match cli.command {
        Command::Simulate {
            config,
            out,
            seed,
            paper_scale,
            duration_scale,
        } => {
            let m = cmd_simulate(
                &config,
                &out,
                &SimulateOptions {
                    seed,
                    paper_scale,
                    duration_scale,
                },
            )?;
            println!("wrote {} files to {}", m.artifacts.len(), out.display());
        }
        Command::Analyze {
            data,
            roi,
            herald,
            settings,
            out,
        } => {
            let opts = AnalyzeOptions {
                roi_ps: roi,
                herald: herald.map(|h| h.parse::<BellKind>()).transpose()?,
                settings: settings.map(|s| ChshSettings::parse(&s)).transpose()?,
            };
            let out = out.unwrap_or_else(|| data.join("analysis"));
            let (_, report) = cmd_analyze(&data, &out, &opts)?;
            for p in &report.s_vs_rate {
                println!(
                    "roi {:>6} ps  rate {:>10.4} /s  S = {:.3} ± {:.3}",
                    p.roi_ps, p.measured_rate_hz, p.s, p.standard_error
                );
            }
        }
        Command::Stability {
            config,
            hours,
            out,
            seed,
            no_apc,
        } => {
            let (_, s) = cmd_stability(&config, hours, &out, &StabilityOptions { seed, no_apc })?;
            let min_s = s.iter().map(|x| x.s).fold(f64::INFINITY, f64::min);
            println!("{} samples, min S = {min_s:.3}", s.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
