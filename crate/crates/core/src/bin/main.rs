use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use binaural_rtf::experiment::config::ExperimentConfig;
use binaural_rtf::experiment::run_experiment;
use binaural_rtf::rtf::Estimator;
use binaural_rtf::{Error, Result};

/// Binaural MVDR experiments comparing RTF estimators.
#[derive(Debug, Parser)]
#[command(name = "binaural-rtf", version)]
struct Cli {
    /// TOML experiment configuration; built-in defaults are used without it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Estimators to run (B, CW, SC, SC_opt, true); repeat or comma-separate.
    #[arg(long, value_delimiter = ',')]
    estimator: Vec<String>,
    /// Input SNRs in dB.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    snr: Vec<f64>,
    /// Reverberation presets such as 250ms or anechoic.
    #[arg(long, value_delimiter = ',')]
    reverb: Vec<String>,
    /// Random seeds.
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    /// Use time-invariant filters from the long-term statistics.
    #[arg(long = "static")]
    static_filters: bool,
    /// Weight all SNR bands equally.
    #[arg(long)]
    uniform_weights: bool,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write enhanced stereo WAV files.
    #[arg(long, overrides_with = "no_write_audio")]
    write_audio: bool,
    /// Skip writing enhanced audio.
    #[arg(long, overrides_with = "write_audio")]
    no_write_audio: bool,
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    if !cli.estimator.is_empty() {
        cfg.estimators = cli
            .estimator
            .iter()
            .map(|s| s.parse::<Estimator>())
            .collect::<Result<_>>()?;
    }
    if !cli.snr.is_empty() {
        cfg.snr_grid_db = cli.snr.clone();
    }
    if !cli.reverb.is_empty() {
        cfg.reverb_grid = Some(cli.reverb.clone());
    }
    if !cli.seed.is_empty() {
        cfg.seeds = cli.seed.clone();
    }
    cfg.static_filters |= cli.static_filters;
    cfg.uniform_weights |= cli.uniform_weights;
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if cli.write_audio {
        cfg.write_audio = true;
    }
    if cli.no_write_audio {
        cfg.write_audio = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = build_config(cli)?;
    let summary = run_experiment(&cfg)?;
    println!(
        "{} rows written to {} and {}",
        summary.rows.len(),
        summary.csv.display(),
        summary.json.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", chain(&e));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn chain(e: &Error) -> String {
    let mut msg = e.to_string();
    let mut src = std::error::Error::source(e);
    while let Some(s) = src {
        let next = s.to_string();
        if !msg.contains(&next) {
            msg.push_str(": ");
            msg.push_str(&next);
        }
        src = s.source();
    }
    msg
}
