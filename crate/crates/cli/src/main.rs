mod config;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{ConfigError, PipelineConfig};
use crate::stages::{Pipeline, Stage};

#[derive(Parser)]
#[command(name = "thermomark", version, about = "Plantar thermography biomarker pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML configuration, or a stage's provenance.json to repeat its run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed; overrides every stage seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "THERMOMARK_OUT")]
    out: Option<PathBuf>,
    /// Run only the named stage instead of it and everything after it.
    #[arg(long, global = true)]
    stage_only: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate a synthetic cohort.
    Synth,
    /// STAPLE consensus, U-Net training, mask prediction and thermal masking.
    Segment,
    /// Train the autoencoder and export latents.
    Represent,
    /// Ward clustering, elbow, silhouette, t-SNE, exemplars and plots.
    Cluster,
    /// Clinical risk profiles.
    Profile,
    /// Cluster-wise comparison table.
    Associate,
    /// Prediction tasks and the cluster-label sensitivity run.
    Predict,
    /// Every stage, end to end.
    RunAll,
    /// Print the effective configuration as TOML.
    ShowConfig,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, ConfigError> {
    let base = match &cli.config {
        None => PipelineConfig::default(),
        Some(p) if p.extension().is_some_and(|e| e == "json") => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| ConfigError(format!("cannot read {}: {e}", p.display())))?;
            let mut v: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", p.display())))?;
            let cfg = v.get_mut("config").map(serde_json::Value::take).unwrap_or(v);
            serde_json::from_value(cfg).map_err(|e| ConfigError(format!("{}: {e}", p.display())))?
        }
        Some(p) => PipelineConfig::load(p)?,
    };
    base.resolve(cli.seed, cli.out.clone())
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let cfg = load_config(cli)?;
    if let Command::ShowConfig = cli.command {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let first = match cli.command {
        Command::Synth => Stage::Synth,
        Command::Segment => Stage::Segment,
        Command::Represent => Stage::Represent,
        Command::Cluster => Stage::Cluster,
        Command::Profile => Stage::Profile,
        Command::Associate => Stage::Associate,
        Command::Predict => Stage::Predict,
        Command::RunAll if cfg.paths.manifest.is_some() => Stage::Segment,
        Command::RunAll => Stage::Synth,
        Command::ShowConfig => unreachable!(),
    };
    let stages: Vec<Stage> = if cli.stage_only && !matches!(cli.command, Command::RunAll) {
        vec![first]
    } else {
        Stage::ALL.iter().copied().skip_while(|&s| s != first).collect()
    };
    let pipeline = Pipeline::new(cfg)?;
    for stage in stages {
        pipeline.run(stage)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
