use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use carp_cli::commands;
use carp_cli::config::*;
use carp_cli::exit_codes;

#[derive(Parser)]
#[command(
    name = "carp",
    about = "Synthetic causal pipeline for prompt decoders, semantic alignment scores, and SAS-regularized reward training",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON configuration file for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed field(s) of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the primary output path (out/out_dir) of the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for parallelizable stages; never changes results.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (embeddings, clean signals, sidecar).
    SynthGen,
    /// Project responses into TopK codes; optionally fill flip flags.
    Encode,
    /// Fit the prompt decoder (closed form or SGD).
    FitDecoder,
    /// Score responses with a fitted decoder.
    ScoreSas,
    /// Train a reward model (vanilla or SAS-regularized).
    TrainRm,
    /// Selection accuracy over scored pairs.
    EvalPairs,
    /// Best-of-N selection over candidate sets.
    BestOfN,
    /// Run the full theory verification harness.
    VerifyTheory,
    /// Run the end-to-end pipeline and compare vanilla vs SAS-regularized
    /// selection.
    Pipeline,
    /// Export histogram/scatter CSVs from score files.
    PlotExport,
}

fn load_config<T: serde::de::DeserializeOwned>(path: &Option<PathBuf>) -> anyhow::Result<T> {
    let path = path
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("--config is required for this command"))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
    serde_json::from_str(&text)
        .map_err(|e| anyhow::anyhow!("invalid config {}: {e}", path.display()))
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    let threads = cli.threads.max(1);
    match cli.command {
        Command::SynthGen => {
            let mut config: SynthGenConfig = load_config(&cli.config)?;
            if let Some(seed) = cli.seed {
                config.gen.seed = seed;
            }
            if let Some(out) = &cli.out {
                config.out_dir = out.clone();
            }
            config.gen.validate()?;
            commands::synth_gen::run(&config)?;
        }
        Command::Encode => {
            let mut config: EncodeConfig = load_config(&cli.config)?;
            if let Some(out) = &cli.out {
                config.out = out.clone();
            }
            commands::encode::run(&config)?;
        }
        Command::FitDecoder => {
            let mut config: FitDecoderConfig = load_config(&cli.config)?;
            if let Some(seed) = cli.seed {
                if let Some(sgd) = &mut config.sgd {
                    sgd.seed = seed;
                }
            }
            if let Some(out) = &cli.out {
                config.out = out.clone();
            }
            commands::fit_decoder::run(&config)?;
        }
        Command::ScoreSas => {
            let mut config: ScoreSasConfig = load_config(&cli.config)?;
            if let Some(out) = &cli.out {
                config.out = out.clone();
            }
            commands::score_sas::run(&config)?;
        }
        Command::TrainRm => {
            let mut config: TrainRmConfig = load_config(&cli.config)?;
            if let Some(seed) = cli.seed {
                config.seed = seed;
            }
            if let Some(out) = &cli.out {
                config.out = out.clone();
            }
            commands::train_rm::run(&config)?;
        }
        Command::EvalPairs => {
            let mut config: EvalPairsConfig = load_config(&cli.config)?;
            if let Some(out) = &cli.out {
                config.out = out.clone();
            }
            commands::eval_pairs::run(&config)?;
        }
        Command::BestOfN => {
            let mut config: BestOfNConfig = load_config(&cli.config)?;
            if let Some(out) = &cli.out {
                config.out = out.clone();
            }
            commands::best_of_n::run(&config)?;
        }
        Command::VerifyTheory => {
            let mut config: VerifyTheoryConfig = load_config(&cli.config)?;
            if let Some(seed) = cli.seed {
                config.seed = seed;
            }
            let failures = commands::verify_theory::run(&config, threads)?;
            if !failures.is_empty() {
                eprintln!("theory checks failed: {}", failures.join(", "));
                return Ok(exit_codes::PROPERTY_FAILURE);
            }
        }
        Command::Pipeline => {
            let mut config: PipelineConfig = load_config(&cli.config)?;
            if let Some(seed) = cli.seed {
                config.gen.seed = seed;
            }
            if let Some(out) = &cli.out {
                config.out_dir = out.clone();
            }
            commands::pipeline::run(&config)?;
        }
        Command::PlotExport => {
            let mut config: PlotExportConfig = load_config(&cli.config)?;
            if let Some(out) = &cli.out {
                config.hist_out = out.clone();
            }
            commands::plot_export::run(&config)?;
        }
    }
    Ok(exit_codes::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_codes::USAGE_ERROR as u8)
        }
    }
}
