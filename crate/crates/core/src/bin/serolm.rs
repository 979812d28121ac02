use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serolm::pipeline::{exit_code, Pipeline, PipelineConfig, Stage};
use serolm::service::{serve, ScoringPipeline};
use serolm::Result;

#[derive(Parser)]
#[command(version, about = "Staged serological risk pipeline")]
struct Cli {
    /// TOML pipeline config; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesizes or ingests the cohort.
    Generate,
    /// Filters, splits and imputes.
    Preprocess,
    /// Ranks features with GBDT and takes the top-k union.
    Select,
    /// Fits the four classical baselines on both targets.
    TrainBaselines,
    /// Builds prompts and trains the sequence model.
    TrainSeq,
    /// Scores every model on the test split.
    Evaluate,
    /// Writes the text report and ablation table.
    Report,
    /// Compares degradation under higher missingness.
    MissingExperiment,
    /// Runs every stage in order.
    RunAll,
    /// Serves predictions from a finished run.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
    },
}

fn config(cli: &Cli) -> Result<PipelineConfig> {
    let mut c = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    if let Some(o) = &cli.out {
        c.output_dir = o.clone();
    }
    Ok(c)
}

fn stage(cmd: &Command) -> Option<Stage> {
    Some(match cmd {
        Command::Generate => Stage::Generate,
        Command::Preprocess => Stage::Preprocess,
        Command::Select => Stage::Select,
        Command::TrainBaselines => Stage::TrainBaselines,
        Command::TrainSeq => Stage::TrainSeq,
        Command::Evaluate => Stage::Evaluate,
        Command::Report => Stage::Report,
        Command::MissingExperiment => Stage::MissingExperiment,
        Command::RunAll => Stage::RunAll,
        Command::Serve { .. } => return None,
    })
}

fn run(cli: &Cli) -> Result<()> {
    let pipeline = Pipeline::new(config(cli)?)?;
    match (&cli.command, stage(&cli.command)) {
        (_, Some(s)) => {
            pipeline.run(s)?;
            println!("{}", pipeline.run_dir().display());
        }
        (Command::Serve { bind }, None) => {
            let scoring = ScoringPipeline::load(&pipeline)?;
            eprintln!("serving {} on http://{bind}", scoring.run());
            tokio::runtime::Runtime::new()?.block_on(serve(scoring, *bind))?;
        }
        _ => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
