//! Runs every stage from a TOML config (default: the planted config) and
//! prints where the artifacts went.
//!
//! cargo run --release --example pipeline_run_all -- [configs/planted.toml]

use serolm::pipeline::{files, Pipeline, PipelineConfig};

fn main() -> serolm::Result<()> {
    let config = match std::env::args().nth(1) {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::planted(),
    };
    let pipeline = Pipeline::new(config)?;
    pipeline.run_all()?;
    println!("{}", std::fs::read_to_string(pipeline.path(files::REPORT))?);
    if pipeline.path(files::MISSING_TXT).exists() {
        println!("{}", std::fs::read_to_string(pipeline.path(files::MISSING_TXT))?);
    }
    println!("artifacts in {}", pipeline.run_dir().display());
    Ok(())
}
