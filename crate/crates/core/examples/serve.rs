//! Scores a record through the library and serves the same run over HTTP.
//! Runs the planted pipeline first if its artifacts are missing.
//!
//! cargo run --release --example serve -- [127.0.0.1:8080]
//! curl -s localhost:8080/predict -d '{"hs-CRP": 40.1, "ALB": null}' -H 'content-type: application/json'

use std::collections::BTreeMap;

use serolm::pipeline::{files, Pipeline, PipelineConfig};
use serolm::service::{serve, ModelChoice, ScoringPipeline};

#[tokio::main]
async fn main() -> serolm::Result<()> {
    let pipeline = Pipeline::new(PipelineConfig::planted())?;
    if !pipeline.path(files::METRICS).exists() {
        pipeline.run_all()?;
    }
    let scoring = ScoringPipeline::load(&pipeline)?;
    let record = BTreeMap::from([("hs-CRP".to_string(), Some(40.1)), ("ALB".to_string(), None)]);
    for choice in [ModelChoice::SeqModel, ModelChoice::parse("gbdt").unwrap()] {
        println!("{:?}", scoring.predict(&record, choice)?);
    }
    let addr = std::env::args().nth(1).unwrap_or_else(|| "127.0.0.1:8080".into());
    let addr = addr.parse().map_err(|e| serolm::Error::validation(format!("bind address: {e}")))?;
    println!("listening on http://{addr}");
    serve(scoring, addr).await
}
