//! Trains the sequence model on the planted cohort, saves a checkpoint and
//! reloads it.

use serolm::cohort::{generate_cohort, CohortSpec};
use serolm::pipeline::{fit_seqmodel, seq_examples};
use serolm::preprocess::patient_split;
use serolm::seqmodel::{decode_constrained, load_checkpoint, save_checkpoint, SeqModelConfig};

fn main() -> serolm::Result<()> {
    let cohort = generate_cohort(&CohortSpec::planted())?;
    let split = patient_split(&cohort, 0.7, 2020)?;
    let config = SeqModelConfig {
        embed_dim: 32,
        ffn_dim: 64,
        dropout: 0.1,
        epochs: 5,
        ..Default::default()
    };
    let (tokenizer, model) = fit_seqmodel(&split.train, 8, &config)?;
    println!("{} parameters, vocabulary of {}", model.n_params(), model.vocab_size());
    for (epoch, loss) in model.loss_curve.iter().enumerate() {
        println!("epoch {epoch:>2} loss {loss:.4}");
    }

    let test = seq_examples(&split.test, &tokenizer)?;
    let hits = test
        .iter()
        .map(|ex| decode_constrained(&model, &ex.tokens).map(|r| r.label.severity() == ex.severity && r.label.outcome() == ex.outcome))
        .collect::<serolm::Result<Vec<bool>>>()?
        .into_iter()
        .filter(|&h| h)
        .count();
    println!("joint test accuracy {:.4}", hits as f64 / test.len() as f64);

    let path = std::env::temp_dir().join("serolm-example.ckpt");
    save_checkpoint(&model, &path, "example")?;
    let back = load_checkpoint(&path, Some(&tokenizer.vocab().hash()))?;
    assert_eq!(back.params(), model.params());
    println!("checkpoint round trip ok: {}", path.display());
    Ok(())
}
