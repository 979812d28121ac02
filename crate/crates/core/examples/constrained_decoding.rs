//! Shows the decode-time mask: a head biased towards mild and death yields
//! that pair only when decoding is unconstrained.

use serolm::promptify::{token, TokenSeq};
use serolm::seqmodel::{decode_constrained, decode_unconstrained, SeqModel, SeqModelConfig};

fn main() -> serolm::Result<()> {
    let config = SeqModelConfig {
        embed_dim: 16,
        ffn_dim: 32,
        max_seq_len: 16,
        ..Default::default()
    };
    let mut model = SeqModel::new(&config, token::N_SPECIAL as usize + 8, "")?;
    model.zero_output_weights();
    model.set_output_bias([2.0, -2.0, -1.0, 1.0]);

    let prompt = TokenSeq {
        ids: vec![token::INSTR, token::N_SPECIAL, token::N_SPECIAL + 3, token::SEP, token::BEGIN_ANSWER],
    };
    let free = decode_unconstrained(&model, &prompt)?;
    println!(
        "unconstrained: {:?} and {:?} (p_severity {:?}, p_outcome {:?})",
        free.severity, free.outcome, free.severity_probs, free.outcome_probs
    );
    let masked = decode_constrained(&model, &prompt)?;
    println!(
        "constrained:   {:?} and {:?} (p_outcome {:?})",
        masked.label.severity(),
        masked.label.outcome(),
        masked.outcome_probs
    );
    Ok(())
}
