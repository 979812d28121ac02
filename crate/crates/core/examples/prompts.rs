//! Renders a sample as prompt text, tokenizes it and parses model output text.

use serolm::cohort::{generate_cohort, CohortSpec};
use serolm::promptify::{fit_binning, parse_output, serialize_prompt, PromptDoc, Tokenizer};

fn main() -> serolm::Result<()> {
    let cohort = generate_cohort(&CohortSpec::default())?;
    let sample = cohort
        .samples()
        .iter()
        .find(|s| s.values.len() < cohort.schema().len())
        .unwrap_or(&cohort.samples()[0]);
    let doc = serialize_prompt(sample, cohort.schema())?;
    println!("{}\n", doc.text());

    let round_trip = PromptDoc::from_text(&doc.sample_id, &doc.text())?;
    assert_eq!(round_trip.feature_lines, doc.feature_lines);

    let tokenizer = Tokenizer::new(cohort.schema().clone(), fit_binning(&cohort, 16)?);
    let tokens = tokenizer.tokenize(&doc)?;
    let surface: Vec<&str> = tokens.ids.iter().map(|&id| tokenizer.vocab().surface(id).unwrap()).collect();
    println!("{} tokens: {}", tokens.len(), surface.join(" "));

    for text in ["Severe and death", " mild AND survive ", "mild and death", "unsure"] {
        println!("{text:?} -> {:?}", parse_output(text));
    }
    Ok(())
}
