//! Generates the planted-feature cohort, prints its summary and writes it as CSV.
//!
//! cargo run --example generate_cohort -- [out.csv]

use serolm::cohort::{cohort_summary, generate_cohort, save_cohort_csv, CohortSpec};

fn main() -> serolm::Result<()> {
    let spec = CohortSpec::planted();
    let cohort = generate_cohort(&spec)?;
    let summary = cohort_summary(&cohort)?;
    println!(
        "{} patients, {} samples, severe {:.3}, death {:.3}",
        summary.n_patients, summary.n_samples, summary.severe_rate, summary.death_rate
    );
    for name in cohort.schema().names() {
        println!("{name:<10} missing {:.3}", cohort.missing_fraction(name));
    }
    let out = std::env::args().nth(1).unwrap_or_else(|| "cohort.csv".into());
    save_cohort_csv(&cohort, &out)?;
    println!("wrote {out}");
    Ok(())
}
