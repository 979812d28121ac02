//! GBDT importance ranking per target and the top-k union used as model input.

use serolm::cohort::{generate_cohort, CohortSpec, PLANTED_FEATURES};
use serolm::learners::{select_features, GbdtConfig};
use serolm::preprocess::{apply_impute, fit_impute, ImputeStrategy};

fn main() -> serolm::Result<()> {
    let cohort = generate_cohort(&CohortSpec::planted())?;
    let filled = apply_impute(&fit_impute(&cohort, ImputeStrategy::Mean)?, &cohort)?;
    let sel = select_features(&filled, 5, &GbdtConfig::default())?;
    for (label, ranking) in [("severity", &sel.severity), ("outcome", &sel.outcome)] {
        println!("{label}:");
        for &i in ranking.order.iter().take(5) {
            println!("  {:<10} {:.4}", ranking.names[i], ranking.importance[i]);
        }
    }
    println!("union: {:?}", sel.union);
    println!("planted: {PLANTED_FEATURES:?}");
    Ok(())
}
