//! Missingness filter, patient-level split and train-fitted imputation.

use serolm::cohort::{generate_cohort, CohortSpec};
use serolm::preprocess::{apply_impute, drop_high_missing_features, fit_impute, patient_split, ImputeStrategy};

fn main() -> serolm::Result<()> {
    let cohort = generate_cohort(&CohortSpec::default())?;
    let (kept, dropped) = drop_high_missing_features(&cohort, 0.10)?;
    println!("dropped for missingness: {dropped:?}");

    let split = patient_split(&kept, 0.7, 2020)?;
    assert!(split.train_patient_ids.is_disjoint(&split.test_patient_ids));
    println!(
        "train {} patients / {} samples, test {} patients / {} samples",
        split.train_patient_ids.len(),
        split.train.len(),
        split.test_patient_ids.len(),
        split.test.len()
    );

    let impute = fit_impute(&split.train, ImputeStrategy::Median)?;
    let test = apply_impute(&impute, &split.test)?;
    for (name, fill) in &impute.fills {
        println!("{name:<10} fill {fill:.3}");
    }
    let holes: usize = kept.schema().names().iter().map(|n| test.samples().iter().filter(|s| s.value(n).is_none()).count()).sum();
    println!("missing values left in imputed test split: {holes}");
    Ok(())
}
