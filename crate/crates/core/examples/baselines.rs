//! Fits the four classical baselines on each target and prints test accuracy.

use serolm::cohort::{generate_cohort, CohortSpec};
use serolm::learners::{dense_data, AdaBoostConfig, BaselineKind, GbdtConfig, KnnConfig, RandomForestConfig, Target};
use serolm::metrics::full_report;
use serolm::preprocess::{apply_impute, fit_impute, patient_split, ImputeStrategy};

fn main() -> serolm::Result<()> {
    let cohort = generate_cohort(&CohortSpec::planted())?;
    let split = patient_split(&cohort, 0.7, 7)?;
    let impute = fit_impute(&split.train, ImputeStrategy::Mean)?;
    let features: Vec<String> = cohort.schema().names().into_iter().map(String::from).collect();
    let train = dense_data(&apply_impute(&impute, &split.train)?, &features)?;
    let test = dense_data(&apply_impute(&impute, &split.test)?, &features)?;

    println!("{:<14} {:>9} {:>9}", "model", "severity", "outcome");
    for kind in BaselineKind::ALL {
        let mut acc = Vec::new();
        for target in Target::ALL {
            let model = kind.fit(
                &train.x,
                train.labels(target),
                &AdaBoostConfig::default(),
                &GbdtConfig::default(),
                &RandomForestConfig::default(),
                &KnnConfig::default(),
            )?;
            let clf = model.as_classifier();
            let pred = test.x.rows().map(|r| clf.predict(r)).collect::<serolm::Result<Vec<u8>>>()?;
            acc.push(full_report(test.labels(target), &pred)?.accuracy);
        }
        println!("{:<14} {:>9.4} {:>9.4}", kind.display_name(), acc[0], acc[1]);
    }
    Ok(())
}
