//! Per-class precision, recall and F1 with a confusion matrix.

use serolm::metrics::{compute_metrics, confusion, f1_score, full_report, table_header};

fn main() -> serolm::Result<()> {
    let truth = [1, 0, 0, 1, 1, 0, 0, 0, 1, 0, 0, 1];
    let pred = [1, 0, 1, 1, 0, 0, 0, 0, 1, 0, 0, 0];
    let report = full_report(&truth, &pred)?;
    print!("{}{}", table_header(), report.table_rows("example"));
    print!("\n{}", report.confusion_csv());

    let m = compute_metrics(&confusion(&truth, &pred, 1)?)?;
    println!("\npositive class: precision {:.4} recall {:.4} f1 {:.4}", m.precision, m.recall, m.f1);
    println!("f1(0.6610, 0.6500) = {:.4}", f1_score(0.6610, 0.6500).unwrap());
    Ok(())
}
