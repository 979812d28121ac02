//! Precision, recall, F1 and accuracy for binary predictions, with per-class
//! report rows and confusion matrices.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn check_inputs(y_true: &[u8], y_pred: &[u8]) -> Result<()> {
    if y_true.len() != y_pred.len() {
        return Err(Error::validation(format!(
            "length mismatch: {} true labels vs {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.is_empty() {
        return Err(Error::validation("no predictions to score"));
    }
    if y_true.iter().chain(y_pred).any(|&v| v > 1) {
        return Err(Error::validation("labels must be 0 or 1"));
    }
    Ok(())
}

/// Counts with `positive` as the designated positive class.
pub fn confusion(y_true: &[u8], y_pred: &[u8], positive: u8) -> Result<ConfusionCounts> {
    check_inputs(y_true, y_pred)?;
    let mut c = ConfusionCounts::default();
    for (&t, &p) in y_true.iter().zip(y_pred) {
        match (t == positive, p == positive) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    /// Set when a denominator was zero and the value was reported as 0.
    pub precision_degenerate: bool,
    pub recall_degenerate: bool,
    pub f1_degenerate: bool,
}

/// F1 as the harmonic mean of precision and recall; `None` when both are zero.
pub fn f1_score(precision: f64, recall: f64) -> Option<f64> {
    let denom = precision + recall;
    (denom > 0.0).then(|| 2.0 * precision * recall / denom)
}

pub fn compute_metrics(c: &ConfusionCounts) -> Result<Metrics> {
    let total = c.total();
    if total == 0 {
        return Err(Error::validation("confusion counts are all zero"));
    }
    let ratio = |num: u64, den: u64| {
        if den == 0 {
            (0.0, true)
        } else {
            (num as f64 / den as f64, false)
        }
    };
    let (precision, precision_degenerate) = ratio(c.tp, c.tp + c.fp);
    let (recall, recall_degenerate) = ratio(c.tp, c.tp + c.fn_);
    let (f1, f1_degenerate) = match f1_score(precision, recall) {
        Some(f) => (f, false),
        None => (0.0, true),
    };
    Ok(Metrics {
        precision,
        recall,
        f1,
        accuracy: (c.tp + c.tn) as f64 / total as f64,
        precision_degenerate,
        recall_degenerate,
        f1_degenerate,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    /// Rows for class 0 and class 1.
    pub classes: [ClassRow; 2],
    pub n: u64,
    /// Counts with class 1 as positive.
    pub confusion: ConfusionCounts,
}

pub fn full_report(y_true: &[u8], y_pred: &[u8]) -> Result<MetricsReport> {
    let mut classes = [None, None];
    let mut accuracy = 0.0;
    for positive in [0u8, 1] {
        let c = confusion(y_true, y_pred, positive)?;
        let m = compute_metrics(&c)?;
        accuracy = m.accuracy;
        classes[positive as usize] = Some(ClassRow {
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            support: c.tp + c.fn_,
            degenerate: m.precision_degenerate || m.recall_degenerate || m.f1_degenerate,
        });
    }
    Ok(MetricsReport {
        accuracy,
        classes: classes.map(Option::unwrap),
        n: y_true.len() as u64,
        confusion: confusion(y_true, y_pred, 1)?,
    })
}

impl MetricsReport {
    /// Accuracy line followed by one row per class, 4 decimals.
    pub fn table_rows(&self, model: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<24} {:>9.4} {:>9} {:>9} {:>9}", model, self.accuracy, "", "", "");
        for (class, row) in self.classes.iter().enumerate() {
            let flag = if row.degenerate { " *" } else { "" };
            let _ = writeln!(
                out,
                "{:<24} {:>9} {:>9.4} {:>9.4} {:>9.4}{}",
                class, "", row.precision, row.recall, row.f1, flag
            );
        }
        out
    }

    /// Rows are true classes, columns predicted classes.
    pub fn confusion_csv(&self) -> String {
        let c = &self.confusion;
        format!(
            "true\\pred,0,1\n0,{},{}\n1,{},{}\n",
            c.tn, c.fp, c.fn_, c.tp
        )
    }
}

pub fn table_header() -> String {
    format!(
        "{:<24} {:>9} {:>9} {:>9} {:>9}\n",
        "Model", "Accuracy", "Precision", "Recall", "F1-score"
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn counts_small_example() {
        let c = confusion(&[1, 1, 0, 0], &[1, 0, 0, 1], 1).unwrap();
        assert_eq!((c.tp, c.fn_, c.tn, c.fp), (1, 1, 1, 1));
        let perfect = confusion(&[1, 0, 1], &[1, 0, 1], 1).unwrap();
        assert_eq!((perfect.fp, perfect.fn_), (0, 0));
    }

    #[test]
    fn input_errors() {
        assert!(confusion(&[1], &[1, 0], 1).is_err());
        assert!(confusion(&[], &[], 1).is_err());
        assert!(compute_metrics(&ConfusionCounts::default()).is_err());
    }

    #[test]
    fn accuracy_example() {
        let m = compute_metrics(&ConfusionCounts { tp: 3, tn: 5, fp: 1, fn_: 1 }).unwrap();
        assert_eq!(m.accuracy, 0.8);
        assert_eq!(m.precision, 0.75);
    }

    #[test]
    fn published_table_f1_values() {
        assert!((f1_score(0.6610, 0.6500).unwrap() - 0.6555).abs() < 5e-4);
        assert!((f1_score(0.9444, 0.9401).unwrap() - 0.9423).abs() < 5e-4);
    }

    #[test]
    fn all_zero_predictor_is_flagged() {
        let r = full_report(&[1, 0, 1, 0], &[0, 0, 0, 0]).unwrap();
        assert_eq!(r.classes[1].recall, 0.0);
        assert!(r.classes[1].degenerate);
        assert!(!r.classes[0].degenerate);
    }

    #[test]
    fn class_zero_precision_is_npv() {
        let t = [1, 0, 0, 1, 0, 1, 1, 0];
        let p = [1, 0, 1, 0, 0, 1, 0, 0];
        let r = full_report(&t, &p).unwrap();
        let c = r.confusion;
        assert_eq!(r.classes[0].precision, c.tn as f64 / (c.tn + c.fn_) as f64);
        assert_eq!(r.classes[0].support + r.classes[1].support, 8);
    }

    #[test]
    fn table_formatting() {
        let r = full_report(&[1, 0, 1, 0], &[1, 0, 0, 0]).unwrap();
        let rows = r.table_rows("KNN");
        assert!(rows.starts_with("KNN"));
        assert!(rows.contains("0.7500"));
        assert_eq!(r.confusion_csv(), "true\\pred,0,1\n0,2,0\n1,1,1\n");
    }

    fn labels() -> impl Strategy<Value = (Vec<u8>, Vec<u8>)> {
        (1usize..200).prop_flat_map(|n| (prop::collection::vec(0u8..2, n), prop::collection::vec(0u8..2, n)))
    }

    proptest! {
        #[test]
        fn accuracy_ignores_positive_class((t, p) in labels()) {
            let a1 = compute_metrics(&confusion(&t, &p, 1).unwrap()).unwrap().accuracy;
            let a0 = compute_metrics(&confusion(&t, &p, 0).unwrap()).unwrap().accuracy;
            prop_assert_eq!(a0, a1);
            prop_assert_eq!(confusion(&t, &p, 1).unwrap().total(), t.len() as u64);
        }

        #[test]
        fn f1_lies_between_precision_and_recall((t, p) in labels()) {
            let m = compute_metrics(&confusion(&t, &p, 1).unwrap()).unwrap();
            if !m.f1_degenerate {
                prop_assert!(m.f1 >= m.precision.min(m.recall) - 1e-12);
                prop_assert!(m.f1 <= m.precision.max(m.recall) + 1e-12);
            }
        }

        #[test]
        fn support_weighted_recall_is_accuracy((t, p) in labels()) {
            let r = full_report(&t, &p).unwrap();
            let weighted: f64 = r.classes.iter().map(|c| c.recall * c.support as f64).sum::<f64>() / r.n as f64;
            prop_assert!((weighted - r.accuracy).abs() < 1e-12);
        }
    }
}
