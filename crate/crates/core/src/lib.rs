//! Serological risk prediction with missing-aware prompts and a constrained
//! two-token sequence classifier.
//!
//! The pipeline mirrors a clinical workflow:
//!
//! 1. [`cohort`]: patient-grouped blood-test samples, synthetic generation and CSV I/O.
//! 2. [`preprocess`]: high-missingness filter, patient-level split, imputation.
//! 3. [`learners`]: GBDT importance-based feature selection and four classical baselines.
//! 4. [`promptify`]: prompt text with an explicit missing-value sentence, tokenization,
//!    and output parsing.
//! 5. [`seqmodel`]: a small causal transformer that emits severity, then outcome,
//!    with `(mild, death)` masked out at decode time.
//! 6. [`metrics`]: precision, recall, F1, accuracy and confusion matrices.
//! 7. [`pipeline`] and [`service`]: staged on-disk runs and an HTTP scoring endpoint.
//!
//! Runnable walkthroughs for each stage live in `examples/`.

pub mod cohort;
pub mod error;
pub mod learners;
pub mod metrics;
pub mod pipeline;
pub mod preprocess;
pub mod promptify;
pub mod seqmodel;
pub mod service;

pub use error::{Error, Result};
