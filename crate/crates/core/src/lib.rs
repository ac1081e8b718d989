//! Metric-type identification for multi-level header tables.
//!
//! Given a table caption and its row/column header levels, the models in this
//! crate decide where the metric-type lives (a row-header level, a
//! column-header level, or nowhere in the headers) and produce the metric
//! token list, copying from the caption or generating from a metric
//! vocabulary when the headers do not name it.
//!
//! - [`table`]: table and target types with validation
//! - [`dataset`]: corpus files, vocabularies, statistics, synthetic corpora
//! - [`neural`]: autodiff tape, layers, optimizer, gradient checking
//! - [`pointer_generator`]: BiLSTM pointer-generator with supervised level attention
//! - [`segment_encoder`]: per-segment transformer model
//! - [`baseline_svm`]: tf.idf + linear SVM baseline
//! - [`evaluation`]: accuracies, confusion matrix, reports
//! - [`training`]: schedule, training loop, checkpoints, ablations

pub mod baseline_svm;
pub mod dataset;
pub mod evaluation;
pub mod model;
pub mod neural;
pub mod pointer_generator;
pub mod segment_encoder;
pub mod table;
pub mod training;

pub use evaluation::{EvalReport, Prediction, TableClass};
pub use table::{Axis, Location, LocationClass, MetricTarget, TableInstance};
