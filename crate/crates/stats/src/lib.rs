//! Statistics used to evaluate counterfactual explanations.
//!
//! Two groups live here:
//!
//! * classifier-level evaluation: confusion-matrix metrics with bootstrap
//!   confidence intervals, rank-based AUC and Student's t tests;
//! * the rater-study pipeline: questionnaire randomization plans, per-group
//!   z-adjustment, inter-observer reliability, rank aggregation,
//!   Kaiser-Meyer-Olkin adequacy and the principal-component general factor.
//!
//! Everything is a pure batch computation over immutable inputs.

pub mod bootstrap;
pub mod classification;
pub mod describe;
mod error;
pub mod study;
pub mod ttest;

pub use classification::{compute_metrics, ConfusionCounts, Metric, MetricEntry, MetricReport};
pub use error::{Result, StatsError};
pub use ttest::{paired_t_test, pooled_t_test, TTest};
