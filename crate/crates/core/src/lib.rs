//! Universal incremental learning laboratory.
//!
//! Seeded task streams over a class × domain grid, synthetic or ingested
//! frozen-feature datasets, a growing linear classifier head, and the
//! multi-objective gradient recalibration used to train it (cross-entropy
//! plus entropy minimization, conflict-averse direction offset, min-max
//! magnitude rescaling). Evaluation covers the accuracy matrix metrics and
//! the entropy / gradient-magnitude analyses.

pub mod dataset;
pub mod metrics;
pub mod model;
pub mod plan;
pub mod recalibration;
pub mod scenario;
pub mod trainer;

mod textfmt;

pub use dataset::{LabeledSample, SyntheticConfig, TaskDataset};
pub use model::{ClassifierState, GradientBundle, PredictionDistribution};
pub use recalibration::{RecalConfig, RecalibratedGradient};
pub use scenario::{Cell, GridSpec, Regime, RegimeKind, ScenarioSpec};
pub use trainer::{Method, RunRecord, TrainConfig};
