//! Group-aware shift explanations.
//!
//! A shift explanation is a parameterized map that moves source samples
//! toward a target dataset. This crate learns such maps (K-cluster transport,
//! per-sample transport, classifier counterfactuals), optionally against
//! worst-group objectives so that known subpopulations are not mapped across
//! each other, and scores them with PercentExplained, worst-group
//! PercentExplained, feasibility and robustness.
// NaN-rejecting checks are written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod assignment;
pub mod counterfactual;
pub mod data;
pub mod error;
pub mod kmeans;
pub mod maps;
pub mod metrics;
pub mod objective;
pub mod pipeline;
pub mod text;
pub mod wasserstein;

pub use counterfactual::{Classifier, ClassifierConfig, CounterfactualConfig};
pub use data::{Feature, FeatureKind, FeatureSchema, GroupingRule, LabeledDataset, Role};
pub use error::{Error, Result};
pub use maps::{ClusterModel, KClusterParams, OtParams};
pub use metrics::{FeasibilityRule, PerturbationSpec, RobustnessReport};
pub use objective::{Aggregator, ObjectiveSpec, OptimizerConfig};
pub use pipeline::{Explanation, Method, PipelineConfig};
pub use wasserstein::{PointCloud, SinkhornConfig};
