//! Synthetic-city benchmark: planted spatial dependencies, regression
//! metrics, and the ablation experiment harness.

mod city;
mod experiment;
mod metrics;
mod planted;

pub use city::{generate_city, CategoryAssignment, CategoryConfig, SyntheticCityConfig};
pub use experiment::{
    ablate_multi_seed, ablate_retrieval, ablate_weighting, default_benchmark, run_experiment,
    summarize_by, AblationTable, ExperimentConfig, MetricsReport,
};
pub use metrics::{metrics, SplitMetrics};
pub use planted::{plant_labels, region_value, split, value_probe, LabeledDataset, PlantedTask, Split};
