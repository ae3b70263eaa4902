//! Synthetic evaluation harness: world, motion and sensor simulation,
//! dataset record/replay, the experiment loop and consistency metrics.

pub mod dataset;
pub mod imu;
pub mod metrics;
pub mod render;
pub mod runner;
pub mod source;
pub mod trajectory;
pub mod world;

pub use dataset::{Dataset, DatasetError, DatasetMeta};
pub use imu::{synth_imu, ImuSpec};
pub use metrics::{
    aggregate_nees, similarity_align, MetricsConfig, NeesAggregate, RunMetrics, StepMetric,
};
pub use runner::{run, Backend, Mode, RunError, RunOutput, RunnerConfig};
pub use source::{SyntheticNoise, SyntheticSource};
pub use render::{project_labels, render_frame, PointLabel, RenderParams};
pub use trajectory::{
    generate_trajectory, DynamicsClass, GroundTruth, GtSample, TrajectorySpec,
};
pub use world::{World, WorldPoint};
