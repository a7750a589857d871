//! Experiment configuration and the estimate / optimize / simulate / sweep /
//! tradeoff pipelines.

mod config;
mod pipeline;

pub use config::{
    CostSpec, DatasetSpec, EstimationSpec, ExperimentConfig, OptimizerSpec, PlantedBound, PopulationSpec,
    SimulateSpec, SweepSpec, TradeoffSpec,
};
pub use pipeline::{
    samples_artifact, simulate_artifacts, Artifact, EstimateOutcome, Experiment, OptimizeOutcome, PointStats, RunSummary,
    SweepOutcome, TradeoffOutcome, TradeoffRow,
};
