//! Experiment runner: plan files in, CSV and JSON summaries out.

pub mod emit;
pub mod execute;
pub mod plan;
pub mod stats;

pub use emit::{emit, EmitError, Emitted};
pub use execute::{execute, PointResult, Results, Sample};
pub use plan::{parse_plan, parse_plan_str, ExperimentPlan, PlanError};
pub use stats::{Interval, StatsSummary};
