//! Discrete-event simulation of a Multi-LoRa grid.

pub mod audit;
mod engine;
mod metrics;
mod scenario;

pub use engine::{run, Node, RunError, RxRecord, Simulation, Trace, TxRecord};
pub use metrics::{
    compute_metrics, Counters, FlowRecords, FlowReport, MetricsError, MetricsReport,
};
pub use scenario::{
    build_grid, GatewayPlacement, GridSpec, PriorityOverride, Scenario, ScenarioError, Setup, Site,
    Topology, GATEWAY_ADDRESS,
};
