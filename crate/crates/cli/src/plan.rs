//! Experiment plan files.
//!
//! A plan is TOML with three sections:
//!
//! ```toml
//! [plan]
//! name = "small-scale"
//! repetitions = 33        # default 33
//! base_seed = 1
//! interval = "normal"     # or "student-t"
//!
//! [scenario]              # any scenario field; see `multilora::sim::Scenario`
//! requests_per_node = 1000
//! [scenario.grid]
//! rows = 3
//! cols = 3
//!
//! [sweep]                 # every axis is optional
//! setup = [1, 2, 3]
//! packet_size = [32, 64, 128, 256]
//! node_count = [10, 50, 100, 200]
//! ```
//!
//! Unknown keys anywhere are rejected.

use std::path::{Path, PathBuf};

use multilora::sim::{GridSpec, Scenario, Setup};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::Interval;

pub const DEFAULT_REPETITIONS: u32 = 33;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("{origin}: field `{field}`: {message}")]
    Invalid {
        origin: String,
        field: String,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanHeader {
    pub name: String,
    #[serde(default = "default_repetitions")]
    pub repetitions: u32,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub interval: Interval,
}

fn default_repetitions() -> u32 {
    DEFAULT_REPETITIONS
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sweep {
    pub setup: Vec<Setup>,
    pub packet_size: Vec<usize>,
    /// Client count; the grid becomes the squarest `rows x cols` with the
    /// gateway added at the centroid and the base grid's spacing.
    pub node_count: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub plan: PlanHeader,
    #[serde(default)]
    pub scenario: Scenario,
    #[serde(default)]
    pub sweep: Sweep,
}

/// Coordinates of one sweep point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointKey {
    pub setup: Setup,
    pub packet_size: usize,
    pub node_count: u32,
}

impl std::fmt::Display for PointKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "setup={} packet_size={} node_count={}",
            u8::from(self.setup),
            self.packet_size,
            self.node_count
        )
    }
}

impl ExperimentPlan {
    /// Sweep points in output order: setup, then node count, then size.
    pub fn points(&self) -> Vec<(PointKey, Scenario)> {
        let base = &self.scenario;
        let setups = if self.sweep.setup.is_empty() {
            vec![base.setup]
        } else {
            self.sweep.setup.clone()
        };
        let sizes = if self.sweep.packet_size.is_empty() {
            vec![base.packet_size_bytes]
        } else {
            self.sweep.packet_size.clone()
        };
        let counts: Vec<Option<u32>> = if self.sweep.node_count.is_empty() {
            vec![None]
        } else {
            self.sweep.node_count.iter().copied().map(Some).collect()
        };
        let mut out = Vec::new();
        for &setup in &setups {
            for &count in &counts {
                for &size in &sizes {
                    let mut s = base.clone();
                    s.setup = setup;
                    s.packet_size_bytes = size;
                    if let Some(n) = count {
                        match GridSpec::for_node_count(n, base.grid.spacing_m) {
                            Ok(grid) => s.grid = grid,
                            // Reported by `validate`.
                            Err(_) => s.grid.rows = 0,
                        }
                    }
                    let key = PointKey {
                        setup,
                        packet_size: size,
                        node_count: s.grid.client_count(),
                    };
                    out.push((key, s));
                }
            }
        }
        out
    }

    /// Scenario for repetition `rep` of a sweep point.
    pub fn repetition(&self, scenario: &Scenario, rep: u32) -> Scenario {
        let mut s = scenario.clone();
        s.rng_seed = self.plan.base_seed.wrapping_add(rep as u64);
        s
    }

    pub fn validate(&self, origin: &str) -> Result<(), PlanError> {
        let invalid = |field: &str, message: String| PlanError::Invalid {
            origin: origin.to_string(),
            field: field.to_string(),
            message,
        };
        if self.plan.repetitions == 0 {
            return Err(invalid("plan.repetitions", "must be at least 1".into()));
        }
        if self.plan.name.trim().is_empty() {
            return Err(invalid("plan.name", "must not be empty".into()));
        }
        for &n in &self.sweep.node_count {
            GridSpec::for_node_count(n, self.scenario.grid.spacing_m)
                .map_err(|e| invalid("sweep.node_count", e.to_string()))?;
        }
        for (key, s) in self.points() {
            s.validate()
                .map_err(|e| invalid("scenario", format!("at {key}: {e}")))?;
        }
        Ok(())
    }
}

fn parse_error(origin: &str, e: toml::de::Error) -> PlanError {
    PlanError::Parse {
        origin: origin.to_string(),
        message: e.to_string().trim_end().to_string(),
    }
}

/// Parses and validates plan text. `origin` names the source in errors.
pub fn parse_plan_str(text: &str, origin: &str) -> Result<ExperimentPlan, PlanError> {
    let plan: ExperimentPlan = toml::from_str(text).map_err(|e| parse_error(origin, e))?;
    plan.validate(origin)?;
    Ok(plan)
}

pub fn parse_plan(path: &Path) -> Result<ExperimentPlan, PlanError> {
    let text = std::fs::read_to_string(path).map_err(|source| PlanError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_plan_str(&text, &path.display().to_string())
}
