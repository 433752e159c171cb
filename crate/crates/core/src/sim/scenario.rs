use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::app::{AppConfig, AppError};
use crate::codec::{NodeAddress, HEADER_LEN};
use crate::mac::{MacConfig, MacError, DEFAULT_BACKOFF_MAX_S};
use crate::network::{Priority, RoutingConfig};
use crate::phy::{in_range, Position, RadioConfig};

pub const GATEWAY_ADDRESS: NodeAddress = NodeAddress(0x0000_0001);
const CLIENT_ADDRESS_BASE: u32 = 0x0000_0100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("invalid grid: {0}")]
    InvalidSpec(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Mac(#[from] MacError),
    #[error(transparent)]
    App(#[from] AppError),
}

/// Radio arrangement under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Setup {
    /// One radio, SF7, 125 kHz.
    One = 1,
    /// Two radios, SF7, 125 kHz.
    Two = 2,
    /// Two radios, SF7, 250 kHz.
    Three = 3,
}

impl Setup {
    pub const ALL: [Setup; 3] = [Setup::One, Setup::Two, Setup::Three];

    pub fn radio_count(self) -> usize {
        match self {
            Setup::One => 1,
            Setup::Two | Setup::Three => 2,
        }
    }

    pub fn bandwidth_hz(self) -> u32 {
        match self {
            Setup::One | Setup::Two => 125_000,
            Setup::Three => 250_000,
        }
    }
}

impl TryFrom<u8> for Setup {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            1 => Ok(Setup::One),
            2 => Ok(Setup::Two),
            3 => Ok(Setup::Three),
            other => Err(format!("setup must be 1, 2 or 3, got {other}")),
        }
    }
}

impl From<Setup> for u8 {
    fn from(s: Setup) -> u8 {
        s as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GatewayPlacement {
    /// The grid cell nearest the centroid becomes the gateway.
    CenterCell,
    /// An extra gateway node sits exactly at the centroid.
    Centroid,
    /// A specific cell, `[row, col]`, becomes the gateway.
    Cell([u32; 2]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub rows: u32,
    pub cols: u32,
    pub spacing_m: f64,
    pub gateway: GatewayPlacement,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            rows: 3,
            cols: 3,
            spacing_m: 4.0,
            gateway: GatewayPlacement::CenterCell,
        }
    }
}

impl GridSpec {
    /// Grid whose client count is `nodes`, gateway at the centroid.
    ///
    /// Picks the most square factorization with rows <= cols, which yields
    /// 2x5, 5x10, 10x10 and 10x20 for 10, 50, 100 and 200 nodes.
    pub fn for_node_count(nodes: u32, spacing_m: f64) -> Result<GridSpec, ScenarioError> {
        if nodes < 2 {
            return Err(ScenarioError::InvalidSpec(format!(
                "need at least 2 nodes, got {nodes}"
            )));
        }
        let rows = (1..=nodes)
            .take_while(|r| r * r <= nodes)
            .filter(|r| nodes.is_multiple_of(*r))
            .last()
            .unwrap_or(1);
        Ok(GridSpec {
            rows,
            cols: nodes / rows,
            spacing_m,
            gateway: GatewayPlacement::Centroid,
        })
    }

    pub fn client_count(&self) -> u32 {
        match self.gateway {
            GatewayPlacement::Centroid => self.rows * self.cols,
            _ => self.rows * self.cols - 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub address: NodeAddress,
    pub position: Position,
    /// `[row, col]`, absent for a centroid gateway.
    pub cell: Option<[u32; 2]>,
    pub is_gateway: bool,
}

/// Node placement. The gateway is always at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub sites: Vec<Site>,
}

impl Topology {
    pub fn gateway(&self) -> &Site {
        &self.sites[0]
    }

    pub fn clients(&self) -> impl Iterator<Item = &Site> {
        self.sites.iter().filter(|s| !s.is_gateway)
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    /// `adjacency[i]` lists the sites in range of site `i`.
    pub fn adjacency(&self, radio: &RadioConfig) -> Vec<Vec<usize>> {
        (0..self.sites.len())
            .map(|i| {
                (0..self.sites.len())
                    .filter(|&j| {
                        j != i && in_range(&self.sites[i].position, &self.sites[j].position, radio)
                    })
                    .collect()
            })
            .collect()
    }

    pub fn index_of(&self, cell: [u32; 2]) -> Option<usize> {
        self.sites.iter().position(|s| s.cell == Some(cell))
    }
}

pub fn build_grid(spec: &GridSpec) -> Result<Topology, ScenarioError> {
    if spec.rows == 0 || spec.cols == 0 || spec.rows * spec.cols < 2 {
        return Err(ScenarioError::InvalidSpec(format!(
            "{}x{} grid needs at least two cells",
            spec.rows, spec.cols
        )));
    }
    if !(spec.spacing_m > 0.0 && spec.spacing_m.is_finite()) {
        return Err(ScenarioError::InvalidSpec(format!(
            "bad spacing {}",
            spec.spacing_m
        )));
    }
    let cell_pos =
        |r: u32, c: u32| Position::new(c as f64 * spec.spacing_m, r as f64 * spec.spacing_m);
    let gateway_cell = match spec.gateway {
        GatewayPlacement::CenterCell => Some([(spec.rows - 1) / 2, (spec.cols - 1) / 2]),
        GatewayPlacement::Cell([r, c]) => {
            if r >= spec.rows || c >= spec.cols {
                return Err(ScenarioError::InvalidSpec(format!(
                    "gateway cell [{r}, {c}] outside {}x{} grid",
                    spec.rows, spec.cols
                )));
            }
            Some([r, c])
        }
        GatewayPlacement::Centroid => None,
    };

    let mut sites = vec![Site {
        address: GATEWAY_ADDRESS,
        position: match gateway_cell {
            Some([r, c]) => cell_pos(r, c),
            None => Position::new(
                (spec.cols - 1) as f64 * spec.spacing_m / 2.0,
                (spec.rows - 1) as f64 * spec.spacing_m / 2.0,
            ),
        },
        cell: gateway_cell,
        is_gateway: true,
    }];
    for r in 0..spec.rows {
        for c in 0..spec.cols {
            if gateway_cell == Some([r, c]) {
                continue;
            }
            sites.push(Site {
                address: NodeAddress(CLIENT_ADDRESS_BASE + r * spec.cols + c),
                position: cell_pos(r, c),
                cell: Some([r, c]),
                is_gateway: false,
            });
        }
    }
    Ok(Topology { sites })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorityOverride {
    pub row: u32,
    pub col: u32,
    pub priority: Priority,
}

/// Full description of one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub grid: GridSpec,
    pub setup: Setup,
    pub tx_range_m: f64,
    pub coding_rate: u8,
    pub preamble_symbols: u16,
    pub packet_size_bytes: usize,
    pub requests_per_node: u32,
    /// Optional cap on requests issued across all clients.
    pub max_total_requests: Option<u64>,
    pub hello_period_s: f64,
    pub route_period_s: f64,
    /// Defaults to two hello periods.
    pub discovery_duration_s: Option<f64>,
    /// Defaults to two route periods.
    pub learning_duration_s: Option<f64>,
    /// Defaults to a bound that lets every request resolve.
    pub sim_duration_s: Option<f64>,
    pub reply_timeout_s: f64,
    pub request_gap_s: f64,
    /// Extra uniform delay in [0, request_jitter_s] before each follow-up request.
    pub request_jitter_s: f64,
    pub rng_seed: u64,
    pub default_priority: Priority,
    pub priorities: Vec<PriorityOverride>,
    pub backoff_max_s: f64,
    /// Defaults to three full-frame airtimes.
    pub reassembly_timeout_s: Option<f64>,
    pub routing: RoutingConfig,
    /// Test hook: when false every in-range frame is delivered.
    pub collisions: bool,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            grid: GridSpec::default(),
            setup: Setup::One,
            tx_range_m: 4.0,
            coding_rate: 4,
            preamble_symbols: 8,
            packet_size_bytes: 128,
            requests_per_node: 1000,
            max_total_requests: None,
            hello_period_s: 60.0,
            route_period_s: 120.0,
            discovery_duration_s: None,
            learning_duration_s: None,
            sim_duration_s: None,
            reply_timeout_s: crate::app::DEFAULT_REPLY_TIMEOUT_S,
            request_gap_s: 0.0,
            request_jitter_s: 1.0,
            rng_seed: 0,
            default_priority: Priority::Low,
            priorities: Vec::new(),
            backoff_max_s: DEFAULT_BACKOFF_MAX_S,
            reassembly_timeout_s: None,
            routing: RoutingConfig::default(),
            collisions: true,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<(), ScenarioError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ScenarioError::Invalid(format!(
            "{name} must be positive, got {v}"
        )))
    }
}

impl Scenario {
    pub fn radios(&self) -> Vec<RadioConfig> {
        (0..self.setup.radio_count())
            .map(|i| RadioConfig {
                spreading_factor: 7,
                bandwidth_hz: self.setup.bandwidth_hz(),
                coding_rate: self.coding_rate,
                preamble_symbols: self.preamble_symbols,
                channel_id: i as u8,
                tx_range_m: self.tx_range_m,
            })
            .collect()
    }

    pub fn mac_config(&self) -> Result<MacConfig, ScenarioError> {
        let mut cfg = MacConfig::new(self.radios())?;
        cfg.backoff_max_s = self.backoff_max_s;
        if let Some(t) = self.reassembly_timeout_s {
            positive("reassembly_timeout_s", t)?;
            cfg.reassembly_timeout_s = t;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn discovery_duration(&self) -> f64 {
        self.discovery_duration_s
            .unwrap_or(2.0 * self.hello_period_s)
    }

    pub fn learning_duration(&self) -> f64 {
        self.learning_duration_s
            .unwrap_or(2.0 * self.route_period_s)
    }

    pub fn sim_duration(&self) -> f64 {
        self.sim_duration_s.unwrap_or_else(|| {
            self.hello_period_s
                + self.discovery_duration()
                + self.learning_duration()
                + self.requests_per_node as f64
                    * (self.reply_timeout_s + self.request_gap_s + self.request_jitter_s)
                + self.reply_timeout_s
                + 1.0
        })
    }

    pub fn priority_of(&self, site: &Site) -> Priority {
        site.cell
            .and_then(|[r, c]| {
                self.priorities
                    .iter()
                    .rev()
                    .find(|o| o.row == r && o.col == c)
                    .map(|o| o.priority)
            })
            .unwrap_or(self.default_priority)
    }

    pub fn app_config(&self, site: &Site) -> AppConfig {
        AppConfig {
            priority: self.priority_of(site),
            payload_bytes: self.packet_size_bytes.saturating_sub(HEADER_LEN),
            reply_timeout_s: self.reply_timeout_s,
            total_requests: self.requests_per_node,
            destination: GATEWAY_ADDRESS,
            request_gap_s: self.request_gap_s,
        }
    }

    pub fn validate(&self) -> Result<Topology, ScenarioError> {
        let topo = build_grid(&self.grid)?;
        self.mac_config()?;
        positive("tx_range_m", self.tx_range_m)?;
        positive("hello_period_s", self.hello_period_s)?;
        positive("route_period_s", self.route_period_s)?;
        positive("reply_timeout_s", self.reply_timeout_s)?;
        for (name, v) in [
            ("request_gap_s", self.request_gap_s),
            ("request_jitter_s", self.request_jitter_s),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ScenarioError::Invalid(format!("bad {name} {v}")));
            }
        }
        for (name, v) in [
            ("discovery_duration_s", self.discovery_duration_s),
            ("learning_duration_s", self.learning_duration_s),
            ("sim_duration_s", self.sim_duration_s),
        ] {
            if let Some(v) = v {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(ScenarioError::Invalid(format!(
                        "{name} must be non-negative, got {v}"
                    )));
                }
            }
        }
        self.routing.validate().map_err(ScenarioError::Invalid)?;
        for o in &self.priorities {
            if topo
                .index_of([o.row, o.col])
                .is_none_or(|i| topo.sites[i].is_gateway)
            {
                return Err(ScenarioError::Invalid(format!(
                    "priority override for [{}, {}] does not name a client",
                    o.row, o.col
                )));
            }
        }
        if let Some(site) = topo.clients().next() {
            self.app_config(site).validate()?;
        }
        Ok(topo)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_scale_grid() {
        let topo = build_grid(&GridSpec::default()).unwrap();
        assert_eq!(topo.len(), 9);
        assert_eq!(topo.clients().count(), 8);
        assert_eq!(topo.gateway().cell, Some([1, 1]));
        assert_eq!(topo.gateway().position, Position::new(4.0, 4.0));
        let max_x = topo.sites.iter().map(|s| s.position.x).fold(0.0, f64::max);
        let max_y = topo.sites.iter().map(|s| s.position.y).fold(0.0, f64::max);
        assert_eq!((max_x, max_y), (8.0, 8.0));
        let adj = topo.adjacency(&RadioConfig::default());
        assert_eq!(
            adj[0].len(),
            4,
            "gateway hears its four orthogonal neighbours"
        );
    }

    #[test]
    fn large_scale_grid() {
        let spec = GridSpec::for_node_count(100, 4000.0).unwrap();
        assert_eq!((spec.rows, spec.cols), (10, 10));
        let topo = build_grid(&spec).unwrap();
        assert_eq!(topo.clients().count(), 100);
        assert_eq!(topo.gateway().position, Position::new(18_000.0, 18_000.0));
        for (n, shape) in [(10, (2, 5)), (50, (5, 10)), (200, (10, 20)), (25, (5, 5))] {
            let s = GridSpec::for_node_count(n, 4000.0).unwrap();
            assert_eq!((s.rows, s.cols), shape);
        }
    }

    #[test]
    fn two_node_grid() {
        let topo = build_grid(&GridSpec {
            rows: 1,
            cols: 2,
            ..GridSpec::default()
        })
        .unwrap();
        assert_eq!(topo.len(), 2);
        let adj = topo.adjacency(&RadioConfig::default());
        assert_eq!(adj, vec![vec![1], vec![0]]);
    }

    #[test]
    fn grid_errors() {
        for (rows, cols) in [(1, 1), (0, 5)] {
            let spec = GridSpec {
                rows,
                cols,
                ..GridSpec::default()
            };
            assert!(matches!(
                build_grid(&spec),
                Err(ScenarioError::InvalidSpec(_))
            ));
        }
        let spec = GridSpec {
            gateway: GatewayPlacement::Cell([3, 0]),
            ..GridSpec::default()
        };
        assert!(build_grid(&spec).is_err());
    }

    #[test]
    fn setups_map_to_radios() {
        let mut s = Scenario::default();
        for (setup, count, bw) in [
            (Setup::One, 1, 125_000),
            (Setup::Two, 2, 125_000),
            (Setup::Three, 2, 250_000),
        ] {
            s.setup = setup;
            let radios = s.radios();
            assert_eq!(radios.len(), count);
            assert!(radios
                .iter()
                .all(|r| r.bandwidth_hz == bw && r.spreading_factor == 7));
        }
        assert!(Setup::try_from(4).is_err());
    }

    #[test]
    fn scenario_validation() {
        let mut s = Scenario::default();
        assert!(s.validate().is_ok());
        s.packet_size_bytes = 300;
        assert!(matches!(s.validate(), Err(ScenarioError::App(_))));
        s.packet_size_bytes = 128;
        s.priorities.push(PriorityOverride {
            row: 1,
            col: 1,
            priority: Priority::High,
        });
        assert!(s.validate().is_err(), "gateway cell is not a client");
    }
}
