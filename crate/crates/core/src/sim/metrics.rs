use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::app::{Outcome, RequestRecord};
use crate::codec::NodeAddress;
use crate::network::Priority;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("no requests were sent")]
    EmptyRun,
}

/// Everything one client recorded.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowRecords {
    pub source: NodeAddress,
    pub priority: Priority,
    pub records: Vec<RequestRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowReport {
    pub source: NodeAddress,
    pub priority: Priority,
    pub sent: u64,
    pub received: u64,
    pub apd_s: Option<f64>,
    pub jitter_s: Option<f64>,
}

/// Channel and stack counters gathered during a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub events: u64,
    pub frames_sent: u64,
    pub frames_delivered: u64,
    pub collisions: u64,
    pub half_duplex_losses: u64,
    pub fragment_losses: u64,
    pub forwarded: u64,
    pub ttl_drops: u64,
    pub no_route_drops: u64,
    pub queue_drops: u64,
    pub corrupt_payloads: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub plr_percent: f64,
    /// Mean round-trip delay of delivered requests.
    pub apd_s: Option<f64>,
    /// Mean absolute delay change between consecutive deliveries of a
    /// flow, averaged over flows.
    pub jitter_s: Option<f64>,
    pub sent: u64,
    pub received: u64,
    pub timed_out: u64,
    #[serde(skip)]
    pub delays_s: Vec<f64>,
    pub flows: Vec<FlowReport>,
    pub counters: Counters,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs
        .into_iter()
        .fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn flow_jitter(delays: &[f64]) -> Option<f64> {
    mean(delays.windows(2).map(|w| (w[1] - w[0]).abs()))
}

/// Aggregates request records. Pending requests count as lost.
pub fn compute_metrics(flows: &[FlowRecords]) -> Result<MetricsReport, MetricsError> {
    let mut report = MetricsReport {
        plr_percent: 0.0,
        apd_s: None,
        jitter_s: None,
        sent: 0,
        received: 0,
        timed_out: 0,
        delays_s: Vec::new(),
        flows: Vec::with_capacity(flows.len()),
        counters: Counters::default(),
    };
    let mut jitters = Vec::new();
    for flow in flows {
        let delays: Vec<f64> = flow
            .records
            .iter()
            .filter_map(RequestRecord::delay_s)
            .collect();
        let sent = flow.records.len() as u64;
        let lost = flow
            .records
            .iter()
            .filter(|r| r.outcome != Outcome::Delivered)
            .count() as u64;
        let jitter = flow_jitter(&delays);
        jitters.extend(jitter);
        report.flows.push(FlowReport {
            source: flow.source,
            priority: flow.priority,
            sent,
            received: delays.len() as u64,
            apd_s: mean(delays.iter().copied()),
            jitter_s: jitter,
        });
        report.sent += sent;
        report.timed_out += lost;
        report.received += delays.len() as u64;
        report.delays_s.extend(delays);
    }
    if report.sent == 0 {
        return Err(MetricsError::EmptyRun);
    }
    report.plr_percent = 100.0 * report.timed_out as f64 / report.sent as f64;
    report.apd_s = mean(report.delays_s.iter().copied());
    report.jitter_s = mean(jitters);
    Ok(report)
}
