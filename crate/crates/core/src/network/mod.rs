//! Distance-vector routing adapted from Babel.
//!
//! Each node keeps a neighbor table fed by hellos and a routing table fed
//! by route messages. Data is relayed hop by hop using the next-hop field
//! of the header; TTL bounds every path.

mod queue;
mod tables;

pub use queue::{Priority, PriorityQueues, DEFAULT_QUEUE_CAPACITY};
pub use tables::{
    dump_tables, is_better, NeighborEntry, NeighborTable, RouteEntry, RouteView, RoutingTable,
};

use serde::{Deserialize, Serialize};

use crate::codec::{self, NodeAddress, Packet, PacketType, RouteMessageHeader, WireRouteEntry};
use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoutingConfig {
    pub success_threshold: f64,
    pub ewma_alpha: f64,
    pub data_ttl: u8,
    pub queue_capacity: usize,
    /// Defaults to three hello periods.
    pub neighbor_expiry_s: Option<f64>,
    /// Defaults to three route periods.
    pub route_expiry_s: Option<f64>,
    /// Upper bound of the random delay before a triggered advertisement.
    pub triggered_update_delay_s: f64,
}

impl Default for RoutingConfig {
    fn default() -> Self {
        RoutingConfig {
            success_threshold: 0.9,
            ewma_alpha: 0.2,
            data_ttl: 8,
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            neighbor_expiry_s: None,
            route_expiry_s: None,
            triggered_update_delay_s: 1.0,
        }
    }
}

impl RoutingConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.success_threshold) {
            return Err(format!(
                "success_threshold {} outside [0, 1]",
                self.success_threshold
            ));
        }
        if !(self.ewma_alpha > 0.0 && self.ewma_alpha <= 1.0) {
            return Err(format!("ewma_alpha {} outside (0, 1]", self.ewma_alpha));
        }
        if self.data_ttl == 0 {
            return Err("data_ttl must be at least 1".into());
        }
        if self.queue_capacity == 0 {
            return Err("queue_capacity must be at least 1".into());
        }
        for (name, v) in [
            ("neighbor_expiry_s", self.neighbor_expiry_s),
            ("route_expiry_s", self.route_expiry_s),
        ] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(format!("{name} must be positive, got {v}"));
                }
            }
        }
        if !(self.triggered_update_delay_s >= 0.0 && self.triggered_update_delay_s.is_finite()) {
            return Err(format!(
                "triggered_update_delay_s must be non-negative, got {}",
                self.triggered_update_delay_s
            ));
        }
        Ok(())
    }
}

/// Why the network layer gave up on a packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DropReason {
    TtlExpired,
    NoRoute,
    QueueFull,
    /// Broadcast-addressed data is never relayed.
    Broadcast,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RelayOutcome {
    Deliver(Packet),
    Forwarded,
    Dropped(DropReason),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouterStats {
    pub forwarded: u64,
    pub ttl_drops: u64,
    pub no_route_drops: u64,
    pub queue_drops: u64,
}

/// Network-layer state of one node.
#[derive(Debug)]
pub struct Router {
    address: NodeAddress,
    cfg: RoutingConfig,
    neighbor_expiry: SimTime,
    route_expiry: SimTime,
    own_priority: Priority,
    neighbors: NeighborTable,
    routes: RoutingTable,
    queues: PriorityQueues,
    hello_seq: u8,
    route_seq: u8,
    data_seq: u8,
    stats: RouterStats,
}

impl Router {
    pub fn new(
        address: NodeAddress,
        cfg: RoutingConfig,
        hello_period_s: f64,
        route_period_s: f64,
        own_priority: Priority,
    ) -> Self {
        let neighbor_expiry =
            SimTime::from_secs_f64(cfg.neighbor_expiry_s.unwrap_or(3.0 * hello_period_s));
        let route_expiry =
            SimTime::from_secs_f64(cfg.route_expiry_s.unwrap_or(3.0 * route_period_s));
        Router {
            address,
            queues: PriorityQueues::new(cfg.queue_capacity),
            cfg,
            neighbor_expiry,
            route_expiry,
            own_priority,
            neighbors: NeighborTable::default(),
            routes: RoutingTable::default(),
            hello_seq: 0,
            route_seq: 0,
            data_seq: 0,
            stats: RouterStats::default(),
        }
    }

    pub fn address(&self) -> NodeAddress {
        self.address
    }

    pub fn config(&self) -> &RoutingConfig {
        &self.cfg
    }

    pub fn neighbors(&self) -> &NeighborTable {
        &self.neighbors
    }

    pub fn routes(&self) -> &RoutingTable {
        &self.routes
    }

    pub fn stats(&self) -> RouterStats {
        self.stats
    }

    pub fn queues(&self) -> &PriorityQueues {
        &self.queues
    }

    pub fn dump(&self) -> String {
        dump_tables(self.address, &self.neighbors, &self.routes)
    }

    /// Ingress filter: frames meant for another next hop, and our own
    /// frames echoed back, are ignored.
    pub fn accepts(&self, p: &Packet) -> bool {
        p.header.source != self.address
            && (p.header.next_hop == self.address || p.header.next_hop.is_broadcast())
    }

    fn enqueue(&mut self, p: Packet, priority: Priority) -> Result<(), DropReason> {
        self.queues.push(p, priority).map_err(|_| {
            self.stats.queue_drops += 1;
            DropReason::QueueFull
        })
    }

    pub fn pop_outgoing(&mut self) -> Option<(Packet, Priority)> {
        self.queues.pop()
    }

    pub fn has_outgoing(&self) -> bool {
        !self.queues.is_empty()
    }

    pub fn make_hello(&mut self, _now: SimTime) -> Packet {
        self.hello_seq = self.hello_seq.wrapping_add(1);
        Packet::new(
            PacketType::Hello,
            1,
            self.address,
            NodeAddress::BROADCAST,
            NodeAddress::BROADCAST,
            self.hello_seq,
            Vec::new(),
        )
    }

    /// Builds a hello and queues it behind everything else (signaling is
    /// low priority).
    pub fn queue_hello(&mut self, now: SimTime) -> Result<(), DropReason> {
        let hello = self.make_hello(now);
        self.enqueue(hello, Priority::Low)
    }

    pub fn on_hello(&mut self, p: &Packet, now: SimTime) {
        debug_assert_eq!(p.ptype(), PacketType::Hello);
        if p.header.source == self.address {
            return;
        }
        let alpha = self.cfg.ewma_alpha;
        let seq = p.header.sequence;
        let n = self.neighbors.entry_or_insert(p.header.source, now);
        match n.last_sequence {
            None => {}
            Some(last) => {
                let gap = seq.wrapping_sub(last);
                if gap != 0 {
                    for _ in 1..gap {
                        n.observe(false, alpha);
                    }
                    n.observe(true, alpha);
                }
            }
        }
        n.last_sequence = Some(seq);
        n.last_heard = now;
    }

    fn self_entry(&self) -> WireRouteEntry {
        WireRouteEntry {
            destination: self.address,
            distance: 0,
            sequence: self.data_seq,
            metric: 100,
            priority: self.own_priority.into(),
        }
    }

    /// Whole routing table plus our own zero-distance entry, split into
    /// route messages of at most 30 entries.
    pub fn make_route_messages(&mut self, _now: SimTime) -> Vec<Packet> {
        let mut entries = vec![self.self_entry()];
        entries.extend(self.routes.iter().map(|r| {
            let success = self
                .neighbors
                .get(r.next_hop)
                .map_or(0, NeighborEntry::success_percent);
            r.to_wire(success)
        }));
        let header = RouteMessageHeader {
            source: self.address,
            sequence: self.route_seq.wrapping_add(1),
        };
        let packets = codec::encode_route_message(&entries, header);
        self.route_seq = self.route_seq.wrapping_add(packets.len() as u8);
        packets
    }

    pub fn queue_route_messages(&mut self, now: SimTime) -> usize {
        let mut queued = 0;
        for p in self.make_route_messages(now) {
            if self.enqueue(p, Priority::Low).is_ok() {
                queued += 1;
            }
        }
        queued
    }

    /// Merges an advertisement into the routing table.
    ///
    /// Returns true when a destination was added or removed, or its hop
    /// count changed.
    pub fn on_route_message(&mut self, p: &Packet, now: SimTime) -> bool {
        debug_assert_eq!(p.ptype(), PacketType::Route);
        let advertiser = p.header.source;
        if advertiser == self.address {
            return false;
        }
        let Ok(entries) = codec::decode_route_entries(p) else {
            return false;
        };
        let neighbor = self.neighbors.entry_or_insert(advertiser, now);
        neighbor.last_heard = now;
        let link_success = neighbor.packet_success;
        let link_percent = neighbor.success_percent();
        if let Some(own) = entries.iter().find(|e| e.destination == advertiser) {
            neighbor.priority = Priority::try_from(own.priority).unwrap_or(Priority::Low);
        }

        let mut changed = false;
        for e in entries {
            if e.destination == self.address || e.destination.is_broadcast() {
                continue;
            }
            let distance = e.distance as u16 + 1;
            if distance > self.cfg.data_ttl as u16 {
                // Unreachable within the TTL budget.
                if self
                    .routes
                    .get(e.destination)
                    .is_some_and(|r| r.next_hop == advertiser)
                {
                    self.routes.remove(e.destination);
                    changed = true;
                }
                continue;
            }
            let candidate = RouteEntry {
                destination: e.destination,
                next_hop: advertiser,
                distance: distance as u8,
                sequence: e.sequence,
                metric: e.metric.min(link_percent),
                priority: Priority::try_from(e.priority).unwrap_or(Priority::Low),
                last_updated: now,
            };
            match self.routes.get(e.destination) {
                None => {
                    self.routes.insert(candidate);
                    changed = true;
                }
                Some(existing) if existing.next_hop == advertiser => {
                    changed |= existing.distance != candidate.distance;
                    self.routes.insert(candidate);
                }
                Some(existing) => {
                    let existing_success = self
                        .neighbors
                        .get(existing.next_hop)
                        .map_or(0.0, |n| n.packet_success);
                    let better = is_better(
                        RouteView {
                            route: &candidate,
                            next_hop_success: link_success,
                        },
                        RouteView {
                            route: existing,
                            next_hop_success: existing_success,
                        },
                        self.cfg.success_threshold,
                    );
                    if better {
                        changed |= existing.distance != candidate.distance;
                        self.routes.insert(candidate);
                    }
                }
            }
        }
        changed
    }

    /// Stamps a locally generated data packet and queues it.
    pub fn originate(
        &mut self,
        mut p: Packet,
        priority: Priority,
        _now: SimTime,
    ) -> Result<(), DropReason> {
        debug_assert_eq!(p.ptype(), PacketType::Data);
        let dest = p.header.destination;
        if dest.is_broadcast() {
            return Err(DropReason::Broadcast);
        }
        self.data_seq = self.data_seq.wrapping_add(1);
        p.header.source = self.address;
        p.header.sequence = self.data_seq;
        p.header.ttl = self.cfg.data_ttl;
        let Some(route) = self.routes.get(dest) else {
            self.stats.no_route_drops += 1;
            return Err(DropReason::NoRoute);
        };
        p.header.next_hop = route.next_hop;
        self.enqueue(p, priority)
    }

    /// Handles a data packet addressed (by next hop) to this node.
    pub fn relay(&mut self, mut p: Packet, priority: Priority, _now: SimTime) -> RelayOutcome {
        let h = &p.header;
        if let Some(r) = self.routes.get_mut(h.source) {
            r.sequence = h.sequence;
        }
        if h.destination == self.address {
            return RelayOutcome::Deliver(p);
        }
        if h.destination.is_broadcast() {
            return RelayOutcome::Dropped(DropReason::Broadcast);
        }
        if h.ttl <= 1 {
            self.stats.ttl_drops += 1;
            return RelayOutcome::Dropped(DropReason::TtlExpired);
        }
        let Some(route) = self.routes.get(h.destination) else {
            self.stats.no_route_drops += 1;
            return RelayOutcome::Dropped(DropReason::NoRoute);
        };
        p.header.next_hop = route.next_hop;
        p.header.ttl -= 1;
        match self.enqueue(p, priority) {
            Ok(()) => {
                self.stats.forwarded += 1;
                RelayOutcome::Forwarded
            }
            Err(reason) => RelayOutcome::Dropped(reason),
        }
    }

    /// Ages out silent neighbors and stale routes. Returns true if any
    /// route disappeared.
    pub fn expire_state(&mut self, now: SimTime) -> bool {
        let mut removed = 0;
        for gone in self.neighbors.expire(now, self.neighbor_expiry) {
            removed += self.routes.remove_via(gone);
        }
        removed += self.routes.expire(now, self.route_expiry);
        removed > 0
    }
}
