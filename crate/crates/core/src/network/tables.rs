use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::queue::Priority;
use crate::codec::{NodeAddress, WireNeighborEntry, WireRouteEntry};
use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborEntry {
    pub address: NodeAddress,
    /// Sequence of the last hello heard, if any.
    pub last_sequence: Option<u8>,
    /// EWMA of hello receptions, in `[0, 1]`.
    pub packet_success: f64,
    pub metric: u16,
    pub priority: Priority,
    pub last_heard: SimTime,
}

impl NeighborEntry {
    pub fn new(address: NodeAddress, now: SimTime) -> Self {
        NeighborEntry {
            address,
            last_sequence: None,
            packet_success: 1.0,
            metric: 100,
            priority: Priority::Low,
            last_heard: now,
        }
    }

    pub fn success_percent(&self) -> u8 {
        (self.packet_success * 100.0).round().clamp(0.0, 100.0) as u8
    }

    /// Folds one hello observation into the success estimate.
    pub fn observe(&mut self, received: bool, alpha: f64) {
        let x = if received { 1.0 } else { 0.0 };
        self.packet_success = ((1.0 - alpha) * self.packet_success + alpha * x).clamp(0.0, 1.0);
        self.metric = self.success_percent() as u16;
    }

    pub fn to_wire(&self) -> WireNeighborEntry {
        WireNeighborEntry {
            address: self.address,
            packet_success: self.success_percent(),
            metric: self.metric,
            priority: self.priority.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteEntry {
    pub destination: NodeAddress,
    pub next_hop: NodeAddress,
    pub distance: u8,
    pub sequence: u8,
    /// Link score 0..=100.
    pub metric: u8,
    pub priority: Priority,
    pub last_updated: SimTime,
}

impl RouteEntry {
    pub fn to_wire(&self, next_hop_success: u8) -> WireRouteEntry {
        WireRouteEntry {
            destination: self.destination,
            distance: self.distance,
            sequence: self.sequence,
            metric: self.metric.min(next_hop_success),
            priority: self.priority.into(),
        }
    }
}

/// A route paired with the current success estimate of its next hop.
#[derive(Debug, Clone, Copy)]
pub struct RouteView<'a> {
    pub route: &'a RouteEntry,
    pub next_hop_success: f64,
}

/// Route preference: hop count wins unless the next hop's delivery rate
/// drops below `threshold`, in which case a healthy route wins regardless
/// of length. Equal-distance ties go to the higher metric; full ties keep
/// the existing route.
pub fn is_better(candidate: RouteView<'_>, existing: RouteView<'_>, threshold: f64) -> bool {
    let cand_ok = candidate.next_hop_success >= threshold;
    let exist_ok = existing.next_hop_success >= threshold;
    if cand_ok != exist_ok {
        return cand_ok;
    }
    let (c, e) = (candidate.route, existing.route);
    if c.distance != e.distance {
        return c.distance < e.distance;
    }
    c.metric > e.metric
}

#[derive(Debug, Clone, Default)]
pub struct NeighborTable {
    entries: BTreeMap<NodeAddress, NeighborEntry>,
}

impl NeighborTable {
    pub fn get(&self, addr: NodeAddress) -> Option<&NeighborEntry> {
        self.entries.get(&addr)
    }

    pub fn get_mut(&mut self, addr: NodeAddress) -> Option<&mut NeighborEntry> {
        self.entries.get_mut(&addr)
    }

    pub fn contains(&self, addr: NodeAddress) -> bool {
        self.entries.contains_key(&addr)
    }

    pub fn entry_or_insert(&mut self, addr: NodeAddress, now: SimTime) -> &mut NeighborEntry {
        self.entries
            .entry(addr)
            .or_insert_with(|| NeighborEntry::new(addr, now))
    }

    pub fn iter(&self) -> impl Iterator<Item = &NeighborEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Removes neighbors silent for longer than `expiry`; returns them.
    pub fn expire(&mut self, now: SimTime, expiry: SimTime) -> Vec<NodeAddress> {
        let stale: Vec<NodeAddress> = self
            .entries
            .values()
            .filter(|n| now.saturating_sub(n.last_heard) > expiry)
            .map(|n| n.address)
            .collect();
        for a in &stale {
            self.entries.remove(a);
        }
        stale
    }
}

#[derive(Debug, Clone, Default)]
pub struct RoutingTable {
    entries: BTreeMap<NodeAddress, RouteEntry>,
}

impl RoutingTable {
    pub fn get(&self, dest: NodeAddress) -> Option<&RouteEntry> {
        self.entries.get(&dest)
    }

    pub fn get_mut(&mut self, dest: NodeAddress) -> Option<&mut RouteEntry> {
        self.entries.get_mut(&dest)
    }

    pub fn insert(&mut self, route: RouteEntry) {
        self.entries.insert(route.destination, route);
    }

    pub fn remove(&mut self, dest: NodeAddress) -> Option<RouteEntry> {
        self.entries.remove(&dest)
    }

    pub fn iter(&self) -> impl Iterator<Item = &RouteEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Drops routes through `next_hop`. Returns how many went.
    pub fn remove_via(&mut self, next_hop: NodeAddress) -> usize {
        let before = self.entries.len();
        self.entries.retain(|_, r| r.next_hop != next_hop);
        before - self.entries.len()
    }

    pub fn expire(&mut self, now: SimTime, expiry: SimTime) -> usize {
        let before = self.entries.len();
        self.entries
            .retain(|_, r| now.saturating_sub(r.last_updated) <= expiry);
        before - self.entries.len()
    }
}

/// Plain-text dump of both tables, one row per entry.
pub fn dump_tables(own: NodeAddress, neighbors: &NeighborTable, routes: &RoutingTable) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "node {own}");
    let _ = writeln!(out, "neighbors address success metric priority last_heard");
    for n in neighbors.iter() {
        let _ = writeln!(
            out,
            "  {} {:.3} {} {} {}",
            n.address, n.packet_success, n.metric, n.priority, n.last_heard
        );
    }
    let _ = writeln!(
        out,
        "routes destination next_hop distance sequence metric priority last_updated"
    );
    for r in routes.iter() {
        let _ = writeln!(
            out,
            "  {} {} {} {} {} {} {}",
            r.destination, r.next_hop, r.distance, r.sequence, r.metric, r.priority, r.last_updated
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn route(distance: u8, metric: u8) -> RouteEntry {
        RouteEntry {
            destination: NodeAddress(1),
            next_hop: NodeAddress(2),
            distance,
            sequence: 0,
            metric,
            priority: Priority::Low,
            last_updated: SimTime::ZERO,
        }
    }

    fn view(r: &RouteEntry, success: f64) -> RouteView<'_> {
        RouteView {
            route: r,
            next_hop_success: success,
        }
    }

    #[test]
    fn fewer_hops_wins() {
        let (two, three) = (route(2, 100), route(3, 100));
        assert!(is_better(view(&two, 1.0), view(&three, 1.0), 0.9));
        assert!(!is_better(view(&three, 1.0), view(&two, 1.0), 0.9));
    }

    #[test]
    fn unhealthy_short_route_loses() {
        let (two, three) = (route(2, 50), route(3, 100));
        assert!(is_better(view(&three, 1.0), view(&two, 0.5), 0.9));
        assert!(!is_better(view(&two, 0.5), view(&three, 1.0), 0.9));
        // Both below the threshold: back to hop count.
        assert!(is_better(view(&two, 0.5), view(&three, 0.6), 0.9));
    }

    #[test]
    fn ties() {
        let a = route(2, 90);
        assert!(!is_better(view(&a, 1.0), view(&a.clone(), 1.0), 0.9));
        let b = route(2, 95);
        assert!(is_better(view(&b, 1.0), view(&a, 1.0), 0.9));
    }

    #[test]
    fn ewma_observation() {
        let mut n = NeighborEntry::new(NodeAddress(5), SimTime::ZERO);
        n.observe(false, 0.2);
        assert!((n.packet_success - 0.8).abs() < 1e-12);
        n.observe(true, 0.2);
        assert!((n.packet_success - 0.84).abs() < 1e-12);
        assert_eq!(n.success_percent(), 84);
        assert_eq!(n.to_wire().packet_success, 84);
    }

    #[test]
    fn expiry() {
        let mut t = NeighborTable::default();
        t.entry_or_insert(NodeAddress(1), SimTime(0));
        t.entry_or_insert(NodeAddress(2), SimTime(50));
        let gone = t.expire(SimTime(100), SimTime(60));
        assert_eq!(gone, vec![NodeAddress(1)]);
        assert!(t.contains(NodeAddress(2)));
    }
}
