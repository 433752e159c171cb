//! Post-run consistency checks over a traced simulation.

use std::collections::{HashMap, HashSet};

use thiserror::Error;

use super::engine::Simulation;
use crate::app::Outcome;
use crate::codec::PacketType;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{check}: {detail}")]
pub struct AuditError {
    pub check: &'static str,
    pub detail: String,
}

fn fail(check: &'static str, detail: String) -> Result<(), AuditError> {
    Err(AuditError { check, detail })
}

fn is_data(t: PacketType) -> bool {
    matches!(
        t,
        PacketType::Data | PacketType::MoreSignificant | PacketType::LessSignificant
    )
}

/// Every request resolved exactly once: delivered or timed out. Meant for
/// use after [`Simulation::report`], which closes open requests.
pub fn conservation(sim: &Simulation) -> Result<(), AuditError> {
    for node in sim.nodes() {
        let Some(client) = &node.client else { continue };
        for r in client.records() {
            if r.outcome == Outcome::Pending {
                return fail(
                    "conservation",
                    format!("{} request {} unresolved", node.site.address, r.request_seq),
                );
            }
            if r.outcome == Outcome::Delivered && r.t_replied.is_none_or(|t| t < r.t_sent) {
                return fail(
                    "conservation",
                    format!(
                        "{} request {} replied out of order",
                        node.site.address, r.request_seq
                    ),
                );
            }
        }
    }
    Ok(())
}

/// Data frames go to a neighbour and lose exactly one TTL per hop.
pub fn forwarding(sim: &Simulation) -> Result<(), AuditError> {
    let Some(trace) = sim.trace() else {
        return fail("forwarding", "trace not enabled".into());
    };
    let ttl = sim.scenario().routing.data_ttl;
    let index: HashMap<_, _> = sim
        .topology()
        .sites
        .iter()
        .enumerate()
        .map(|(i, s)| (s.address, i))
        .collect();
    let mut hops: HashMap<_, Vec<(u8, usize)>> = HashMap::new();
    for tx in trace
        .transmissions
        .iter()
        .filter(|t| is_data(t.header.ptype))
    {
        let h = &tx.header;
        let Some(&nh) = index.get(&h.next_hop) else {
            return fail(
                "next-hop",
                format!(
                    "frame from {} to unknown next hop {}",
                    tx.sender, h.next_hop
                ),
            );
        };
        if !sim.adjacency()[tx.sender].contains(&nh) {
            return fail(
                "next-hop",
                format!("{} handed a frame to non-neighbour {}", tx.sender, nh),
            );
        }
        if h.ttl == 0 || h.ttl > ttl {
            return fail("ttl", format!("frame with TTL {} on the air", h.ttl));
        }
        let seen = hops
            .entry((h.source, h.sequence, h.ptype, h.destination))
            .or_default();
        if sim.topology().sites[tx.sender].address == h.source {
            if h.ttl != ttl {
                return fail("ttl", format!("originator {} sent TTL {}", h.source, h.ttl));
            }
        } else {
            match seen.iter().rev().find(|(_, hop)| *hop == tx.sender) {
                None => {
                    return fail(
                        "ttl",
                        format!("{} relayed a frame it was never given", tx.sender),
                    )
                }
                Some((prev, _)) if *prev != h.ttl + 1 => {
                    return fail(
                        "ttl",
                        format!("TTL went from {prev} to {} at {}", h.ttl, tx.sender),
                    )
                }
                Some(_) => {}
            }
        }
        seen.push((h.ttl, nh));
    }
    Ok(())
}

/// No frame starts while an audible frame occupies its channel, and the
/// two halves of a data packet leave together on different channels.
pub fn medium_access(sim: &Simulation) -> Result<(), AuditError> {
    let Some(trace) = sim.trace() else {
        return fail("lbt", "trace not enabled".into());
    };
    let txs = &trace.transmissions;
    let adj = sim.adjacency();
    for a in txs {
        let busy = txs.iter().any(|b| {
            b.sender != a.sender
                && b.channel == a.channel
                && adj[a.sender].contains(&b.sender)
                && b.t_start <= a.t_start
                && a.t_start < b.t_end
        });
        if busy {
            return fail(
                "lbt",
                format!("{} started on a busy channel at {}", a.sender, a.t_start),
            );
        }
    }
    for m in txs
        .iter()
        .filter(|t| t.header.ptype == PacketType::MoreSignificant)
    {
        let twin = txs.iter().any(|l| {
            l.header.ptype == PacketType::LessSignificant
                && l.sender == m.sender
                && l.header.source == m.header.source
                && l.header.sequence == m.header.sequence
                && l.t_start == m.t_start
                && l.channel != m.channel
        });
        if !twin {
            return fail(
                "multiplexing",
                format!("lone fragment from {} at {}", m.sender, m.t_start),
            );
        }
    }
    Ok(())
}

/// Recomputes each reception from the transmission log: a frame reaches an
/// in-range node iff no other frame audible there, the node's own included,
/// overlaps it on that channel.
pub fn receptions(sim: &Simulation) -> Result<(), AuditError> {
    let Some(trace) = sim.trace() else {
        return fail("collisions", "trace not enabled".into());
    };
    let txs = &trace.transmissions;
    let adj = sim.adjacency();
    let done = sim.now();
    let mut expected = HashSet::new();
    for (k, f) in txs.iter().enumerate() {
        if f.t_end >= done {
            continue;
        }
        for &r in &adj[f.sender] {
            let clash = sim.scenario().collisions
                && txs.iter().enumerate().any(|(j, g)| {
                    j != k
                        && g.channel == f.channel
                        && g.t_start < f.t_end
                        && f.t_start < g.t_end
                        && (g.sender == r || adj[r].contains(&g.sender))
                });
            if !clash {
                expected.insert((r, f.sender, f.channel, f.t_start));
            }
        }
    }
    let actual: HashSet<_> = trace
        .receptions
        .iter()
        .filter(|rx| rx.t_end < done)
        .map(|rx| (rx.receiver, rx.sender, rx.channel, rx.t_start))
        .collect();
    if let Some(x) = expected.symmetric_difference(&actual).next() {
        let kind = if actual.contains(x) {
            "delivered despite overlap"
        } else {
            "lost without overlap"
        };
        return fail(
            "collisions",
            format!("frame {} -> {} at {}: {kind}", x.1, x.0, x.3),
        );
    }
    Ok(())
}

/// All checks above.
pub fn audit(sim: &Simulation) -> Result<(), AuditError> {
    conservation(sim)?;
    forwarding(sim)?;
    medium_access(sim)?;
    receptions(sim)
}
