//! Closed-loop request/reply traffic.
//!
//! A client keeps at most one request in flight. It sends the next one as
//! soon as the current request is answered or times out; timed-out
//! requests are lost, never retransmitted.
//!
//! Request payload: `[priority, seq_hi, seq_lo, pattern...]`.
//! Reply payload: `[priority, seq_hi, seq_lo, status]`.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{NodeAddress, Packet, PacketType, HEADER_LEN, MAX_FRAME_LEN};
use crate::network::Priority;
use crate::time::SimTime;

pub const REQUEST_PREAMBLE_LEN: usize = 3;
pub const REPLY_PAYLOAD_LEN: usize = 4;
pub const DEFAULT_REPLY_TIMEOUT_S: f64 = 5.0;

pub const STATUS_OK: u8 = 0;
pub const STATUS_CORRUPT: u8 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AppError {
    #[error("packet size {0} must lie in {min}..={MAX_FRAME_LEN}", min = HEADER_LEN + REQUEST_PREAMBLE_LEN)]
    PacketSize(usize),
    #[error("reply timeout must be positive, got {0}")]
    Timeout(f64),
    #[error("at most {max} requests per application, got {0}", max = u16::MAX as u32 + 1)]
    TooManyRequests(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppConfig {
    pub priority: Priority,
    pub payload_bytes: usize,
    pub reply_timeout_s: f64,
    pub total_requests: u32,
    pub destination: NodeAddress,
    /// Think time between a resolved request and the next one.
    pub request_gap_s: f64,
}

impl AppConfig {
    pub fn validate(&self) -> Result<(), AppError> {
        let size = self.payload_bytes + HEADER_LEN;
        if !(HEADER_LEN + REQUEST_PREAMBLE_LEN..=MAX_FRAME_LEN).contains(&size) {
            return Err(AppError::PacketSize(size));
        }
        if !(self.reply_timeout_s > 0.0 && self.reply_timeout_s.is_finite()) {
            return Err(AppError::Timeout(self.reply_timeout_s));
        }
        if self.total_requests > u16::MAX as u32 + 1 {
            return Err(AppError::TooManyRequests(self.total_requests));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Pending,
    Delivered,
    TimedOut,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub request_seq: u16,
    pub t_sent: SimTime,
    pub t_replied: Option<SimTime>,
    pub outcome: Outcome,
}

impl RequestRecord {
    /// Packet delay in seconds, for delivered requests.
    pub fn delay_s(&self) -> Option<f64> {
        match (self.outcome, self.t_replied) {
            (Outcome::Delivered, Some(t)) => Some((t - self.t_sent).as_secs_f64()),
            _ => None,
        }
    }
}

/// Deterministic filler keyed by (source, request sequence).
pub fn payload_pattern(source: NodeAddress, seq: u16, len: usize) -> Vec<u8> {
    let mut state = ((source.0 as u64) << 16 | seq as u64) ^ 0x9E37_79B9_7F4A_7C15;
    (0..len)
        .map(|_| {
            // xorshift64*
            state ^= state >> 12;
            state ^= state << 25;
            state ^= state >> 27;
            (state.wrapping_mul(0x2545_F491_4F6C_DD1D) >> 56) as u8
        })
        .collect()
}

/// Application priority carried in the first payload byte; defaults to low.
pub fn packet_priority(p: &Packet) -> Priority {
    p.payload
        .first()
        .and_then(|b| Priority::try_from(*b).ok())
        .unwrap_or(Priority::Low)
}

fn payload_seq(p: &Packet) -> Option<u16> {
    (p.payload.len() >= REQUEST_PREAMBLE_LEN)
        .then(|| u16::from_be_bytes([p.payload[1], p.payload[2]]))
}

/// Client side of the request/reply loop.
#[derive(Debug)]
pub struct Client {
    address: NodeAddress,
    cfg: AppConfig,
    records: Vec<RequestRecord>,
    outstanding: Option<usize>,
}

impl Client {
    pub fn new(address: NodeAddress, cfg: AppConfig) -> Self {
        Client {
            address,
            cfg,
            records: Vec::new(),
            outstanding: None,
        }
    }

    pub fn config(&self) -> &AppConfig {
        &self.cfg
    }

    pub fn address(&self) -> NodeAddress {
        self.address
    }

    pub fn records(&self) -> &[RequestRecord] {
        &self.records
    }

    pub fn issued(&self) -> u32 {
        self.records.len() as u32
    }

    pub fn outstanding(&self) -> Option<u16> {
        self.outstanding.map(|i| self.records[i].request_seq)
    }

    pub fn is_finished(&self) -> bool {
        self.outstanding.is_none() && self.issued() >= self.cfg.total_requests
    }

    /// Emits the next request, or `None` if one is still in flight or the
    /// budget is spent. Routing fields are filled in by the network layer.
    pub fn next_request(&mut self, now: SimTime) -> Option<Packet> {
        if self.outstanding.is_some() || self.issued() >= self.cfg.total_requests {
            return None;
        }
        let seq = self.records.len() as u16;
        let mut payload = Vec::with_capacity(self.cfg.payload_bytes);
        payload.push(self.cfg.priority.into());
        payload.extend_from_slice(&seq.to_be_bytes());
        payload.extend(payload_pattern(
            self.address,
            seq,
            self.cfg.payload_bytes - REQUEST_PREAMBLE_LEN,
        ));
        self.records.push(RequestRecord {
            request_seq: seq,
            t_sent: now,
            t_replied: None,
            outcome: Outcome::Pending,
        });
        self.outstanding = Some(self.records.len() - 1);
        Some(Packet::new(
            PacketType::Data,
            0,
            self.address,
            self.cfg.destination,
            NodeAddress::BROADCAST,
            0,
            payload,
        ))
    }

    /// Accepts a reply for the outstanding request. Late, duplicate and
    /// unknown replies are ignored.
    pub fn on_reply(&mut self, p: &Packet, now: SimTime) -> bool {
        if p.header.destination != self.address || p.ptype() != PacketType::Data {
            return false;
        }
        let (Some(idx), Some(seq)) = (self.outstanding, payload_seq(p)) else {
            return false;
        };
        let rec = &mut self.records[idx];
        if rec.request_seq != seq {
            return false;
        }
        rec.t_replied = Some(now);
        rec.outcome = Outcome::Delivered;
        self.outstanding = None;
        true
    }

    /// Gives up on request `seq` if it is still outstanding.
    pub fn on_timeout(&mut self, seq: u16, _now: SimTime) -> bool {
        match self.outstanding {
            Some(idx) if self.records[idx].request_seq == seq => {
                self.records[idx].outcome = Outcome::TimedOut;
                self.outstanding = None;
                true
            }
            _ => false,
        }
    }

    /// Shrinks the budget to what has already been issued.
    pub fn stop(&mut self) {
        self.cfg.total_requests = self.issued();
    }

    /// Closes the run: anything still in flight counts as lost.
    pub fn finish(&mut self) {
        if let Some(idx) = self.outstanding.take() {
            self.records[idx].outcome = Outcome::TimedOut;
        }
    }
}

/// Gateway side: echoes every unique request back to its sender.
#[derive(Debug)]
pub struct ReplyServer {
    address: NodeAddress,
    window: SimTime,
    recent: BTreeMap<(NodeAddress, u16), SimTime>,
    recent_order: VecDeque<(SimTime, (NodeAddress, u16))>,
    served: u64,
    corrupt: u64,
}

impl ReplyServer {
    pub fn new(address: NodeAddress, dedup_window_s: f64) -> Self {
        ReplyServer {
            address,
            window: SimTime::from_secs_f64(dedup_window_s),
            recent: BTreeMap::new(),
            recent_order: VecDeque::new(),
            served: 0,
            corrupt: 0,
        }
    }

    pub fn served(&self) -> u64 {
        self.served
    }

    /// Requests whose payload did not match the sender's pattern.
    pub fn corrupt(&self) -> u64 {
        self.corrupt
    }

    pub fn serve(&mut self, p: &Packet, now: SimTime) -> Option<Packet> {
        if p.ptype() != PacketType::Data || p.header.destination != self.address {
            return None;
        }
        let seq = payload_seq(p)?;
        let cutoff = now.saturating_sub(self.window);
        while let Some(&(t, key)) = self.recent_order.front() {
            if t >= cutoff {
                break;
            }
            self.recent_order.pop_front();
            self.recent.remove(&key);
        }
        let key = (p.header.source, seq);
        if self.recent.contains_key(&key) {
            return None;
        }
        self.recent.insert(key, now);
        self.recent_order.push_back((now, key));

        let expected =
            payload_pattern(p.header.source, seq, p.payload.len() - REQUEST_PREAMBLE_LEN);
        let status = if p.payload[REQUEST_PREAMBLE_LEN..] == expected[..] {
            STATUS_OK
        } else {
            self.corrupt += 1;
            STATUS_CORRUPT
        };
        self.served += 1;
        let [hi, lo] = seq.to_be_bytes();
        Some(Packet::new(
            PacketType::Data,
            0,
            self.address,
            p.header.source,
            NodeAddress::BROADCAST,
            0,
            vec![p.payload[0], hi, lo, status],
        ))
    }
}
