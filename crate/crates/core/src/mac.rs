//! Listen-before-talk MAC with frequency diversity for signaling and
//! frequency multiplexing for data.
//!
//! The MAC never acknowledges or retransmits. Signaling frames go out on
//! every radio at once; data frames are split into `m`/`l` halves, one per
//! radio. On the receive side the demultiplexer suppresses diversity copies
//! and glues fragment pairs back together.

use std::collections::{BTreeMap, HashSet, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{self, NodeAddress, Packet, PacketType, MAX_FRAME_LEN};
use crate::phy::{ChannelId, PhyError, RadioConfig, Transmission};
use crate::time::SimTime;

pub const DEFAULT_BACKOFF_MAX_S: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MacError {
    #[error("a node needs one or two radios, got {0}")]
    RadioCount(usize),
    #[error("radios on one node share channel {0}")]
    SharedChannel(ChannelId),
    #[error("backoff bound must be finite and non-negative, got {0}")]
    Backoff(f64),
    #[error(transparent)]
    Phy(#[from] PhyError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacConfig {
    pub backoff_max_s: f64,
    pub radios: Vec<RadioConfig>,
    pub reassembly_timeout_s: f64,
}

impl MacConfig {
    /// Defaults: 100 ms backoff, reassembly timeout of three full-frame
    /// airtimes on the first radio.
    pub fn new(radios: Vec<RadioConfig>) -> Result<Self, MacError> {
        let first = radios.first().ok_or(MacError::RadioCount(0))?;
        let reassembly_timeout_s = 3.0 * crate::phy::time_on_air(MAX_FRAME_LEN, first)?;
        let cfg = MacConfig {
            backoff_max_s: DEFAULT_BACKOFF_MAX_S,
            radios,
            reassembly_timeout_s,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), MacError> {
        if !(1..=2).contains(&self.radios.len()) {
            return Err(MacError::RadioCount(self.radios.len()));
        }
        for r in &self.radios {
            r.validate()?;
        }
        if self.radios.len() == 2 && self.radios[0].channel_id == self.radios[1].channel_id {
            return Err(MacError::SharedChannel(self.radios[0].channel_id));
        }
        if !(self.backoff_max_s >= 0.0 && self.backoff_max_s.is_finite()) {
            return Err(MacError::Backoff(self.backoff_max_s));
        }
        Ok(())
    }

    /// Maps an outgoing packet onto radios.
    ///
    /// Signaling is replicated on all radios. With two radios a data packet
    /// is split into `m` on radio 0 and `l` on radio 1; payloads under two
    /// bytes cannot be split and go whole on radio 0.
    pub fn plan_frames(&self, p: &Packet) -> Vec<(usize, Packet)> {
        if p.ptype().is_signaling() {
            return (0..self.radios.len()).map(|i| (i, p.clone())).collect();
        }
        if p.ptype() == PacketType::Data && self.radios.len() == 2 {
            if let Ok((m, l)) = codec::fragment_data(p) {
                return vec![(0, m), (1, l)];
            }
        }
        vec![(0, p.clone())]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelState {
    Busy,
    Idle,
}

/// Busy iff an audible transmission on `channel` covers `now`.
///
/// `audible` says whether a sender is heard by the sensing node; the node's
/// own frames are always audible to it.
pub fn carrier_sense<'a>(
    active: impl IntoIterator<Item = &'a Transmission>,
    channel: ChannelId,
    now: SimTime,
    audible: impl Fn(NodeAddress) -> bool,
) -> ChannelState {
    let busy = active
        .into_iter()
        .any(|t| t.channel_id == channel && t.covers(now) && audible(t.sender));
    if busy {
        ChannelState::Busy
    } else {
        ChannelState::Idle
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LbtDecision {
    TransmitNow,
    /// Channel busy: sense again at this instant.
    RetryAt(SimTime),
}

/// One listen-before-talk step over every channel a send needs.
///
/// Transmits only when all of them are idle, so multiplexed fragments start
/// together. Otherwise waits for the last sensed frame to end plus a uniform
/// backoff in `[0, backoff_max_s]`.
pub fn listen_before_talk<'a, R: Rng>(
    active: impl IntoIterator<Item = &'a Transmission> + Clone,
    channels: &[ChannelId],
    now: SimTime,
    audible: impl Fn(NodeAddress) -> bool + Copy,
    backoff_max_s: f64,
    rng: &mut R,
) -> LbtDecision {
    let mut busy_until: Option<SimTime> = None;
    for &ch in channels {
        if carrier_sense(active.clone(), ch, now, audible) == ChannelState::Busy {
            let end = active
                .clone()
                .into_iter()
                .filter(|t| t.channel_id == ch && t.covers(now) && audible(t.sender))
                .map(|t| t.t_end)
                .max()
                .expect("busy channel has a covering frame");
            busy_until = Some(busy_until.map_or(end, |b| b.max(end)));
        }
    }
    match busy_until {
        None => LbtDecision::TransmitNow,
        Some(end) => {
            let backoff = if backoff_max_s > 0.0 {
                rng.random_range(0.0..=backoff_max_s)
            } else {
                0.0
            };
            LbtDecision::RetryAt(end + SimTime::from_secs_f64(backoff))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PendingFragment {
    pub fragment: Packet,
    pub arrival_time: SimTime,
}

#[derive(Debug, Default)]
struct FragmentSlot {
    more: Option<PendingFragment>,
    less: Option<PendingFragment>,
}

impl FragmentSlot {
    fn oldest(&self) -> SimTime {
        [&self.more, &self.less]
            .into_iter()
            .flatten()
            .map(|f| f.arrival_time)
            .min()
            .unwrap_or(SimTime::MAX)
    }
}

type DedupKey = (NodeAddress, u8, PacketType);

/// Receive-side state of one node's MAC.
#[derive(Debug)]
pub struct Demultiplexer {
    window: SimTime,
    seen: HashSet<DedupKey>,
    seen_order: VecDeque<(SimTime, DedupKey)>,
    fragments: BTreeMap<(NodeAddress, u8), FragmentSlot>,
    fragment_losses: u64,
}

impl Demultiplexer {
    pub fn new(cfg: &MacConfig) -> Self {
        Demultiplexer {
            window: SimTime::from_secs_f64(cfg.reassembly_timeout_s),
            seen: HashSet::new(),
            seen_order: VecDeque::new(),
            fragments: BTreeMap::new(),
            fragment_losses: 0,
        }
    }

    /// Data packets dropped because one fragment never showed up.
    pub fn fragment_losses(&self) -> u64 {
        self.fragment_losses
    }

    pub fn pending_fragments(&self) -> usize {
        self.fragments.len()
    }

    /// Handles a frame delivered by the channel on `radio_index`.
    ///
    /// Returns the packet to hand to the network layer, if any.
    pub fn receive(&mut self, p: Packet, _radio_index: usize, now: SimTime) -> Option<Packet> {
        self.expire(now);
        let key = (p.header.source, p.header.sequence);
        let slot_of = |slot: &mut FragmentSlot, p: Packet| {
            let target = match p.ptype() {
                PacketType::MoreSignificant => &mut slot.more,
                _ => &mut slot.less,
            };
            if target.is_none() {
                *target = Some(PendingFragment {
                    fragment: p,
                    arrival_time: now,
                });
            }
        };
        match p.ptype() {
            PacketType::MoreSignificant | PacketType::LessSignificant => {
                let slot = self.fragments.entry(key).or_default();
                slot_of(slot, p);
                if slot.more.is_some() && slot.less.is_some() {
                    let slot = self.fragments.remove(&key).unwrap();
                    let (m, l) = (slot.more.unwrap(), slot.less.unwrap());
                    match codec::reassemble(&m.fragment, &l.fragment) {
                        Ok(whole) => {
                            if self.first_sighting(&whole, now) {
                                return Some(whole);
                            }
                        }
                        Err(_) => self.fragment_losses += 1,
                    }
                }
                None
            }
            _ => self.first_sighting(&p, now).then_some(p),
        }
    }

    fn first_sighting(&mut self, p: &Packet, now: SimTime) -> bool {
        let key = (p.header.source, p.header.sequence, p.ptype());
        if !self.seen.insert(key) {
            return false;
        }
        self.seen_order.push_back((now, key));
        true
    }

    /// Drops fragments and duplicate-suppression entries older than the
    /// reassembly timeout. Each abandoned fragment pair counts as one loss.
    pub fn expire(&mut self, now: SimTime) {
        let cutoff = now.saturating_sub(self.window);
        while let Some(&(t, key)) = self.seen_order.front() {
            if t >= cutoff {
                break;
            }
            self.seen_order.pop_front();
            self.seen.remove(&key);
        }
        let before = self.fragments.len();
        self.fragments.retain(|_, slot| slot.oldest() >= cutoff);
        self.fragment_losses += (before - self.fragments.len()) as u64;
    }
}
