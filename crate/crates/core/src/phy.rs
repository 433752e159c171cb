//! Radio and channel model: SX1276 time-on-air, disk propagation, and the
//! timestamp-overlap collision rule.

use std::borrow::Borrow;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{NodeAddress, Packet, MAX_FRAME_LEN};
use crate::time::SimTime;

/// Propagation delay is modeled as zero; at 4 km it is about 13 µs, four
/// orders of magnitude below a frame's time-on-air.
pub const PROPAGATION_DELAY: SimTime = SimTime::ZERO;

pub const SUPPORTED_BANDWIDTHS_HZ: [u32; 3] = [125_000, 250_000, 500_000];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PhyError {
    #[error("invalid radio configuration: {0}")]
    InvalidConfig(String),
    #[error("frame length {0} outside 1..=256")]
    InvalidFrameLength(usize),
}

pub type ChannelId = u8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadioConfig {
    pub spreading_factor: u8,
    pub bandwidth_hz: u32,
    /// 1..=4, denoting 4/5..4/8.
    pub coding_rate: u8,
    pub preamble_symbols: u16,
    pub channel_id: ChannelId,
    pub tx_range_m: f64,
}

impl Default for RadioConfig {
    fn default() -> Self {
        RadioConfig {
            spreading_factor: 7,
            bandwidth_hz: 125_000,
            coding_rate: 4,
            preamble_symbols: 8,
            channel_id: 0,
            tx_range_m: 4.0,
        }
    }
}

impl RadioConfig {
    pub fn validate(&self) -> Result<(), PhyError> {
        if !(7..=12).contains(&self.spreading_factor) {
            return Err(PhyError::InvalidConfig(format!(
                "spreading factor {} outside 7..=12",
                self.spreading_factor
            )));
        }
        if !SUPPORTED_BANDWIDTHS_HZ.contains(&self.bandwidth_hz) {
            return Err(PhyError::InvalidConfig(format!(
                "bandwidth {} Hz is not one of 125/250/500 kHz",
                self.bandwidth_hz
            )));
        }
        if !(1..=4).contains(&self.coding_rate) {
            return Err(PhyError::InvalidConfig(format!(
                "coding rate {} outside 1..=4",
                self.coding_rate
            )));
        }
        if self.preamble_symbols < 6 {
            return Err(PhyError::InvalidConfig(format!(
                "preamble of {} symbols is below the minimum of 6",
                self.preamble_symbols
            )));
        }
        if !(self.tx_range_m >= 0.0 && self.tx_range_m.is_finite()) {
            return Err(PhyError::InvalidConfig(format!(
                "bad range {}",
                self.tx_range_m
            )));
        }
        Ok(())
    }

    /// Frame duration in quarter symbols. Explicit header, CRC on,
    /// low-data-rate optimization off.
    fn quarter_symbols(&self, frame_bytes: usize) -> Result<u64, PhyError> {
        self.validate()?;
        if !(1..=MAX_FRAME_LEN).contains(&frame_bytes) {
            return Err(PhyError::InvalidFrameLength(frame_bytes));
        }
        let sf = self.spreading_factor as i64;
        let numerator = 8 * frame_bytes as i64 - 4 * sf + 28 + 16;
        let blocks = if numerator > 0 {
            (numerator + 4 * sf - 1) / (4 * sf)
        } else {
            0
        };
        let payload_symbols = 8 + blocks as u64 * (self.coding_rate as u64 + 4);
        // Preamble lasts preamble_symbols + 4.25 symbols.
        Ok(4 * (self.preamble_symbols as u64 + payload_symbols) + 17)
    }

    /// Exact time-on-air as simulation ticks.
    pub fn airtime(&self, frame_bytes: usize) -> Result<SimTime, PhyError> {
        let quarters = self.quarter_symbols(frame_bytes)? as u128;
        let chips = 1u128 << self.spreading_factor;
        let denom = 4 * self.bandwidth_hz as u128;
        let ns = (quarters * chips * 1_000_000_000 + denom / 2) / denom;
        Ok(SimTime(ns as u64))
    }
}

/// Seconds of channel occupancy for a frame of `frame_bytes` bytes.
pub fn time_on_air(frame_bytes: usize, cfg: &RadioConfig) -> Result<f64, PhyError> {
    let quarters = cfg.quarter_symbols(frame_bytes)? as f64;
    let symbol_s = (1u32 << cfg.spreading_factor) as f64 / cfg.bandwidth_hz as f64;
    Ok(quarters / 4.0 * symbol_s)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Position { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Disk propagation: reachable iff within the transmitter's range.
pub fn in_range(a: &Position, b: &Position, cfg: &RadioConfig) -> bool {
    a.distance(b) <= cfg.tx_range_m
}

/// One frame on the air. Occupies `[t_start, t_end)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transmission {
    pub frame_bytes: usize,
    pub sender: NodeAddress,
    pub channel_id: ChannelId,
    pub t_start: SimTime,
    pub t_end: SimTime,
    pub packet: Packet,
}

impl Transmission {
    pub fn new(
        packet: Packet,
        sender: NodeAddress,
        cfg: &RadioConfig,
        t_start: SimTime,
    ) -> Result<Self, PhyError> {
        let frame_bytes = packet.frame_len();
        let t_end = t_start + cfg.airtime(frame_bytes)?;
        Ok(Transmission {
            frame_bytes,
            sender,
            channel_id: cfg.channel_id,
            t_start,
            t_end,
            packet,
        })
    }

    pub fn overlaps(&self, other: &Transmission) -> bool {
        self.t_start < other.t_end && other.t_start < self.t_end
    }

    pub fn covers(&self, instant: SimTime) -> bool {
        self.t_start <= instant && instant < self.t_end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reception {
    Delivered,
    /// Another frame overlapped this one at the receiver.
    Collided,
    /// The receiver was itself transmitting on the channel.
    ReceiverBusy,
    /// The receiver sent this frame.
    OwnFrame,
}

/// Decides the fate of every frame at one receiver on one channel.
///
/// All transmissions are assumed audible at `receiver` and on the same
/// channel. Any overlap destroys every frame involved; there is no capture.
pub fn deliver_or_collide<T: Borrow<Transmission>>(
    active: &[T],
    receiver: NodeAddress,
) -> Vec<Reception> {
    active
        .iter()
        .map(Borrow::borrow)
        .enumerate()
        .map(|(i, tx): (usize, &Transmission)| {
            if tx.sender == receiver {
                return Reception::OwnFrame;
            }
            let mut outcome = Reception::Delivered;
            for (j, other) in active.iter().map(Borrow::borrow).enumerate() {
                if i == j || !tx.overlaps(other) {
                    continue;
                }
                if other.sender == receiver {
                    return Reception::ReceiverBusy;
                }
                outcome = Reception::Collided;
            }
            outcome
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::PacketType;

    fn cfg(bw: u32) -> RadioConfig {
        RadioConfig {
            bandwidth_hz: bw,
            ..RadioConfig::default()
        }
    }

    #[test]
    fn toa_golden_values() {
        let ms = |bytes, bw| time_on_air(bytes, &cfg(bw)).unwrap() * 1e3;
        assert!((ms(128, 125_000) - 332.03).abs() <= 0.01);
        assert!((ms(128, 250_000) - 166.02).abs() <= 0.01);
        assert!((ms(72, 125_000) - 200.96).abs() <= 0.01);
        assert_eq!(cfg(125_000).airtime(128).unwrap(), SimTime(332_032_000));
        assert_eq!(cfg(250_000).airtime(128).unwrap(), SimTime(166_016_000));
    }

    #[test]
    fn toa_rejects_bad_config() {
        let mut c = cfg(125_000);
        c.spreading_factor = 6;
        assert!(matches!(
            time_on_air(10, &c),
            Err(PhyError::InvalidConfig(_))
        ));
        let c = cfg(200_000);
        assert!(matches!(
            time_on_air(10, &c),
            Err(PhyError::InvalidConfig(_))
        ));
        assert_eq!(
            time_on_air(257, &cfg(125_000)),
            Err(PhyError::InvalidFrameLength(257))
        );
        assert_eq!(
            time_on_air(0, &cfg(125_000)),
            Err(PhyError::InvalidFrameLength(0))
        );
    }

    #[test]
    fn range_boundary() {
        let c = cfg(125_000);
        let o = Position::new(0.0, 0.0);
        assert!(in_range(&o, &Position::new(4.0, 0.0), &c));
        assert!(in_range(&o, &o, &c));
        assert!(!in_range(&o, &Position::new(4.001, 0.0), &c));
    }

    fn tx(sender: u32, channel: ChannelId, start: f64, end: f64) -> Transmission {
        Transmission {
            frame_bytes: 16,
            sender: NodeAddress(sender),
            channel_id: channel,
            t_start: SimTime::from_secs_f64(start),
            t_end: SimTime::from_secs_f64(end),
            packet: Packet::new(
                PacketType::Hello,
                1,
                NodeAddress(sender),
                NodeAddress::BROADCAST,
                NodeAddress::BROADCAST,
                0,
                vec![],
            ),
        }
    }

    #[test]
    fn overlapping_frames_both_lost() {
        let out = deliver_or_collide(&[tx(1, 0, 0.0, 0.3), tx(2, 0, 0.2, 0.5)], NodeAddress(9));
        assert_eq!(out, vec![Reception::Collided, Reception::Collided]);
    }

    #[test]
    fn different_channels_dont_interfere() {
        // The collision rule is applied per channel.
        for ch in [0, 1] {
            let only: Vec<_> = [tx(1, 0, 0.0, 0.3), tx(2, 1, 0.2, 0.5)]
                .into_iter()
                .filter(|t| t.channel_id == ch)
                .collect();
            assert_eq!(
                deliver_or_collide(&only, NodeAddress(9)),
                vec![Reception::Delivered]
            );
        }
    }

    #[test]
    fn single_frame_and_half_duplex() {
        assert_eq!(
            deliver_or_collide(&[tx(1, 0, 0.0, 0.3)], NodeAddress(9)),
            vec![Reception::Delivered]
        );
        let out = deliver_or_collide(&[tx(1, 0, 0.0, 0.3), tx(9, 0, 0.25, 0.4)], NodeAddress(9));
        assert_eq!(out, vec![Reception::ReceiverBusy, Reception::OwnFrame]);
        // Back-to-back frames do not overlap.
        let out = deliver_or_collide(&[tx(1, 0, 0.0, 0.3), tx(2, 0, 0.3, 0.4)], NodeAddress(9));
        assert_eq!(out, vec![Reception::Delivered, Reception::Delivered]);
    }
}
