//! Wire format for Multi-LoRa frames.
//!
//! Every frame starts with a fixed 16-byte header followed by up to 240
//! bytes of payload, so a frame never exceeds the 256-byte LoRa limit.
//! Multi-byte fields are big-endian.
//!
//! ```text
//!  0      1      2             6             10            14     15
//! +------+------+-------------+-------------+-------------+------+------+
//! | TTL  | size | source      | destination | next hop    | seq  | type |
//! +------+------+-------------+-------------+-------------+------+------+
//! ```
//!
//! `size` is the whole frame length. Since a `u8` cannot hold 256, a
//! full-length frame stores `0` in that byte.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const HEADER_LEN: usize = 16;
pub const MAX_PAYLOAD_LEN: usize = 240;
pub const MAX_FRAME_LEN: usize = HEADER_LEN + MAX_PAYLOAD_LEN;

/// Wire size of one routing or neighbor table entry.
pub const TABLE_ENTRY_LEN: usize = 8;
/// Number of route entries that fit into a single route message.
pub const MAX_ROUTES_PER_MESSAGE: usize = MAX_PAYLOAD_LEN / TABLE_ENTRY_LEN;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("input of {got} bytes is shorter than the {need} bytes required")]
    Truncated { need: usize, got: usize },
    #[error("invalid frame size {size}: {reason}")]
    InvalidSize { size: usize, reason: &'static str },
    #[error("unknown packet type byte 0x{0:02x}")]
    BadType(u8),
    #[error("payload of {0} bytes is too small to fragment")]
    TooSmall(usize),
    #[error("fragments do not belong to the same packet")]
    SequenceMismatch,
    #[error("expected a {expected:?} packet, got {got:?}")]
    WrongType {
        expected: PacketType,
        got: PacketType,
    },
    #[error("route message payload of {0} bytes is not a whole number of entries")]
    RaggedEntries(usize),
}

/// 32-bit node identifier.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeAddress(pub u32);

impl NodeAddress {
    pub const BROADCAST: NodeAddress = NodeAddress(0xFFFF_FFFF);

    pub fn is_broadcast(self) -> bool {
        self == Self::BROADCAST
    }
}

impl fmt::Debug for NodeAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#010x}", self.0)
    }
}

impl fmt::Display for NodeAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:08x}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PacketType {
    Hello,
    Route,
    Data,
    /// Leading half of a multiplexed data packet.
    MoreSignificant,
    /// Trailing half of a multiplexed data packet.
    LessSignificant,
}

impl PacketType {
    pub fn code(self) -> u8 {
        match self {
            PacketType::Hello => b'h',
            PacketType::Route => b'r',
            PacketType::Data => b'd',
            PacketType::MoreSignificant => b'm',
            PacketType::LessSignificant => b'l',
        }
    }

    pub fn from_code(code: u8) -> Result<Self, CodecError> {
        Ok(match code {
            b'h' => PacketType::Hello,
            b'r' => PacketType::Route,
            b'd' => PacketType::Data,
            b'm' => PacketType::MoreSignificant,
            b'l' => PacketType::LessSignificant,
            other => return Err(CodecError::BadType(other)),
        })
    }

    pub fn is_signaling(self) -> bool {
        matches!(self, PacketType::Hello | PacketType::Route)
    }

    pub fn is_fragment(self) -> bool {
        matches!(
            self,
            PacketType::MoreSignificant | PacketType::LessSignificant
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketHeader {
    pub ttl: u8,
    /// Frame length including the header, 16..=256.
    pub size: u16,
    pub source: NodeAddress,
    pub destination: NodeAddress,
    pub next_hop: NodeAddress,
    pub sequence: u8,
    pub ptype: PacketType,
}

impl PacketHeader {
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.push(self.ttl);
        // 256 wraps to 0, see module docs.
        out.push(self.size as u8);
        out.extend_from_slice(&self.source.0.to_be_bytes());
        out.extend_from_slice(&self.destination.0.to_be_bytes());
        out.extend_from_slice(&self.next_hop.0.to_be_bytes());
        out.push(self.sequence);
        out.push(self.ptype.code());
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        if bytes.len() < HEADER_LEN {
            return Err(CodecError::Truncated {
                need: HEADER_LEN,
                got: bytes.len(),
            });
        }
        let addr =
            |at: usize| NodeAddress(u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap()));
        let size = match bytes[1] {
            0 => MAX_FRAME_LEN as u16,
            n if (n as usize) < HEADER_LEN => {
                return Err(CodecError::InvalidSize {
                    size: n as usize,
                    reason: "smaller than the header",
                })
            }
            n => n as u16,
        };
        Ok(PacketHeader {
            ttl: bytes[0],
            size,
            source: addr(2),
            destination: addr(6),
            next_hop: addr(10),
            sequence: bytes[14],
            ptype: PacketType::from_code(bytes[15])?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Packet {
    pub header: PacketHeader,
    pub payload: Vec<u8>,
}

impl Packet {
    /// Builds a packet with a consistent `size` field.
    ///
    /// Panics if the payload exceeds 240 bytes.
    pub fn new(
        ptype: PacketType,
        ttl: u8,
        source: NodeAddress,
        destination: NodeAddress,
        next_hop: NodeAddress,
        sequence: u8,
        payload: Vec<u8>,
    ) -> Self {
        assert!(
            payload.len() <= MAX_PAYLOAD_LEN,
            "payload too large: {}",
            payload.len()
        );
        Packet {
            header: PacketHeader {
                ttl,
                size: (HEADER_LEN + payload.len()) as u16,
                source,
                destination,
                next_hop,
                sequence,
                ptype,
            },
            payload,
        }
    }

    pub fn ptype(&self) -> PacketType {
        self.header.ptype
    }

    /// Total frame length in bytes.
    pub fn frame_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }

    fn check_size(&self) -> Result<(), CodecError> {
        let size = self.header.size as usize;
        if self.payload.len() > MAX_PAYLOAD_LEN {
            return Err(CodecError::InvalidSize {
                size: self.frame_len(),
                reason: "exceeds 256 bytes",
            });
        }
        if size != self.frame_len() {
            return Err(CodecError::InvalidSize {
                size,
                reason: "does not match header plus payload length",
            });
        }
        Ok(())
    }
}

pub fn encode_packet(p: &Packet) -> Result<Vec<u8>, CodecError> {
    p.check_size()?;
    let mut out = Vec::with_capacity(p.frame_len());
    p.header.encode_into(&mut out);
    out.extend_from_slice(&p.payload);
    Ok(out)
}

pub fn decode_packet(bytes: &[u8]) -> Result<Packet, CodecError> {
    let header = PacketHeader::decode(bytes)?;
    let size = header.size as usize;
    if bytes.len() < size {
        return Err(CodecError::Truncated {
            need: size,
            got: bytes.len(),
        });
    }
    if bytes.len() > size {
        return Err(CodecError::InvalidSize {
            size: bytes.len(),
            reason: "trailing bytes beyond the size field",
        });
    }
    Ok(Packet {
        header,
        payload: bytes[HEADER_LEN..].to_vec(),
    })
}

/// Splits a data packet into its `m` and `l` halves.
///
/// For odd payloads the `m` half carries the extra byte.
pub fn fragment_data(p: &Packet) -> Result<(Packet, Packet), CodecError> {
    if p.ptype() != PacketType::Data {
        return Err(CodecError::WrongType {
            expected: PacketType::Data,
            got: p.ptype(),
        });
    }
    let n = p.payload.len();
    if n < 2 {
        return Err(CodecError::TooSmall(n));
    }
    let split = n.div_ceil(2);
    let half = |ptype, bytes: &[u8]| {
        let h = &p.header;
        Packet::new(
            ptype,
            h.ttl,
            h.source,
            h.destination,
            h.next_hop,
            h.sequence,
            bytes.to_vec(),
        )
    };
    Ok((
        half(PacketType::MoreSignificant, &p.payload[..split]),
        half(PacketType::LessSignificant, &p.payload[split..]),
    ))
}

pub fn reassemble(frag_m: &Packet, frag_l: &Packet) -> Result<Packet, CodecError> {
    for (frag, expected) in [
        (frag_m, PacketType::MoreSignificant),
        (frag_l, PacketType::LessSignificant),
    ] {
        if frag.ptype() != expected {
            return Err(CodecError::WrongType {
                expected,
                got: frag.ptype(),
            });
        }
    }
    if frag_m.header.source != frag_l.header.source
        || frag_m.header.sequence != frag_l.header.sequence
    {
        return Err(CodecError::SequenceMismatch);
    }
    let mut payload = Vec::with_capacity(frag_m.payload.len() + frag_l.payload.len());
    payload.extend_from_slice(&frag_m.payload);
    payload.extend_from_slice(&frag_l.payload);
    if payload.len() > MAX_PAYLOAD_LEN {
        return Err(CodecError::InvalidSize {
            size: HEADER_LEN + payload.len(),
            reason: "exceeds 256 bytes",
        });
    }
    let h = &frag_m.header;
    Ok(Packet::new(
        PacketType::Data,
        h.ttl,
        h.source,
        h.destination,
        h.next_hop,
        h.sequence,
        payload,
    ))
}

/// Route advertisement entry. The advertiser is the implied next hop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireRouteEntry {
    pub destination: NodeAddress,
    pub distance: u8,
    pub sequence: u8,
    pub metric: u8,
    pub priority: u8,
}

impl WireRouteEntry {
    pub fn encode(&self) -> [u8; TABLE_ENTRY_LEN] {
        let mut out = [0u8; TABLE_ENTRY_LEN];
        out[..4].copy_from_slice(&self.destination.0.to_be_bytes());
        out[4] = self.distance;
        out[5] = self.sequence;
        out[6] = self.metric;
        out[7] = self.priority;
        out
    }

    pub fn decode(bytes: &[u8; TABLE_ENTRY_LEN]) -> Self {
        WireRouteEntry {
            destination: NodeAddress(u32::from_be_bytes(bytes[..4].try_into().unwrap())),
            distance: bytes[4],
            sequence: bytes[5],
            metric: bytes[6],
            priority: bytes[7],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireNeighborEntry {
    pub address: NodeAddress,
    /// Percentage, 0..=100.
    pub packet_success: u8,
    pub metric: u16,
    pub priority: u8,
}

impl WireNeighborEntry {
    pub fn encode(&self) -> [u8; TABLE_ENTRY_LEN] {
        let mut out = [0u8; TABLE_ENTRY_LEN];
        out[..4].copy_from_slice(&self.address.0.to_be_bytes());
        out[4] = self.packet_success;
        out[5..7].copy_from_slice(&self.metric.to_be_bytes());
        out[7] = self.priority;
        out
    }

    pub fn decode(bytes: &[u8; TABLE_ENTRY_LEN]) -> Self {
        WireNeighborEntry {
            address: NodeAddress(u32::from_be_bytes(bytes[..4].try_into().unwrap())),
            packet_success: bytes[4],
            metric: u16::from_be_bytes([bytes[5], bytes[6]]),
            priority: bytes[7],
        }
    }
}

/// Header fields shared by every packet of one route advertisement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RouteMessageHeader {
    pub source: NodeAddress,
    pub sequence: u8,
}

/// Packs route entries into as many `r` packets as needed, 30 entries each.
///
/// An empty table still yields one header-only packet. Chunk `i` carries
/// sequence `header.sequence + i` (wrapping) so receivers can tell the
/// chunks apart.
pub fn encode_route_message(entries: &[WireRouteEntry], header: RouteMessageHeader) -> Vec<Packet> {
    let mut chunks: Vec<&[WireRouteEntry]> = entries.chunks(MAX_ROUTES_PER_MESSAGE).collect();
    if chunks.is_empty() {
        chunks.push(&[]);
    }
    chunks
        .into_iter()
        .enumerate()
        .map(|(i, chunk)| {
            let payload = chunk.iter().flat_map(|e| e.encode()).collect();
            Packet::new(
                PacketType::Route,
                1,
                header.source,
                NodeAddress::BROADCAST,
                NodeAddress::BROADCAST,
                header.sequence.wrapping_add(i as u8),
                payload,
            )
        })
        .collect()
}

pub fn decode_route_entries(p: &Packet) -> Result<Vec<WireRouteEntry>, CodecError> {
    if p.ptype() != PacketType::Route {
        return Err(CodecError::WrongType {
            expected: PacketType::Route,
            got: p.ptype(),
        });
    }
    if !p.payload.len().is_multiple_of(TABLE_ENTRY_LEN) {
        return Err(CodecError::RaggedEntries(p.payload.len()));
    }
    Ok(p.payload
        .chunks_exact(TABLE_ENTRY_LEN)
        .map(|c| WireRouteEntry::decode(c.try_into().unwrap()))
        .collect())
}
