use bytes::{BufMut, Bytes, BytesMut};
use thiserror::Error;

use super::crc::crc32;
use crate::fabric::{MacAddr, NodeId};
use crate::routing::HopState;
use crate::sim::SimTime;

pub const TPID_8021Q: u16 = 0x8100;
/// Destination, source, 802.1Q tag and EtherType.
pub const HEADER_LEN: usize = 18;
pub const FCS_LEN: usize = 4;
pub const MIN_PAYLOAD: usize = 46;
pub const MAX_PAYLOAD: usize = 1500;
pub const MAX_FRAME_LEN: usize = HEADER_LEN + MAX_PAYLOAD + FCS_LEN;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    #[error("payload of {0} bytes outside 46..=1500")]
    PayloadLength(usize),
    #[error("priority {0} does not fit the 3-bit PCP field")]
    Pcp(u8),
    #[error("wire frame of {0} bytes is too short")]
    Truncated(usize),
    #[error("unexpected TPID {0:#06x}")]
    Tpid(u16),
    #[error("FCS mismatch: carried {carried:#010x}, computed {computed:#010x}")]
    BadCrc { carried: u32, computed: u32 },
}

/// Simulator side-band state. Never serialized onto the wire.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameMeta {
    /// Sender's local clock when the frame was created.
    pub origin_ts: i64,
    pub origin_true: SimTime,
    pub enqueue_ts: i64,
    pub tx_ts: i64,
    pub rx_ts: i64,
    pub hop: HopState,
    pub flow: Option<u32>,
    pub seq: u64,
    /// Created by the local host, so transmission is gated by the host
    /// fetch path.
    pub host_origin: bool,
    /// Application bytes carried, for goodput accounting.
    pub app_bytes: u32,
    pub src: Option<NodeId>,
    pub dst: Option<NodeId>,
    pub route: Option<Vec<(NodeId, usize)>>,
}

/// Ethernet II frame with an 802.1Q tag.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub dst_mac: MacAddr,
    pub src_mac: MacAddr,
    pub pcp: u8,
    pub vid: u16,
    pub ethertype: u16,
    pub payload: Bytes,
    /// Set by [`Frame::to_wire`] / [`Frame::from_wire`].
    pub fcs: u32,
    pub meta: FrameMeta,
}

impl Frame {
    /// Build a frame, zero-padding short payloads to the Ethernet minimum.
    pub fn new(
        dst_mac: MacAddr,
        src_mac: MacAddr,
        pcp: u8,
        ethertype: u16,
        payload: &[u8],
    ) -> Result<Self, FrameError> {
        if pcp > 7 {
            return Err(FrameError::Pcp(pcp));
        }
        if payload.len() > MAX_PAYLOAD {
            return Err(FrameError::PayloadLength(payload.len()));
        }
        let payload = if payload.len() < MIN_PAYLOAD {
            let mut p = BytesMut::with_capacity(MIN_PAYLOAD);
            p.put_slice(payload);
            p.resize(MIN_PAYLOAD, 0);
            p.freeze()
        } else {
            Bytes::copy_from_slice(payload)
        };
        Ok(Frame {
            dst_mac,
            src_mac,
            pcp,
            vid: 0,
            ethertype,
            payload,
            fcs: 0,
            meta: FrameMeta::default(),
        })
    }

    pub fn wire_len(&self) -> usize {
        HEADER_LEN + self.payload.len() + FCS_LEN
    }

    pub fn wire_bits(&self) -> u64 {
        self.wire_len() as u64 * 8
    }

    fn header(&self) -> [u8; HEADER_LEN] {
        let mut h = [0u8; HEADER_LEN];
        h[0..6].copy_from_slice(&self.dst_mac.0);
        h[6..12].copy_from_slice(&self.src_mac.0);
        h[12..14].copy_from_slice(&TPID_8021Q.to_be_bytes());
        let tci = ((self.pcp as u16) << 13) | (self.vid & 0x0fff);
        h[14..16].copy_from_slice(&tci.to_be_bytes());
        h[16..18].copy_from_slice(&self.ethertype.to_be_bytes());
        h
    }

    /// Serialize with a freshly computed FCS (appended least significant
    /// byte first).
    pub fn to_wire(&mut self) -> Bytes {
        let mut buf = BytesMut::with_capacity(self.wire_len());
        buf.put_slice(&self.header());
        buf.put_slice(&self.payload);
        self.fcs = crc32(&buf);
        buf.put_u32_le(self.fcs);
        buf.freeze()
    }

    /// Parse and verify a wire frame. Metadata comes back empty.
    pub fn from_wire(wire: &Bytes) -> Result<Frame, FrameError> {
        if wire.len() < HEADER_LEN + MIN_PAYLOAD + FCS_LEN {
            return Err(FrameError::Truncated(wire.len()));
        }
        let body_len = wire.len() - FCS_LEN;
        let carried = u32::from_le_bytes(wire[body_len..].try_into().unwrap());
        let computed = crc32(&wire[..body_len]);
        if carried != computed {
            return Err(FrameError::BadCrc { carried, computed });
        }
        let tpid = u16::from_be_bytes([wire[12], wire[13]]);
        if tpid != TPID_8021Q {
            return Err(FrameError::Tpid(tpid));
        }
        let tci = u16::from_be_bytes([wire[14], wire[15]]);
        Ok(Frame {
            dst_mac: MacAddr(wire[0..6].try_into().unwrap()),
            src_mac: MacAddr(wire[6..12].try_into().unwrap()),
            pcp: (tci >> 13) as u8,
            vid: tci & 0x0fff,
            ethertype: u16::from_be_bytes([wire[16], wire[17]]),
            payload: wire.slice(HEADER_LEN..body_len),
            fcs: carried,
            meta: FrameMeta::default(),
        })
    }
}

/// Serialization time in picoseconds.
pub fn serialization_ps(bytes: usize, rate_bps: u64) -> u64 {
    ((bytes as u128 * 8 * 1_000_000_000_000) / rate_bps as u128) as u64
}

/// Serialization time in whole nanoseconds, rounded up.
pub fn serialization_ns(bytes: usize, rate_bps: u64) -> u64 {
    serialization_ps(bytes, rate_bps).div_ceil(1_000)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mac(b: u8) -> MacAddr {
        MacAddr([2, 0, 0, 0, 0, b])
    }

    #[test]
    fn short_payload_is_padded() {
        let f = Frame::new(mac(1), mac(2), 3, 0x88B5, b"hi").unwrap();
        assert_eq!(f.payload.len(), MIN_PAYLOAD);
        assert_eq!(f.wire_len(), 68);
    }

    #[test]
    fn limits() {
        assert_eq!(
            Frame::new(mac(1), mac(2), 8, 0, b"").unwrap_err(),
            FrameError::Pcp(8)
        );
        let big = vec![0u8; 1501];
        assert_eq!(
            Frame::new(mac(1), mac(2), 0, 0, &big).unwrap_err(),
            FrameError::PayloadLength(1501)
        );
        let max = vec![0u8; 1500];
        assert_eq!(
            Frame::new(mac(1), mac(2), 0, 0, &max).unwrap().wire_len(),
            MAX_FRAME_LEN
        );
        assert_eq!(MAX_FRAME_LEN, 1522);
    }

    #[test]
    fn wire_round_trip() {
        let mut f = Frame::new(mac(1), mac(2), 5, 0x88B5, &[7u8; 300]).unwrap();
        let wire = f.to_wire();
        let g = Frame::from_wire(&wire).unwrap();
        assert_eq!(g.dst_mac, f.dst_mac);
        assert_eq!(g.src_mac, f.src_mac);
        assert_eq!(g.pcp, 5);
        assert_eq!(g.ethertype, 0x88B5);
        assert_eq!(g.payload, f.payload);
        assert_eq!(g.fcs, f.fcs);
        assert_eq!(&wire[12..14], &[0x81, 0x00]);
    }

    #[test]
    fn fcs_leaves_standard_residue() {
        let mut f = Frame::new(mac(9), mac(3), 0, 0x88B5, &[0xAB; 64]).unwrap();
        let wire = f.to_wire();
        // CRC over data plus its own FCS yields the fixed 802.3 residue.
        assert_eq!(crc32(&wire), 0x2144_DF1C);
    }

    #[test]
    fn single_bit_flip_is_rejected() {
        let mut f = Frame::new(mac(1), mac(2), 2, 0x88B5, &[0x55; 200]).unwrap();
        let wire = f.to_wire();
        for bit in [0, 100, 8 * 50 + 3, wire.len() * 8 - 1] {
            let mut bad = wire.to_vec();
            bad[bit / 8] ^= 1 << (bit % 8);
            assert!(matches!(
                Frame::from_wire(&Bytes::from(bad)),
                Err(FrameError::BadCrc { .. })
            ));
        }
    }

    #[test]
    fn serialization_arithmetic() {
        assert_eq!(serialization_ps(1522, 10_000_000_000), 1_217_600);
        assert_eq!(serialization_ns(1522, 10_000_000_000), 1_218);
        assert_eq!(serialization_ps(64, 10_000_000_000), 51_200);
        assert_eq!(serialization_ns(64, 10_000_000_000), 52);
    }
}
