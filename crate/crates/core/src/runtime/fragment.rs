use std::collections::BTreeMap;

use thiserror::Error;

use crate::nic::MAX_PAYLOAD;
use crate::sim::SimTime;

pub const ETHERTYPE_RUNTIME: u16 = 0x88B5;
pub const FRAGMENT_HEADER_LEN: usize = 18;
/// Message bytes carried per frame.
pub const MAX_FRAGMENT_DATA: usize = MAX_PAYLOAD - FRAGMENT_HEADER_LEN;
pub const DEFAULT_REASSEMBLY_TIMEOUT_NS: u64 = 1_000_000_000;

/// Prefix of every runtime frame payload. Big-endian on the wire.
///
/// `frag_count` is not carried: it is always `ceil(total_len / 1482)`, and
/// leaving it out keeps the header at 18 bytes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FragmentHeader {
    pub msg_id: u32,
    pub frag_index: u16,
    pub frag_count: u16,
    pub total_len: u32,
    pub src_id: u32,
    pub dst_id: u32,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FragmentError {
    #[error("payload of {0} bytes cannot hold a fragment header")]
    Truncated(usize),
    #[error("fragment {index} of {count} is out of range")]
    Index { index: u16, count: u16 },
    #[error("message length {0} needs more than 65535 fragments")]
    TooLong(u32),
}

impl FragmentHeader {
    pub fn encode(&self) -> [u8; FRAGMENT_HEADER_LEN] {
        let mut b = [0u8; FRAGMENT_HEADER_LEN];
        b[0..4].copy_from_slice(&self.msg_id.to_be_bytes());
        b[4..6].copy_from_slice(&self.frag_index.to_be_bytes());
        b[6..10].copy_from_slice(&self.total_len.to_be_bytes());
        b[10..14].copy_from_slice(&self.src_id.to_be_bytes());
        b[14..18].copy_from_slice(&self.dst_id.to_be_bytes());
        b
    }

    pub fn decode(buf: &[u8]) -> Result<Self, FragmentError> {
        if buf.len() < FRAGMENT_HEADER_LEN {
            return Err(FragmentError::Truncated(buf.len()));
        }
        let u16_at = |i: usize| u16::from_be_bytes([buf[i], buf[i + 1]]);
        let u32_at = |i: usize| u32::from_be_bytes(buf[i..i + 4].try_into().unwrap());
        let total_len = u32_at(6);
        let count = fragment_count(total_len as usize);
        if count > u16::MAX as usize {
            return Err(FragmentError::TooLong(total_len));
        }
        let h = FragmentHeader {
            msg_id: u32_at(0),
            frag_index: u16_at(4),
            frag_count: count as u16,
            total_len,
            src_id: u32_at(10),
            dst_id: u32_at(14),
        };
        if h.frag_index >= h.frag_count {
            return Err(FragmentError::Index {
                index: h.frag_index,
                count: h.frag_count,
            });
        }
        Ok(h)
    }

    /// Byte range of the message this fragment carries.
    pub fn data_range(&self) -> std::ops::Range<usize> {
        let start = self.frag_index as usize * MAX_FRAGMENT_DATA;
        let end = (start + MAX_FRAGMENT_DATA).min(self.total_len as usize);
        start..end
    }
}

/// Frames needed for a message of `size` bytes.
pub fn fragment_count(size: usize) -> usize {
    size.div_ceil(MAX_FRAGMENT_DATA)
}

/// Split `data` into frame payloads, header first. Padding to the Ethernet
/// minimum is left to the frame builder.
pub fn fragment(data: &[u8], msg_id: u32, src_id: u32, dst_id: u32) -> Vec<Vec<u8>> {
    let count = fragment_count(data.len());
    data.chunks(MAX_FRAGMENT_DATA)
        .enumerate()
        .map(|(i, chunk)| {
            let h = FragmentHeader {
                msg_id,
                frag_index: i as u16,
                frag_count: count as u16,
                total_len: data.len() as u32,
                src_id,
                dst_id,
            };
            let mut p = Vec::with_capacity(FRAGMENT_HEADER_LEN + chunk.len());
            p.extend_from_slice(&h.encode());
            p.extend_from_slice(chunk);
            p
        })
        .collect()
}

#[derive(Clone, Debug)]
struct Partial {
    received: Vec<bool>,
    missing: usize,
    data: Vec<u8>,
    deadline: SimTime,
}

/// A fully reassembled message.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Message {
    pub src_id: u32,
    pub msg_id: u32,
    pub data: Vec<u8>,
}

/// Per-node reassembly state keyed by `(src, msg_id)`.
#[derive(Clone, Debug, Default)]
pub struct Reassembly {
    partial: BTreeMap<(u32, u32), Partial>,
    pub completed: u64,
    pub expired: u64,
    pub duplicates: u64,
}

impl Reassembly {
    /// Absorb one fragment. Returns the message once its last fragment is in.
    /// A new buffer's deadline is `now + timeout_ns`.
    pub fn accept(
        &mut self,
        h: &FragmentHeader,
        payload: &[u8],
        now: SimTime,
        timeout_ns: u64,
    ) -> Option<Message> {
        let range = h.data_range();
        let chunk = payload.get(FRAGMENT_HEADER_LEN..FRAGMENT_HEADER_LEN + range.len())?;
        if h.frag_count == 1 {
            self.completed += 1;
            return Some(Message {
                src_id: h.src_id,
                msg_id: h.msg_id,
                data: chunk.to_vec(),
            });
        }
        let key = (h.src_id, h.msg_id);
        let p = self.partial.entry(key).or_insert_with(|| Partial {
            received: vec![false; h.frag_count as usize],
            missing: h.frag_count as usize,
            data: vec![0; h.total_len as usize],
            deadline: now + timeout_ns,
        });
        if p.received.len() != h.frag_count as usize || p.data.len() != h.total_len as usize {
            return None;
        }
        let i = h.frag_index as usize;
        if p.received[i] {
            self.duplicates += 1;
            return None;
        }
        p.received[i] = true;
        p.missing -= 1;
        p.data[range].copy_from_slice(chunk);
        if p.missing > 0 {
            return None;
        }
        let p = self.partial.remove(&key).expect("present");
        self.completed += 1;
        Some(Message {
            src_id: h.src_id,
            msg_id: h.msg_id,
            data: p.data,
        })
    }

    /// Discard buffers whose deadline is at or before `now`.
    pub fn expire(&mut self, now: SimTime) -> u64 {
        let before = self.partial.len();
        self.partial.retain(|_, p| p.deadline > now);
        let n = (before - self.partial.len()) as u64;
        self.expired += n;
        n
    }

    pub fn pending(&self) -> usize {
        self.partial.len()
    }

    /// Deadline of the buffer for `(src, msg_id)`, if one is open.
    pub fn deadline(&self, src_id: u32, msg_id: u32) -> Option<SimTime> {
        self.partial.get(&(src_id, msg_id)).map(|p| p.deadline)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn frame_counts() {
        assert_eq!(MAX_FRAGMENT_DATA, 1482);
        assert_eq!(fragment_count(100), 1);
        assert_eq!(fragment_count(4000), 3);
        assert_eq!(fragment_count(1482), 1);
        assert_eq!(fragment_count(1483), 2);
    }

    #[test]
    fn header_round_trip() {
        let h = FragmentHeader {
            msg_id: 7,
            frag_index: 1,
            frag_count: 3,
            total_len: 4000,
            src_id: 0x0102_0001,
            dst_id: 9,
        };
        assert_eq!(FragmentHeader::decode(&h.encode()), Ok(h));
        assert_eq!(h.data_range(), 1482..2964);
    }

    #[test]
    fn malformed_headers() {
        let mut h = FragmentHeader {
            msg_id: 1,
            frag_index: 3,
            frag_count: 3,
            total_len: 4000,
            src_id: 0,
            dst_id: 0,
        };
        assert!(matches!(
            FragmentHeader::decode(&h.encode()),
            Err(FragmentError::Index { .. })
        ));
        h.frag_index = 0;
        h.total_len = u32::MAX;
        assert!(matches!(
            FragmentHeader::decode(&h.encode()),
            Err(FragmentError::TooLong(_))
        ));
        h.total_len = 0;
        assert!(matches!(
            FragmentHeader::decode(&h.encode()),
            Err(FragmentError::Index { .. })
        ));
        assert_eq!(
            FragmentHeader::decode(&[0; 5]),
            Err(FragmentError::Truncated(5))
        );
    }

    fn feed(r: &mut Reassembly, frags: &[Vec<u8>], order: &[usize]) -> Option<Message> {
        let mut out = None;
        for &i in order {
            let h = FragmentHeader::decode(&frags[i]).unwrap();
            if let Some(m) = r.accept(&h, &frags[i], SimTime::ZERO, DEFAULT_REASSEMBLY_TIMEOUT_NS) {
                out = Some(m);
            }
        }
        out
    }

    #[test]
    fn out_of_order_reassembly() {
        let data: Vec<u8> = (0..4000u32).map(|i| (i * 7) as u8).collect();
        let frags = fragment(&data, 5, 1, 2);
        assert_eq!(frags.len(), 3);
        let mut r = Reassembly::default();
        let m = feed(&mut r, &frags, &[2, 0, 1]).unwrap();
        assert_eq!(m.data, data);
        assert_eq!(r.pending(), 0);
    }

    #[test]
    fn incomplete_message_expires() {
        let frags = fragment(&[1u8; 4000], 5, 1, 2);
        let mut r = Reassembly::default();
        assert!(feed(&mut r, &frags, &[0, 1]).is_none());
        assert_eq!(r.deadline(1, 5), Some(SimTime::from_secs(1)));
        assert_eq!(r.expire(SimTime::from_ms(999)), 0);
        assert_eq!(r.expire(SimTime::from_secs(1)), 1);
        assert_eq!(r.expired, 1);
        // A late fragment opens a fresh buffer and never completes the old one.
        assert!(feed(&mut r, &frags, &[2]).is_none());
    }

    #[test]
    fn duplicate_fragment_is_ignored() {
        let data = vec![3u8; 3000];
        let frags = fragment(&data, 1, 4, 2);
        let mut r = Reassembly::default();
        assert!(feed(&mut r, &frags, &[0, 0]).is_none());
        assert_eq!(r.duplicates, 1);
        assert_eq!(feed(&mut r, &frags, &[2, 1]).unwrap().data, data);
    }

    proptest! {
        #[test]
        fn any_permutation_reassembles(
            data in proptest::collection::vec(any::<u8>(), 1..12_000),
            seed in any::<u64>(),
        ) {
            let frags = fragment(&data, 3, 1, 2);
            prop_assert_eq!(frags.len(), fragment_count(data.len()));
            let mut order: Vec<usize> = (0..frags.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let mut r = Reassembly::default();
            let m = feed(&mut r, &frags, &order).unwrap();
            prop_assert_eq!(m.data, data);
        }
    }
}
