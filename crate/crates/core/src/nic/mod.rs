//! NIC model: frames and FCS, per-port TX queues, schedule registers and the
//! time-aware scheduler, plus the receive-side check.

mod crc;
mod frame;
mod port;
pub mod regs;
mod schedule;

pub use crc::crc32;
pub use frame::{
    serialization_ns, serialization_ps, Frame, FrameError, FrameMeta, FCS_LEN, HEADER_LEN,
    MAX_FRAME_LEN, MAX_PAYLOAD, MIN_PAYLOAD, TPID_8021Q,
};
pub use port::{
    default_guardband_ns, NicConfig, NicPort, QueueCounters, QueueFull, TxQueue,
    DEFAULT_NUM_QUEUES, DEFAULT_QUEUE_DEPTH, DEFAULT_TIME_AWARE_QUEUES,
};
pub use regs::{RegisterError, RegisterFile};
pub use schedule::{
    QueueSel, QueueView, SchedDecision, ScheduleEntry, ScheduleError, ScheduleTable,
    TimeAwareScheduler, DEFAULT_WINDOW_US, MAX_ENTRIES,
};

use bytes::Bytes;

use crate::fabric::MacAddr;

/// Outcome of the receive-side check on one arrived frame.
#[derive(Debug, Clone, PartialEq)]
pub enum RxDisposition {
    /// Addressed to this node.
    Deliver(Frame),
    /// Addressed elsewhere; hand to routing.
    Forward(Frame),
    /// FCS mismatch or malformed frame.
    Drop(FrameError),
}

/// Verify the FCS, stamp `rx_ts` and decide between local delivery and
/// forwarding by destination MAC.
pub fn receive(wire: &Bytes, local_mac: MacAddr, rx_ts: i64) -> RxDisposition {
    match Frame::from_wire(wire) {
        Err(e) => RxDisposition::Drop(e),
        Ok(mut f) => {
            f.meta.rx_ts = rx_ts;
            if f.dst_mac == local_mac {
                RxDisposition::Deliver(f)
            } else {
                RxDisposition::Forward(f)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn receive_dispositions() {
        let me = MacAddr([2, 0, 0, 0, 1, 1]);
        let other = MacAddr([2, 0, 0, 0, 2, 5]);
        let mut f = Frame::new(me, other, 2, 0x88B5, &[1; 64]).unwrap();
        let wire = f.to_wire();
        assert!(
            matches!(receive(&wire, me, 800), RxDisposition::Deliver(g) if g.meta.rx_ts == 800)
        );
        assert!(matches!(receive(&wire, other, 0), RxDisposition::Forward(g) if g.pcp == 2));
        let mut bad = wire.to_vec();
        bad[30] ^= 0x10;
        assert!(matches!(
            receive(&Bytes::from(bad), me, 0),
            RxDisposition::Drop(FrameError::BadCrc { .. })
        ));
    }
}
