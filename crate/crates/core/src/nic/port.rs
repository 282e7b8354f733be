// Full queues hand the rejected frame back to the caller.
#![allow(clippy::result_large_err)]

use std::collections::VecDeque;

use serde::Serialize;

use super::frame::{serialization_ns, Frame, MAX_FRAME_LEN};
use super::regs::{RegisterError, RegisterFile};
use super::schedule::{QueueSel, QueueView, SchedDecision, ScheduleTable, TimeAwareScheduler};
use crate::qdisc::{PriorityMap, QueueLayout};

pub const DEFAULT_NUM_QUEUES: usize = 8;
pub const DEFAULT_TIME_AWARE_QUEUES: usize = 3;
pub const DEFAULT_QUEUE_DEPTH: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NicConfig {
    pub num_queues: usize,
    pub time_aware_queues: usize,
    pub queue_depth: usize,
}

impl Default for NicConfig {
    fn default() -> Self {
        NicConfig {
            num_queues: DEFAULT_NUM_QUEUES,
            time_aware_queues: DEFAULT_TIME_AWARE_QUEUES,
            queue_depth: DEFAULT_QUEUE_DEPTH,
        }
    }
}

impl NicConfig {
    pub fn layout(&self) -> QueueLayout {
        QueueLayout {
            num_queues: self.num_queues,
            time_aware: self.time_aware_queues,
        }
    }
}

/// Default guardband: one maximum-size frame at the port rate.
pub fn default_guardband_ns(rate_bps: u64) -> u32 {
    serialization_ns(MAX_FRAME_LEN, rate_bps) as u32
}

#[derive(Clone, Debug)]
pub struct TxQueue {
    fifo: VecDeque<Frame>,
    pub depth_limit: usize,
    /// Member of the time-aware group.
    pub scheduled: bool,
    pub drops: u64,
    pub enqueued: u64,
}

impl TxQueue {
    pub fn new(depth_limit: usize, scheduled: bool) -> Self {
        TxQueue {
            fifo: VecDeque::new(),
            depth_limit,
            scheduled,
            drops: 0,
            enqueued: 0,
        }
    }

    /// Tail-drop on overflow. The rejected frame is handed back.
    pub fn push(&mut self, frame: Frame) -> Result<(), Frame> {
        if self.fifo.len() >= self.depth_limit {
            self.drops += 1;
            return Err(frame);
        }
        self.enqueued += 1;
        self.fifo.push_back(frame);
        Ok(())
    }

    pub fn pop(&mut self) -> Option<Frame> {
        self.fifo.pop_front()
    }

    pub fn head(&self) -> Option<&Frame> {
        self.fifo.front()
    }

    pub fn len(&self) -> usize {
        self.fifo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fifo.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Frame> {
        self.fifo.iter()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct QueueCounters {
    pub tx_frames: u64,
    pub tx_bytes: u64,
    /// Port time spent serializing this queue's frames, true ns.
    pub busy_ns: u64,
    pub drops: u64,
}

/// Enqueue refused because the mapped queue is full.
#[derive(Debug, Clone, PartialEq)]
pub struct QueueFull {
    pub queue: usize,
    pub frame: Frame,
}

/// One egress port: its TX queues, schedule registers and scheduler.
#[derive(Clone, Debug)]
pub struct NicPort {
    pub rate_bps: u64,
    queues: Vec<TxQueue>,
    mgmt: TxQueue,
    regs: RegisterFile,
    active: ScheduleTable,
    /// Committed table and the local time it takes effect.
    pending: Option<(ScheduleTable, i64)>,
    scheduler: TimeAwareScheduler,
    pub counters: Vec<QueueCounters>,
    pub mgmt_counters: QueueCounters,
}

impl NicPort {
    pub fn new(cfg: NicConfig, rate_bps: u64) -> Self {
        let regs = RegisterFile::new(cfg.num_queues, default_guardband_ns(rate_bps));
        NicPort {
            rate_bps,
            queues: (0..cfg.num_queues)
                .map(|q| TxQueue::new(cfg.queue_depth, q < cfg.time_aware_queues))
                .collect(),
            mgmt: TxQueue::new(cfg.queue_depth, false),
            active: regs.committed_table().clone(),
            regs,
            pending: None,
            scheduler: TimeAwareScheduler::new(),
            counters: vec![QueueCounters::default(); cfg.num_queues],
            mgmt_counters: QueueCounters::default(),
        }
    }

    pub fn num_queues(&self) -> usize {
        self.queues.len()
    }

    pub fn queue(&self, q: usize) -> &TxQueue {
        &self.queues[q]
    }

    pub fn queue_sel(&self, q: QueueSel) -> &TxQueue {
        match q {
            QueueSel::Data(i) => &self.queues[i],
            QueueSel::Mgmt => &self.mgmt,
        }
    }

    pub fn regs(&self) -> &RegisterFile {
        &self.regs
    }

    pub fn read_register(&self, offset: u32) -> Result<u32, RegisterError> {
        self.regs.read_register(offset)
    }

    /// Register write at local time `now`. A successful commit takes effect
    /// at the next window boundary of the table currently in force.
    pub fn write_register(
        &mut self,
        offset: u32,
        value: u32,
        now: i64,
    ) -> Result<(), RegisterError> {
        if self.regs.write_register(offset, value)? {
            let table = self.regs.committed_table().clone();
            let at = self.active.next_boundary(now);
            self.pending = Some((table, at));
            self.refresh(now);
        }
        Ok(())
    }

    /// Swap in a pending table whose activation time has passed.
    pub fn refresh(&mut self, now: i64) {
        if let Some((_, at)) = &self.pending {
            if now >= *at {
                self.active = self.pending.take().unwrap().0;
            }
        }
    }

    /// Table in force (as of the last [`NicPort::refresh`]).
    pub fn active_table(&self) -> &ScheduleTable {
        &self.active
    }

    pub fn pending_activation(&self) -> Option<i64> {
        self.pending.as_ref().map(|(_, at)| *at)
    }

    /// Map by PCP, stamp `enqueue_ts`, append. Tail-drops when full.
    pub fn classify_and_enqueue(
        &mut self,
        mut frame: Frame,
        map: &PriorityMap,
        now: i64,
    ) -> Result<usize, QueueFull> {
        let q = map.classify(frame.pcp);
        frame.meta.enqueue_ts = now;
        match self.queues[q].push(frame) {
            Ok(()) => Ok(q),
            Err(frame) => {
                self.counters[q].drops += 1;
                Err(QueueFull { queue: q, frame })
            }
        }
    }

    pub fn enqueue_mgmt(&mut self, mut frame: Frame, now: i64) -> Result<(), Frame> {
        frame.meta.enqueue_ts = now;
        self.mgmt
            .push(frame)
            .inspect_err(|_| self.mgmt_counters.drops += 1)
    }

    /// Scheduler decision at local time `now`. `occupancy` gives the local
    /// ticks a frame will hold the port for.
    pub fn scheduler_next(&mut self, now: i64, occupancy: impl Fn(&Frame) -> i64) -> SchedDecision {
        self.refresh(now);
        let view = PortView {
            port: self,
            occupancy,
        };
        let d = self.scheduler.next(&self.active, now, &view);
        match (d, self.pending_activation()) {
            (SchedDecision::IdleUntil(t), Some(at)) if at < t => SchedDecision::IdleUntil(at),
            _ => d,
        }
    }

    /// Remove the head of `q` for transmission.
    pub fn dequeue(&mut self, q: QueueSel, busy_ns: u64) -> Option<Frame> {
        let frame = match q {
            QueueSel::Data(i) => self.queues[i].pop()?,
            QueueSel::Mgmt => self.mgmt.pop()?,
        };
        self.scheduler.commit(q, self.queues.len());
        let c = match q {
            QueueSel::Data(i) => &mut self.counters[i],
            QueueSel::Mgmt => &mut self.mgmt_counters,
        };
        c.tx_frames += 1;
        c.tx_bytes += frame.wire_len() as u64;
        c.busy_ns += busy_ns;
        Some(frame)
    }

    /// Frames currently queued across all queues.
    pub fn backlog(&self) -> usize {
        self.queues.iter().map(|q| q.len()).sum::<usize>() + self.mgmt.len()
    }

    pub fn frames(&self) -> impl Iterator<Item = &Frame> {
        self.queues
            .iter()
            .flat_map(|q| q.iter())
            .chain(self.mgmt.iter())
    }
}

struct PortView<'a, F> {
    port: &'a NicPort,
    occupancy: F,
}

impl<F: Fn(&Frame) -> i64> QueueView for PortView<'_, F> {
    fn num_queues(&self) -> usize {
        self.port.queues.len()
    }

    fn head_occupancy(&self, q: QueueSel) -> Option<i64> {
        self.port.queue_sel(q).head().map(&self.occupancy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fabric::MacAddr;
    use crate::nic::regs::{scr, tqcr, COMMIT, NUM_ENTRIES, SCR_ENABLE, WINDOW_US};

    fn frame(pcp: u8) -> Frame {
        Frame::new(
            MacAddr([2, 0, 0, 0, 0, 1]),
            MacAddr([2, 0, 0, 0, 0, 2]),
            pcp,
            0x88B5,
            &[0; 100],
        )
        .unwrap()
    }

    #[test]
    fn classify_and_enqueue_by_pcp() {
        let mut p = NicPort::new(NicConfig::default(), 10_000_000_000);
        let map = PriorityMap::identity(3);
        assert_eq!(p.classify_and_enqueue(frame(2), &map, 40), Ok(2));
        assert_eq!(p.classify_and_enqueue(frame(0), &map, 48), Ok(0));
        assert_eq!(p.queue(2).head().unwrap().meta.enqueue_ts, 40);
        assert!(p.queue(0).scheduled && !p.queue(5).scheduled);
    }

    #[test]
    fn full_queue_drops_arrival() {
        let cfg = NicConfig {
            queue_depth: 2,
            ..Default::default()
        };
        let mut p = NicPort::new(cfg, 10_000_000_000);
        let map = PriorityMap::identity(3);
        let mut a = frame(1);
        a.meta.seq = 1;
        p.classify_and_enqueue(a, &map, 0).unwrap();
        p.classify_and_enqueue(frame(1), &map, 0).unwrap();
        let err = p.classify_and_enqueue(frame(1), &map, 0).unwrap_err();
        assert_eq!(err.queue, 1);
        assert_eq!(p.queue(1).drops, 1);
        assert_eq!(p.counters[1].drops, 1);
        assert_eq!(p.queue(1).len(), 2);
        assert_eq!(p.queue(1).head().unwrap().meta.seq, 1);
    }

    #[test]
    fn commit_applies_at_window_boundary() {
        let mut p = NicPort::new(NicConfig::default(), 10_000_000_000);
        p.write_register(WINDOW_US, 100, 0).unwrap();
        p.write_register(NUM_ENTRIES, 1, 0).unwrap();
        p.write_register(scr(0), SCR_ENABLE | 2, 0).unwrap();
        p.write_register(tqcr(0), 90, 0).unwrap();
        p.write_register(COMMIT, 1, 30_000).unwrap();
        assert!(p.active_table().is_round_robin());
        assert_eq!(p.pending_activation(), Some(100_000));
        p.refresh(99_999);
        assert!(p.active_table().is_round_robin());
        p.refresh(100_000);
        assert_eq!(p.active_table().entries.len(), 1);
    }

    #[test]
    fn default_guardband_is_one_max_frame() {
        assert_eq!(default_guardband_ns(10_000_000_000), 1_218);
    }
}
