//! Schedule table and the time-aware queue selection rule.
//!
//! A table describes one repeating window. Entries are served in order,
//! each owning its queue's slot exclusively; the remainder of the window
//! (the filler region) is shared round-robin by the queues that have no
//! entry. With an empty entry list there is no window at all and every
//! queue is served round-robin.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_ENTRIES: usize = 16;
pub const DEFAULT_WINDOW_US: u32 = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEntry {
    #[serde(rename = "queue")]
    pub queue_idx: u16,
    pub slot_us: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleTable {
    pub window_us: u32,
    pub entries: Vec<ScheduleEntry>,
    pub guardband_ns: u32,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("window must be at least 1 us")]
    ZeroWindow,
    #[error("{0} entries exceed the table capacity of 16")]
    TooManyEntries(usize),
    #[error("entry {index}: slot must be at least 1 us")]
    ZeroSlot { index: usize },
    #[error("entry {index}: queue {queue} does not exist (port has {num_queues})")]
    NoSuchQueue {
        index: usize,
        queue: u16,
        num_queues: usize,
    },
    #[error("entry {index}: queue {queue} already has a slot")]
    DuplicateQueue { index: usize, queue: u16 },
    #[error("slots sum to {total_us} us, more than the {window_us} us window")]
    Overcommitted { total_us: u64, window_us: u32 },
}

impl ScheduleTable {
    /// Pure round-robin: no entries.
    pub fn round_robin(guardband_ns: u32) -> Self {
        ScheduleTable {
            window_us: DEFAULT_WINDOW_US,
            entries: Vec::new(),
            guardband_ns,
        }
    }

    pub fn validate(&self, num_queues: usize) -> Result<(), ScheduleError> {
        if self.window_us == 0 {
            return Err(ScheduleError::ZeroWindow);
        }
        if self.entries.len() > MAX_ENTRIES {
            return Err(ScheduleError::TooManyEntries(self.entries.len()));
        }
        let mut seen = Vec::with_capacity(self.entries.len());
        for (index, e) in self.entries.iter().enumerate() {
            if e.slot_us == 0 {
                return Err(ScheduleError::ZeroSlot { index });
            }
            if e.queue_idx as usize >= num_queues {
                return Err(ScheduleError::NoSuchQueue {
                    index,
                    queue: e.queue_idx,
                    num_queues,
                });
            }
            if seen.contains(&e.queue_idx) {
                return Err(ScheduleError::DuplicateQueue {
                    index,
                    queue: e.queue_idx,
                });
            }
            seen.push(e.queue_idx);
        }
        let total_us = self.slotted_us();
        if total_us > self.window_us as u64 {
            return Err(ScheduleError::Overcommitted {
                total_us,
                window_us: self.window_us,
            });
        }
        Ok(())
    }

    pub fn slotted_us(&self) -> u64 {
        self.entries.iter().map(|e| e.slot_us as u64).sum()
    }

    pub fn window_ns(&self) -> i64 {
        self.window_us as i64 * 1_000
    }

    pub fn is_round_robin(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn has_slot(&self, queue: usize) -> bool {
        self.entries.iter().any(|e| e.queue_idx as usize == queue)
    }

    /// `[start, end)` of entry `i`, in ns from the window start.
    pub fn slot_bounds(&self, i: usize) -> (i64, i64) {
        let start: i64 = self.entries[..i]
            .iter()
            .map(|e| e.slot_us as i64 * 1_000)
            .sum();
        (start, start + self.entries[i].slot_us as i64 * 1_000)
    }

    /// Start of the filler region, in ns from the window start.
    pub fn filler_start(&self) -> i64 {
        self.slotted_us() as i64 * 1_000
    }

    /// First window boundary at or after `local_ns`.
    pub fn next_boundary(&self, local_ns: i64) -> i64 {
        let w = self.window_ns();
        local_ns.div_euclid(w) * w + if local_ns.rem_euclid(w) == 0 { 0 } else { w }
    }
}

/// Which TX queue the scheduler picked.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum QueueSel {
    Data(usize),
    /// The management queue carrying time-transfer frames.
    Mgmt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SchedDecision {
    Transmit(QueueSel),
    /// Nothing may start before this local time; re-evaluate then.
    IdleUntil(i64),
    /// All queues are empty; re-evaluate on the next enqueue.
    Idle,
}

/// What the scheduler needs to know about one queue: the local-clock
/// occupancy of its head frame, if it has one.
pub trait QueueView {
    fn num_queues(&self) -> usize;
    fn head_occupancy(&self, q: QueueSel) -> Option<i64>;
}

/// Round-robin position for the unslotted queues of one port.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TimeAwareScheduler {
    rr_next: usize,
}

impl TimeAwareScheduler {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record that `q` was granted, advancing the round-robin pointer.
    pub fn commit(&mut self, q: QueueSel, num_queues: usize) {
        if let QueueSel::Data(i) = q {
            self.rr_next = (i + 1) % num_queues.max(1);
        }
    }

    fn rr_pick<V: QueueView>(&self, table: &ScheduleTable, view: &V) -> Option<(QueueSel, i64)> {
        if let Some(occ) = view.head_occupancy(QueueSel::Mgmt) {
            return Some((QueueSel::Mgmt, occ));
        }
        let n = view.num_queues();
        (0..n)
            .map(|k| (self.rr_next + k) % n)
            .filter(|&q| !table.has_slot(q))
            .find_map(|q| {
                view.head_occupancy(QueueSel::Data(q))
                    .map(|occ| (QueueSel::Data(q), occ))
            })
    }

    fn all_empty<V: QueueView>(view: &V) -> bool {
        view.head_occupancy(QueueSel::Mgmt).is_none()
            && (0..view.num_queues()).all(|q| view.head_occupancy(QueueSel::Data(q)).is_none())
    }

    /// Decide what the port does at local time `now`.
    pub fn next<V: QueueView>(&self, table: &ScheduleTable, now: i64, view: &V) -> SchedDecision {
        if Self::all_empty(view) {
            return SchedDecision::Idle;
        }
        if table.is_round_robin() {
            return match self.rr_pick(table, view) {
                Some((q, _)) => SchedDecision::Transmit(q),
                None => SchedDecision::Idle,
            };
        }
        let window = table.window_ns();
        let phase = now.rem_euclid(window);
        let window_start = now - phase;
        let guard = table.guardband_ns as i64;

        for (i, entry) in table.entries.iter().enumerate() {
            let (start, end) = table.slot_bounds(i);
            if phase < start || phase >= end {
                continue;
            }
            let q = QueueSel::Data(entry.queue_idx as usize);
            return match view.head_occupancy(q) {
                Some(occ) if phase <= end - guard && phase + occ <= end => {
                    SchedDecision::Transmit(q)
                }
                // Guardband, or an empty queue: the slot stays reserved.
                _ => SchedDecision::IdleUntil(window_start + end),
            };
        }

        // Filler region.
        match self.rr_pick(table, view) {
            Some((q, occ)) if phase + occ <= window - guard => SchedDecision::Transmit(q),
            _ => SchedDecision::IdleUntil(window_start + window),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nic::frame::serialization_ns;

    struct Heads {
        data: Vec<Option<i64>>,
        mgmt: Option<i64>,
    }

    impl QueueView for Heads {
        fn num_queues(&self) -> usize {
            self.data.len()
        }
        fn head_occupancy(&self, q: QueueSel) -> Option<i64> {
            match q {
                QueueSel::Data(i) => self.data[i],
                QueueSel::Mgmt => self.mgmt,
            }
        }
    }

    const MAX_FRAME_NS: i64 = 1_218;

    fn table(entries: &[(u16, u32)], guardband_ns: u32) -> ScheduleTable {
        ScheduleTable {
            window_us: 100,
            entries: entries
                .iter()
                .map(|&(q, s)| ScheduleEntry {
                    queue_idx: q,
                    slot_us: s,
                })
                .collect(),
            guardband_ns,
        }
    }

    fn heads(data: &[Option<i64>]) -> Heads {
        Heads {
            data: data.to_vec(),
            mgmt: None,
        }
    }

    #[test]
    fn validation() {
        assert!(table(&[(0, 90)], 1300).validate(8).is_ok());
        assert_eq!(
            table(&[(0, 60), (1, 60)], 0).validate(8),
            Err(ScheduleError::Overcommitted {
                total_us: 120,
                window_us: 100
            })
        );
        assert!(matches!(
            table(&[(9, 10)], 0).validate(8),
            Err(ScheduleError::NoSuchQueue { .. })
        ));
        assert!(matches!(
            table(&[(1, 10), (1, 10)], 0).validate(8),
            Err(ScheduleError::DuplicateQueue { index: 1, .. })
        ));
        assert!(matches!(
            table(&[(1, 0)], 0).validate(8),
            Err(ScheduleError::ZeroSlot { index: 0 })
        ));
    }

    #[test]
    fn max_frame_at_slot_start_transmits() {
        assert_eq!(serialization_ns(1522, 10_000_000_000) as i64, MAX_FRAME_NS);
        let t = table(&[(0, 90)], 1300);
        let d = TimeAwareScheduler::new().next(&t, 0, &heads(&[Some(MAX_FRAME_NS), None]));
        assert_eq!(d, SchedDecision::Transmit(QueueSel::Data(0)));
    }

    #[test]
    fn guardband_blocks_late_start() {
        let t = table(&[(0, 90)], 1300);
        let d = TimeAwareScheduler::new().next(&t, 89_000, &heads(&[Some(MAX_FRAME_NS), None]));
        assert_eq!(d, SchedDecision::IdleUntil(90_000));
        // 88_700 is the last start the guardband allows
        let d = TimeAwareScheduler::new().next(&t, 88_700, &heads(&[Some(MAX_FRAME_NS), None]));
        assert_eq!(d, SchedDecision::Transmit(QueueSel::Data(0)));
    }

    #[test]
    fn frame_must_fit_before_slot_end() {
        let t = table(&[(0, 90)], 0);
        let d = TimeAwareScheduler::new().next(&t, 89_000, &heads(&[Some(1_001), None]));
        assert_eq!(d, SchedDecision::IdleUntil(90_000));
        let d = TimeAwareScheduler::new().next(&t, 89_000, &heads(&[Some(1_000), None]));
        assert_eq!(d, SchedDecision::Transmit(QueueSel::Data(0)));
    }

    #[test]
    fn empty_slotted_queue_stalls_the_port() {
        let t = table(&[(0, 90)], 1300);
        let d = TimeAwareScheduler::new().next(&t, 5_000, &heads(&[None, Some(100), Some(100)]));
        assert_eq!(d, SchedDecision::IdleUntil(90_000));
    }

    #[test]
    fn filler_alternates_unslotted_queues() {
        let t = table(&[(0, 30), (1, 30), (2, 30)], MAX_FRAME_NS as u32);
        let h = heads(&[None, None, None, Some(MAX_FRAME_NS), Some(MAX_FRAME_NS)]);
        let mut s = TimeAwareScheduler::new();
        let mut now = 92_000;
        let mut order = Vec::new();
        loop {
            match s.next(&t, now, &h) {
                SchedDecision::Transmit(q) => {
                    order.push(q);
                    s.commit(q, 5);
                    now += MAX_FRAME_NS;
                }
                SchedDecision::IdleUntil(t) => {
                    assert_eq!(t, 100_000);
                    break;
                }
                SchedDecision::Idle => unreachable!(),
            }
        }
        assert_eq!(
            order,
            vec![
                QueueSel::Data(3),
                QueueSel::Data(4),
                QueueSel::Data(3),
                QueueSel::Data(4),
                QueueSel::Data(3)
            ]
        );
        // last start + frame stays inside window end minus guardband
        const { assert!(92_000 + 5 * MAX_FRAME_NS <= 100_000 - MAX_FRAME_NS) };
    }

    #[test]
    fn management_queue_first_in_filler() {
        let t = table(&[(0, 90)], 0);
        let h = Heads {
            data: vec![None, Some(100)],
            mgmt: Some(60),
        };
        let d = TimeAwareScheduler::new().next(&t, 95_000, &h);
        assert_eq!(d, SchedDecision::Transmit(QueueSel::Mgmt));
        // but never inside a slot
        let d = TimeAwareScheduler::new().next(&t, 1_000, &h);
        assert_eq!(d, SchedDecision::IdleUntil(90_000));
    }

    #[test]
    fn round_robin_without_entries() {
        let t = ScheduleTable::round_robin(1218);
        let h = heads(&[Some(10), None, Some(10)]);
        let mut s = TimeAwareScheduler::new();
        let mut picks = Vec::new();
        for _ in 0..4 {
            let SchedDecision::Transmit(q) = s.next(&t, 123_456, &h) else {
                panic!()
            };
            s.commit(q, 3);
            picks.push(q);
        }
        assert_eq!(
            picks,
            vec![
                QueueSel::Data(0),
                QueueSel::Data(2),
                QueueSel::Data(0),
                QueueSel::Data(2)
            ]
        );
        assert_eq!(s.next(&t, 0, &heads(&[None, None])), SchedDecision::Idle);
    }

    #[test]
    fn next_boundary() {
        let t = table(&[(0, 10)], 0);
        assert_eq!(t.next_boundary(0), 0);
        assert_eq!(t.next_boundary(1), 100_000);
        assert_eq!(t.next_boundary(100_000), 100_000);
        assert_eq!(t.next_boundary(-5), 0);
    }
}
