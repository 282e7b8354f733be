//! Deterministic discrete-event engine.
//!
//! Time is an integer count of nanoseconds of "true" time. Events fire in
//! `(fire_at, seq)` order, where `seq` is the insertion counter, so two
//! events scheduled for the same instant run in the order they were
//! scheduled.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashSet};
use std::fmt;
use std::ops::{Add, Sub};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

/// True simulation time in nanoseconds.
#[derive(
    Clone,
    Copy,
    Debug,
    Default,
    PartialEq,
    Eq,
    PartialOrd,
    Ord,
    Hash,
    serde::Serialize,
    serde::Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_ns(ns: u64) -> Self {
        SimTime(ns)
    }

    pub const fn from_us(us: u64) -> Self {
        SimTime(us * 1_000)
    }

    pub const fn from_ms(ms: u64) -> Self {
        SimTime(ms * 1_000_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000_000)
    }

    pub const fn as_ns(self) -> u64 {
        self.0
    }

    pub fn saturating_sub(self, other: SimTime) -> u64 {
        self.0.saturating_sub(other.0)
    }
}

impl Add<u64> for SimTime {
    type Output = SimTime;
    fn add(self, ns: u64) -> SimTime {
        SimTime(self.0 + ns)
    }
}

impl Sub for SimTime {
    type Output = u64;
    fn sub(self, other: SimTime) -> u64 {
        self.0 - other.0
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ns", self.0)
    }
}

/// Handle returned by [`EventQueue::schedule`], usable for cancellation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventId(u64);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("event scheduled at {at} but the clock is already at {now}")]
    InPast { at: SimTime, now: SimTime },
}

struct Entry<A> {
    fire_at: SimTime,
    seq: u64,
    action: A,
}

impl<A> PartialEq for Entry<A> {
    fn eq(&self, other: &Self) -> bool {
        (self.fire_at, self.seq) == (other.fire_at, other.seq)
    }
}

impl<A> Eq for Entry<A> {}

impl<A> PartialOrd for Entry<A> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl<A> Ord for Entry<A> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.fire_at, self.seq).cmp(&(other.fire_at, other.seq))
    }
}

/// Summary returned by [`EventQueue::run_until`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunStats {
    pub events_processed: u64,
    pub final_time: SimTime,
}

/// Priority queue of pending events plus the current simulation time.
pub struct EventQueue<A> {
    now: SimTime,
    next_seq: u64,
    heap: BinaryHeap<Reverse<Entry<A>>>,
    cancelled: HashSet<u64>,
    processed: u64,
    trace: Option<Sha256>,
}

impl<A> Default for EventQueue<A> {
    fn default() -> Self {
        Self::new()
    }
}

impl<A> EventQueue<A> {
    pub fn new() -> Self {
        EventQueue {
            now: SimTime::ZERO,
            next_seq: 0,
            heap: BinaryHeap::new(),
            cancelled: HashSet::new(),
            processed: 0,
            trace: None,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Total events dispatched since construction.
    pub fn processed(&self) -> u64 {
        self.processed
    }

    pub fn pending(&self) -> usize {
        self.heap.len() - self.cancelled.len()
    }

    /// Start folding every dispatched `(fire_at, seq)` into a running hash.
    pub fn enable_trace_hash(&mut self) {
        self.trace = Some(Sha256::new());
    }

    /// Hex digest of the dispatch trace so far, if tracing is enabled.
    pub fn trace_hash(&self) -> Option<String> {
        self.trace
            .as_ref()
            .map(|h| crate::hex(&h.clone().finalize()))
    }

    pub fn schedule(&mut self, fire_at: SimTime, action: A) -> Result<EventId, SimError> {
        if fire_at < self.now {
            return Err(SimError::InPast {
                at: fire_at,
                now: self.now,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(Entry {
            fire_at,
            seq,
            action,
        }));
        Ok(EventId(seq))
    }

    /// Schedule `delay_ns` after the current time. Never fails.
    pub fn schedule_in(&mut self, delay_ns: u64, action: A) -> EventId {
        self.schedule(self.now + delay_ns, action)
            .expect("relative schedule is never in the past")
    }

    /// Cancel a pending event. Returns false if it already fired or was
    /// cancelled before.
    pub fn cancel(&mut self, id: EventId) -> bool {
        if id.0 >= self.next_seq {
            return false;
        }
        let live = self.heap.iter().any(|Reverse(e)| e.seq == id.0);
        live && self.cancelled.insert(id.0)
    }

    /// Pop the next live event due at or before `t_end`, advancing the clock.
    pub fn pop_until(&mut self, t_end: SimTime) -> Option<(SimTime, A)> {
        loop {
            let due = matches!(self.heap.peek(), Some(Reverse(e)) if e.fire_at <= t_end);
            if !due {
                return None;
            }
            let Reverse(entry) = self.heap.pop().expect("peeked");
            if self.cancelled.remove(&entry.seq) {
                continue;
            }
            self.now = entry.fire_at;
            self.processed += 1;
            if let Some(h) = self.trace.as_mut() {
                h.update(entry.fire_at.0.to_le_bytes());
                h.update(entry.seq.to_le_bytes());
            }
            return Some((entry.fire_at, entry.action));
        }
    }

    /// Dispatch every event with `fire_at <= t_end` to `handler`, then set
    /// the clock to `t_end`. Handlers may schedule further events.
    pub fn run_until<F>(&mut self, t_end: SimTime, mut handler: F) -> RunStats
    where
        F: FnMut(&mut EventQueue<A>, SimTime, A),
    {
        let t_end = t_end.max(self.now);
        let before = self.processed;
        while let Some((t, action)) = self.pop_until(t_end) {
            handler(self, t, action);
        }
        self.now = t_end;
        RunStats {
            events_processed: self.processed - before,
            final_time: self.now,
        }
    }

    /// Iterate over the actions still pending, in no particular order.
    pub fn pending_actions(&self) -> impl Iterator<Item = &A> {
        self.heap
            .iter()
            .filter(|Reverse(e)| !self.cancelled.contains(&e.seq))
            .map(|Reverse(e)| &e.action)
    }
}

/// Independent random streams derived from one scenario seed.
///
/// Each component asks for its own stream id; ChaCha's stream parameter
/// keeps the streams disjoint, so adding a consumer never shifts the draws
/// seen by another.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngStreams {
    seed: u64,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        RngStreams { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, stream_id: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream_id);
        rng
    }
}

/// Well-known stream ids.
pub mod streams {
    pub const CLOCK_DRIFT: u64 = 1;
    pub const CLOCK_OFFSET: u64 = 2;
    /// Per-link error injection uses `LINK_ERRORS + link index`.
    pub const LINK_ERRORS: u64 = 1 << 32;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn schedule_now_fires_next() {
        let mut q = EventQueue::new();
        q.schedule(SimTime::ZERO, "a").unwrap();
        assert_eq!(q.pop_until(SimTime::ZERO), Some((SimTime::ZERO, "a")));
    }

    #[test]
    fn equal_times_fire_in_insertion_order() {
        let mut q = EventQueue::new();
        q.schedule(SimTime(100), 'A').unwrap();
        q.schedule(SimTime(100), 'B').unwrap();
        let mut seen = Vec::new();
        q.run_until(SimTime(1_000), |_, _, a| seen.push(a));
        assert_eq!(seen, vec!['A', 'B']);
    }

    #[test]
    fn past_schedule_is_rejected() {
        let mut q: EventQueue<()> = EventQueue::new();
        q.run_until(SimTime(100), |_, _, _| {});
        assert_eq!(
            q.schedule(SimTime(50), ()),
            Err(SimError::InPast {
                at: SimTime(50),
                now: SimTime(100)
            })
        );
    }

    #[test]
    fn empty_run_advances_clock() {
        let mut q: EventQueue<()> = EventQueue::new();
        let stats = q.run_until(SimTime::from_secs(1), |_, _, _| {});
        assert_eq!(stats.events_processed, 0);
        assert_eq!(stats.final_time, SimTime(1_000_000_000));
    }

    #[test]
    fn only_due_events_are_processed() {
        let mut q = EventQueue::new();
        for t in [10, 20, 30, 40] {
            q.schedule(SimTime(t), t).unwrap();
        }
        let stats = q.run_until(SimTime(30), |_, _, _| {});
        assert_eq!(stats.events_processed, 3);
        assert_eq!(q.pending(), 1);
    }

    #[test]
    fn cancelled_events_do_not_fire() {
        let mut q = EventQueue::new();
        let a = q.schedule(SimTime(5), 1).unwrap();
        q.schedule(SimTime(6), 2).unwrap();
        assert!(q.cancel(a));
        assert!(!q.cancel(a));
        let mut seen = Vec::new();
        q.run_until(SimTime(10), |_, _, x| seen.push(x));
        assert_eq!(seen, vec![2]);
    }

    #[test]
    fn handler_can_chain_events() {
        let mut q = EventQueue::new();
        q.schedule(SimTime(0), 0u32).unwrap();
        let mut times = Vec::new();
        q.run_until(SimTime(1_000), |q, t, n| {
            times.push(t.0);
            if n < 5 {
                q.schedule_in(100, n + 1);
            }
        });
        assert_eq!(times, vec![0, 100, 200, 300, 400, 500]);
    }

    fn traced_run(seed: u64) -> String {
        let rng_streams = RngStreams::new(seed);
        let mut rng = rng_streams.stream(7);
        let mut q = EventQueue::new();
        q.enable_trace_hash();
        for _ in 0..200 {
            let t: u64 = rng.gen_range(0..10_000);
            q.schedule(SimTime(t), t).unwrap();
        }
        q.run_until(SimTime(20_000), |q, t, x| {
            if x % 3 == 0 && t.0 < 15_000 {
                q.schedule_in(x % 17, x + 1);
            }
        });
        q.trace_hash().unwrap()
    }

    #[test]
    fn identical_seed_gives_identical_trace() {
        assert_eq!(traced_run(42), traced_run(42));
        assert_ne!(traced_run(42), traced_run(43));
    }

    #[test]
    fn rng_streams_are_independent() {
        let s = RngStreams::new(9);
        let a: Vec<u32> = (0..4)
            .map(|_| 0)
            .scan(s.stream(1), |r, _| Some(r.gen()))
            .collect();
        let a2: Vec<u32> = (0..4)
            .map(|_| 0)
            .scan(s.stream(1), |r, _| Some(r.gen()))
            .collect();
        let b: Vec<u32> = (0..4)
            .map(|_| 0)
            .scan(s.stream(2), |r, _| Some(r.gen()))
            .collect();
        assert_eq!(a, a2);
        assert_ne!(a, b);
    }

    proptest::proptest! {
        #[test]
        fn dispatch_is_monotone_and_lossless(times in proptest::collection::vec(0u64..1_000, 0..64)) {
            let mut q = EventQueue::new();
            for &t in &times {
                q.schedule(SimTime(t), t).unwrap();
            }
            let mut last = 0;
            let mut count = 0;
            q.run_until(SimTime(1_000), |_, t, _| {
                assert!(t.0 >= last);
                last = t.0;
                count += 1;
            });
            proptest::prop_assert_eq!(count, times.len());
        }
    }
}
