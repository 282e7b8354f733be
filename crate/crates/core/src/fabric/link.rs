use serde::{Deserialize, Serialize};

use super::topology::PortRef;
use crate::sim::SimTime;

pub const DEFAULT_LINK_RATE_BPS: u64 = 10_000_000_000;
pub const DEFAULT_PROP_DELAY_NS: u64 = 500;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LinkId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkState {
    Up,
    Down,
}

/// Physical parameters shared by every link built from one set of defaults.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkParams {
    pub rate_bps: u64,
    pub prop_delay_ns: u64,
    /// Extra one-way delay in the a -> b direction only.
    pub asymmetry_ns: u64,
    /// Probability that a frame picks up one flipped bit in transit.
    pub frame_error_rate: f64,
}

impl Default for LinkParams {
    fn default() -> Self {
        LinkParams {
            rate_bps: DEFAULT_LINK_RATE_BPS,
            prop_delay_ns: DEFAULT_PROP_DELAY_NS,
            asymmetry_ns: 0,
            frame_error_rate: 0.0,
        }
    }
}

/// Point-to-point segment between two ports.
#[derive(Clone, Debug)]
pub struct Link {
    pub id: LinkId,
    pub a: PortRef,
    pub b: PortRef,
    pub params: LinkParams,
    /// State transitions sorted by time; the link starts Up.
    pub fault_schedule: Vec<(SimTime, LinkState)>,
}

impl Link {
    pub fn new(id: LinkId, a: PortRef, b: PortRef, params: LinkParams) -> Self {
        Link {
            id,
            a,
            b,
            params,
            fault_schedule: Vec::new(),
        }
    }

    /// Record a state change effective from `at`. Changes at the same
    /// instant apply in call order.
    pub fn set_state(&mut self, state: LinkState, at: SimTime) {
        let pos = self.fault_schedule.partition_point(|(t, _)| *t <= at);
        self.fault_schedule.insert(pos, (at, state));
    }

    pub fn state_at(&self, t: SimTime) -> LinkState {
        let pos = self.fault_schedule.partition_point(|(at, _)| *at <= t);
        if pos == 0 {
            LinkState::Up
        } else {
            self.fault_schedule[pos - 1].1
        }
    }

    /// True when the link is Up for the whole closed interval `[from, to]`.
    pub fn up_throughout(&self, from: SimTime, to: SimTime) -> bool {
        if self.state_at(from) != LinkState::Up {
            return false;
        }
        !self
            .fault_schedule
            .iter()
            .any(|&(t, s)| t > from && t <= to && s == LinkState::Down)
    }

    /// The port on the other end from `from`.
    pub fn other_end(&self, from: PortRef) -> PortRef {
        if from == self.a {
            self.b
        } else {
            self.a
        }
    }

    /// One-way delay when transmitting from `from`.
    pub fn delay_from(&self, from: PortRef) -> u64 {
        if from == self.a {
            self.params.prop_delay_ns + self.params.asymmetry_ns
        } else {
            self.params.prop_delay_ns
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn link() -> Link {
        let p = |n| PortRef { node: n, port: 0 };
        Link::new(LinkId(0), p(0), p(1), LinkParams::default())
    }

    #[test]
    fn starts_up() {
        assert_eq!(link().state_at(SimTime(0)), LinkState::Up);
        assert!(link().up_throughout(SimTime(0), SimTime(1_000_000)));
    }

    #[test]
    fn down_interval_overlap() {
        let mut l = link();
        l.set_state(LinkState::Down, SimTime(1_000));
        l.set_state(LinkState::Up, SimTime(2_000));
        // frame in flight across the Down edge
        assert!(!l.up_throughout(SimTime(900), SimTime(1_100)));
        // frame entirely inside the Down interval
        assert!(!l.up_throughout(SimTime(1_200), SimTime(1_300)));
        // frame sent after recovery
        assert!(l.up_throughout(SimTime(2_000), SimTime(2_500)));
        assert!(l.up_throughout(SimTime(100), SimTime(999)));
    }

    /// Brute-force oracle: sample every nanosecond of the interval.
    fn up_by_sampling(l: &Link, from: u64, to: u64) -> bool {
        (from..=to).all(|t| l.state_at(SimTime(t)) == LinkState::Up)
    }

    #[test]
    fn flapping_schedule_matches_sampling_oracle() {
        let mut l = link();
        let flips = [
            (100, LinkState::Down),
            (180, LinkState::Up),
            (300, LinkState::Down),
            (305, LinkState::Up),
            (700, LinkState::Down),
        ];
        for (t, s) in flips {
            l.set_state(s, SimTime(t));
        }
        let mut delivered = 0;
        let mut oracle = 0;
        for start in (0..800).step_by(7) {
            let end = start + 40;
            delivered += l.up_throughout(SimTime(start), SimTime(end)) as u32;
            oracle += up_by_sampling(&l, start, end) as u32;
        }
        assert_eq!(delivered, oracle);
        assert!(delivered > 0);
    }

    #[test]
    fn asymmetry_applies_one_way() {
        let mut l = link();
        l.params.asymmetry_ns = 200;
        assert_eq!(l.delay_from(l.a), 700);
        assert_eq!(l.delay_from(l.b), 500);
    }
}
