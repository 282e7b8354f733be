//! Priority -> traffic class -> TX queue mapping.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NUM_PRIORITIES: usize = 8;

/// Two-stage mapping from a frame's PCP to a TX queue.
///
/// Priorities at or above `num_classes` clamp to the top class.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorityMap {
    pub num_classes: u8,
    pub prio_to_tc: Vec<u8>,
    pub tc_to_queue: Vec<u16>,
}

impl Default for PriorityMap {
    /// Three classes mapped one-to-one onto queues 0, 1, 2.
    fn default() -> Self {
        PriorityMap::identity(3)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MapError {
    #[error("num_classes must be 1..=8, got {0}")]
    ClassCount(u8),
    #[error("prio_to_tc has {got} entries, expected {expected}")]
    PrioLength { got: usize, expected: usize },
    #[error("tc_to_queue has {got} entries, expected {expected}")]
    TcLength { got: usize, expected: usize },
    #[error("prio_to_tc[{index}] = {tc} is not a valid class")]
    NoSuchClass { index: usize, tc: u8 },
    #[error("prio_to_tc[{index}] reuses class {tc}; the mapping must be one-to-one")]
    PrioNotInjective { index: usize, tc: u8 },
    #[error("tc_to_queue[{index}] = {queue} does not exist (port has {num_queues})")]
    NoSuchQueue {
        index: usize,
        queue: u16,
        num_queues: usize,
    },
    #[error("tc_to_queue[{index}] reuses queue {queue}; the mapping must be one-to-one")]
    TcNotInjective { index: usize, queue: u16 },
    #[error("tc_to_queue[{index}] = {queue} is not a time-aware queue")]
    Unscheduled { index: usize, queue: u16 },
}

/// What `validate_map` needs to know about the port.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QueueLayout {
    pub num_queues: usize,
    /// Queues `0..time_aware` are the time-aware group.
    pub time_aware: usize,
}

impl PriorityMap {
    pub fn identity(num_classes: u8) -> Self {
        PriorityMap {
            num_classes,
            prio_to_tc: (0..num_classes).collect(),
            tc_to_queue: (0..num_classes as u16).collect(),
        }
    }

    pub fn classify(&self, pcp: u8) -> usize {
        let top = self.num_classes.saturating_sub(1);
        let prio = pcp.min(top) as usize;
        let tc = self.prio_to_tc[prio] as usize;
        self.tc_to_queue[tc] as usize
    }

    /// Every violation, each tagged with the offending index.
    pub fn validate(&self, layout: QueueLayout) -> Result<(), Vec<MapError>> {
        let mut errs = Vec::new();
        let n = self.num_classes as usize;
        if n == 0 || n > NUM_PRIORITIES {
            return Err(vec![MapError::ClassCount(self.num_classes)]);
        }
        if self.prio_to_tc.len() != n {
            errs.push(MapError::PrioLength {
                got: self.prio_to_tc.len(),
                expected: n,
            });
        }
        if self.tc_to_queue.len() != n {
            errs.push(MapError::TcLength {
                got: self.tc_to_queue.len(),
                expected: n,
            });
        }
        let mut tcs = Vec::new();
        for (index, &tc) in self.prio_to_tc.iter().enumerate() {
            if tc as usize >= n {
                errs.push(MapError::NoSuchClass { index, tc });
            } else if tcs.contains(&tc) {
                errs.push(MapError::PrioNotInjective { index, tc });
            }
            tcs.push(tc);
        }
        let mut queues = Vec::new();
        for (index, &queue) in self.tc_to_queue.iter().enumerate() {
            if queue as usize >= layout.num_queues {
                errs.push(MapError::NoSuchQueue {
                    index,
                    queue,
                    num_queues: layout.num_queues,
                });
            } else if queues.contains(&queue) {
                errs.push(MapError::TcNotInjective { index, queue });
            } else if queue as usize >= layout.time_aware {
                errs.push(MapError::Unscheduled { index, queue });
            }
            queues.push(queue);
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }
}

pub fn classify(pcp: u8, map: &PriorityMap) -> usize {
    map.classify(pcp)
}

pub fn validate_map(map: &PriorityMap, layout: QueueLayout) -> Result<(), Vec<MapError>> {
    map.validate(layout)
}
