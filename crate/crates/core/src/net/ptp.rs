//! Time-transfer protocol driver: a boundary-clock tree rooted at the
//! grandmaster, one Sync / Delay_Req / Delay_Resp exchange per edge per
//! round.

use std::collections::VecDeque;

use serde::Serialize;

use super::{Action, Network};
use crate::clock::{ptp_offset_estimate, PtpExchange, PtpMessage, PtpMsgType, ETHERTYPE_PTP};
use crate::fabric::{Layout, NodeId, PortRef, Topology, DATA_PORTS};
use crate::nic::Frame;
use crate::sim::SimTime;

/// True time of the first exchange at tree depth 1.
pub(crate) const FIRST_SYNC_NS: u64 = 1_000_000;

#[derive(Clone, Copy, Debug, Default)]
struct Pending {
    id: u32,
    t1: i64,
    t2: i64,
    t3: Option<i64>,
}

#[derive(Clone, Debug, Default)]
pub(crate) struct PtpNode {
    /// Port toward the parent; `None` at the grandmaster and in nodes the
    /// tree does not reach.
    pub(crate) parent_port: Option<usize>,
    pub(crate) depth: u32,
    pending: Option<Pending>,
    pub(crate) rounds: u32,
    pub(crate) last_estimate: i64,
}

/// A slave's phase error at one instant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ClockOffset {
    pub node: NodeId,
    pub depth: u32,
    /// Local reading minus the parent's.
    pub to_parent: i64,
    /// Local reading minus the grandmaster's.
    pub to_grandmaster: i64,
}

pub(crate) fn default_grandmaster(topo: &Topology, requested: Option<NodeId>) -> usize {
    let id = requested.unwrap_or(match topo.layout {
        Layout::Torus => NodeId::new(0, 0, 0, 0),
        Layout::Testbed => NodeId::new(0, 1, 0, 0),
    });
    topo.node_index(id).unwrap_or(0)
}

fn ptp_frame(net: &Network, from: usize, port: usize, msg: PtpMessage) -> Frame {
    let peer = net.topo.node(from).ports[port]
        .peer
        .expect("data port has a peer");
    let dst = net.topo.node(peer.node).mac;
    Frame::new(
        dst,
        net.topo.node(from).mac,
        7,
        ETHERTYPE_PTP,
        &msg.encode(),
    )
    .expect("short payload")
}

impl Network {
    /// Build the sync tree by breadth-first search over the fault-free
    /// fabric and schedule every slave's first round.
    pub(super) fn start_ptp(&mut self) {
        let gm = self.grandmaster;
        let mut seen = vec![false; self.nodes.len()];
        seen[gm] = true;
        let mut frontier = VecDeque::from([gm]);
        while let Some(n) = frontier.pop_front() {
            for p in DATA_PORTS {
                let Some(peer) = self.topo.node(n).ports[p].peer else {
                    continue;
                };
                if seen[peer.node] {
                    continue;
                }
                seen[peer.node] = true;
                let depth = self.nodes[n].ptp.depth + 1;
                let child = &mut self.nodes[peer.node].ptp;
                child.parent_port = Some(peer.port);
                child.depth = depth;
                frontier.push_back(peer.node);
            }
        }
        for n in 0..self.nodes.len() {
            if self.nodes[n].ptp.parent_port.is_some() {
                let at = SimTime(
                    FIRST_SYNC_NS + (self.nodes[n].ptp.depth as u64 - 1) * self.cfg.ptp.stagger_ns,
                );
                self.events
                    .schedule(at, Action::PtpRound { slave: n, round: 0 })
                    .expect("start of run");
            }
        }
    }

    /// Deepest level of the sync tree.
    pub fn ptp_depth(&self) -> u32 {
        self.nodes.iter().map(|n| n.ptp.depth).max().unwrap_or(0)
    }

    /// True time after which every slave has completed the configured
    /// number of convergence rounds.
    pub fn ptp_converged_at(&self) -> SimTime {
        let p = &self.cfg.ptp;
        SimTime(
            FIRST_SYNC_NS
                + p.convergence_rounds as u64 * p.interval_ns()
                + self.ptp_depth().saturating_sub(1) as u64 * p.stagger_ns,
        )
    }

    pub fn ptp_rounds(&self, node: usize) -> u32 {
        self.nodes[node].ptp.rounds
    }

    /// The parent's side: send a Sync toward `slave`.
    pub(super) fn ptp_round(&mut self, _now: SimTime, slave: usize, round: u32) {
        let Some(pp) = self.nodes[slave].ptp.parent_port else {
            return;
        };
        let parent = self.topo.node(slave).ports[pp].peer.expect("tree edge");
        let msg = PtpMessage {
            msg_type: PtpMsgType::Sync,
            origin_timestamp: 0,
            exchange_id: round,
        };
        let f = ptp_frame(self, parent.node, parent.port, msg);
        self.enqueue_mgmt(parent.node, parent.port, f);
        self.events.schedule_in(
            self.cfg.ptp.interval_ns(),
            Action::PtpRound {
                slave,
                round: round + 1,
            },
        );
    }

    /// One-step timestamping: Sync carries its own departure time, and a
    /// slave remembers when its Delay_Req left.
    pub(super) fn ptp_on_transmit(&mut self, n: usize, frame: &mut Frame) {
        let Ok(mut msg) = PtpMessage::decode(&frame.payload) else {
            return;
        };
        match msg.msg_type {
            PtpMsgType::Sync => {
                msg.origin_timestamp = frame.meta.tx_ts as u64;
                let meta = std::mem::take(&mut frame.meta);
                *frame = Frame::new(
                    frame.dst_mac,
                    frame.src_mac,
                    frame.pcp,
                    ETHERTYPE_PTP,
                    &msg.encode(),
                )
                .expect("short payload");
                frame.meta = meta;
            }
            PtpMsgType::DelayReq => {
                if let Some(p) = self.nodes[n].ptp.pending.as_mut() {
                    if p.id == msg.exchange_id {
                        p.t3 = Some(frame.meta.tx_ts);
                    }
                }
            }
            PtpMsgType::DelayResp => {}
        }
    }

    pub(super) fn ptp_receive(&mut self, now: SimTime, n: usize, port: usize, f: Frame) {
        let Ok(msg) = PtpMessage::decode(&f.payload) else {
            self.nodes[n].counters.malformed += 1;
            return;
        };
        let from_parent = self.nodes[n].ptp.parent_port == Some(port);
        match msg.msg_type {
            PtpMsgType::Sync if from_parent => {
                self.nodes[n].ptp.pending = Some(Pending {
                    id: msg.exchange_id,
                    t1: msg.origin_timestamp as i64,
                    t2: f.meta.rx_ts,
                    t3: None,
                });
                let req = PtpMessage {
                    msg_type: PtpMsgType::DelayReq,
                    origin_timestamp: 0,
                    exchange_id: msg.exchange_id,
                };
                let out = ptp_frame(self, n, port, req);
                self.enqueue_mgmt(n, port, out);
            }
            PtpMsgType::DelayReq => {
                let resp = PtpMessage {
                    msg_type: PtpMsgType::DelayResp,
                    origin_timestamp: f.meta.rx_ts as u64,
                    exchange_id: msg.exchange_id,
                };
                let out = ptp_frame(self, n, port, resp);
                self.enqueue_mgmt(n, port, out);
            }
            PtpMsgType::DelayResp if from_parent => {
                let node = &mut self.nodes[n];
                let Some(p) = node.ptp.pending else { return };
                let Some(t3) = p.t3 else { return };
                if p.id != msg.exchange_id {
                    return;
                }
                let x = PtpExchange {
                    t1: p.t1,
                    t2: p.t2,
                    t3,
                    t4: msg.origin_timestamp as i64,
                };
                let est = ptp_offset_estimate(&x);
                node.clock.apply_servo(now, est);
                node.ptp.pending = None;
                node.ptp.rounds += 1;
                node.ptp.last_estimate = est;
                node.counters.ptp_updates += 1;
            }
            _ => {}
        }
    }

    /// Phase error of every synchronized slave at the current instant.
    pub fn clock_offsets(&self) -> Vec<ClockOffset> {
        let now = self.now();
        let gm = self.nodes[self.grandmaster].clock.ns_at(now);
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, node)| {
                let pp = node.ptp.parent_port?;
                let parent: PortRef = self.topo.node(i).ports[pp].peer?;
                let here = node.clock.ns_at(now);
                Some(ClockOffset {
                    node: node.id,
                    depth: node.ptp.depth,
                    to_parent: here - self.nodes[parent.node].clock.ns_at(now),
                    to_grandmaster: here - gm,
                })
            })
            .collect()
    }
}
