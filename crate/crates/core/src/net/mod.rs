//! The simulated system: per-node clocks, NIC ports and host sources, wired
//! by the fabric and driven by one event queue.

mod config;
mod ptp;

use std::collections::{BTreeMap, VecDeque};

use bytes::Bytes;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use config::{
    DriftOverride, HostConfig, PtpConfig, DEFAULT_INJECTION_CAP_BPS, DEFAULT_PROCESSING_DELAY_NS,
};
pub use ptp::ClockOffset;

use crate::clock::{LocalClock, ETHERTYPE_PTP};
use crate::fabric::{LinkId, NodeId, PortRef, Topology, DATA_PORTS, PORTS_PER_NODE};
use crate::nic::{
    receive, serialization_ns, Frame, FrameMeta, NicConfig, NicPort, QueueCounters, QueueSel,
    RxDisposition, SchedDecision,
};
use crate::qdisc::PriorityMap;
use crate::routing::{forward_frame, next_hop, DropReason, ForwardDecision, ForwardError};
use crate::runtime::{
    FragmentHeader, Message, Reassembly, DEFAULT_REASSEMBLY_TIMEOUT_NS, ETHERTYPE_RUNTIME,
};
use crate::sim::{streams, EventQueue, RngStreams, RunStats, SimTime};
use crate::traffic::{DropCause, FlowSpec, FlowStats, Sample};

/// Frames a backlogged flow keeps outstanding at its source.
const BACKLOG_FRAMES: usize = 2;

/// Everything [`Network::new`] needs besides the topology.
#[derive(Clone, Debug, Default)]
pub struct NetConfig {
    pub nic: NicConfig,
    pub priority_map: PriorityMap,
    pub host: HostConfig,
    pub ptp: PtpConfig,
    pub seed: u64,
    /// Record every transmission and every delivered frame's route.
    pub trace: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct NodeCounters {
    pub rx_frames: u64,
    pub rx_bad_crc: u64,
    pub misaddressed: u64,
    pub malformed: u64,
    pub forwarded: u64,
    pub delivered: u64,
    pub ttl_expired: u64,
    pub no_route: u64,
    pub queue_drops: u64,
    pub link_drops: u64,
    pub messages_delivered: u64,
    pub reassembly_expired: u64,
    pub ptp_updates: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LinkCounters {
    pub tx_frames: u64,
    pub dropped_down: u64,
    pub corrupted: u64,
}

/// One granted transmission.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct TxRecord {
    pub node: NodeId,
    pub port: usize,
    /// Data queue index, or `None` for the management queue.
    pub queue: Option<usize>,
    /// Local time of the grant and the end of the port's occupancy.
    pub grant_local: i64,
    pub end_local: i64,
    pub grant: SimTime,
    pub tx_start: SimTime,
    pub tx_end: SimTime,
    pub flow: Option<u32>,
    pub seq: u64,
}

/// Route of one delivered flow frame.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RouteRecord {
    pub flow: u32,
    pub seq: u64,
    pub hops: Vec<(NodeId, usize)>,
}

pub(crate) struct PortState {
    pub(crate) nic: NicPort,
    tx_until: SimTime,
    generation: u64,
}

pub(crate) struct Node {
    pub(crate) id: NodeId,
    pub(crate) clock: LocalClock,
    pub(crate) ports: Vec<Option<PortState>>,
    fetch_free: SimTime,
    /// Host frames waiting for room in a NIC queue, by `(port, queue)`.
    backlog: BTreeMap<(usize, usize), VecDeque<Frame>>,
    pub(crate) counters: NodeCounters,
    ptp: ptp::PtpNode,
    pub(crate) reassembly: Reassembly,
    pub(crate) inbox: VecDeque<Message>,
    pub(crate) next_msg_id: BTreeMap<u32, u32>,
}

pub(crate) struct Arrival {
    node: usize,
    port: usize,
    link: LinkId,
    tx_start: SimTime,
    wire: Bytes,
    meta: FrameMeta,
}

pub(crate) enum Action {
    PortWake {
        node: usize,
        port: usize,
        generation: u64,
    },
    Arrive(Box<Arrival>),
    HostDeliver {
        node: usize,
        frame: Box<Frame>,
    },
    FlowStart(usize),
    FlowTick(usize),
    PtpRound {
        slave: usize,
        round: u32,
    },
    ReassemblyExpire {
        node: usize,
    },
    RecvTimeout {
        ticket: u64,
    },
}

pub struct Network {
    pub topo: Topology,
    pub(crate) nodes: Vec<Node>,
    pub(crate) events: EventQueue<Action>,
    pub(crate) cfg: NetConfig,
    pub(crate) flows: Vec<(FlowSpec, FlowStats)>,
    flow_src: Vec<usize>,
    link_rngs: Vec<ChaCha8Rng>,
    pub link_counters: Vec<LinkCounters>,
    pub tx_trace: Vec<TxRecord>,
    pub route_trace: Vec<RouteRecord>,
    pub(crate) reassembly_timeout_ns: u64,
    pub(crate) tickets: BTreeMap<u64, crate::runtime::Ticket>,
    pub(crate) next_ticket: u64,
    grandmaster: usize,
}

/// Port occupancy of one frame: fetch wait, then the longer of wire
/// serialization and the host fetch. Returns `(hold, fetch_end)` in true ns
/// from the grant.
fn hold_ns(f: &Frame, rate_bps: u64, cap: Option<u64>, fetch_wait: u64) -> (u64, u64) {
    let wire = serialization_ns(f.wire_len(), rate_bps);
    match cap {
        Some(cap) if f.meta.host_origin => {
            let fetch =
                ((f.meta.app_bytes as u128 * 8 * 1_000_000_000).div_ceil(cap as u128)) as u64;
            (fetch_wait + wire.max(fetch), fetch_wait + fetch)
        }
        _ => (wire, 0),
    }
}

impl Network {
    pub fn new(topo: Topology, cfg: NetConfig) -> Self {
        let rngs = RngStreams::new(cfg.seed);
        let mut drift_rng = rngs.stream(streams::CLOCK_DRIFT);
        let mut offset_rng = rngs.stream(streams::CLOCK_OFFSET);
        let q = cfg.ptp.quantization_ns;
        let nodes: Vec<Node> = topo
            .nodes
            .iter()
            .map(|info| {
                let drawn = if cfg.ptp.max_drift_ppm > 0.0 {
                    drift_rng.gen_range(-cfg.ptp.max_drift_ppm..=cfg.ptp.max_drift_ppm)
                } else {
                    0.0
                };
                let drift = cfg
                    .ptp
                    .drift
                    .iter()
                    .find(|d| d.node == info.id)
                    .map_or(drawn, |d| d.ppm);
                let bound = cfg.ptp.max_initial_offset_ns as f64;
                let offset = if bound > 0.0 {
                    offset_rng.gen_range(-bound..=bound)
                } else {
                    0.0
                };
                let ports = (0..PORTS_PER_NODE)
                    .map(|p| {
                        let port = &info.ports[p];
                        let link = port.link?;
                        Some(PortState {
                            nic: NicPort::new(cfg.nic, topo.link(link).params.rate_bps),
                            tx_until: SimTime::ZERO,
                            generation: 0,
                        })
                    })
                    .collect();
                Node {
                    id: info.id,
                    clock: LocalClock::new(drift, q).with_initial_offset(offset),
                    ports,
                    fetch_free: SimTime::ZERO,
                    backlog: BTreeMap::new(),
                    counters: NodeCounters::default(),
                    ptp: ptp::PtpNode::default(),
                    reassembly: Reassembly::default(),
                    inbox: VecDeque::new(),
                    next_msg_id: BTreeMap::new(),
                }
            })
            .collect();
        let link_rngs = (0..topo.links.len())
            .map(|l| rngs.stream(streams::LINK_ERRORS + l as u64))
            .collect();
        let link_counters = vec![LinkCounters::default(); topo.links.len()];
        let grandmaster = ptp::default_grandmaster(&topo, cfg.ptp.grandmaster);
        let mut net = Network {
            topo,
            nodes,
            events: EventQueue::new(),
            cfg,
            flows: Vec::new(),
            flow_src: Vec::new(),
            link_rngs,
            link_counters,
            tx_trace: Vec::new(),
            route_trace: Vec::new(),
            reassembly_timeout_ns: DEFAULT_REASSEMBLY_TIMEOUT_NS,
            tickets: BTreeMap::new(),
            next_ticket: 0,
            grandmaster,
        };
        if net.cfg.ptp.enabled {
            net.start_ptp();
        }
        net
    }

    pub fn now(&self) -> SimTime {
        self.events.now()
    }

    pub fn enable_trace_hash(&mut self) {
        self.events.enable_trace_hash();
    }

    pub fn trace_hash(&self) -> Option<String> {
        self.events.trace_hash()
    }

    pub fn node_index(&self, id: NodeId) -> Option<usize> {
        self.topo.node_index(id)
    }

    pub fn clock(&self, node: usize) -> &LocalClock {
        &self.nodes[node].clock
    }

    pub fn counters(&self, node: usize) -> &NodeCounters {
        &self.nodes[node].counters
    }

    pub fn reassembly(&self, node: usize) -> &Reassembly {
        &self.nodes[node].reassembly
    }

    pub fn port(&self, node: usize, port: usize) -> Option<&NicPort> {
        self.nodes[node].ports.get(port)?.as_ref().map(|p| &p.nic)
    }

    pub fn port_counters(
        &self,
        node: usize,
        port: usize,
    ) -> Option<(&[QueueCounters], &QueueCounters)> {
        self.port(node, port)
            .map(|p| (p.counters.as_slice(), &p.mgmt_counters))
    }

    pub fn grandmaster(&self) -> usize {
        self.grandmaster
    }

    /// Register a flow; its source starts at `spec.start_ns`.
    pub fn add_flow(&mut self, spec: FlowSpec) -> usize {
        let id = self.flows.len();
        let src = self.topo.node_index(spec.src).expect("flow source exists");
        let start = SimTime(spec.start_ns).max(self.now());
        self.events
            .schedule(start, Action::FlowStart(id))
            .expect("not in the past");
        self.flows.push((spec, FlowStats::default()));
        self.flow_src.push(src);
        id
    }

    pub fn flow(&self, id: usize) -> (&FlowSpec, &FlowStats) {
        let (s, st) = &self.flows[id];
        (s, st)
    }

    pub fn flow_count(&self) -> usize {
        self.flows.len()
    }

    /// Process every event due by `t_end`.
    pub fn run_until(&mut self, t_end: SimTime) -> RunStats {
        let before = self.events.processed();
        while let Some((t, action)) = self.events.pop_until(t_end) {
            self.handle(t, action);
        }
        let stats = self
            .events
            .run_until(t_end, |_, _, _| unreachable!("queue drained"));
        RunStats {
            events_processed: self.events.processed() - before,
            final_time: stats.final_time,
        }
    }

    /// Process the next pending event, whenever it is due. False when the
    /// queue is empty.
    pub fn step(&mut self) -> bool {
        match self.events.pop_until(SimTime(u64::MAX)) {
            Some((t, action)) => {
                self.handle(t, action);
                true
            }
            None => false,
        }
    }

    fn handle(&mut self, now: SimTime, action: Action) {
        match action {
            Action::PortWake {
                node,
                port,
                generation,
            } => {
                let current = self.nodes[node].ports[port].as_ref().map(|p| p.generation);
                if current == Some(generation) {
                    self.try_transmit(node, port);
                }
            }
            Action::Arrive(a) => self.arrive(now, *a),
            Action::HostDeliver { node, frame } => self.host_deliver(now, node, *frame),
            Action::FlowStart(f) => self.flow_start(now, f),
            Action::FlowTick(f) => self.flow_tick(now, f),
            Action::PtpRound { slave, round } => self.ptp_round(now, slave, round),
            Action::ReassemblyExpire { node } => {
                let n = self.nodes[node].reassembly.expire(now);
                self.nodes[node].counters.reassembly_expired += n;
            }
            Action::RecvTimeout { ticket } => self.recv_timeout(ticket),
        }
    }

    // ---- egress -------------------------------------------------------

    /// Re-evaluate an idle port after its queues or schedule changed.
    pub(crate) fn kick_port(&mut self, n: usize, p: usize) {
        let now = self.now();
        let Some(ps) = self.nodes[n].ports[p].as_mut() else {
            return;
        };
        if now < ps.tx_until {
            return;
        }
        ps.generation += 1;
        self.try_transmit(n, p);
    }

    fn schedule_wake(&mut self, n: usize, p: usize, at: SimTime) {
        let ps = self.nodes[n].ports[p].as_mut().expect("port exists");
        ps.generation += 1;
        let generation = ps.generation;
        self.events
            .schedule(
                at,
                Action::PortWake {
                    node: n,
                    port: p,
                    generation,
                },
            )
            .expect("wake is never in the past");
    }

    fn try_transmit(&mut self, n: usize, p: usize) {
        let now = self.now();
        let cap = self.cfg.host.injection_cap_bps;
        let Node {
            clock,
            ports,
            fetch_free,
            ..
        } = &mut self.nodes[n];
        let ps = ports[p].as_mut().expect("port exists");
        if now < ps.tx_until {
            return;
        }
        let local = clock.ns_at(now);
        let rate = ps.nic.rate_bps;
        let fetch_wait = fetch_free.saturating_sub(now);
        let occupancy = |f: &Frame| clock.local_span(hold_ns(f, rate, cap, fetch_wait).0) as i64;
        match ps.nic.scheduler_next(local, occupancy) {
            SchedDecision::Idle => {}
            SchedDecision::IdleUntil(until) => {
                let mut at = clock.true_time_of(until, now);
                if at <= now {
                    at = now + 1;
                }
                self.schedule_wake(n, p, at);
            }
            SchedDecision::Transmit(q) => {
                let head = ps
                    .nic
                    .queue_sel(q)
                    .head()
                    .expect("granted queue has a head");
                let (hold, fetch_end) = hold_ns(head, rate, cap, fetch_wait);
                let mut frame = ps.nic.dequeue(q, hold).expect("granted queue has a head");
                let wire_ns = serialization_ns(frame.wire_len(), rate);
                let tx_end = now + hold;
                let tx_start = now + (hold - wire_ns);
                if frame.meta.host_origin && cap.is_some() {
                    *fetch_free = now + fetch_end;
                }
                ps.tx_until = tx_end;
                frame.meta.tx_ts = clock.local_time(tx_start);
                if self.cfg.trace {
                    self.tx_trace.push(TxRecord {
                        node: self.nodes[n].id,
                        port: p,
                        queue: match q {
                            QueueSel::Data(i) => Some(i),
                            QueueSel::Mgmt => None,
                        },
                        grant_local: local,
                        end_local: local + self.nodes[n].clock.local_span(hold) as i64,
                        grant: now,
                        tx_start,
                        tx_end,
                        flow: frame.meta.flow,
                        seq: frame.meta.seq,
                    });
                }
                self.schedule_wake(n, p, tx_end);
                if frame.ethertype == ETHERTYPE_PTP {
                    self.ptp_on_transmit(n, &mut frame);
                }
                if frame.meta.host_origin {
                    if let QueueSel::Data(qi) = q {
                        self.pump(n, p, qi);
                    }
                    if let Some(f) = frame.meta.flow {
                        self.flow_dequeued(now, f as usize);
                    }
                }
                self.launch(n, p, frame, tx_start, tx_end);
            }
        }
    }

    fn launch(&mut self, n: usize, p: usize, mut frame: Frame, tx_start: SimTime, tx_end: SimTime) {
        let link_id = self.topo.node(n).ports[p]
            .link
            .expect("data port has a link");
        let from = PortRef { node: n, port: p };
        let link = self.topo.link(link_id);
        let to = link.other_end(from);
        let arrival = tx_end + link.delay_from(from);
        let error_rate = link.params.frame_error_rate;
        let mut wire = frame.to_wire();
        self.link_counters[link_id.0].tx_frames += 1;
        if error_rate > 0.0 && self.link_rngs[link_id.0].gen_bool(error_rate.min(1.0)) {
            let bit = self.link_rngs[link_id.0].gen_range(0..wire.len() * 8);
            let mut bad = wire.to_vec();
            bad[bit / 8] ^= 1 << (bit % 8);
            wire = Bytes::from(bad);
            self.link_counters[link_id.0].corrupted += 1;
        }
        let a = Arrival {
            node: to.node,
            port: to.port,
            link: link_id,
            tx_start,
            wire,
            meta: frame.meta,
        };
        self.events
            .schedule(arrival, Action::Arrive(Box::new(a)))
            .expect("arrival is in the future");
    }

    // ---- ingress ------------------------------------------------------

    fn arrive(&mut self, now: SimTime, a: Arrival) {
        let link = self.topo.link(a.link);
        if !link.up_throughout(a.tx_start, now) {
            self.link_counters[a.link.0].dropped_down += 1;
            self.nodes[a.node].counters.link_drops += 1;
            self.drop_frame(&a.meta, DropCause::LinkDown);
            return;
        }
        let ser = serialization_ns(a.wire.len(), link.params.rate_bps);
        let node = &mut self.nodes[a.node];
        let rx_ts = node.clock.local_time(SimTime(now.0.saturating_sub(ser)));
        node.counters.rx_frames += 1;
        let mac = self.topo.node(a.node).mac;
        match receive(&a.wire, mac, rx_ts) {
            RxDisposition::Drop(_) => {
                node.counters.rx_bad_crc += 1;
                self.drop_frame(&a.meta, DropCause::BadCrc);
            }
            RxDisposition::Forward(_) => {
                node.counters.misaddressed += 1;
                self.drop_frame(&a.meta, DropCause::NoRoute);
            }
            RxDisposition::Deliver(mut f) => {
                f.meta = FrameMeta {
                    rx_ts,
                    host_origin: false,
                    ..a.meta
                };
                match f.ethertype {
                    ETHERTYPE_PTP => self.ptp_receive(now, a.node, a.port, f),
                    ETHERTYPE_RUNTIME => self.runtime_receive(now, a.node, a.port, f),
                    _ => {
                        self.nodes[a.node].counters.malformed += 1;
                        self.drop_frame(&f.meta, DropCause::NoRoute);
                    }
                }
            }
        }
    }

    fn runtime_receive(&mut self, now: SimTime, n: usize, port: usize, f: Frame) {
        let Ok(h) = FragmentHeader::decode(&f.payload) else {
            self.nodes[n].counters.malformed += 1;
            self.drop_frame(&f.meta, DropCause::NoRoute);
            return;
        };
        let dst = crate::fabric::decode_id(h.dst_id);
        if dst == self.nodes[n].id {
            let at = now + self.cfg.host.processing_delay_ns;
            self.events
                .schedule(
                    at,
                    Action::HostDeliver {
                        node: n,
                        frame: Box::new(f),
                    },
                )
                .expect("future");
        } else {
            self.route(now, n, Some(port), dst, f, false);
        }
    }

    /// Pick an egress port and queue the frame there. Source frames go
    /// through the host backlog, transit frames straight to the NIC.
    fn route(
        &mut self,
        now: SimTime,
        n: usize,
        ingress: Option<usize>,
        dst: NodeId,
        mut f: Frame,
        backlog: bool,
    ) {
        match next_hop(&self.topo, n, dst, ingress, &mut f.meta.hop, now) {
            ForwardDecision::Local => {
                let at = now + self.cfg.host.processing_delay_ns;
                self.events
                    .schedule(
                        at,
                        Action::HostDeliver {
                            node: n,
                            frame: Box::new(f),
                        },
                    )
                    .expect("future");
            }
            ForwardDecision::Drop(reason) => self.route_drop(n, &f.meta, reason),
            ForwardDecision::Forward(p) => match forward_frame(&self.topo, n, p, &mut f) {
                Err(ForwardError::TtlExpired) => {
                    self.route_drop(n, &f.meta, DropReason::TtlExpired)
                }
                Err(ForwardError::NoPeer(_)) => self.route_drop(n, &f.meta, DropReason::NoRoute),
                Ok(()) => {
                    if ingress.is_some() {
                        self.nodes[n].counters.forwarded += 1;
                    }
                    let q = self.cfg.priority_map.classify(f.pcp);
                    if backlog {
                        self.nodes[n]
                            .backlog
                            .entry((p, q))
                            .or_default()
                            .push_back(f);
                        self.pump(n, p, q);
                    } else {
                        self.enqueue(n, p, f);
                    }
                }
            },
        }
    }

    fn route_drop(&mut self, n: usize, meta: &FrameMeta, reason: DropReason) {
        match reason {
            DropReason::NoRoute => {
                self.nodes[n].counters.no_route += 1;
                self.drop_frame(meta, DropCause::NoRoute);
            }
            DropReason::TtlExpired => {
                self.nodes[n].counters.ttl_expired += 1;
                self.drop_frame(meta, DropCause::TtlExpired);
            }
        }
    }

    /// Tail-drop enqueue on a data queue.
    fn enqueue(&mut self, n: usize, p: usize, f: Frame) {
        let local = self.nodes[n].clock.local_time(self.now());
        let map = &self.cfg.priority_map;
        let ps = self.nodes[n].ports[p]
            .as_mut()
            .expect("forwarding port exists");
        match ps.nic.classify_and_enqueue(f, map, local) {
            Ok(_) => self.kick_port(n, p),
            Err(full) => {
                self.nodes[n].counters.queue_drops += 1;
                self.drop_frame(&full.frame.meta, DropCause::QueueFull);
            }
        }
    }

    fn enqueue_mgmt(&mut self, n: usize, p: usize, f: Frame) {
        let local = self.nodes[n].clock.local_time(self.now());
        let Some(ps) = self.nodes[n].ports[p].as_mut() else {
            return;
        };
        if ps.nic.enqueue_mgmt(f, local).is_ok() {
            self.kick_port(n, p);
        } else {
            self.nodes[n].counters.queue_drops += 1;
        }
    }

    /// Move host frames into the NIC queue while it has room.
    fn pump(&mut self, n: usize, p: usize, q: usize) {
        let local = self.nodes[n].clock.local_time(self.now());
        let map = &self.cfg.priority_map;
        let node = &mut self.nodes[n];
        let Some(backlog) = node.backlog.get_mut(&(p, q)) else {
            return;
        };
        let ps = node.ports[p].as_mut().expect("source port exists");
        let mut moved = false;
        while ps.nic.queue(q).len() < ps.nic.queue(q).depth_limit {
            let Some(f) = backlog.pop_front() else { break };
            ps.nic
                .classify_and_enqueue(f, map, local)
                .expect("room was checked");
            moved = true;
        }
        if moved {
            self.kick_port(n, p);
        }
    }

    fn drop_frame(&mut self, meta: &FrameMeta, cause: DropCause) {
        if let Some(f) = meta.flow {
            self.flows[f as usize].1.drops.record(cause);
        }
    }

    fn host_deliver(&mut self, now: SimTime, n: usize, f: Frame) {
        self.nodes[n].counters.delivered += 1;
        if let Some(fi) = f.meta.flow {
            let latency = self.nodes[n].clock.local_time(now) - f.meta.origin_ts;
            let stats = &mut self.flows[fi as usize].1;
            stats.delivered_frames += 1;
            stats.delivered_bytes += f.meta.app_bytes as u64;
            stats.samples.push(Sample {
                seq: f.meta.seq,
                sent: f.meta.origin_true,
                delivered: now,
                latency_ns: latency,
                hops: f.meta.hop.hops,
            });
            if let Some(hops) = f.meta.route {
                self.route_trace.push(RouteRecord {
                    flow: fi,
                    seq: f.meta.seq,
                    hops,
                });
            }
            return;
        }
        self.runtime_deliver(now, n, f);
    }

    // ---- traffic sources ----------------------------------------------

    fn flow_start(&mut self, now: SimTime, f: usize) {
        let spec = &self.flows[f].0;
        if now.0 >= spec.stop_ns {
            return;
        }
        if spec.backlogged {
            for _ in 0..BACKLOG_FRAMES {
                self.generate(now, f);
            }
        } else if let Some(gap) = spec.frame_interval_ns() {
            self.generate(now, f);
            if now.0 + gap < self.flows[f].0.stop_ns {
                self.events.schedule_in(gap, Action::FlowTick(f));
            }
        }
    }

    fn flow_tick(&mut self, now: SimTime, f: usize) {
        self.generate(now, f);
        let gap = self.flows[f]
            .0
            .frame_interval_ns()
            .expect("rate-driven flow");
        if now.0 + gap < self.flows[f].0.stop_ns {
            self.events.schedule_in(gap, Action::FlowTick(f));
        }
    }

    fn flow_dequeued(&mut self, now: SimTime, f: usize) {
        let (spec, stats) = &mut self.flows[f];
        stats.queued_at_source = stats.queued_at_source.saturating_sub(1);
        if spec.backlogged && now.0 < spec.stop_ns {
            self.generate(now, f);
        }
    }

    fn generate(&mut self, now: SimTime, f: usize) {
        let n = self.flow_src[f];
        let (spec, stats) = &mut self.flows[f];
        let seq = stats.next_seq;
        stats.next_seq += 1;
        stats.offered_frames += 1;
        stats.offered_bytes += spec.frame_payload_bytes as u64;
        stats.queued_at_source += 1;
        let src_id = spec.src.encode().expect("validated");
        let dst_id = spec.dst.encode().expect("validated");
        let h = FragmentHeader {
            msg_id: seq as u32,
            frag_index: 0,
            frag_count: 1,
            total_len: spec.frame_payload_bytes,
            src_id,
            dst_id,
        };
        let mut payload =
            vec![0u8; crate::runtime::FRAGMENT_HEADER_LEN + spec.frame_payload_bytes as usize];
        payload[..crate::runtime::FRAGMENT_HEADER_LEN].copy_from_slice(&h.encode());
        let (dst, pcp, app) = (spec.dst, spec.pcp, spec.frame_payload_bytes);
        let backlog = spec.backlogged;
        let frame = self.host_frame(now, n, dst, pcp, &payload, app, Some((f as u32, seq)));
        self.route(now, n, None, dst, frame, backlog);
    }

    /// A runtime frame originated by node `n`'s host.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn host_frame(
        &self,
        now: SimTime,
        n: usize,
        dst: NodeId,
        pcp: u8,
        payload: &[u8],
        app_bytes: u32,
        flow: Option<(u32, u64)>,
    ) -> Frame {
        let dst_mac = self
            .topo
            .node(self.topo.node_index(dst).expect("validated"))
            .mac;
        let mut f = Frame::new(
            dst_mac,
            self.topo.node(n).mac,
            pcp,
            ETHERTYPE_RUNTIME,
            payload,
        )
        .expect("sized payload");
        f.meta.origin_ts = self.nodes[n].clock.local_time(now);
        f.meta.origin_true = now;
        f.meta.host_origin = true;
        f.meta.app_bytes = app_bytes;
        f.meta.src = Some(self.nodes[n].id);
        f.meta.dst = Some(dst);
        if let Some((flow, seq)) = flow {
            f.meta.flow = Some(flow);
            f.meta.seq = seq;
        }
        if self.cfg.trace {
            f.meta.route = Some(Vec::new());
        }
        f
    }

    pub(crate) fn route_from_host(&mut self, n: usize, dst: NodeId, f: Frame) {
        let now = self.now();
        self.route(now, n, None, dst, f, true);
    }

    // ---- accounting -----------------------------------------------------

    /// Frames of each flow still inside the system: source backlog, NIC
    /// queues, links and host delivery.
    pub fn in_flight(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.flows.len()];
        let mut count = |meta: &FrameMeta| {
            if let Some(f) = meta.flow {
                counts[f as usize] += 1;
            }
        };
        for node in &self.nodes {
            for q in node.backlog.values() {
                q.iter().for_each(|f| count(&f.meta));
            }
            for ps in node.ports.iter().flatten() {
                ps.nic.frames().for_each(|f| count(&f.meta));
            }
        }
        for a in self.events.pending_actions() {
            match a {
                Action::Arrive(a) => count(&a.meta),
                Action::HostDeliver { frame, .. } => count(&frame.meta),
                _ => {}
            }
        }
        counts
    }

    /// True when no frame that could reach a host is queued or in transit.
    pub(crate) fn quiescent(&self) -> bool {
        let busy = self.nodes.iter().any(|n| {
            n.backlog.values().any(|q| !q.is_empty())
                || n.ports
                    .iter()
                    .flatten()
                    .any(|p| (0..p.nic.num_queues()).any(|q| !p.nic.queue(q).is_empty()))
        });
        !busy
            && !self.events.pending_actions().any(|a| {
                matches!(
                    a,
                    Action::Arrive(_)
                        | Action::HostDeliver { .. }
                        | Action::FlowStart(_)
                        | Action::FlowTick(_)
                )
            })
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().map(|n| n.id)
    }

    pub fn data_ports(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        DATA_PORTS
            .into_iter()
            .filter(move |&p| self.nodes[node].ports[p].is_some())
    }
}
