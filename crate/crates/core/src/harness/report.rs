use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::scenario::{PortName, Scenario, ScenarioError};
use crate::fabric::{LinkState, NodeId};
use crate::net::{ClockOffset, LinkCounters, NetConfig, Network, NodeCounters};
use crate::nic::QueueCounters;
use crate::sim::SimTime;
use crate::traffic::{DropCounts, FlowMetrics};

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Totals {
    pub offered_frames: u64,
    pub delivered_frames: u64,
    pub dropped_frames: u64,
    pub in_flight_frames: u64,
    pub drops: DropCounts,
    /// Offered = delivered + dropped + in flight, for every flow and overall.
    pub conserved: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PortReport {
    pub port: PortName,
    pub queues: Vec<QueueCounters>,
    pub mgmt: QueueCounters,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NodeReport {
    pub node: NodeId,
    pub counters: NodeCounters,
    pub ports: Vec<PortReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LinkReport {
    pub a: (NodeId, PortName),
    pub b: (NodeId, PortName),
    pub state_at_end: LinkState,
    pub counters: LinkCounters,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SlaveSync {
    pub node: NodeId,
    pub depth: u32,
    pub max_abs_to_parent_ns: i64,
    pub max_abs_to_grandmaster_ns: i64,
}

/// Clock offsets sampled after convergence.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PtpSummary {
    pub grandmaster: NodeId,
    pub depth: u32,
    pub converged_at_ns: u64,
    pub samples: u64,
    pub max_abs_to_parent_ns: i64,
    pub max_abs_to_grandmaster_ns: i64,
    pub slaves: Vec<SlaveSync>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub digest: String,
    pub seed: u64,
    pub duration_ns: u64,
    pub flows: Vec<FlowMetrics>,
    pub totals: Totals,
    pub ptp: Option<PtpSummary>,
    pub nodes: Vec<NodeReport>,
    pub links: Vec<LinkReport>,
}

/// A finished run: the report plus the network, for traces and inspection.
pub struct Run {
    pub report: Report,
    pub network: Network,
}

/// Build the fabric, program the schedules, run to `duration_ns` and
/// summarize.
pub fn run_scenario(s: &Scenario) -> Report {
    run(s, false).report
}

pub fn run(s: &Scenario, trace: bool) -> Run {
    let mut topo = s.topology().expect("validated scenario");
    for f in &s.faults {
        let link = topo
            .link_at(f.node, f.port.index())
            .expect("validated fault");
        topo.set_link_state(link, f.state, SimTime(f.at_ns));
    }
    let cfg = NetConfig {
        nic: s.nic,
        priority_map: s.priority_map.clone(),
        host: s.host,
        ptp: s.ptp.clone(),
        seed: s.seed,
        trace,
    };
    let mut net = Network::new(topo, cfg);
    for sched in &s.schedules {
        let link = net
            .topo
            .link_at(sched.node, sched.port.index())
            .expect("validated schedule");
        let table = sched.table(net.topo.link(link).params.rate_bps);
        net.set_conf(sched.node, sched.port.index(), &table)
            .expect("validated schedule");
    }
    for f in &s.flows {
        net.add_flow(f.clone());
    }

    let end = SimTime(s.duration_ns);
    let sampled = s.ptp.enabled && s.ptp.sample_interval_ns > 0 && net.ptp_depth() > 0;
    let ptp = if sampled && net.ptp_converged_at() <= end {
        Some(sample_ptp(&mut net, end, s.ptp.sample_interval_ns))
    } else {
        None
    };
    net.run_until(end);

    let report = Report {
        digest: s.digest(),
        seed: s.seed,
        duration_ns: s.duration_ns,
        flows: Vec::new(),
        totals: Totals::default(),
        ptp,
        nodes: node_reports(&net),
        links: link_reports(&net, end),
    };
    let report = with_flows(report, &net, s.duration_ns);
    Run {
        report,
        network: net,
    }
}

fn sample_ptp(net: &mut Network, end: SimTime, every: u64) -> PtpSummary {
    let start = net.ptp_converged_at();
    let mut worst: Vec<SlaveSync> = Vec::new();
    let mut samples = 0;
    let mut t = start;
    while t <= end {
        net.run_until(t);
        samples += 1;
        for ClockOffset {
            node,
            depth,
            to_parent,
            to_grandmaster,
        } in net.clock_offsets()
        {
            let i = match worst.iter().position(|w| w.node == node) {
                Some(i) => i,
                None => {
                    worst.push(SlaveSync {
                        node,
                        depth,
                        max_abs_to_parent_ns: 0,
                        max_abs_to_grandmaster_ns: 0,
                    });
                    worst.len() - 1
                }
            };
            let w = &mut worst[i];
            w.max_abs_to_parent_ns = w.max_abs_to_parent_ns.max(to_parent.abs());
            w.max_abs_to_grandmaster_ns = w.max_abs_to_grandmaster_ns.max(to_grandmaster.abs());
        }
        t = t + every;
    }
    worst.sort_by_key(|w| w.node);
    PtpSummary {
        grandmaster: net.topo.node(net.grandmaster()).id,
        depth: net.ptp_depth(),
        converged_at_ns: start.0,
        samples,
        max_abs_to_parent_ns: worst
            .iter()
            .map(|w| w.max_abs_to_parent_ns)
            .max()
            .unwrap_or(0),
        max_abs_to_grandmaster_ns: worst
            .iter()
            .map(|w| w.max_abs_to_grandmaster_ns)
            .max()
            .unwrap_or(0),
        slaves: worst,
    }
}

fn with_flows(mut r: Report, net: &Network, duration_ns: u64) -> Report {
    let in_flight = net.in_flight();
    let mut totals = Totals {
        conserved: true,
        ..Totals::default()
    };
    for (i, &inf) in in_flight.iter().enumerate() {
        let (spec, stats) = net.flow(i);
        let m = stats.metrics(i, spec, inf, duration_ns);
        let dropped = m.drops.total();
        totals.conserved &= m.offered_frames == m.delivered_frames + dropped + inf;
        totals.offered_frames += m.offered_frames;
        totals.delivered_frames += m.delivered_frames;
        totals.dropped_frames += dropped;
        totals.in_flight_frames += inf;
        totals.drops.add(&m.drops);
        r.flows.push(m);
    }
    totals.conserved &= totals.offered_frames
        == totals.delivered_frames + totals.dropped_frames + totals.in_flight_frames;
    r.totals = totals;
    r
}

fn node_reports(net: &Network) -> Vec<NodeReport> {
    (0..net.topo.node_count())
        .map(|n| NodeReport {
            node: net.topo.node(n).id,
            counters: *net.counters(n),
            ports: net
                .data_ports(n)
                .filter_map(|p| {
                    let (queues, mgmt) = net.port_counters(n, p)?;
                    Some(PortReport {
                        port: PortName::from_index(p)?,
                        queues: queues.to_vec(),
                        mgmt: mgmt.clone(),
                    })
                })
                .collect(),
        })
        .collect()
}

fn link_reports(net: &Network, end: SimTime) -> Vec<LinkReport> {
    let end_of = |p: crate::fabric::PortRef| {
        (
            net.topo.node(p.node).id,
            PortName::from_index(p.port).expect("links join data ports"),
        )
    };
    net.topo
        .links
        .iter()
        .zip(&net.link_counters)
        .map(|(l, c)| LinkReport {
            a: end_of(l.a),
            b: end_of(l.b),
            state_at_end: l.state_at(end),
            counters: *c,
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

/// One CSV row.
#[derive(Serialize)]
struct FlowRow {
    flow: usize,
    src: String,
    dst: String,
    pcp: u8,
    offered_frames: u64,
    delivered_frames: u64,
    in_flight: u64,
    bytes_offered: u64,
    bytes_delivered: u64,
    goodput_bps: f64,
    latency_mean_ns: f64,
    latency_p50_ns: i64,
    latency_p99_ns: i64,
    latency_min_ns: i64,
    latency_max_ns: i64,
    jitter_ns: f64,
    hops_mean: f64,
    drops_queue_full: u64,
    drops_link_down: u64,
    drops_bad_crc: u64,
    drops_ttl_expired: u64,
    drops_no_route: u64,
}

impl From<&FlowMetrics> for FlowRow {
    fn from(m: &FlowMetrics) -> Self {
        FlowRow {
            flow: m.flow,
            src: m.src.to_string(),
            dst: m.dst.to_string(),
            pcp: m.pcp,
            offered_frames: m.offered_frames,
            delivered_frames: m.delivered_frames,
            in_flight: m.in_flight,
            bytes_offered: m.bytes_offered,
            bytes_delivered: m.bytes_delivered,
            goodput_bps: m.goodput_bps,
            latency_mean_ns: m.latency_ns.mean,
            latency_p50_ns: m.latency_ns.p50,
            latency_p99_ns: m.latency_ns.p99,
            latency_min_ns: m.latency_ns.min,
            latency_max_ns: m.latency_ns.max,
            jitter_ns: m.jitter_ns,
            hops_mean: m.hops_mean,
            drops_queue_full: m.drops.queue_full,
            drops_link_down: m.drops.link_down,
            drops_bad_crc: m.drops.bad_crc,
            drops_ttl_expired: m.drops.ttl_expired,
            drops_no_route: m.drops.no_route,
        }
    }
}

/// Header of `flows.csv`.
pub const CSV_HEADER: &str = "flow,src,dst,pcp,offered_frames,delivered_frames,in_flight,bytes_offered,\
bytes_delivered,goodput_bps,latency_mean_ns,latency_p50_ns,latency_p99_ns,latency_min_ns,latency_max_ns,\
jitter_ns,hops_mean,drops_queue_full,drops_link_down,drops_bad_crc,drops_ttl_expired,drops_no_route";

pub fn report_json(r: &Report) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(r).expect("report serializes");
    out.push(b'\n');
    out
}

pub fn report_csv(r: &Report) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if r.flows.is_empty() {
        w.write_record(CSV_HEADER.split(','))
            .expect("in-memory write");
    }
    for m in &r.flows {
        w.serialize(FlowRow::from(m)).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf, ScenarioError> {
    let path = dir.join(name);
    std::fs::write(&path, bytes).map_err(|source| ScenarioError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

/// Write `report.json` or `flows.csv` into `out`, creating it if needed.
pub fn emit_report(r: &Report, format: Format, out: &Path) -> Result<PathBuf, ScenarioError> {
    std::fs::create_dir_all(out).map_err(|source| ScenarioError::Io {
        path: out.into(),
        source,
    })?;
    match format {
        Format::Json => write(out, "report.json", &report_json(r)),
        Format::Csv => write(out, "flows.csv", &report_csv(r)),
    }
}

/// Write `tx_trace.csv` and `routes.json` from a traced run.
pub fn emit_traces(net: &Network, out: &Path) -> Result<Vec<PathBuf>, ScenarioError> {
    std::fs::create_dir_all(out).map_err(|source| ScenarioError::Io {
        path: out.into(),
        source,
    })?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "node",
        "port",
        "queue",
        "grant_local",
        "end_local",
        "grant_ns",
        "tx_start_ns",
        "tx_end_ns",
        "flow",
        "seq",
    ])
    .expect("in-memory write");
    for t in &net.tx_trace {
        let port = PortName::from_index(t.port).map_or("mgmt", PortName::as_str);
        let queue = t
            .queue
            .map_or_else(|| "mgmt".to_string(), |q| q.to_string());
        let flow = t.flow.map_or_else(String::new, |f| f.to_string());
        w.write_record([
            t.node.to_string(),
            port.to_string(),
            queue,
            t.grant_local.to_string(),
            t.end_local.to_string(),
            t.grant.0.to_string(),
            t.tx_start.0.to_string(),
            t.tx_end.0.to_string(),
            flow,
            t.seq.to_string(),
        ])
        .expect("in-memory write");
    }
    let tx = write(
        out,
        "tx_trace.csv",
        &w.into_inner().expect("in-memory flush"),
    )?;
    let mut routes = serde_json::to_vec_pretty(&net.route_trace).expect("routes serialize");
    routes.push(b'\n');
    let rt = write(out, "routes.json", &routes)?;
    Ok(vec![tx, rt])
}
