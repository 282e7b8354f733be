use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::fabric::{
    Layout, LinkParams, LinkState, NodeId, Topology, TopologyError, PORT_EXTERNAL, PORT_INTRA_H,
    PORT_INTRA_V,
};
use crate::net::{HostConfig, PtpConfig};
use crate::nic::{
    default_guardband_ns, NicConfig, ScheduleEntry, ScheduleError, ScheduleTable, MAX_PAYLOAD,
};
use crate::qdisc::{MapError, PriorityMap};
use crate::runtime::FRAGMENT_HEADER_LEN;
use crate::traffic::FlowSpec;

/// Largest drift a scenario may assign to a clock.
pub const MAX_DRIFT_PPM: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    #[serde(rename = "G_r", alias = "g_r")]
    pub g_r: u32,
    #[serde(rename = "G_c", alias = "g_c")]
    pub g_c: u32,
}

impl Default for Grid {
    fn default() -> Self {
        Grid { g_r: 1, g_c: 1 }
    }
}

/// A node's data port, by role.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PortName {
    IntraH,
    IntraV,
    External,
}

impl PortName {
    pub fn index(self) -> usize {
        match self {
            PortName::IntraH => PORT_INTRA_H,
            PortName::IntraV => PORT_INTRA_V,
            PortName::External => PORT_EXTERNAL,
        }
    }

    pub fn from_index(p: usize) -> Option<Self> {
        match p {
            PORT_INTRA_H => Some(PortName::IntraH),
            PORT_INTRA_V => Some(PortName::IntraV),
            PORT_EXTERNAL => Some(PortName::External),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PortName::IntraH => "intra_h",
            PortName::IntraV => "intra_v",
            PortName::External => "external",
        }
    }
}

/// Schedule for one egress port. Without `guardband_ns` the port uses one
/// maximum-size frame time at its link rate.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortSchedule {
    pub node: NodeId,
    pub port: PortName,
    pub window_us: u32,
    #[serde(default)]
    pub entries: Vec<ScheduleEntry>,
    #[serde(default)]
    pub guardband_ns: Option<u32>,
}

impl PortSchedule {
    pub fn table(&self, rate_bps: u64) -> ScheduleTable {
        ScheduleTable {
            window_us: self.window_us,
            entries: self.entries.clone(),
            guardband_ns: self
                .guardband_ns
                .unwrap_or_else(|| default_guardband_ns(rate_bps)),
        }
    }
}

/// Link state change on the link attached to `(node, port)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fault {
    pub node: NodeId,
    pub port: PortName,
    pub at_ns: u64,
    pub state: LinkState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub grid: Grid,
    pub layout: Layout,
    pub link_defaults: LinkParams,
    pub host: HostConfig,
    pub ptp: PtpConfig,
    pub nic: NicConfig,
    pub priority_map: PriorityMap,
    pub schedules: Vec<PortSchedule>,
    pub faults: Vec<Fault>,
    pub flows: Vec<FlowSpec>,
    pub duration_ns: u64,
    pub seed: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            grid: Grid::default(),
            layout: Layout::default(),
            link_defaults: LinkParams::default(),
            host: HostConfig::default(),
            ptp: PtpConfig::default(),
            nic: NicConfig::default(),
            priority_map: PriorityMap::default(),
            schedules: Vec::new(),
            faults: Vec::new(),
            flows: Vec::new(),
            duration_ns: 100_000_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("link_defaults: {0}")]
    Link(String),
    #[error("nic: {0}")]
    Nic(String),
    #[error("priority_map: {}", join(.0))]
    PriorityMap(Vec<MapError>),
    #[error("schedules[{index}] ({node} {port}): {reason}")]
    Schedule {
        index: usize,
        node: NodeId,
        port: &'static str,
        reason: String,
    },
    #[error("faults[{index}]: {reason}")]
    Fault { index: usize, reason: String },
    #[error("flows[{index}]: {reason}")]
    Flow { index: usize, reason: String },
    #[error("ptp: {0}")]
    Ptp(String),
    #[error("duration_ns must be positive")]
    Duration,
}

impl ScenarioError {
    /// Process exit status for this error: 2 for I/O, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            ScenarioError::Io { .. } => 2,
            _ => 1,
        }
    }
}

fn join(errs: &[MapError]) -> String {
    errs.iter()
        .map(|e| e.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// Read, parse and validate a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.into(),
        source,
    })?;
    parse_scenario(&text)
}

/// Parse and validate scenario JSON.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let s: Scenario = serde_path_to_error::deserialize(de).map_err(|e| ScenarioError::Parse {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    s.validate()?;
    Ok(s)
}

impl Scenario {
    pub fn topology(&self) -> Result<Topology, TopologyError> {
        Topology::build(
            self.grid.g_r,
            self.grid.g_c,
            self.layout,
            self.link_defaults,
        )
    }

    /// Hex SHA-256 of the canonical JSON encoding, seed included.
    pub fn digest(&self) -> String {
        let canon = serde_json::to_vec(self).expect("scenario serializes");
        crate::hex(&Sha256::digest(canon))
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.duration_ns == 0 {
            return Err(ScenarioError::Duration);
        }
        if self.link_defaults.rate_bps == 0 {
            return Err(ScenarioError::Link("rate_bps must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.link_defaults.frame_error_rate) {
            return Err(ScenarioError::Link(
                "frame_error_rate must lie in [0, 1]".into(),
            ));
        }
        let topo = self.topology()?;
        self.validate_nic()?;
        self.validate_schedules(&topo)?;
        self.validate_faults(&topo)?;
        self.validate_flows(&topo)?;
        self.validate_ptp(&topo)
    }

    fn validate_nic(&self) -> Result<(), ScenarioError> {
        let nic = &self.nic;
        if nic.num_queues == 0 || nic.num_queues > 8 {
            return Err(ScenarioError::Nic(format!(
                "num_queues must be 1..=8, got {}",
                nic.num_queues
            )));
        }
        if nic.time_aware_queues > nic.num_queues {
            return Err(ScenarioError::Nic(format!(
                "time_aware_queues {} exceeds num_queues {}",
                nic.time_aware_queues, nic.num_queues
            )));
        }
        if nic.queue_depth == 0 {
            return Err(ScenarioError::Nic("queue_depth must be positive".into()));
        }
        self.priority_map
            .validate(nic.layout())
            .map_err(ScenarioError::PriorityMap)
    }

    fn validate_schedules(&self, topo: &Topology) -> Result<(), ScenarioError> {
        let mut seen = std::collections::BTreeSet::new();
        for (index, s) in self.schedules.iter().enumerate() {
            let err = |reason: String| ScenarioError::Schedule {
                index,
                node: s.node,
                port: s.port.as_str(),
                reason,
            };
            let link = port_link(topo, s.node, s.port).map_err(err)?;
            if !seen.insert((s.node, s.port)) {
                return Err(err("port already has a schedule".into()));
            }
            let table = s.table(topo.link(link).params.rate_bps);
            table
                .validate(self.nic.num_queues)
                .map_err(|e: ScheduleError| err(e.to_string()))?;
            if let Some(e) = table
                .entries
                .iter()
                .find(|e| e.queue_idx as usize >= self.nic.time_aware_queues)
            {
                return Err(err(format!(
                    "queue {} is not in the time-aware group",
                    e.queue_idx
                )));
            }
        }
        Ok(())
    }

    fn validate_faults(&self, topo: &Topology) -> Result<(), ScenarioError> {
        for (index, f) in self.faults.iter().enumerate() {
            let err = |reason: String| ScenarioError::Fault { index, reason };
            port_link(topo, f.node, f.port).map_err(err)?;
            if f.at_ns > self.duration_ns {
                return Err(err(format!(
                    "at_ns {} is after duration_ns {}",
                    f.at_ns, self.duration_ns
                )));
            }
        }
        Ok(())
    }

    fn validate_flows(&self, topo: &Topology) -> Result<(), ScenarioError> {
        let max_payload = (MAX_PAYLOAD - FRAGMENT_HEADER_LEN) as u32;
        for (index, f) in self.flows.iter().enumerate() {
            let err = |reason: String| ScenarioError::Flow { index, reason };
            for (what, id) in [("src", f.src), ("dst", f.dst)] {
                if topo.node_index(id).is_none() {
                    return Err(err(format!("{what} {id} is not in the topology")));
                }
            }
            if f.src == f.dst {
                return Err(err(format!("src and dst are both {}", f.src)));
            }
            if f.pcp > 7 {
                return Err(err(format!("pcp {} does not fit 3 bits", f.pcp)));
            }
            if f.start_ns >= f.stop_ns || f.stop_ns > self.duration_ns {
                return Err(err(format!(
                    "start_ns {} and stop_ns {} must satisfy start < stop <= duration_ns {}",
                    f.start_ns, f.stop_ns, self.duration_ns
                )));
            }
            match (f.backlogged, f.offered_rate_bps) {
                (true, Some(_)) => {
                    return Err(err("backlogged flows take no offered_rate_bps".into()))
                }
                (false, None | Some(0)) => {
                    return Err(err("needs offered_rate_bps > 0 or backlogged".into()))
                }
                _ => {}
            }
            if f.frame_payload_bytes == 0 || f.frame_payload_bytes > max_payload {
                return Err(err(format!(
                    "frame_payload_bytes must be 1..={max_payload}"
                )));
            }
        }
        Ok(())
    }

    fn validate_ptp(&self, topo: &Topology) -> Result<(), ScenarioError> {
        let p = &self.ptp;
        if let Some(gm) = p.grandmaster {
            if topo.node_index(gm).is_none() {
                return Err(ScenarioError::Ptp(format!(
                    "grandmaster {gm} is not in the topology"
                )));
            }
        }
        if p.interval_ms == 0 || p.quantization_ns == 0 {
            return Err(ScenarioError::Ptp(
                "interval_ms and quantization_ns must be positive".into(),
            ));
        }
        if !(0.0..=MAX_DRIFT_PPM).contains(&p.max_drift_ppm) {
            return Err(ScenarioError::Ptp(format!(
                "max_drift_ppm must lie in [0, {MAX_DRIFT_PPM}]"
            )));
        }
        for d in &p.drift {
            if topo.node_index(d.node).is_none() {
                return Err(ScenarioError::Ptp(format!(
                    "drift override for unknown node {}",
                    d.node
                )));
            }
            if !d.ppm.is_finite() || d.ppm.abs() > MAX_DRIFT_PPM {
                return Err(ScenarioError::Ptp(format!(
                    "drift {} ppm at {} exceeds {MAX_DRIFT_PPM}",
                    d.ppm, d.node
                )));
            }
        }
        Ok(())
    }
}

fn port_link(
    topo: &Topology,
    node: NodeId,
    port: PortName,
) -> Result<crate::fabric::LinkId, String> {
    if topo.node_index(node).is_none() {
        return Err(format!("node {node} is not in the topology"));
    }
    topo.link_at(node, port.index())
        .ok_or_else(|| format!("port {} of {node} is not connected", port.as_str()))
}
