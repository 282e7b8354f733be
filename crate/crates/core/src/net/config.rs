use serde::{Deserialize, Serialize};

use crate::clock::DEFAULT_QUANTIZATION_NS;
use crate::fabric::NodeId;

pub const DEFAULT_INJECTION_CAP_BPS: u64 = 2_250_000_000;
pub const DEFAULT_PROCESSING_DELAY_NS: u64 = 10_000;

/// Host side of every node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HostConfig {
    /// Rate at which one node's host can hand application bytes to its NIC.
    /// `null` removes the limit.
    pub injection_cap_bps: Option<u64>,
    /// Delay between a frame's arrival and its delivery to the application.
    pub processing_delay_ns: u64,
}

impl Default for HostConfig {
    fn default() -> Self {
        HostConfig {
            injection_cap_bps: Some(DEFAULT_INJECTION_CAP_BPS),
            processing_delay_ns: DEFAULT_PROCESSING_DELAY_NS,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftOverride {
    pub node: NodeId,
    pub ppm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PtpConfig {
    pub enabled: bool,
    /// Defaults to node <0,0,0,0>, or <0,1,0,0> in the testbed layout.
    pub grandmaster: Option<NodeId>,
    pub interval_ms: u64,
    pub quantization_ns: u64,
    /// Drifts not listed in `drift` are drawn uniformly from +-this bound.
    pub max_drift_ppm: f64,
    pub drift: Vec<DriftOverride>,
    /// Initial phase errors are drawn uniformly from +-this bound.
    pub max_initial_offset_ns: u64,
    /// Delay between the sync of one tree level and the next.
    pub stagger_ns: u64,
    pub convergence_rounds: u32,
    /// Offset sampling period for the report; 0 disables sampling.
    pub sample_interval_ns: u64,
}

impl Default for PtpConfig {
    fn default() -> Self {
        PtpConfig {
            enabled: true,
            grandmaster: None,
            interval_ms: 250,
            quantization_ns: DEFAULT_QUANTIZATION_NS,
            max_drift_ppm: 10.0,
            drift: Vec::new(),
            max_initial_offset_ns: 1_000,
            stagger_ns: 5_000_000,
            convergence_rounds: 10,
            sample_interval_ns: 1_000_000,
        }
    }
}

impl PtpConfig {
    pub fn interval_ns(&self) -> u64 {
        self.interval_ms * 1_000_000
    }
}
