//! Open-loop traffic sources and the per-flow measurements they produce.

use serde::{Deserialize, Serialize};

use crate::fabric::NodeId;
use crate::runtime::MAX_FRAGMENT_DATA;
use crate::sim::SimTime;

/// An iperf-like source: either rate-driven or always backlogged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    pub src: NodeId,
    pub dst: NodeId,
    #[serde(default)]
    pub pcp: u8,
    #[serde(default)]
    pub start_ns: u64,
    pub stop_ns: u64,
    #[serde(default)]
    pub offered_rate_bps: Option<u64>,
    #[serde(default)]
    pub backlogged: bool,
    #[serde(default = "default_payload")]
    pub frame_payload_bytes: u32,
}

fn default_payload() -> u32 {
    MAX_FRAGMENT_DATA as u32
}

impl FlowSpec {
    /// Gap between frames of a rate-driven source, true ns.
    pub fn frame_interval_ns(&self) -> Option<u64> {
        let rate = self.offered_rate_bps.filter(|&r| r > 0)?;
        Some(((self.frame_payload_bytes as u128 * 8 * 1_000_000_000).div_ceil(rate as u128)) as u64)
    }
}

/// Drops attributed to a flow, by cause.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct DropCounts {
    pub queue_full: u64,
    pub link_down: u64,
    pub bad_crc: u64,
    pub ttl_expired: u64,
    pub no_route: u64,
}

impl DropCounts {
    pub fn total(&self) -> u64 {
        self.queue_full + self.link_down + self.bad_crc + self.ttl_expired + self.no_route
    }

    pub fn add(&mut self, other: &DropCounts) {
        self.queue_full += other.queue_full;
        self.link_down += other.link_down;
        self.bad_crc += other.bad_crc;
        self.ttl_expired += other.ttl_expired;
        self.no_route += other.no_route;
    }
}

/// Why a frame left the network without being delivered.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropCause {
    QueueFull,
    LinkDown,
    BadCrc,
    TtlExpired,
    NoRoute,
}

impl DropCounts {
    pub fn record(&mut self, cause: DropCause) {
        match cause {
            DropCause::QueueFull => self.queue_full += 1,
            DropCause::LinkDown => self.link_down += 1,
            DropCause::BadCrc => self.bad_crc += 1,
            DropCause::TtlExpired => self.ttl_expired += 1,
            DropCause::NoRoute => self.no_route += 1,
        }
    }
}

/// One delivered frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Sample {
    pub seq: u64,
    pub sent: SimTime,
    pub delivered: SimTime,
    /// Receiver local minus sender local, ns.
    pub latency_ns: i64,
    pub hops: u32,
}

/// Running totals for one flow.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FlowStats {
    pub offered_frames: u64,
    pub offered_bytes: u64,
    pub delivered_frames: u64,
    pub delivered_bytes: u64,
    pub drops: DropCounts,
    pub samples: Vec<Sample>,
    /// Frames of this flow sitting in the source's NIC queues.
    pub(crate) queued_at_source: usize,
    pub(crate) next_seq: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LatencySummary {
    pub mean: f64,
    pub p50: i64,
    pub p99: i64,
    pub min: i64,
    pub max: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlowMetrics {
    pub flow: usize,
    pub src: NodeId,
    pub dst: NodeId,
    pub pcp: u8,
    pub offered_frames: u64,
    pub delivered_frames: u64,
    pub in_flight: u64,
    pub bytes_offered: u64,
    pub bytes_delivered: u64,
    pub goodput_bps: f64,
    pub latency_ns: LatencySummary,
    pub jitter_ns: f64,
    pub hops_mean: f64,
    pub drops: DropCounts,
}

/// Nearest-rank percentile of a sorted slice.
pub fn percentile(sorted: &[i64], p: f64) -> i64 {
    if sorted.is_empty() {
        return 0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn latency_summary(latencies: &[i64]) -> LatencySummary {
    if latencies.is_empty() {
        return LatencySummary::default();
    }
    let mut sorted = latencies.to_vec();
    sorted.sort_unstable();
    LatencySummary {
        mean: latencies.iter().map(|&l| l as f64).sum::<f64>() / latencies.len() as f64,
        p50: percentile(&sorted, 50.0),
        p99: percentile(&sorted, 99.0),
        min: sorted[0],
        max: sorted[sorted.len() - 1],
    }
}

/// Mean absolute difference between consecutive latencies.
pub fn jitter(latencies: &[i64]) -> f64 {
    if latencies.len() < 2 {
        return 0.0;
    }
    let total: i64 = latencies.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    total as f64 / (latencies.len() - 1) as f64
}

impl FlowStats {
    /// Summarize. Goodput is taken over the flow's active interval, clipped
    /// to the run length.
    pub fn metrics(
        &self,
        flow: usize,
        spec: &FlowSpec,
        in_flight: u64,
        duration_ns: u64,
    ) -> FlowMetrics {
        let mut by_seq = self.samples.clone();
        by_seq.sort_by_key(|s| s.seq);
        let lat: Vec<i64> = by_seq.iter().map(|s| s.latency_ns).collect();
        let active = spec.stop_ns.min(duration_ns).saturating_sub(spec.start_ns);
        let goodput = if active == 0 {
            0.0
        } else {
            self.delivered_bytes as f64 * 8.0 * 1e9 / active as f64
        };
        let hops_mean = if by_seq.is_empty() {
            0.0
        } else {
            by_seq.iter().map(|s| s.hops as f64).sum::<f64>() / by_seq.len() as f64
        };
        FlowMetrics {
            flow,
            src: spec.src,
            dst: spec.dst,
            pcp: spec.pcp,
            offered_frames: self.offered_frames,
            delivered_frames: self.delivered_frames,
            in_flight,
            bytes_offered: self.offered_bytes,
            bytes_delivered: self.delivered_bytes,
            goodput_bps: goodput,
            latency_ns: latency_summary(&lat),
            jitter_ns: jitter(&lat),
            hops_mean,
            drops: self.drops,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank() {
        let v: Vec<i64> = (1..=100).collect();
        assert_eq!(percentile(&v, 50.0), 50);
        assert_eq!(percentile(&v, 99.0), 99);
        assert_eq!(percentile(&[7], 99.0), 7);
        assert_eq!(percentile(&[], 50.0), 0);
    }

    #[test]
    fn jitter_is_mean_abs_difference() {
        assert_eq!(jitter(&[10, 14, 12, 12]), 2.0);
        assert_eq!(jitter(&[5]), 0.0);
    }

    #[test]
    fn frame_interval() {
        let f = FlowSpec {
            src: NodeId::new(0, 0, 0, 0),
            dst: NodeId::new(0, 0, 0, 1),
            pcp: 0,
            start_ns: 0,
            stop_ns: 1,
            offered_rate_bps: Some(100_000_000),
            backlogged: false,
            frame_payload_bytes: 1482,
        };
        assert_eq!(f.frame_interval_ns(), Some(118_560));
    }

    #[test]
    fn flow_spec_defaults() {
        let f: FlowSpec = serde_json::from_str(
            r#"{"src":[0,0,0,0],"dst":[0,0,0,1],"stop_ns":5,"backlogged":true}"#,
        )
        .unwrap();
        assert_eq!(f.frame_payload_bytes, 1482);
        assert_eq!(f.pcp, 0);
        assert!(f.frame_interval_ns().is_none());
    }
}
