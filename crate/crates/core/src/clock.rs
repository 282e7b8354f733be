//! Node-local clocks and the two-way time-transfer exchange used to keep
//! them aligned with a grandmaster.

use thiserror::Error;

use crate::sim::SimTime;

/// Default hardware timestamp resolution.
pub const DEFAULT_QUANTIZATION_NS: u64 = 8;
/// Default bound on a free-running oscillator's rate error.
pub const DEFAULT_MAX_DRIFT_PPM: f64 = 100.0;

/// A free-running oscillator with a servo-controlled correction.
///
/// The clock is piecewise linear in true time. Between corrections,
///
/// ```text
/// local(t) = anchor_local + (t - anchor_true) * (1 + (drift + rate_adj) * 1e-6) + offset_ns
/// ```
///
/// and every correction re-anchors at the instant it is applied.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalClock {
    pub drift_ppm: f64,
    pub rate_adj_ppm: f64,
    /// Sum of all offset steps applied so far.
    pub offset_ns: f64,
    pub last_true_time: SimTime,
    anchor_local: f64,
    quantization_ns: u64,
    servo: ServoState,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct ServoState {
    /// Local time of the previous servo update, if any.
    last_update_local: Option<f64>,
}

impl LocalClock {
    pub fn new(drift_ppm: f64, quantization_ns: u64) -> Self {
        LocalClock {
            drift_ppm,
            rate_adj_ppm: 0.0,
            offset_ns: 0.0,
            last_true_time: SimTime::ZERO,
            anchor_local: 0.0,
            quantization_ns: quantization_ns.max(1),
            servo: ServoState::default(),
        }
    }

    /// An ideal clock: no drift, 1 ns resolution.
    pub fn ideal() -> Self {
        Self::new(0.0, 1)
    }

    /// Start the clock with an initial phase error.
    pub fn with_initial_offset(mut self, offset_ns: f64) -> Self {
        self.anchor_local += offset_ns;
        self
    }

    pub fn quantization_ns(&self) -> u64 {
        self.quantization_ns
    }

    fn rate(&self) -> f64 {
        1.0 + (self.drift_ppm + self.rate_adj_ppm) * 1e-6
    }

    /// Unquantized local reading at true time `t`.
    ///
    /// `t` before the last correction is extrapolated along the current
    /// segment.
    pub fn raw_at(&self, t: SimTime) -> f64 {
        let dt = t.0 as f64 - self.last_true_time.0 as f64;
        self.anchor_local + dt * self.rate() + self.offset_ns
    }

    /// Local time at `t`, truncated to an integer nanosecond.
    pub fn ns_at(&self, t: SimTime) -> i64 {
        self.raw_at(t).floor() as i64
    }

    /// Local timestamp at `t`, quantized down to the timestamp resolution.
    pub fn local_time(&self, t: SimTime) -> i64 {
        let q = self.quantization_ns as i64;
        self.ns_at(t).div_euclid(q) * q
    }

    /// Earliest true time at or after `not_before` whose integer local
    /// reading is `>= local`.
    pub fn true_time_of(&self, local: i64, not_before: SimTime) -> SimTime {
        let here = self.raw_at(not_before);
        if here.floor() as i64 >= local {
            return not_before;
        }
        let dt = (local as f64 - here) / self.rate();
        let mut t = not_before + dt.ceil().max(0.0) as u64;
        while (self.ns_at(t)) < local {
            t = t + 1;
        }
        t
    }

    /// Convert a true-time duration to the local ticks it spans, rounded up.
    pub fn local_span(&self, true_ns: u64) -> u64 {
        (true_ns as f64 * self.rate()).ceil() as u64
    }

    fn reanchor(&mut self, now: SimTime) {
        let dt = now.0 as f64 - self.last_true_time.0 as f64;
        self.anchor_local += dt * self.rate();
        self.last_true_time = now;
    }

    /// Step the phase by `delta_ns` at true time `now`.
    pub fn step(&mut self, now: SimTime, delta_ns: f64) {
        self.reanchor(now);
        self.offset_ns += delta_ns;
    }

    pub fn set_rate_adj(&mut self, now: SimTime, rate_adj_ppm: f64) {
        self.reanchor(now);
        self.rate_adj_ppm = rate_adj_ppm;
    }

    /// One servo update with a fresh offset estimate.
    ///
    /// The phase is stepped by `-offset_est`. From the second update on, the
    /// estimate is also the phase error accumulated since the previous step,
    /// so `offset_est / elapsed` is the residual rate error and is removed
    /// from the rate correction.
    pub fn apply_servo(&mut self, now: SimTime, offset_est: i64) {
        let at_local = self.raw_at(now);
        if let Some(prev) = self.servo.last_update_local {
            let elapsed = at_local - prev;
            if elapsed > 0.0 {
                let residual_ppm = offset_est as f64 / elapsed * 1e6;
                let adj = self.rate_adj_ppm - residual_ppm;
                self.set_rate_adj(now, adj);
            }
        }
        self.step(now, -(offset_est as f64));
        self.servo.last_update_local = Some(self.raw_at(now));
    }
}

/// The four timestamps of one Sync / Delay_Req exchange.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PtpExchange {
    /// Sync departure, master clock.
    pub t1: i64,
    /// Sync arrival, slave clock.
    pub t2: i64,
    /// Delay_Req departure, slave clock.
    pub t3: i64,
    /// Delay_Req arrival, master clock.
    pub t4: i64,
}

impl PtpExchange {
    /// Slave-minus-master offset, assuming a symmetric path.
    /// Integer division truncates toward zero.
    pub fn offset_estimate(&self) -> i64 {
        ((self.t2 - self.t1) - (self.t4 - self.t3)) / 2
    }

    pub fn mean_path_delay(&self) -> i64 {
        ((self.t2 - self.t1) + (self.t4 - self.t3)) / 2
    }
}

pub fn ptp_offset_estimate(x: &PtpExchange) -> i64 {
    x.offset_estimate()
}

/// EtherType carried by time-transfer frames.
pub const ETHERTYPE_PTP: u16 = 0x88F7;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum PtpMsgType {
    Sync = 0,
    DelayReq = 1,
    DelayResp = 2,
}

/// Wire payload of a time-transfer frame: 13 bytes, big-endian.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PtpMessage {
    pub msg_type: PtpMsgType,
    pub origin_timestamp: u64,
    pub exchange_id: u32,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PtpDecodeError {
    #[error("payload too short: {0} bytes")]
    Truncated(usize),
    #[error("unknown message type {0}")]
    UnknownType(u8),
}

impl PtpMessage {
    pub const WIRE_LEN: usize = 13;

    pub fn encode(&self) -> [u8; Self::WIRE_LEN] {
        let mut out = [0u8; Self::WIRE_LEN];
        out[0] = self.msg_type as u8;
        out[1..9].copy_from_slice(&self.origin_timestamp.to_be_bytes());
        out[9..13].copy_from_slice(&self.exchange_id.to_be_bytes());
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self, PtpDecodeError> {
        if buf.len() < Self::WIRE_LEN {
            return Err(PtpDecodeError::Truncated(buf.len()));
        }
        let msg_type = match buf[0] {
            0 => PtpMsgType::Sync,
            1 => PtpMsgType::DelayReq,
            2 => PtpMsgType::DelayResp,
            t => return Err(PtpDecodeError::UnknownType(t)),
        };
        Ok(PtpMessage {
            msg_type,
            origin_timestamp: u64::from_be_bytes(buf[1..9].try_into().unwrap()),
            exchange_id: u32::from_be_bytes(buf[9..13].try_into().unwrap()),
        })
    }
}
