//! Discrete-event simulator of a tiled 2D-torus of NIC-equipped nodes with
//! time-aware egress scheduling.

pub mod clock;
pub mod fabric;
pub mod harness;
pub mod net;
pub mod nic;
pub mod qdisc;
pub mod routing;
pub mod runtime;
pub mod sim;
pub mod traffic;

pub(crate) fn hex(bytes: &[u8]) -> String {
    use std::fmt::Write;
    bytes
        .iter()
        .fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}
