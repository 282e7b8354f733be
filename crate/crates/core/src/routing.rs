//! Hierarchical dimension-order routing with local fault bypass.
//!
//! Fault-free, a frame first resolves the tile column (crossing tiles through
//! the East/West external ports, taking the shorter torus direction), then
//! the tile row (South/North), then the position inside the destination
//! tile. Inside a tile, steering toward a port owner or the destination is
//! column-first.
//!
//! When the preferred port is down, the frame records the failed link and
//! from then on takes a shortest path over the known wiring that avoids it,
//! preferring the other dimension on ties and leaving through the ingress
//! port only when nothing else is live.

use serde::Serialize;
use thiserror::Error;

use crate::fabric::{
    Direction, LinkId, NodeId, PortKind, PortRef, Topology, DATA_PORTS, PORT_EXTERNAL,
    PORT_INTRA_H, PORT_INTRA_V,
};
use crate::nic::Frame;
use crate::sim::SimTime;

pub const DEFAULT_TTL: u8 = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    NoRoute,
    TtlExpired,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForwardDecision {
    Local,
    /// Egress port slot.
    Forward(usize),
    Drop(DropReason),
}

/// Per-frame routing state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HopState {
    pub ttl: u8,
    pub last_link: Option<LinkId>,
    pub hops: u32,
    /// Failed link met on the way; set once the frame leaves the
    /// fault-free route.
    pub avoid: Option<LinkId>,
}

impl Default for HopState {
    fn default() -> Self {
        HopState {
            ttl: DEFAULT_TTL,
            last_link: None,
            hops: 0,
            avoid: None,
        }
    }
}

/// Port the fault-free rule picks at `cur` for `dst`, or `None` at the
/// destination.
pub fn dor_port(g_r: u32, g_c: u32, wrap: bool, cur: NodeId, dst: NodeId) -> Option<usize> {
    if cur == dst {
        return None;
    }
    let toward = |here: u32, there: u32, n: u32| -> bool {
        // true = increasing direction (East / South)
        if wrap {
            let fwd = (there + n - here) % n;
            fwd <= n - fwd
        } else {
            there > here
        }
    };
    let target = if cur.gcc != dst.gcc {
        if toward(cur.gcc, dst.gcc, g_c) {
            Direction::East.owner()
        } else {
            Direction::West.owner()
        }
    } else if cur.grc != dst.grc {
        if toward(cur.grc, dst.grc, g_r) {
            Direction::South.owner()
        } else {
            Direction::North.owner()
        }
    } else {
        dst.local()
    };
    let here = cur.local();
    Some(if here == target {
        PORT_EXTERNAL
    } else if here.1 != target.1 {
        PORT_INTRA_H
    } else {
        PORT_INTRA_V
    })
}

/// Hop count of the fault-free route, or `None` if it leaves the
/// populated topology.
pub fn dor_hops(topo: &Topology, from: usize, dst: NodeId) -> Option<u32> {
    let mut cur = from;
    let mut hops = 0;
    let limit = 4 * topo.node_count() as u32 + 4;
    loop {
        let here = topo.node(cur).id;
        match dor_port(topo.g_r, topo.g_c, topo.wrap, here, dst) {
            None => return Some(hops),
            Some(p) => {
                cur = topo.node(cur).ports[p].peer?.node;
                hops += 1;
                if hops > limit {
                    return None;
                }
            }
        }
    }
}

fn is_horizontal(kind: PortKind) -> bool {
    kind.is_horizontal()
}

/// Forwarding decision at node index `cur` for a frame bound to `dst`.
/// Only the node's own ports' link states at `now` are consulted. When the
/// preferred port is down its link is recorded in `hop.avoid`, and from
/// then on the frame follows a shortest path that avoids it.
pub fn next_hop(
    topo: &Topology,
    cur: usize,
    dst: NodeId,
    ingress: Option<usize>,
    hop: &mut HopState,
    now: SimTime,
) -> ForwardDecision {
    let here = topo.node(cur);
    if here.id == dst {
        return ForwardDecision::Local;
    }
    let Some(dst_idx) = topo.node_index(dst) else {
        return ForwardDecision::Drop(DropReason::NoRoute);
    };
    let live = |p: usize| topo.port_up(PortRef { node: cur, port: p }, now);
    let preferred = dor_port(topo.g_r, topo.g_c, topo.wrap, here.id, dst).expect("cur != dst");
    if hop.avoid.is_none() && live(preferred) && Some(preferred) != ingress {
        return ForwardDecision::Forward(preferred);
    }
    if !live(preferred) {
        hop.avoid = here.ports[preferred].link;
    }

    let dist = distances_to(topo, dst_idx, hop.avoid);
    let pref_horizontal = is_horizontal(here.ports[preferred].kind);
    let rank = |p: usize| {
        let d = here.ports[p].peer.map_or(u32::MAX, |r| dist[r.node]);
        let same_dim = is_horizontal(here.ports[p].kind) == pref_horizontal;
        (d, same_dim, p)
    };
    let best = DATA_PORTS
        .into_iter()
        .filter(|&p| live(p) && Some(p) != ingress)
        .filter(|&p| hop.avoid.is_none() || here.ports[p].link != hop.avoid)
        .filter(|&p| rank(p).0 != u32::MAX)
        .min_by_key(|&p| rank(p));
    match (best, ingress) {
        (Some(p), _) => ForwardDecision::Forward(p),
        (None, Some(p)) if live(p) => ForwardDecision::Forward(p),
        _ => ForwardDecision::Drop(DropReason::NoRoute),
    }
}

/// Hop distance from every node to `dst` over the wired fabric, ignoring
/// `avoid`.
fn distances_to(topo: &Topology, dst: usize, avoid: Option<LinkId>) -> Vec<u32> {
    let mut dist = vec![u32::MAX; topo.node_count()];
    dist[dst] = 0;
    let mut frontier = std::collections::VecDeque::from([dst]);
    while let Some(n) = frontier.pop_front() {
        for p in DATA_PORTS {
            let port = &topo.node(n).ports[p];
            let Some(peer) = port.peer else { continue };
            if port.link.is_some() && port.link == avoid {
                continue;
            }
            if dist[peer.node] == u32::MAX {
                dist[peer.node] = dist[n] + 1;
                frontier.push_back(peer.node);
            }
        }
    }
    dist
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum ForwardError {
    #[error("hop limit reached")]
    TtlExpired,
    #[error("port {0} has no peer")]
    NoPeer(usize),
}

/// Prepare a frame for egress on `port` of node `cur`: rewrite the
/// destination MAC to the neighbour's, spend one TTL, remember the link.
pub fn forward_frame(
    topo: &Topology,
    cur: usize,
    port: usize,
    frame: &mut Frame,
) -> Result<(), ForwardError> {
    let p = &topo.node(cur).ports[port];
    let peer = p.peer.ok_or(ForwardError::NoPeer(port))?;
    if frame.meta.hop.ttl == 0 {
        return Err(ForwardError::TtlExpired);
    }
    frame.meta.hop.ttl -= 1;
    frame.meta.hop.hops += 1;
    frame.meta.hop.last_link = p.link;
    frame.dst_mac = topo.node(peer.node).mac;
    if let Some(route) = frame.meta.route.as_mut() {
        route.push((topo.node(cur).id, port));
    }
    Ok(())
}

/// Walk the routing rule hop by hop from `src` to `dst` at time `now`,
/// without queueing. Returns the `(node index, egress port)` sequence and
/// the final verdict.
pub fn walk(
    topo: &Topology,
    src: usize,
    dst: NodeId,
    now: SimTime,
) -> (Vec<(usize, usize)>, ForwardDecision) {
    let mut path = Vec::new();
    let mut cur = src;
    let mut ingress = None;
    let mut hop = HopState::default();
    loop {
        match next_hop(topo, cur, dst, ingress, &mut hop, now) {
            ForwardDecision::Forward(p) => {
                if hop.ttl == 0 {
                    return (path, ForwardDecision::Drop(DropReason::TtlExpired));
                }
                hop.ttl -= 1;
                path.push((cur, p));
                let peer = topo.node(cur).ports[p]
                    .peer
                    .expect("usable port has a peer");
                cur = peer.node;
                ingress = Some(peer.port);
            }
            d => return (path, d),
        }
    }
}
