use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use super::addr::{abs_coords, ip_of, mac_of, AddrError, GridCoord, MacAddr, NodeId};
use super::link::{Link, LinkId, LinkParams, LinkState};
use crate::sim::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    North,
    South,
    East,
    West,
}

impl Direction {
    /// Local position of the tile node that owns the external port facing
    /// this direction.
    pub const fn owner(self) -> (u32, u32) {
        match self {
            Direction::West => (0, 0),
            Direction::North => (0, 1),
            Direction::South => (1, 0),
            Direction::East => (1, 1),
        }
    }

    /// Direction of the external port owned by a local position.
    pub const fn owned_by(local: (u32, u32)) -> Direction {
        match local {
            (0, 0) => Direction::West,
            (0, 1) => Direction::North,
            (1, 0) => Direction::South,
            _ => Direction::East,
        }
    }

    pub const fn is_horizontal(self) -> bool {
        matches!(self, Direction::East | Direction::West)
    }
}

/// Fixed port slots on every node.
pub const PORT_INTRA_H: usize = 0;
pub const PORT_INTRA_V: usize = 1;
pub const PORT_EXTERNAL: usize = 2;
pub const PORT_MGMT: usize = 3;
pub const PORTS_PER_NODE: usize = 4;
/// Data-carrying ports, in routing preference order.
pub const DATA_PORTS: [usize; 3] = [PORT_INTRA_H, PORT_INTRA_V, PORT_EXTERNAL];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PortKind {
    IntraH,
    IntraV,
    External(Direction),
    Mgmt,
}

impl PortKind {
    pub fn is_horizontal(self) -> bool {
        match self {
            PortKind::IntraH => true,
            PortKind::External(d) => d.is_horizontal(),
            _ => false,
        }
    }

    pub fn is_data(self) -> bool {
        !matches!(self, PortKind::Mgmt)
    }

    pub fn name(self) -> &'static str {
        match self {
            PortKind::IntraH => "IntraH",
            PortKind::IntraV => "IntraV",
            PortKind::External(Direction::North) => "North",
            PortKind::External(Direction::South) => "South",
            PortKind::External(Direction::East) => "East",
            PortKind::External(Direction::West) => "West",
            PortKind::Mgmt => "Mgmt",
        }
    }
}

/// `(node index, port slot)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PortRef {
    pub node: usize,
    pub port: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Port {
    pub kind: PortKind,
    pub peer: Option<PortRef>,
    pub link: Option<LinkId>,
}

#[derive(Clone, Debug)]
pub struct NodeInfo {
    pub id: NodeId,
    pub coord: GridCoord,
    pub mac: MacAddr,
    pub ip: Ipv4Addr,
    pub ports: [Port; PORTS_PER_NODE],
}

/// Which nodes of the tile grid exist and whether the tile grid wraps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// Full tiles, torus wrap in both dimensions.
    #[default]
    Torus,
    /// One full tile with a single extra node on each horizontal side,
    /// attached to the tile's West and East ports. No wrap.
    Testbed,
}

#[derive(Clone, Debug)]
pub struct Topology {
    pub g_r: u32,
    pub g_c: u32,
    pub wrap: bool,
    pub layout: Layout,
    pub nodes: Vec<NodeInfo>,
    pub links: Vec<Link>,
    index: BTreeMap<NodeId, usize>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TopologyError {
    #[error("tile grid must be at least 1x1, got {g_r}x{g_c}")]
    EmptyGrid { g_r: u32, g_c: u32 },
    #[error("the testbed layout has one central tile; grid must be 1x1, got {g_r}x{g_c}")]
    TestbedGrid { g_r: u32, g_c: u32 },
    #[error(transparent)]
    Addr(#[from] AddrError),
}

/// Build a `g_r x g_c` torus of 2x2 tiles.
pub fn build_topology(g_r: u32, g_c: u32, defaults: LinkParams) -> Result<Topology, TopologyError> {
    Topology::build(g_r, g_c, Layout::Torus, defaults)
}

impl Topology {
    pub fn build(
        g_r: u32,
        g_c: u32,
        layout: Layout,
        defaults: LinkParams,
    ) -> Result<Self, TopologyError> {
        if g_r == 0 || g_c == 0 {
            return Err(TopologyError::EmptyGrid { g_r, g_c });
        }
        match layout {
            Layout::Torus => Self::build_with(g_r, g_c, true, layout, defaults, |_| true),
            Layout::Testbed => {
                if (g_r, g_c) != (1, 1) {
                    return Err(TopologyError::TestbedGrid { g_r, g_c });
                }
                // Tile columns 0 and 2 hold one node each, wired to the
                // central tile's West and East ports.
                let west = NodeId::new(0, 0, 1, 1);
                let east = NodeId::new(0, 2, 0, 0);
                Self::build_with(1, 3, false, layout, defaults, move |id| {
                    id.gcc == 1 || id == west || id == east
                })
            }
        }
    }

    fn build_with(
        g_r: u32,
        g_c: u32,
        wrap: bool,
        layout: Layout,
        defaults: LinkParams,
        populated: impl Fn(NodeId) -> bool,
    ) -> Result<Self, TopologyError> {
        let mut nodes = Vec::new();
        let mut index = BTreeMap::new();
        for grc in 0..g_r {
            for gcc in 0..g_c {
                for lrc in 0..2 {
                    for lcc in 0..2 {
                        let id = NodeId::new(grc, gcc, lrc, lcc);
                        if !populated(id) {
                            continue;
                        }
                        id.encode()?;
                        let coord = abs_coords(id);
                        let mac = mac_of(coord)?;
                        let (ip, _) = ip_of(coord)?;
                        let dir = Direction::owned_by((lrc, lcc));
                        let port = |kind| Port {
                            kind,
                            peer: None,
                            link: None,
                        };
                        index.insert(id, nodes.len());
                        nodes.push(NodeInfo {
                            id,
                            coord,
                            mac,
                            ip,
                            ports: [
                                port(PortKind::IntraH),
                                port(PortKind::IntraV),
                                port(PortKind::External(dir)),
                                port(PortKind::Mgmt),
                            ],
                        });
                    }
                }
            }
        }
        let mut topo = Topology {
            g_r,
            g_c,
            wrap,
            layout,
            nodes,
            links: Vec::new(),
            index,
        };

        let mut pairs: Vec<(NodeId, usize, NodeId, usize)> = Vec::new();
        for grc in 0..g_r {
            for gcc in 0..g_c {
                let at = |l: (u32, u32)| NodeId::new(grc, gcc, l.0, l.1);
                for r in 0..2 {
                    pairs.push((at((r, 0)), PORT_INTRA_H, at((r, 1)), PORT_INTRA_H));
                }
                for c in 0..2 {
                    pairs.push((at((0, c)), PORT_INTRA_V, at((1, c)), PORT_INTRA_V));
                }
            }
        }
        for grc in 0..g_r {
            for gcc in 0..g_c {
                if wrap || gcc + 1 < g_c {
                    let (e, w) = (Direction::East.owner(), Direction::West.owner());
                    pairs.push((
                        NodeId::new(grc, gcc, e.0, e.1),
                        PORT_EXTERNAL,
                        NodeId::new(grc, (gcc + 1) % g_c, w.0, w.1),
                        PORT_EXTERNAL,
                    ));
                }
            }
        }
        for grc in 0..g_r {
            for gcc in 0..g_c {
                if wrap || grc + 1 < g_r {
                    let (s, n) = (Direction::South.owner(), Direction::North.owner());
                    pairs.push((
                        NodeId::new(grc, gcc, s.0, s.1),
                        PORT_EXTERNAL,
                        NodeId::new((grc + 1) % g_r, gcc, n.0, n.1),
                        PORT_EXTERNAL,
                    ));
                }
            }
        }
        for (a, pa, b, pb) in pairs {
            if let (Some(ia), Some(ib)) = (topo.node_index(a), topo.node_index(b)) {
                topo.connect(
                    PortRef { node: ia, port: pa },
                    PortRef { node: ib, port: pb },
                    defaults,
                );
            }
        }
        Ok(topo)
    }

    fn connect(&mut self, a: PortRef, b: PortRef, params: LinkParams) {
        let id = LinkId(self.links.len());
        self.links.push(Link::new(id, a, b, params));
        self.nodes[a.node].ports[a.port].peer = Some(b);
        self.nodes[a.node].ports[a.port].link = Some(id);
        self.nodes[b.node].ports[b.port].peer = Some(a);
        self.nodes[b.node].ports[b.port].link = Some(id);
    }

    pub fn node_index(&self, id: NodeId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn node(&self, idx: usize) -> &NodeInfo {
        &self.nodes[idx]
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_by_mac(&self, mac: MacAddr) -> Option<usize> {
        let c = super::addr::coord_of_mac(mac)?;
        let id = NodeId::new(c.rc / 2, c.cc / 2, c.rc % 2, c.cc % 2);
        self.node_index(id)
    }

    pub fn port(&self, p: PortRef) -> &Port {
        &self.nodes[p.node].ports[p.port]
    }

    pub fn link(&self, id: LinkId) -> &Link {
        &self.links[id.0]
    }

    pub fn link_mut(&mut self, id: LinkId) -> &mut Link {
        &mut self.links[id.0]
    }

    /// Link attached to a node port, if any.
    pub fn link_at(&self, node: NodeId, port: usize) -> Option<LinkId> {
        let idx = self.node_index(node)?;
        self.nodes[idx].ports.get(port)?.link
    }

    /// True when the port has a peer and its link is up at `t`.
    pub fn port_up(&self, p: PortRef, t: SimTime) -> bool {
        match self.port(p).link {
            Some(l) => self.links[l.0].state_at(t) == LinkState::Up,
            None => false,
        }
    }

    pub fn set_link_state(&mut self, link: LinkId, state: LinkState, at: SimTime) {
        self.links[link.0].set_state(state, at);
    }

    pub fn intra_link_count(&self) -> usize {
        self.links
            .iter()
            .filter(|l| !matches!(self.port(l.a).kind, PortKind::External(_)))
            .count()
    }

    pub fn external_link_count(&self) -> usize {
        self.links.len() - self.intra_link_count()
    }

    /// Stable text dump: one line per port.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (i, n) in self.nodes.iter().enumerate() {
            for (slot, p) in n.ports.iter().enumerate() {
                let peer = match p.peer {
                    Some(r) => format!(
                        "{}:{}",
                        self.nodes[r.node].id,
                        self.nodes[r.node].ports[r.port].kind.name()
                    ),
                    None => "-".to_string(),
                };
                let link = p
                    .link
                    .map(|l| l.0.to_string())
                    .unwrap_or_else(|| "-".into());
                let _ = writeln!(
                    out,
                    "node {i} {} coord {} mac {} ip {}/16 port {slot} {} peer {peer} link {link}",
                    n.id,
                    n.coord,
                    n.mac,
                    n.ip,
                    p.kind.name()
                );
            }
        }
        out
    }
}
