//! Tiled 2D-torus fabric: node identifiers, derived addresses, port wiring
//! and links with scheduled faults.

mod addr;
mod link;
mod topology;

pub use addr::{
    abs_coords, coord_of_mac, decode_id, encode_id, ip_of, mac_of, AddrError, GridCoord, MacAddr,
    NodeId,
};
pub use link::{Link, LinkId, LinkParams, LinkState, DEFAULT_LINK_RATE_BPS, DEFAULT_PROP_DELAY_NS};
pub use topology::{
    build_topology, Direction, Layout, NodeInfo, Port, PortKind, PortRef, Topology, TopologyError,
    DATA_PORTS, PORTS_PER_NODE, PORT_EXTERNAL, PORT_INTRA_H, PORT_INTRA_V, PORT_MGMT,
};
