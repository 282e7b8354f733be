use std::fmt;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AddrError {
    #[error("node id field {field} = {value} does not fit in one byte")]
    FieldTooLarge { field: &'static str, value: u32 },
    #[error("local coordinate {field} = {value} outside the 2x2 tile")]
    LocalOutOfTile { field: &'static str, value: u32 },
    #[error("grid coordinate ({rc}, {cc}) exceeds the 8-bit address space")]
    CoordTooLarge { rc: u32, cc: u32 },
}

/// Hierarchical node identifier `<tile row, tile col, local row, local col>`.
///
/// Serialized as a four-element array.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[u32; 4]", into = "[u32; 4]")]
pub struct NodeId {
    pub grc: u32,
    pub gcc: u32,
    pub lrc: u32,
    pub lcc: u32,
}

impl From<[u32; 4]> for NodeId {
    fn from(a: [u32; 4]) -> Self {
        NodeId::new(a[0], a[1], a[2], a[3])
    }
}

impl From<NodeId> for [u32; 4] {
    fn from(n: NodeId) -> Self {
        [n.grc, n.gcc, n.lrc, n.lcc]
    }
}

impl NodeId {
    pub const fn new(grc: u32, gcc: u32, lrc: u32, lcc: u32) -> Self {
        NodeId { grc, gcc, lrc, lcc }
    }

    /// Pack into the 32-bit form used by the messaging API, one byte per field.
    pub fn encode(&self) -> Result<u32, AddrError> {
        for (field, value) in [
            ("grc", self.grc),
            ("gcc", self.gcc),
            ("lrc", self.lrc),
            ("lcc", self.lcc),
        ] {
            if value > 0xff {
                return Err(AddrError::FieldTooLarge { field, value });
            }
        }
        Ok((self.grc << 24) | (self.gcc << 16) | (self.lrc << 8) | self.lcc)
    }

    pub fn decode(raw: u32) -> Self {
        NodeId {
            grc: raw >> 24,
            gcc: (raw >> 16) & 0xff,
            lrc: (raw >> 8) & 0xff,
            lcc: raw & 0xff,
        }
    }

    pub fn tile(&self) -> (u32, u32) {
        (self.grc, self.gcc)
    }

    pub fn local(&self) -> (u32, u32) {
        (self.lrc, self.lcc)
    }

    pub fn check_local(&self) -> Result<(), AddrError> {
        if self.lrc > 1 {
            return Err(AddrError::LocalOutOfTile {
                field: "lrc",
                value: self.lrc,
            });
        }
        if self.lcc > 1 {
            return Err(AddrError::LocalOutOfTile {
                field: "lcc",
                value: self.lcc,
            });
        }
        Ok(())
    }

    pub fn coords(&self) -> GridCoord {
        abs_coords(*self)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{},{},{},{}>", self.grc, self.gcc, self.lrc, self.lcc)
    }
}

pub fn encode_id(id: NodeId) -> Result<u32, AddrError> {
    id.encode()
}

pub fn decode_id(raw: u32) -> NodeId {
    NodeId::decode(raw)
}

/// Absolute `(row, column)` position in the node grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GridCoord {
    pub rc: u32,
    pub cc: u32,
}

pub fn abs_coords(id: NodeId) -> GridCoord {
    GridCoord {
        rc: id.grc * 2 + id.lrc,
        cc: id.gcc * 2 + id.lcc,
    }
}

impl fmt::Display for GridCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.rc, self.cc)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MacAddr(pub [u8; 6]);

impl MacAddr {
    pub const BROADCAST: MacAddr = MacAddr([0xff; 6]);
}

impl fmt::Display for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            b[0], b[1], b[2], b[3], b[4], b[5]
        )
    }
}

fn coord_bytes(c: GridCoord) -> Result<(u8, u8), AddrError> {
    match (u8::try_from(c.rc), u8::try_from(c.cc)) {
        (Ok(r), Ok(cc)) => Ok((r, cc)),
        _ => Err(AddrError::CoordTooLarge { rc: c.rc, cc: c.cc }),
    }
}

/// `02:00:00:00:Rc:Cc`, locally administered.
pub fn mac_of(c: GridCoord) -> Result<MacAddr, AddrError> {
    let (r, cc) = coord_bytes(c)?;
    Ok(MacAddr([0x02, 0, 0, 0, r, cc]))
}

/// `10.0.Rc.Cc` with a /16 mask, so the two low bytes identify the node.
pub fn ip_of(c: GridCoord) -> Result<(Ipv4Addr, Ipv4Addr), AddrError> {
    let (r, cc) = coord_bytes(c)?;
    Ok((Ipv4Addr::new(10, 0, r, cc), Ipv4Addr::new(255, 255, 0, 0)))
}

/// Inverse of [`mac_of`] for addresses in the fabric's OUI.
pub fn coord_of_mac(mac: MacAddr) -> Option<GridCoord> {
    match mac.0 {
        [0x02, 0, 0, 0, r, c] => Some(GridCoord {
            rc: r as u32,
            cc: c as u32,
        }),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn encode_packs_bytes() {
        assert_eq!(NodeId::new(1, 2, 0, 1).encode(), Ok(0x0102_0001));
        assert_eq!(NodeId::new(0, 0, 0, 0).encode(), Ok(0));
        assert_eq!(
            NodeId::new(256, 0, 0, 0).encode(),
            Err(AddrError::FieldTooLarge {
                field: "grc",
                value: 256
            })
        );
    }

    #[test]
    fn absolute_coordinates() {
        assert_eq!(
            abs_coords(NodeId::new(0, 0, 0, 0)),
            GridCoord { rc: 0, cc: 0 }
        );
        assert_eq!(
            abs_coords(NodeId::new(1, 2, 0, 1)),
            GridCoord { rc: 2, cc: 5 }
        );
        assert_eq!(
            abs_coords(NodeId::new(2, 0, 1, 1)),
            GridCoord { rc: 5, cc: 1 }
        );
    }

    #[test]
    fn addresses_from_coordinates() {
        let c = GridCoord { rc: 2, cc: 5 };
        assert_eq!(mac_of(c).unwrap().to_string(), "02:00:00:00:02:05");
        let (ip, mask) = ip_of(c).unwrap();
        assert_eq!(ip, Ipv4Addr::new(10, 0, 2, 5));
        assert_eq!(mask, Ipv4Addr::new(255, 255, 0, 0));
        let zero = GridCoord { rc: 0, cc: 0 };
        assert_eq!(mac_of(zero).unwrap().to_string(), "02:00:00:00:00:00");
        assert_eq!(ip_of(zero).unwrap().0, Ipv4Addr::new(10, 0, 0, 0));
        assert!(mac_of(GridCoord { rc: 256, cc: 0 }).is_err());
        assert_eq!(coord_of_mac(mac_of(c).unwrap()), Some(c));
    }

    #[test]
    fn addresses_are_injective_on_small_grid() {
        let mut macs = HashSet::new();
        let mut ips = HashSet::new();
        for rc in 0..32 {
            for cc in 0..32 {
                let c = GridCoord { rc, cc };
                assert!(macs.insert(mac_of(c).unwrap()));
                assert!(ips.insert(ip_of(c).unwrap().0));
            }
        }
    }

    #[test]
    fn node_id_serializes_as_array() {
        let id = NodeId::new(0, 1, 1, 0);
        let s = serde_json::to_string(&id).unwrap();
        assert_eq!(s, "[0,1,1,0]");
        assert_eq!(serde_json::from_str::<NodeId>(&s).unwrap(), id);
    }

    proptest::proptest! {
        #[test]
        fn encode_decode_round_trip(g in 0u32..256, c in 0u32..256, lr in 0u32..2, lc in 0u32..2) {
            let id = NodeId::new(g, c, lr, lc);
            proptest::prop_assert_eq!(NodeId::decode(id.encode().unwrap()), id);
        }
    }
}
