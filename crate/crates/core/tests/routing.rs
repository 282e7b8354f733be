use std::collections::BTreeSet;

use tasim::fabric::{Layout, LinkId, LinkParams, LinkState, Topology};
use tasim::routing::{walk, ForwardDecision, DEFAULT_TTL};
use tasim::sim::SimTime;

fn torus(r: u32, c: u32) -> Topology {
    Topology::build(r, c, Layout::Torus, LinkParams::default()).unwrap()
}

#[test]
fn fault_free_walks_finish_without_revisits() {
    for (r, c) in [(1, 1), (1, 2), (2, 1), (2, 2), (1, 3), (2, 3), (3, 3)] {
        let t = torus(r, c);
        for a in 0..t.node_count() {
            for b in 0..t.node_count() {
                let (path, v) = walk(&t, a, t.node(b).id, SimTime::ZERO);
                assert_eq!(v, ForwardDecision::Local, "{r}x{c} {a}->{b}");
                let distinct: BTreeSet<_> = path.iter().collect();
                assert_eq!(distinct.len(), path.len(), "{r}x{c} {a}->{b} revisits");
                assert!(path.len() < DEFAULT_TTL as usize);
            }
        }
    }
}

#[test]
fn every_single_fault_on_3x3_still_delivers() {
    let base = torus(3, 3);
    for l in 0..base.links.len() {
        let mut t = base.clone();
        t.set_link_state(LinkId(l), LinkState::Down, SimTime::ZERO);
        for a in 0..t.node_count() {
            for b in 0..t.node_count() {
                let (path, v) = walk(&t, a, t.node(b).id, SimTime(1));
                assert_eq!(v, ForwardDecision::Local, "link {l}: {a}->{b}");
                assert!(path
                    .iter()
                    .all(|&(n, p)| t.node(n).ports[p].link != Some(LinkId(l))));
            }
        }
    }
}

#[test]
fn repaired_link_is_used_again() {
    let mut t = torus(1, 3);
    let a = t.node_index([0, 0, 1, 1].into()).unwrap();
    let dst = [0, 1, 1, 0].into();
    let (clean, _) = walk(&t, a, dst, SimTime::ZERO);
    let (n, p) = clean[0];
    let l = t.node(n).ports[p].link.unwrap();
    t.set_link_state(l, LinkState::Down, SimTime(10));
    t.set_link_state(l, LinkState::Up, SimTime(20));
    let (during, v) = walk(&t, a, dst, SimTime(15));
    assert_eq!(v, ForwardDecision::Local);
    assert!(during.len() > clean.len());
    assert_eq!(walk(&t, a, dst, SimTime(20)).0, clean);
}
