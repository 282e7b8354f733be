use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tasim::fabric::{
    Layout, LinkParams, LinkState, NodeId, PORT_EXTERNAL, PORT_INTRA_H, PORT_INTRA_V,
};
use tasim::harness::{run, Fault, PortName, Scenario};
use tasim::net::{NetConfig, Network, PtpConfig};
use tasim::nic::{ScheduleEntry, ScheduleTable};
use tasim::runtime::ApiError;
use tasim::sim::SimTime;
use tasim::traffic::FlowSpec;

fn random_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = Scenario {
        duration_ns: 30_000_000,
        seed,
        ..Scenario::default()
    };
    s.grid.g_c = 2;
    s.link_defaults.frame_error_rate = 0.01;
    s.nic.queue_depth = 16;
    let topo = s.topology().unwrap();
    let ids: Vec<NodeId> = topo.nodes.iter().map(|n| n.id).collect();
    for _ in 0..rng.gen_range(2..6) {
        let src = ids[rng.gen_range(0..ids.len())];
        let mut dst = ids[rng.gen_range(0..ids.len())];
        while dst == src {
            dst = ids[rng.gen_range(0..ids.len())];
        }
        let backlogged = rng.gen_bool(0.5);
        let start_ns = rng.gen_range(0..5_000_000);
        s.flows.push(FlowSpec {
            src,
            dst,
            pcp: rng.gen_range(0..3),
            start_ns,
            stop_ns: start_ns + rng.gen_range(5_000_000..20_000_000),
            offered_rate_bps: (!backlogged).then(|| rng.gen_range(100_000_000..3_000_000_000)),
            backlogged,
            frame_payload_bytes: rng.gen_range(64..=1482),
        });
    }
    let node = ids[rng.gen_range(0..ids.len())];
    let port = [PortName::IntraH, PortName::IntraV, PortName::External][rng.gen_range(0..3)];
    s.faults.push(Fault {
        node,
        port,
        at_ns: rng.gen_range(0..20_000_000),
        state: LinkState::Down,
    });
    s.validate().unwrap();
    s
}

#[test]
fn frames_are_conserved_under_faults_drops_and_corruption() {
    for seed in 0..12 {
        let s = random_scenario(seed);
        let r = run(&s, false).report;
        assert!(r.totals.conserved, "seed {seed}: {:?}", r.totals);
        for f in &r.flows {
            assert!(f.bytes_delivered <= f.bytes_offered);
            assert!(
                f.latency_ns.min >= 0 || f.delivered_frames == 0,
                "seed {seed}: negative latency"
            );
        }
    }
}

#[test]
fn host_injection_never_exceeds_the_cap() {
    let mut s = Scenario {
        duration_ns: 60_000_000,
        ..Scenario::default()
    };
    let src = NodeId::new(0, 0, 0, 0);
    for (dst, pcp) in [
        (NodeId::new(0, 0, 0, 1), 0),
        (NodeId::new(0, 0, 1, 0), 1),
        (NodeId::new(0, 0, 1, 1), 2),
    ] {
        s.flows.push(FlowSpec {
            src,
            dst,
            pcp,
            start_ns: 0,
            stop_ns: 60_000_000,
            offered_rate_bps: None,
            backlogged: true,
            frame_payload_bytes: 1482,
        });
    }
    let cap = s.host.injection_cap_bps.unwrap() as f64;
    let result = run(&s, true);
    let window = 10_000_000u64;
    let mut per_window = vec![0u64; 6];
    for t in result
        .network
        .tx_trace
        .iter()
        .filter(|t| t.node == src && t.flow.is_some())
    {
        // Grants just before the end can start after it.
        if t.tx_start.0 < 60_000_000 {
            per_window[(t.tx_start.0 / window) as usize] += 1482;
        }
    }
    for bytes in per_window {
        let rate = bytes as f64 * 8.0 / (window as f64 / 1e9);
        assert!(rate <= cap * 1.001, "{rate} > {cap}");
        assert!(rate > cap * 0.95, "cap not reached: {rate}");
    }
}

fn quiet_net() -> Network {
    let topo = tasim::fabric::Topology::build(1, 1, Layout::Torus, LinkParams::default()).unwrap();
    let cfg = NetConfig {
        ptp: PtpConfig {
            enabled: false,
            max_drift_ppm: 0.0,
            max_initial_offset_ns: 0,
            ..Default::default()
        },
        ..Default::default()
    };
    Network::new(topo, cfg)
}

#[test]
fn set_conf_is_idempotent_and_visible_through_get_conf() {
    let node = NodeId::new(0, 0, 0, 0);
    let table = ScheduleTable {
        window_us: 200,
        entries: vec![
            ScheduleEntry {
                queue_idx: 1,
                slot_us: 50,
            },
            ScheduleEntry {
                queue_idx: 0,
                slot_us: 100,
            },
        ],
        guardband_ns: 1300,
    };
    let mut a = quiet_net();
    let mut b = quiet_net();
    a.set_conf(node, PORT_INTRA_V, &table).unwrap();
    b.set_conf(node, PORT_INTRA_V, &table).unwrap();
    b.set_conf(node, PORT_INTRA_V, &table).unwrap();
    assert_eq!(a.get_conf(node, PORT_INTRA_V).unwrap(), table);
    assert_eq!(b.get_conf(node, PORT_INTRA_V).unwrap(), table);
    for net in [&mut a, &mut b] {
        net.add_flow(FlowSpec {
            src: node,
            dst: NodeId::new(0, 0, 1, 0),
            pcp: 1,
            start_ns: 0,
            stop_ns: 2_000_000,
            offered_rate_bps: None,
            backlogged: true,
            frame_payload_bytes: 1482,
        });
        net.run_until(SimTime::from_ms(3));
    }
    assert_eq!(a.flow(0).1, b.flow(0).1);

    let bad = ScheduleTable {
        window_us: 100,
        entries: vec![ScheduleEntry {
            queue_idx: 0,
            slot_us: 120,
        }],
        guardband_ns: 0,
    };
    assert!(a.set_conf(node, PORT_INTRA_H, &bad).is_err());
    assert!(matches!(
        a.set_conf(node, 7, &table),
        Err(ApiError::NoSuchPort { .. })
    ));
    assert!(matches!(
        a.get_conf(NodeId::new(3, 3, 0, 0), PORT_EXTERNAL),
        Err(ApiError::UnknownNode(_))
    ));
}

#[test]
fn send_and_receive_across_the_tile() {
    let mut net = quiet_net();
    let a = NodeId::new(0, 0, 0, 0);
    let b = NodeId::new(0, 0, 1, 1);
    let data: Vec<u8> = (0..5000u32).map(|i| (i * 7) as u8).collect();
    net.send_msg(a, &data, 5000, b.encode().unwrap(), 0)
        .unwrap();
    assert_eq!(
        net.recv_msg(b, 5000, a.encode().unwrap(), None).unwrap(),
        data
    );
    assert_eq!(
        net.recv_msg(b, 10, a.encode().unwrap(), None),
        Err(ApiError::WouldBlockForever)
    );
    assert_eq!(
        net.recv_msg(b, 10, a.encode().unwrap(), Some(1_000)),
        Err(ApiError::Timeout)
    );
    assert_eq!(
        net.send_msg(a, &data, 0, b.encode().unwrap(), 0),
        Err(ApiError::EmptyMessage)
    );
    assert!(matches!(
        net.send_msg(a, &data, 6000, b.encode().unwrap(), 0),
        Err(ApiError::ShortBuffer { .. })
    ));
    assert_eq!(
        net.send_msg(a, &data, 10, b.encode().unwrap(), 9),
        Err(ApiError::Priority(9))
    );
}

#[test]
fn fault_mid_run_drops_only_frames_already_committed_to_the_link() {
    let mut net = quiet_net();
    let a = NodeId::new(0, 0, 0, 0);
    let b = NodeId::new(0, 0, 0, 1);
    let link = net.topo.link_at(a, PORT_INTRA_H).unwrap();
    net.topo
        .set_link_state(link, LinkState::Down, SimTime::from_ms(5));
    net.add_flow(FlowSpec {
        src: a,
        dst: b,
        pcp: 0,
        start_ns: 0,
        stop_ns: 10_000_000,
        offered_rate_bps: Some(1_000_000_000),
        backlogged: false,
        frame_payload_bytes: 1482,
    });
    net.run_until(SimTime::from_ms(20));
    let (_, st) = net.flow(0);
    assert_eq!(st.delivered_frames + st.drops.total(), st.offered_frames);
    assert!(st.drops.link_down <= 1, "{:?}", st.drops);
    let hops: Vec<u32> = st.samples.iter().map(|s| s.hops).collect();
    assert!(hops.contains(&1) && hops.iter().any(|&h| h > 1));
}
