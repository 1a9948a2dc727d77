use proptest::prelude::*;
use saga_core::ring::*;
use RingAction::*;

fn step(s: &RingSchedule, k: usize) -> Vec<Vec<RingAction>> {
    s.steps[k].clone()
}

#[test]
fn four_device_pattern() {
    let t = DeviceTopology::switched(4, 2, 1.0);
    let loaders = maximal_fat_tree(&t);
    assert_eq!(loaders, vec![0, 2]);
    let s = build_ring_schedule(&t, 8, &loaders).unwrap();
    s.validate(&t).unwrap();
    // Chunks are counted from zero here: the first and third chunk.
    assert_eq!(step(&s, 0), vec![vec![LoadFromHost(0)], vec![], vec![LoadFromHost(2)], vec![]]);
    let s1 = step(&s, 1);
    assert_eq!(s1[0][..2], [Compute(0), LoadFromHost(1)]);
    assert_eq!(s1[1], vec![FetchFromPrev(0)]);
    assert_eq!(s1[2][..2], [Compute(2), LoadFromHost(3)]);
    assert_eq!(s1[3], vec![FetchFromPrev(2)]);
    // Whole-ring forwarding: no host loads.
    for k in [2, 3] {
        assert!(step(&s, k).iter().flatten().all(|a| !matches!(a, LoadFromHost(_))));
    }
    let s4 = step(&s, 4);
    assert!(s4[0].contains(&LoadFromHost(4)));
    assert!(s4[2].contains(&LoadFromHost(6)));
    assert!(s4[1].contains(&Compute(2)) && s4[1].contains(&Drop(2)));
    assert!(s4[3].contains(&Compute(0)) && s4[3].contains(&Drop(0)));
    let s5 = step(&s, 5);
    assert!(s5[0].contains(&LoadFromHost(5)));
    assert!(s5[2].contains(&LoadFromHost(7)));
}

#[test]
fn two_device_schedule_by_hand() {
    let t = DeviceTopology::shared_root(2, 1.0);
    let loaders = maximal_fat_tree(&t);
    assert_eq!(loaders, vec![0]);
    let s = build_ring_schedule(&t, 4, &loaders).unwrap();
    let want: Vec<Vec<Vec<RingAction>>> = vec![
        vec![vec![LoadFromHost(0)], vec![]],
        vec![vec![Compute(0), LoadFromHost(1), Drop(0)], vec![FetchFromPrev(0)]],
        vec![vec![Compute(1), LoadFromHost(2), Drop(1)], vec![Compute(0), FetchFromPrev(1), Drop(0)]],
        vec![vec![Compute(2), LoadFromHost(3), Drop(2)], vec![Compute(1), FetchFromPrev(2), Drop(1)]],
        vec![vec![Compute(3), Drop(3)], vec![Compute(2), FetchFromPrev(3), Drop(2)]],
        vec![vec![], vec![Compute(3), Drop(3)]],
    ];
    assert_eq!(s.steps, want);
    s.validate(&t).unwrap();
}

#[test]
fn single_device_degenerates() {
    let t = DeviceTopology::flat(1, 1.0);
    let s = build_ring_schedule(&t, 3, &[0]).unwrap();
    s.validate(&t).unwrap();
    let loads: Vec<usize> = s
        .steps
        .iter()
        .flat_map(|st| st[0].iter())
        .filter_map(|a| match a {
            LoadFromHost(c) => Some(*c),
            _ => None,
        })
        .collect();
    assert_eq!(loads, vec![0, 1, 2]);
    let ring = simulate_ring(&t, &s, 4.0, 2.0).unwrap().makespan;
    let nonring = simulate_nonring(&t, 3, 4.0, 2.0).unwrap().makespan;
    assert!((ring - nonring).abs() < 1e-9);
}

#[test]
fn ring_speedup_on_shared_link() {
    let t = DeviceTopology::shared_root(2, 1.0);
    let sp = speedup(&t, 64, 1.0, 1.0).unwrap();
    assert!(sp.ring_speedup() >= 1.8, "{sp:?}");
    assert!(sp.nonring_speedup() <= 1.2, "{sp:?}");
}

#[test]
fn ring_loads_each_chunk_once_over_host_links() {
    let t = DeviceTopology::switched(4, 2, 1.0);
    let s = build_ring_schedule(&t, 8, &maximal_fat_tree(&t)).unwrap();
    let tl = simulate_ring(&t, &s, 3.0, 1.0).unwrap();
    assert!((tl.host_bytes - 24.0).abs() < 1e-9);
    let nr = simulate_nonring(&t, 8, 3.0, 1.0).unwrap();
    assert!((nr.host_bytes - 96.0).abs() < 1e-9);
}

/// Random trees with equal link bandwidth, devices numbered depth-first.
fn topology() -> impl Strategy<Value = DeviceTopology> {
    prop::collection::vec(1usize..4, 1..4).prop_map(|groups| {
        let mut nodes = vec![NodeSpec { name: "host".into(), kind: NodeKind::Host, parent: None, bandwidth: None }];
        let mut d = 0;
        for (g, &size) in groups.iter().enumerate() {
            let parent = if size == 1 {
                "host".to_string()
            } else {
                let name = format!("sw{g}");
                nodes.push(NodeSpec { name: name.clone(), kind: NodeKind::Switch, parent: Some("host".into()), bandwidth: Some(1.0) });
                name
            };
            for _ in 0..size {
                nodes.push(NodeSpec { name: format!("dev{d}"), kind: NodeKind::Device, parent: Some(parent.clone()), bandwidth: Some(1.0) });
                d += 1;
            }
        }
        DeviceTopology::from_spec(&TopologySpec { nodes, ring: None }).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ring_schedules_are_valid(t in topology(), extra in 0usize..10) {
        let n = t.num_devices() + extra;
        let loaders = maximal_fat_tree(&t);
        let s = build_ring_schedule(&t, n, &loaders).unwrap();
        prop_assert!(s.validate(&t).is_ok(), "{:?}", s.validate(&t));
        let tl = simulate_ring(&t, &s, 1.0, 0.5).unwrap();
        prop_assert!((tl.host_bytes - n as f64).abs() < 1e-9);
    }

    #[test]
    fn fat_tree_is_maximal(t in topology()) {
        let chosen = maximal_fat_tree(&t);
        for d in 0..t.num_devices() {
            if chosen.contains(&d) {
                continue;
            }
            let shares = chosen.iter().any(|&c| {
                let a = t.load_path(c);
                t.load_path(d).iter().any(|l| a.contains(l))
            });
            prop_assert!(shares, "device {} could join {:?}", d, chosen);
        }
    }

    #[test]
    fn ring_never_slower_with_shared_links(t in topology(), rounds in 2usize..5, ratio in 0.25f64..1.0) {
        let shared = (0..t.num_devices()).any(|a| {
            (0..a).any(|b| t.load_path(a).iter().any(|l| t.load_path(b).contains(l)))
        });
        prop_assume!(shared);
        let n = rounds * t.num_devices();
        let s = build_ring_schedule(&t, n, &maximal_fat_tree(&t)).unwrap();
        let ring = simulate_ring(&t, &s, 1.0, ratio).unwrap().makespan;
        let nonring = simulate_nonring(&t, n, 1.0, ratio).unwrap().makespan;
        prop_assert!(ring <= nonring + 1e-9, "ring {} nonring {}", ring, nonring);
    }
}
