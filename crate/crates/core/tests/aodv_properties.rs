use proptest::prelude::*;

use crahn_sim::geo::{self, Adjacency, Area, NodeState, Role};
use crahn_sim::kernel::RandomStream;
use crahn_sim::routing::{self, AodvNetwork, AodvParams, RouteTable, RoutingError};
use crahn_sim::NodeId;

fn geometric(n: usize, side: f64, seed: u64) -> Adjacency {
    let mut rng = RandomStream::new(seed, "topology");
    let area = Area { width: side, height: side };
    let nodes: Vec<NodeState> = (0..n).map(|i| NodeState::fixed(NodeId(i as u32), Role::RescueSu, area.random_point(&mut rng))).collect();
    geo::neighbor_graph(&nodes)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    /// With jittered delays and losses no installed next-hop chain revisits a node.
    #[test]
    fn routes_never_loop(seed in 0u64..10_000, n in 5usize..30, loss in 0.0f64..0.3) {
        let g = geometric(n, 800.0, seed);
        let params = AodvParams { loss_rate: loss, ..AodvParams::default() };
        let mut net = AodvNetwork::new(g.clone(), params, seed).unwrap();
        let mut rng = RandomStream::new(seed, "pairs");
        let mut t = 0.0;
        for _ in 0..10 {
            let a = NodeId(rng.index(n) as u32);
            let b = NodeId(rng.index(n) as u32);
            if a == b {
                continue;
            }
            let _ = net.discover_route(a, b, t, t + 5.0);
            for x in g.nodes() {
                for y in g.nodes() {
                    match net.route_path(x, y, t + 5.0) {
                        Err(RoutingError::Loop { .. }) => prop_assert!(false, "loop from {} to {}", x, y),
                        Ok(p) => {
                            for w in p.windows(2) {
                                prop_assert!(g.has_edge(w[0], w[1]));
                            }
                        }
                        Err(_) => {}
                    }
                }
            }
            t += 7.0;
        }
    }

    /// A flood costs at most one broadcast per node plus the reply's unicasts.
    #[test]
    fn floods_terminate(seed in 0u64..10_000, n in 2usize..40) {
        let g = geometric(n, 600.0, seed);
        let mut net = AodvNetwork::new(g, AodvParams::default(), seed).unwrap();
        let before = net.transmissions();
        let r = net.discover_route(NodeId(0), NodeId(n as u32 - 1), 0.0, 20.0);
        let spent = net.transmissions() - before;
        prop_assert!(spent <= 2 * n as u64, "{} transmissions for {} nodes", spent, n);
        if let Ok(found) = r {
            prop_assert!(found.latency_s > 0.0 && found.latency_s < 20.0);
        }
    }

    #[test]
    fn table_keeps_freshest_then_shortest(offers in proptest::collection::vec((1u32..10, 0u32..4, 0u32..5), 1..30)) {
        let mut t = RouteTable::new(1000.0);
        let dest = NodeId(99);
        for (i, (hops, seq, via)) in offers.iter().enumerate() {
            t.offer(dest, NodeId(*via), *hops, *seq, i as f64);
        }
        let best_seq = offers.iter().map(|o| o.1).max().unwrap();
        let best_hops = offers.iter().filter(|o| o.1 == best_seq).map(|o| o.0).min().unwrap();
        let e = t.lookup(dest, offers.len() as f64).unwrap();
        prop_assert_eq!((e.dest_seq, e.hop_count), (best_seq, best_hops));
    }
}

#[test]
fn unknown_nodes_and_partitions() {
    let mut g = Adjacency::with_nodes((0..4).map(NodeId));
    g.add_edge(NodeId(0), NodeId(1));
    g.add_edge(NodeId(2), NodeId(3));
    let mut net = AodvNetwork::new(g, AodvParams::default(), 1).unwrap();
    assert!(matches!(net.discover_route(NodeId(0), NodeId(9), 0.0, 5.0), Err(RoutingError::UnknownNode(_))));
    assert!(matches!(net.discover_route(NodeId(0), NodeId(3), 0.0, 5.0), Err(RoutingError::Timeout { .. })));
    let found = net.discover_route(NodeId(0), NodeId(1), 10.0, 15.0).unwrap();
    assert_eq!(found.hop_count, 1);
    assert_eq!(net.route_path(NodeId(0), NodeId(1), 11.0).unwrap(), vec![NodeId(0), NodeId(1)]);
}

#[test]
fn routes_expire_after_their_lifetime() {
    let mut g = Adjacency::with_nodes((0..3).map(NodeId));
    g.add_edge(NodeId(0), NodeId(1));
    g.add_edge(NodeId(1), NodeId(2));
    let params = AodvParams { route_lifetime_s: 5.0, ..AodvParams::default() };
    let mut net = AodvNetwork::new(g, params, 3).unwrap();
    net.discover_route(NodeId(0), NodeId(2), 0.0, 2.0).unwrap();
    assert_eq!(net.route_path(NodeId(0), NodeId(2), 1.0).unwrap().len(), 3);
    assert!(matches!(net.route_path(NodeId(0), NodeId(2), 10.0), Err(RoutingError::NoRoute { .. })));
    let walk = routing::follow_next_hops(NodeId(0), NodeId(2), |n| Some(if n == NodeId(0) { NodeId(1) } else { NodeId(0) }));
    assert!(matches!(walk, Err(RoutingError::Loop { .. })));
}
