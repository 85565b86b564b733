use std::collections::BTreeMap;

use crahn_sim::discovery::{DiscoveryError, DiscoveryNetwork, DiscoveryParams, GATEWAY_SERVICE};
use crahn_sim::geo::{self, Adjacency, Area, NodeState, Role};
use crahn_sim::kernel::RandomStream;
use crahn_sim::NodeId;

fn scattered(n: usize, seed: u64) -> Adjacency {
    let mut rng = RandomStream::new(seed, "gateway-layout");
    let area = Area { width: 1000.0, height: 1000.0 };
    let nodes: Vec<NodeState> = (0..n).map(|i| NodeState::fixed(NodeId(i as u32), Role::RescueSu, area.random_point(&mut rng))).collect();
    geo::neighbor_graph(&nodes)
}

/// Over many layouts every requester that shares a component with the
/// gateway finds it along a real path, and no other requester does.
#[test]
fn gateway_found_exactly_when_connected() {
    let mut found = 0;
    let mut cut_off = 0;
    for seed in 0..30 {
        let g = scattered(30, seed);
        let comp = geo::component_index(&g);
        let gateway = NodeId(0);
        let mut net = DiscoveryNetwork::fixed(g.clone(), DiscoveryParams::default(), seed, 400.0).unwrap();
        net.host(gateway, GATEWAY_SERVICE, "Logistics").unwrap();
        for (k, req) in (1..30).map(NodeId).enumerate() {
            let at = 1.0 + 12.0 * k as f64;
            match net.discover_gateway(req, at) {
                Ok(out) => {
                    assert_eq!(comp[&req], comp[&gateway], "seed {seed}: {req} reached a gateway it cannot reach");
                    assert_eq!(out.provider, gateway);
                    assert_eq!(out.route.first(), Some(&gateway));
                    assert_eq!(out.route.last(), Some(&req));
                    for w in out.route.windows(2) {
                        assert!(g.has_edge(w[0], w[1]));
                    }
                    assert!(out.latency_s < 10.0);
                    found += 1;
                }
                Err(DiscoveryError::Timeout { .. }) => {
                    assert_ne!(comp[&req], comp[&gateway], "seed {seed}: {req} is connected but timed out");
                    cut_off += 1;
                }
                Err(e) => panic!("seed {seed}: {e}"),
            }
        }
    }
    assert!(found > 300, "only {found} successful lookups");
    assert!(cut_off > 0);
}

#[test]
fn adverts_make_nearby_lookups_free() {
    let mut g = Adjacency::with_nodes((0..5).map(NodeId));
    for i in 1..5 {
        g.add_edge(NodeId(i - 1), NodeId(i));
    }
    let mut net = DiscoveryNetwork::fixed(g, DiscoveryParams::default(), 4, 100.0).unwrap();
    net.host(NodeId(0), "shelter-map", "Shelter").unwrap();
    net.start_adverts(0.0, 4);
    net.run_until(15.0);
    let hit = net.discover(NodeId(2), "shelter-map", None, 15.0).unwrap();
    assert!(hit.cache_hit);
    assert_eq!(hit.messages, 0);
    assert_eq!(hit.latency_s, 0.0);
    assert_eq!(hit.route, vec![NodeId(0), NodeId(1), NodeId(2)]);
    // Beyond the advert radius the query has to travel.
    let miss = net.discover(NodeId(4), "shelter-map", None, 30.0).unwrap();
    assert!(!miss.cache_hit);
    assert!(miss.messages > 0 && miss.latency_s > 0.0);
}

#[test]
fn ontology_tag_stands_in_for_unknown_ids() {
    let mut g = Adjacency::with_nodes((0..3).map(NodeId));
    g.add_edge(NodeId(0), NodeId(1));
    g.add_edge(NodeId(1), NodeId(2));
    let mut net = DiscoveryNetwork::fixed(g, DiscoveryParams::default(), 8, 100.0).unwrap();
    net.host(NodeId(0), "field-hospital", "Medical").unwrap();
    let by_tag = net.discover(NodeId(2), "ambulance", Some("Medical"), 1.0).unwrap();
    assert_eq!((by_tag.service_id.as_str(), by_tag.provider), ("field-hospital", NodeId(0)));
    assert!(matches!(net.discover(NodeId(2), "ambulance", Some("Shelter"), 20.0), Err(DiscoveryError::Timeout { .. })));
}

#[test]
fn payloads_follow_discovered_routes() {
    let g = scattered(25, 11);
    let comp = geo::component_index(&g);
    let sizes = comp.values().fold(BTreeMap::new(), |mut m, c| {
        *m.entry(*c).or_insert(0) += 1;
        m
    });
    let (&big, _) = sizes.iter().max_by_key(|(_, n)| **n).unwrap();
    let members: Vec<NodeId> = comp.iter().filter(|(_, c)| **c == big).map(|(n, _)| *n).collect();
    let (gw, req) = (members[0], *members.last().unwrap());
    let mut net = DiscoveryNetwork::fixed(g, DiscoveryParams::default(), 11, 100.0).unwrap();
    net.host(gw, GATEWAY_SERVICE, "Logistics").unwrap();
    let out = net.discover_gateway(req, 1.0).unwrap();
    let hops = net.send_payload(req, gw).unwrap();
    assert_eq!(hops, out.route.len() - 1);
}
