//! Service discovery over the ad hoc network.
//!
//! Providers advertise their services a few hops out; receivers cache the
//! descriptor together with the route it travelled. A query is answered from
//! the local cache when possible, otherwise it floods like a route request and
//! the first provider or cache holder to hear it replies along the reverse
//! path. The reply installs a route to the provider on every node it crosses,
//! so the requester can talk to the provider straight away.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{self, Adjacency, Area, MobilityParams, NodeState, Role};
use crate::kernel::{EventKind, RandomStream, Scheduler, Target};
use crate::routing::{follow_next_hops, AodvNode, AodvParams, Radio, RoutingError};
use crate::NodeId;

pub const GATEWAY_SERVICE: &str = "gateway";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiscoveryError {
    #[error("query from {requester} for '{service}' timed out")]
    Timeout { requester: NodeId, service: String },
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Routing(#[from] RoutingError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ServiceDescriptor {
    pub service_id: String,
    pub provider: NodeId,
    pub ontology: String,
    /// Nodes from the provider outward to whoever holds this copy.
    pub route: Vec<NodeId>,
    pub issued_at: f64,
    pub ttl: f64,
}

impl ServiceDescriptor {
    pub fn route_hops(&self) -> usize {
        self.route.len().saturating_sub(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ServiceCacheEntry {
    pub descriptor: ServiceDescriptor,
    pub learned_at: f64,
    pub expires_at: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceQuery {
    pub requester: NodeId,
    pub service_id: String,
    pub ontology: Option<String>,
    pub issued_at: f64,
    pub deadline: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ServiceCache {
    entries: BTreeMap<(String, NodeId), ServiceCacheEntry>,
}

impl ServiceCache {
    /// Store or replace the copy for `(service, provider)`.
    pub fn insert(&mut self, descriptor: ServiceDescriptor, now: f64) {
        let key = (descriptor.service_id.clone(), descriptor.provider);
        let expires_at = now + descriptor.ttl;
        self.entries.insert(key, ServiceCacheEntry { descriptor, learned_at: now, expires_at });
    }

    /// Exact service id first, then ontology tag; fewer route hops win, then
    /// the lower provider id.
    pub fn lookup(&self, service_id: &str, ontology: Option<&str>, now: f64) -> Option<&ServiceCacheEntry> {
        let live: Vec<&ServiceCacheEntry> = self.entries.values().filter(|e| e.expires_at > now).collect();
        let pick = |keep: &dyn Fn(&ServiceCacheEntry) -> bool| {
            live.iter().copied().filter(|e| keep(e)).min_by_key(|e| (e.descriptor.route_hops(), e.descriptor.provider))
        };
        pick(&|e| e.descriptor.service_id == service_id).or_else(|| {
            let tag = ontology?;
            pick(&|e| e.descriptor.ontology == tag)
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HostedService {
    pub service_id: String,
    pub ontology: String,
}

fn hosted_match<'a>(hosted: &'a [HostedService], service_id: &str, ontology: Option<&str>) -> Option<&'a HostedService> {
    hosted
        .iter()
        .find(|h| h.service_id == service_id)
        .or_else(|| ontology.and_then(|tag| hosted.iter().find(|h| h.ontology == tag)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscoveryParams {
    pub node_count: usize,
    pub service_count: usize,
    pub query_count: usize,
    pub advert_interval_s: f64,
    pub advert_hops: usize,
    pub advert_ttl_s: f64,
    pub query_retry_s: f64,
    pub query_deadline_s: f64,
    pub warmup_s: f64,
    pub beacon_interval_s: f64,
    /// Node counts swept at fixed density for the latency-vs-size series.
    pub node_counts: Vec<usize>,
    /// Service counts swept at `node_count` nodes.
    pub service_counts: Vec<usize>,
    pub ontology_tags: Vec<String>,
    pub aodv: AodvParams,
}

impl Default for DiscoveryParams {
    fn default() -> Self {
        DiscoveryParams {
            node_count: 50,
            service_count: 10,
            query_count: 100,
            advert_interval_s: 10.0,
            advert_hops: 2,
            advert_ttl_s: 30.0,
            query_retry_s: 1.0,
            query_deadline_s: 10.0,
            warmup_s: 30.0,
            beacon_interval_s: 1.0,
            node_counts: vec![20, 35, 50, 65, 80],
            service_counts: vec![5, 10, 15, 20],
            ontology_tags: ["Safety", "Medical", "Shelter", "Logistics"].map(String::from).to_vec(),
            aodv: AodvParams::default(),
        }
    }
}

impl DiscoveryParams {
    pub fn validate(&self) -> Result<(), DiscoveryError> {
        let bad = |m: &str| Err(DiscoveryError::Config(m.to_string()));
        if self.node_count == 0 || self.service_count == 0 || self.query_count == 0 {
            return bad("node_count, service_count and query_count must be at least 1");
        }
        if self.service_count > self.node_count {
            return bad("service_count cannot exceed node_count");
        }
        if self.node_counts.iter().chain(&self.service_counts).any(|c| *c == 0) {
            return bad("swept counts must be at least 1");
        }
        if self.service_counts.iter().any(|s| *s > self.node_count) || self.node_counts.iter().any(|n| *n < self.service_count) {
            return bad("sweeps need at least as many nodes as services");
        }
        if !(self.advert_interval_s > 0.0 && self.advert_ttl_s > 0.0 && self.query_retry_s > 0.0 && self.query_deadline_s > 0.0) {
            return bad("discovery intervals must be positive");
        }
        if self.ontology_tags.is_empty() {
            return bad("ontology_tags must not be empty");
        }
        self.aodv.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct QueryMsg {
    query: usize,
    requester: NodeId,
    broadcast_id: u32,
    requester_seq: u32,
    hop_count: u32,
    ttl: u32,
}

#[derive(Debug, Clone, PartialEq)]
struct ReplyMsg {
    query: usize,
    requester: NodeId,
    descriptor: ServiceDescriptor,
    provider_hops: u32,
    provider_seq: u32,
}

#[derive(Debug, Clone)]
enum DiscEvent {
    Beacon,
    AdvertRound(NodeId),
    Advert { from: NodeId, to: NodeId, desc: ServiceDescriptor, provider_seq: u32 },
    Issue(usize),
    Retry(usize),
    Query { from: NodeId, to: NodeId, msg: QueryMsg },
    Reply { from: NodeId, to: NodeId, msg: ReplyMsg },
}

impl EventKind for DiscEvent {
    fn kind(&self) -> &'static str {
        match self {
            DiscEvent::Beacon => "beacon",
            DiscEvent::AdvertRound(_) => "advert-round",
            DiscEvent::Advert { .. } => "advert",
            DiscEvent::Issue(_) => "query-issue",
            DiscEvent::Retry(_) => "query-retry",
            DiscEvent::Query { .. } => "query",
            DiscEvent::Reply { .. } => "reply",
        }
    }
}

#[derive(Debug, Clone)]
struct DiscNode {
    aodv: AodvNode,
    cache: ServiceCache,
    hosted: Vec<HostedService>,
    seen_adverts: HashSet<(NodeId, String, u64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscoveryOutcome {
    pub service_id: String,
    pub provider: NodeId,
    /// Provider first, requester last.
    pub route: Vec<NodeId>,
    pub latency_s: f64,
    pub messages: u64,
    pub cache_hit: bool,
}

#[derive(Debug, Clone)]
struct QueryState {
    query: ServiceQuery,
    messages: u64,
    /// Whether a matching provider shared the requester's component at issue.
    reachable: bool,
    outcome: Option<DiscoveryOutcome>,
}

/// Nodes, their caches and route tables, and the event queue that moves
/// messages between them.
pub struct DiscoveryNetwork {
    params: DiscoveryParams,
    positions: Vec<NodeState>,
    mobile: Option<(Area, MobilityParams)>,
    graph: Adjacency,
    nodes: BTreeMap<NodeId, DiscNode>,
    radio: Radio,
    mobility_rng: RandomStream,
    sched: Scheduler<DiscEvent>,
    queries: Vec<QueryState>,
    pub rrep_dropped: u64,
    pub route_discoveries: u64,
}

impl DiscoveryNetwork {
    /// A network whose links never change.
    pub fn fixed(graph: Adjacency, params: DiscoveryParams, seed: u64, horizon: f64) -> Result<Self, DiscoveryError> {
        params.aodv.validate()?;
        let positions = graph.nodes().map(|n| NodeState::fixed(n, Role::RescueSu, geo::Point::default())).collect();
        Ok(Self::build(positions, None, graph, params, seed, horizon))
    }

    /// Nodes moving by random waypoint; links follow radio range.
    pub fn mobile(nodes: Vec<NodeState>, area: Area, mobility: MobilityParams, params: DiscoveryParams, seed: u64, horizon: f64) -> Result<Self, DiscoveryError> {
        params.aodv.validate()?;
        let graph = geo::neighbor_graph(&nodes);
        let mut net = Self::build(nodes, Some((area, mobility)), graph, params, seed, horizon);
        let dt = net.params.beacon_interval_s;
        net.sched.schedule(Target::System, DiscEvent::Beacon, dt).expect("future");
        Ok(net)
    }

    fn build(positions: Vec<NodeState>, mobile: Option<(Area, MobilityParams)>, graph: Adjacency, params: DiscoveryParams, seed: u64, horizon: f64) -> Self {
        let nodes = graph
            .nodes()
            .map(|id| {
                let node = DiscNode {
                    aodv: AodvNode::new(id, params.aodv.route_lifetime_s),
                    cache: ServiceCache::default(),
                    hosted: Vec::new(),
                    seen_adverts: HashSet::new(),
                };
                (id, node)
            })
            .collect();
        let radio = Radio::new(&params.aodv, RandomStream::new(seed, "discovery-radio"));
        DiscoveryNetwork {
            params,
            positions,
            mobile,
            graph,
            nodes,
            radio,
            mobility_rng: RandomStream::new(seed, "mobility"),
            sched: Scheduler::new(horizon),
            queries: Vec::new(),
            rrep_dropped: 0,
            route_discoveries: 0,
        }
    }

    pub fn now(&self) -> f64 {
        self.sched.now()
    }

    pub fn graph(&self) -> &Adjacency {
        &self.graph
    }

    pub fn transmissions(&self) -> u64 {
        self.radio.transmissions
    }

    pub fn host(&mut self, node: NodeId, service_id: &str, ontology: &str) -> Result<(), DiscoveryError> {
        let n = self.nodes.get_mut(&node).ok_or(DiscoveryError::UnknownNode(node))?;
        n.hosted.push(HostedService { service_id: service_id.to_string(), ontology: ontology.to_string() });
        Ok(())
    }

    pub fn cache(&self, node: NodeId) -> Option<&ServiceCache> {
        self.nodes.get(&node).map(|n| &n.cache)
    }

    pub fn next_hop(&self, node: NodeId, destination: NodeId) -> Option<NodeId> {
        self.nodes.get(&node)?.aodv.next_hop(destination, self.now())
    }

    /// Local answer without touching the network: hosted service, else cache.
    pub fn lookup_local(&self, node: NodeId, service_id: &str, ontology: Option<&str>) -> Option<ServiceDescriptor> {
        let n = self.nodes.get(&node)?;
        if let Some(h) = hosted_match(&n.hosted, service_id, ontology) {
            return Some(ServiceDescriptor {
                service_id: h.service_id.clone(),
                provider: node,
                ontology: h.ontology.clone(),
                route: vec![node],
                issued_at: self.now(),
                ttl: self.params.advert_ttl_s,
            });
        }
        n.cache.lookup(service_id, ontology, self.now()).map(|e| e.descriptor.clone())
    }

    /// Every provider starts advertising, with its first round at a random
    /// offset inside one interval after `at`.
    pub fn start_adverts(&mut self, at: f64, seed: u64) {
        let mut phase = RandomStream::new(seed, "advert-phase");
        let providers: Vec<NodeId> = self.nodes.iter().filter(|(_, n)| !n.hosted.is_empty()).map(|(id, _)| *id).collect();
        for p in providers {
            let t = at + phase.uniform(0.0, self.params.advert_interval_s);
            self.sched.schedule(Target::Node(p), DiscEvent::AdvertRound(p), t).expect("future");
        }
    }

    /// Queue a query to be issued at `at`; returns its handle.
    pub fn submit(&mut self, requester: NodeId, service_id: &str, ontology: Option<&str>, at: f64) -> Result<usize, DiscoveryError> {
        if !self.nodes.contains_key(&requester) {
            return Err(DiscoveryError::UnknownNode(requester));
        }
        let q = ServiceQuery {
            requester,
            service_id: service_id.to_string(),
            ontology: ontology.map(str::to_string),
            issued_at: at,
            deadline: at + self.params.query_deadline_s,
        };
        let id = self.queries.len();
        self.queries.push(QueryState { query: q, messages: 0, reachable: false, outcome: None });
        self.sched.schedule(Target::Node(requester), DiscEvent::Issue(id), at).map_err(|e| DiscoveryError::Config(e.to_string()))?;
        Ok(id)
    }

    pub fn outcome(&self, handle: usize) -> Result<DiscoveryOutcome, DiscoveryError> {
        let q = &self.queries[handle];
        q.outcome.clone().ok_or_else(|| DiscoveryError::Timeout { requester: q.query.requester, service: q.query.service_id.clone() })
    }

    pub fn reachable(&self, handle: usize) -> bool {
        self.queries[handle].reachable
    }

    /// Issue a query at `at` and run until it resolves or its deadline passes.
    pub fn discover(&mut self, requester: NodeId, service_id: &str, ontology: Option<&str>, at: f64) -> Result<DiscoveryOutcome, DiscoveryError> {
        let h = self.submit(requester, service_id, ontology, at)?;
        let deadline = self.queries[h].query.deadline;
        self.run_until(deadline);
        self.outcome(h)
    }

    pub fn discover_gateway(&mut self, requester: NodeId, at: f64) -> Result<DiscoveryOutcome, DiscoveryError> {
        self.discover(requester, GATEWAY_SERVICE, None, at)
    }

    /// Walk installed routes from `from` to `to` as a payload would, counting
    /// hops. A gap means a fresh route discovery would be needed.
    pub fn send_payload(&mut self, from: NodeId, to: NodeId) -> Result<usize, DiscoveryError> {
        let now = self.now();
        let graph = &self.graph;
        let nodes = &self.nodes;
        let path = follow_next_hops(from, to, |n| {
            let next = nodes.get(&n)?.aodv.next_hop(to, now)?;
            graph.has_edge(n, next).then_some(next)
        });
        match path {
            Ok(p) => {
                for n in &p[..p.len() - 1] {
                    self.nodes.get_mut(n).expect("on path").aodv.table.refresh(to, now);
                    self.radio.transmit();
                }
                Ok(p.len() - 1)
            }
            Err(e) => {
                self.route_discoveries += 1;
                Err(e.into())
            }
        }
    }

    pub fn run_until(&mut self, t: f64) {
        let mut sched = std::mem::replace(&mut self.sched, Scheduler::new(0.0));
        sched.run_until(t, |s, ev| self.handle(s, ev.payload)).expect("finite time");
        self.sched = sched;
    }

    fn handle(&mut self, s: &mut Scheduler<DiscEvent>, ev: DiscEvent) {
        let now = s.now();
        match ev {
            DiscEvent::Beacon => {
                if let Some((area, mob)) = &self.mobile {
                    let dt = self.params.beacon_interval_s;
                    for n in self.positions.iter_mut() {
                        *n = geo::step_waypoint(n, now, dt, area, mob, &mut self.mobility_rng);
                    }
                    self.graph = geo::neighbor_graph(&self.positions);
                    s.schedule_in(Target::System, DiscEvent::Beacon, dt).expect("future");
                }
            }
            DiscEvent::AdvertRound(p) => {
                let node = self.nodes.get_mut(&p).expect("provider");
                let provider_seq = node.aodv.seq;
                let descs: Vec<ServiceDescriptor> = node
                    .hosted
                    .iter()
                    .map(|h| ServiceDescriptor {
                        service_id: h.service_id.clone(),
                        provider: p,
                        ontology: h.ontology.clone(),
                        route: vec![p],
                        issued_at: now,
                        ttl: self.params.advert_ttl_s,
                    })
                    .collect();
                for d in descs {
                    self.broadcast(s, p, |from, to| DiscEvent::Advert { from, to, desc: d.clone(), provider_seq });
                }
                s.schedule_in(Target::Node(p), DiscEvent::AdvertRound(p), self.params.advert_interval_s).expect("future");
            }
            DiscEvent::Advert { from, to, mut desc, provider_seq } => {
                let node = self.nodes.get_mut(&to).expect("graph node");
                let key = (desc.provider, desc.service_id.clone(), desc.issued_at.to_bits());
                if desc.provider == to || desc.route.contains(&to) || !node.seen_adverts.insert(key) {
                    return;
                }
                desc.route.push(to);
                let hops = desc.route_hops();
                node.aodv.table.offer(desc.provider, from, hops as u32, provider_seq, now);
                node.cache.insert(desc.clone(), now);
                if hops < self.params.advert_hops {
                    self.broadcast(s, to, |from, to| DiscEvent::Advert { from, to, desc: desc.clone(), provider_seq });
                }
            }
            DiscEvent::Issue(q) => self.issue(s, q, true),
            DiscEvent::Retry(q) => self.issue(s, q, false),
            DiscEvent::Query { from, to, msg } => self.on_query(s, from, to, msg),
            DiscEvent::Reply { from, to, msg } => self.on_reply(s, from, to, msg),
        }
    }

    fn broadcast(&mut self, s: &mut Scheduler<DiscEvent>, from: NodeId, make: impl Fn(NodeId, NodeId) -> DiscEvent) {
        let delay = self.radio.transmit();
        let neigh: Vec<NodeId> = self.graph.neighbors(from).collect();
        for to in neigh {
            if self.radio.delivered() {
                s.schedule_in(Target::Node(to), make(from, to), delay).expect("future");
            }
        }
    }

    fn unicast(&mut self, s: &mut Scheduler<DiscEvent>, from: NodeId, to: NodeId, ev: DiscEvent) -> bool {
        let delay = self.radio.transmit();
        if self.graph.has_edge(from, to) && self.radio.delivered() {
            s.schedule_in(Target::Node(to), ev, delay).expect("future");
            true
        } else {
            false
        }
    }

    fn provider_reachable(&self, q: &ServiceQuery) -> bool {
        let comp = geo::component_index(&self.graph);
        let mine = comp.get(&q.requester);
        self.nodes
            .iter()
            .any(|(id, n)| hosted_match(&n.hosted, &q.service_id, q.ontology.as_deref()).is_some() && comp.get(id) == mine)
    }

    fn issue(&mut self, s: &mut Scheduler<DiscEvent>, q: usize, first: bool) {
        let now = s.now();
        let state = &self.queries[q];
        if state.outcome.is_some() || now >= state.query.deadline {
            return;
        }
        let query = state.query.clone();
        if first {
            self.queries[q].reachable = self.provider_reachable(&query);
            if let Some(desc) = self.lookup_local(query.requester, &query.service_id, query.ontology.as_deref()) {
                self.queries[q].outcome = Some(DiscoveryOutcome {
                    service_id: desc.service_id,
                    provider: desc.provider,
                    route: desc.route,
                    latency_s: 0.0,
                    messages: 0,
                    cache_hit: true,
                });
                return;
            }
        }
        let (broadcast_id, requester_seq) = self.nodes.get_mut(&query.requester).expect("requester").aodv.next_flood_id();
        let msg = QueryMsg { query: q, requester: query.requester, broadcast_id, requester_seq, hop_count: 0, ttl: self.params.aodv.ttl };
        self.queries[q].messages += 1;
        self.broadcast(s, query.requester, |from, to| DiscEvent::Query { from, to, msg: QueryMsg { hop_count: 1, ..msg.clone() } });
        let retry = now + self.params.query_retry_s;
        if retry < query.deadline {
            s.schedule(Target::Node(query.requester), DiscEvent::Retry(q), retry).expect("future");
        }
    }

    fn on_query(&mut self, s: &mut Scheduler<DiscEvent>, from: NodeId, to: NodeId, msg: QueryMsg) {
        let now = s.now();
        let (service_id, ontology) = {
            let q = &self.queries[msg.query].query;
            (q.service_id.clone(), q.ontology.clone())
        };
        let node = self.nodes.get_mut(&to).expect("graph node");
        if !node.aodv.first_sighting(msg.requester, msg.broadcast_id) {
            return;
        }
        node.aodv.table.offer(msg.requester, from, msg.hop_count, msg.requester_seq, now);
        let reply = if let Some(h) = hosted_match(&node.hosted, &service_id, ontology.as_deref()) {
            let desc = ServiceDescriptor {
                service_id: h.service_id.clone(),
                provider: to,
                ontology: h.ontology.clone(),
                route: vec![to],
                issued_at: now,
                ttl: self.params.advert_ttl_s,
            };
            node.aodv.seq += 1;
            Some(ReplyMsg { query: msg.query, requester: msg.requester, descriptor: desc, provider_hops: 0, provider_seq: node.aodv.seq })
        } else {
            node.cache.lookup(&service_id, ontology.as_deref(), now).and_then(|e| {
                let d = &e.descriptor;
                let route = node.aodv.table.lookup(d.provider, now)?;
                Some(ReplyMsg {
                    query: msg.query,
                    requester: msg.requester,
                    descriptor: d.clone(),
                    provider_hops: route.hop_count,
                    provider_seq: route.dest_seq,
                })
            })
        };
        match reply {
            Some(r) => {
                self.queries[msg.query].messages += 1;
                let ev = DiscEvent::Reply { from: to, to: from, msg: ReplyMsg { provider_hops: r.provider_hops + 1, ..r } };
                self.unicast(s, to, from, ev);
            }
            None if msg.ttl > 1 => {
                self.queries[msg.query].messages += 1;
                let fwd = QueryMsg { ttl: msg.ttl - 1, hop_count: msg.hop_count + 1, ..msg };
                self.broadcast(s, to, |from, to| DiscEvent::Query { from, to, msg: fwd.clone() });
            }
            None => {}
        }
    }

    fn on_reply(&mut self, s: &mut Scheduler<DiscEvent>, from: NodeId, to: NodeId, mut msg: ReplyMsg) {
        let now = s.now();
        let provider = msg.descriptor.provider;
        msg.descriptor.route.push(to);
        let node = self.nodes.get_mut(&to).expect("graph node");
        if to != provider {
            node.aodv.table.offer(provider, from, msg.provider_hops, msg.provider_seq, now);
            node.aodv.table.refresh(provider, now);
        }
        if to == msg.requester {
            node.cache.insert(msg.descriptor.clone(), now);
            let state = &mut self.queries[msg.query];
            if state.outcome.is_none() && now <= state.query.deadline {
                state.outcome = Some(DiscoveryOutcome {
                    service_id: msg.descriptor.service_id.clone(),
                    provider,
                    route: msg.descriptor.route,
                    latency_s: now - state.query.issued_at,
                    messages: state.messages,
                    cache_hit: false,
                });
            }
            return;
        }
        match node.aodv.next_hop(msg.requester, now) {
            Some(next) => {
                node.aodv.table.refresh(msg.requester, now);
                self.queries[msg.query].messages += 1;
                let ev = DiscEvent::Reply { from: to, to: next, msg: ReplyMsg { provider_hops: msg.provider_hops + 1, ..msg } };
                self.unicast(s, to, next, ev);
            }
            None => self.rrep_dropped += 1,
        }
    }
}

/// One latency run: who asked, how it resolved.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryResult {
    pub requester: NodeId,
    pub service_id: String,
    pub issued_at: f64,
    pub reachable: bool,
    pub cache_hit: Option<bool>,
    pub latency_s: Option<f64>,
    pub messages: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyRun {
    pub node_count: usize,
    pub service_count: usize,
    pub warm: bool,
    pub queries: Vec<QueryResult>,
}

impl LatencyRun {
    pub fn hit_latencies(&self) -> Vec<f64> {
        self.queries.iter().filter(|q| q.cache_hit == Some(true)).filter_map(|q| q.latency_s).collect()
    }

    pub fn miss_latencies(&self) -> Vec<f64> {
        self.queries.iter().filter(|q| q.cache_hit == Some(false)).filter_map(|q| q.latency_s).collect()
    }

    pub fn hit_messages(&self) -> u64 {
        self.queries.iter().filter(|q| q.cache_hit == Some(true)).map(|q| q.messages).sum()
    }

    /// Queries that failed although a provider was reachable when they were issued.
    pub fn reachable_failures(&self) -> usize {
        self.queries.iter().filter(|q| q.reachable && q.latency_s.is_none()).count()
    }

    pub fn mean_latency(&self) -> Option<f64> {
        mean(&self.queries.iter().filter_map(|q| q.latency_s).collect::<Vec<_>>())
    }
}

pub fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Side of the square that keeps `node_count` nodes at the default density.
pub fn area_for(node_count: usize, reference: &Area, reference_nodes: usize) -> Area {
    let scale = (node_count as f64 / reference_nodes as f64).sqrt();
    Area { width: reference.width * scale, height: reference.height * scale }
}

/// Random requesters ask for uniformly chosen services on a mobile network.
/// With `warm` the providers advertise from time zero; otherwise caches stay
/// cold and every query that is not served locally floods.
pub fn latency_experiment(
    params: &DiscoveryParams,
    node_count: usize,
    service_count: usize,
    area: &Area,
    mobility: &MobilityParams,
    horizon: f64,
    seed: u64,
    warm: bool,
) -> Result<LatencyRun, DiscoveryError> {
    params.aodv.validate()?;
    if service_count == 0 || service_count > node_count {
        return Err(DiscoveryError::Config("need 1 <= service_count <= node_count".into()));
    }
    let label = format!("{node_count}/{service_count}");
    let mut place = RandomStream::new(seed, format!("discovery-placement/{label}"));
    let nodes: Vec<NodeState> =
        (0..node_count).map(|i| NodeState::mobile(NodeId(i as u32), Role::RescueSu, area, mobility, &mut place)).collect();
    let mut net = DiscoveryNetwork::mobile(nodes, *area, *mobility, params.clone(), seed, horizon)?;
    let tags = &params.ontology_tags;
    for s in 0..service_count {
        net.host(NodeId(s as u32), &format!("svc-{s}"), &tags[s % tags.len()])?;
    }
    if warm {
        net.start_adverts(0.0, seed);
    }
    let mut qrng = RandomStream::new(seed, format!("queries/{label}"));
    let last = (horizon - params.query_deadline_s).max(params.warmup_s);
    let mut times: Vec<f64> = (0..params.query_count).map(|_| qrng.uniform(params.warmup_s, last)).collect();
    times.sort_by(f64::total_cmp);
    let mut handles = Vec::with_capacity(times.len());
    for t in times {
        let requester = NodeId(qrng.index(node_count) as u32);
        let service = format!("svc-{}", qrng.index(service_count));
        handles.push(net.submit(requester, &service, None, t)?);
    }
    net.run_until(horizon);
    let queries = handles
        .into_iter()
        .map(|h| {
            let st = &net.queries[h];
            QueryResult {
                requester: st.query.requester,
                service_id: st.query.service_id.clone(),
                issued_at: st.query.issued_at,
                reachable: st.reachable,
                cache_hit: st.outcome.as_ref().map(|o| o.cache_hit),
                latency_s: st.outcome.as_ref().map(|o| o.latency_s),
                messages: st.outcome.as_ref().map_or(st.messages, |o| o.messages),
            }
        })
        .collect();
    Ok(LatencyRun { node_count, service_count, warm, queries })
}
