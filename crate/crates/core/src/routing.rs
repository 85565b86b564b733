//! On-demand distance-vector routing: RREQ flood, RREP back along the reverse
//! path, and route tables ruled by destination sequence numbers.
//!
//! The protocol logic lives in [`AodvNode`] and is driven by whoever delivers
//! messages. [`AodvNetwork`] is a small driver for static topologies built on
//! the event kernel; discovery reuses the node logic on a moving network.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::Adjacency;
use crate::kernel::{EventKind, RandomStream, Scheduler, Target};
use crate::NodeId;

pub const DEFAULT_TTL: u32 = 20;
pub const DEFAULT_ROUTE_LIFETIME_S: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RoutingError {
    #[error("no route from {origin} to {destination} before the deadline")]
    Timeout { origin: NodeId, destination: NodeId },
    #[error("route from {origin} to {destination} revisits {at}")]
    Loop { origin: NodeId, destination: NodeId, at: NodeId },
    #[error("{at} has no route to {destination}")]
    NoRoute { at: NodeId, destination: NodeId },
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("{0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RouteEntry {
    pub destination: NodeId,
    pub next_hop: NodeId,
    pub hop_count: u32,
    pub dest_seq: u32,
    pub expires_at: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteTable {
    entries: BTreeMap<NodeId, RouteEntry>,
    lifetime: f64,
}

impl RouteTable {
    pub fn new(lifetime: f64) -> Self {
        RouteTable { entries: BTreeMap::new(), lifetime }
    }

    pub fn lifetime(&self) -> f64 {
        self.lifetime
    }

    /// Install a route if it is new, replaces an expired one, carries a higher
    /// sequence number, or ties on sequence with fewer hops.
    pub fn offer(&mut self, destination: NodeId, next_hop: NodeId, hop_count: u32, dest_seq: u32, now: f64) -> bool {
        debug_assert!(hop_count >= 1);
        let cand = RouteEntry { destination, next_hop, hop_count, dest_seq, expires_at: now + self.lifetime };
        let take = match self.entries.get(&destination) {
            None => true,
            Some(old) => {
                old.expires_at <= now
                    || dest_seq > old.dest_seq
                    || (dest_seq == old.dest_seq && hop_count < old.hop_count)
            }
        };
        if take {
            self.entries.insert(destination, cand);
        } else if let Some(old) = self.entries.get_mut(&destination) {
            // Same route heard again: keep it alive.
            if old.next_hop == next_hop && old.dest_seq == dest_seq && old.hop_count == hop_count {
                old.expires_at = old.expires_at.max(cand.expires_at);
            }
        }
        take
    }

    pub fn lookup(&self, destination: NodeId, now: f64) -> Option<&RouteEntry> {
        self.entries.get(&destination).filter(|e| e.expires_at > now)
    }

    pub fn next_hop(&self, destination: NodeId, now: f64) -> Option<NodeId> {
        self.lookup(destination, now).map(|e| e.next_hop)
    }

    /// Extend a live route's lifetime after it carried traffic.
    pub fn refresh(&mut self, destination: NodeId, now: f64) {
        if let Some(e) = self.entries.get_mut(&destination) {
            if e.expires_at > now {
                e.expires_at = now + self.lifetime;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rreq {
    pub origin: NodeId,
    pub destination: NodeId,
    pub broadcast_id: u32,
    pub origin_seq: u32,
    /// Last destination sequence number known to the origin, 0 when none.
    pub dest_seq: u32,
    /// Hops travelled so far; the link layer adds one per delivery.
    pub hop_count: u32,
    pub ttl: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rrep {
    pub origin: NodeId,
    pub destination: NodeId,
    pub dest_seq: u32,
    /// Hops from the current holder to `destination`.
    pub hop_count: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RreqOutcome {
    Duplicate,
    /// Send `rrep` to `to`, the next hop back toward the origin.
    Reply { to: NodeId, rrep: Rrep },
    Forward(Rreq),
    TtlExpired,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RrepOutcome {
    Arrived,
    Forward { to: NodeId, rrep: Rrep },
    Dropped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AodvNode {
    pub id: NodeId,
    pub seq: u32,
    next_broadcast: u32,
    pub table: RouteTable,
    seen: HashSet<(NodeId, u32)>,
}

impl AodvNode {
    pub fn new(id: NodeId, route_lifetime: f64) -> Self {
        AodvNode { id, seq: 0, next_broadcast: 0, table: RouteTable::new(route_lifetime), seen: HashSet::new() }
    }

    /// Fresh `(broadcast id, own sequence number)` for a new flood.
    pub fn next_flood_id(&mut self) -> (u32, u32) {
        self.seq += 1;
        self.next_broadcast += 1;
        self.seen.insert((self.id, self.next_broadcast));
        (self.next_broadcast, self.seq)
    }

    pub fn originate_rreq(&mut self, destination: NodeId, ttl: u32) -> Rreq {
        let (broadcast_id, origin_seq) = self.next_flood_id();
        let dest_seq = self.table.entries.get(&destination).map_or(0, |e| e.dest_seq);
        Rreq {
            origin: self.id,
            destination,
            broadcast_id,
            origin_seq,
            dest_seq,
            hop_count: 0,
            ttl,
        }
    }

    /// Record a flood id; false when it was already seen.
    pub fn first_sighting(&mut self, origin: NodeId, broadcast_id: u32) -> bool {
        self.seen.insert((origin, broadcast_id))
    }

    pub fn handle_rreq(&mut self, from: NodeId, rreq: &Rreq, now: f64) -> RreqOutcome {
        if !self.first_sighting(rreq.origin, rreq.broadcast_id) {
            return RreqOutcome::Duplicate;
        }
        self.table.offer(rreq.origin, from, rreq.hop_count, rreq.origin_seq, now);
        if rreq.destination == self.id {
            self.seq = self.seq.max(rreq.dest_seq) + 1;
            let rrep = Rrep { origin: rreq.origin, destination: self.id, dest_seq: self.seq, hop_count: 0 };
            return RreqOutcome::Reply { to: from, rrep };
        }
        if rreq.dest_seq > 0 {
            if let Some(e) = self.table.lookup(rreq.destination, now) {
                if e.dest_seq >= rreq.dest_seq {
                    let rrep = Rrep { origin: rreq.origin, destination: rreq.destination, dest_seq: e.dest_seq, hop_count: e.hop_count };
                    return RreqOutcome::Reply { to: from, rrep };
                }
            }
        }
        if rreq.ttl <= 1 {
            return RreqOutcome::TtlExpired;
        }
        RreqOutcome::Forward(Rreq { ttl: rreq.ttl - 1, ..rreq.clone() })
    }

    pub fn handle_rrep(&mut self, from: NodeId, rrep: &Rrep, now: f64) -> RrepOutcome {
        self.table.offer(rrep.destination, from, rrep.hop_count, rrep.dest_seq, now);
        if rrep.origin == self.id {
            return RrepOutcome::Arrived;
        }
        match self.table.next_hop(rrep.origin, now) {
            Some(to) => {
                self.table.refresh(rrep.origin, now);
                RrepOutcome::Forward { to, rrep: rrep.clone() }
            }
            None => RrepOutcome::Dropped,
        }
    }

    pub fn next_hop(&self, destination: NodeId, now: f64) -> Option<NodeId> {
        self.table.next_hop(destination, now)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AodvParams {
    pub hop_delay_min_s: f64,
    pub hop_delay_max_s: f64,
    pub loss_rate: f64,
    pub ttl: u32,
    pub route_lifetime_s: f64,
}

impl Default for AodvParams {
    fn default() -> Self {
        AodvParams {
            hop_delay_min_s: 0.001,
            hop_delay_max_s: 0.005,
            loss_rate: 0.0,
            ttl: DEFAULT_TTL,
            route_lifetime_s: DEFAULT_ROUTE_LIFETIME_S,
        }
    }
}

impl AodvParams {
    pub fn validate(&self) -> Result<(), RoutingError> {
        if !(self.hop_delay_min_s > 0.0 && self.hop_delay_max_s >= self.hop_delay_min_s) {
            return Err(RoutingError::Config("hop delay range must be positive and ordered".into()));
        }
        if !(0.0..=1.0).contains(&self.loss_rate) {
            return Err(RoutingError::Config("loss_rate must lie in [0, 1]".into()));
        }
        if self.ttl == 0 || self.route_lifetime_s <= 0.0 {
            return Err(RoutingError::Config("ttl and route_lifetime_s must be positive".into()));
        }
        Ok(())
    }
}

/// Link-layer contract: every transmission takes one uniform hop delay and
/// each receiver independently loses it with `loss_rate`.
#[derive(Debug, Clone)]
pub struct Radio {
    min: f64,
    max: f64,
    loss: f64,
    rng: RandomStream,
    pub transmissions: u64,
}

impl Radio {
    pub fn new(params: &AodvParams, rng: RandomStream) -> Self {
        Radio { min: params.hop_delay_min_s, max: params.hop_delay_max_s, loss: params.loss_rate, rng, transmissions: 0 }
    }

    /// Count a transmission and return its delay.
    pub fn transmit(&mut self) -> f64 {
        self.transmissions += 1;
        if self.max > self.min {
            self.rng.uniform(self.min, self.max)
        } else {
            self.min
        }
    }

    pub fn delivered(&mut self) -> bool {
        self.loss <= 0.0 || !self.rng.bernoulli(self.loss)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct AodvStats {
    pub rreq_originated: u64,
    pub rreq_forwards: u64,
    pub rrep_sent: u64,
    pub rrep_dropped: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RouteDiscovery {
    pub hop_count: u32,
    pub latency_s: f64,
}

#[derive(Debug, Clone)]
enum AodvEvent {
    Rreq { from: NodeId, to: NodeId, rreq: Rreq },
    Rrep { from: NodeId, to: NodeId, rrep: Rrep },
}

impl EventKind for AodvEvent {
    fn kind(&self) -> &'static str {
        match self {
            AodvEvent::Rreq { .. } => "rreq",
            AodvEvent::Rrep { .. } => "rrep",
        }
    }
}

/// AODV over a fixed neighbor graph.
#[derive(Debug, Clone)]
pub struct AodvNetwork {
    graph: Adjacency,
    nodes: BTreeMap<NodeId, AodvNode>,
    params: AodvParams,
    radio: Radio,
    pub stats: AodvStats,
}

impl AodvNetwork {
    pub fn new(graph: Adjacency, params: AodvParams, seed: u64) -> Result<Self, RoutingError> {
        params.validate()?;
        let nodes = graph.nodes().map(|n| (n, AodvNode::new(n, params.route_lifetime_s))).collect();
        let radio = Radio::new(&params, RandomStream::new(seed, "aodv-radio"));
        Ok(AodvNetwork { graph, nodes, params, radio, stats: AodvStats::default() })
    }

    pub fn node(&self, id: NodeId) -> Option<&AodvNode> {
        self.nodes.get(&id)
    }

    pub fn node_mut(&mut self, id: NodeId) -> Option<&mut AodvNode> {
        self.nodes.get_mut(&id)
    }

    pub fn transmissions(&self) -> u64 {
        self.radio.transmissions
    }

    fn broadcast(&mut self, s: &mut Scheduler<AodvEvent>, from: NodeId, rreq: Rreq) {
        let delay = self.radio.transmit();
        let neigh: Vec<NodeId> = self.graph.neighbors(from).collect();
        for to in neigh {
            if self.radio.delivered() {
                let mut r = rreq.clone();
                r.hop_count += 1;
                s.schedule_in(Target::Node(to), AodvEvent::Rreq { from, to, rreq: r }, delay).expect("future");
            }
        }
    }

    fn unicast(&mut self, s: &mut Scheduler<AodvEvent>, from: NodeId, to: NodeId, mut rrep: Rrep) {
        let delay = self.radio.transmit();
        if self.graph.has_edge(from, to) && self.radio.delivered() {
            rrep.hop_count += 1;
            s.schedule_in(Target::Node(to), AodvEvent::Rrep { from, to, rrep }, delay).expect("future");
        }
    }

    /// Flood for a route from `origin` to `destination`, starting at `start`
    /// and giving up at `deadline`.
    pub fn discover_route(&mut self, origin: NodeId, destination: NodeId, start: f64, deadline: f64) -> Result<RouteDiscovery, RoutingError> {
        for n in [origin, destination] {
            if !self.nodes.contains_key(&n) {
                return Err(RoutingError::UnknownNode(n));
            }
        }
        if let Some(e) = self.nodes[&origin].table.lookup(destination, start) {
            return Ok(RouteDiscovery { hop_count: e.hop_count, latency_s: 0.0 });
        }
        let mut s: Scheduler<AodvEvent> = Scheduler::new(deadline);
        let rreq = self.nodes.get_mut(&origin).expect("checked").originate_rreq(destination, self.params.ttl);
        self.stats.rreq_originated += 1;
        let mut arrived: Option<f64> = None;
        // Seed the flood at `start` by broadcasting from a scheduler advanced there.
        s.run_until(start, |_, _| {}).expect("finite");
        self.broadcast(&mut s, origin, rreq);
        s.run_until(deadline, |s, ev| match ev.payload {
            AodvEvent::Rreq { from, to, rreq } => {
                let now = s.now();
                let out = self.nodes.get_mut(&to).expect("graph node").handle_rreq(from, &rreq, now);
                match out {
                    RreqOutcome::Forward(r) => {
                        self.stats.rreq_forwards += 1;
                        self.broadcast(s, to, r);
                    }
                    RreqOutcome::Reply { to: next, rrep } => {
                        self.stats.rrep_sent += 1;
                        self.unicast(s, to, next, rrep);
                    }
                    RreqOutcome::Duplicate | RreqOutcome::TtlExpired => {}
                }
            }
            AodvEvent::Rrep { from, to, rrep } => {
                let now = s.now();
                match self.nodes.get_mut(&to).expect("graph node").handle_rrep(from, &rrep, now) {
                    RrepOutcome::Arrived => {
                        if arrived.is_none() && rrep.destination == destination && to == origin {
                            arrived = Some(now);
                        }
                    }
                    RrepOutcome::Forward { to: next, rrep } => self.unicast(s, to, next, rrep),
                    RrepOutcome::Dropped => self.stats.rrep_dropped += 1,
                }
            }
        })
        .expect("finite");
        match arrived {
            Some(t) => {
                let hop_count = self.nodes[&origin].table.lookup(destination, t).map_or(0, |e| e.hop_count);
                Ok(RouteDiscovery { hop_count, latency_s: t - start })
            }
            None => Err(RoutingError::Timeout { origin, destination }),
        }
    }

    /// Follow next-hop pointers from `origin`; fails on a gap or a revisit.
    pub fn route_path(&self, origin: NodeId, destination: NodeId, now: f64) -> Result<Vec<NodeId>, RoutingError> {
        follow_next_hops(origin, destination, |n| self.nodes.get(&n).and_then(|x| x.next_hop(destination, now)))
    }
}

/// Walk `next(node)` from `origin` until `destination`.
pub fn follow_next_hops(
    origin: NodeId,
    destination: NodeId,
    next: impl Fn(NodeId) -> Option<NodeId>,
) -> Result<Vec<NodeId>, RoutingError> {
    let mut path = vec![origin];
    let mut visited = HashSet::from([origin]);
    let mut at = origin;
    while at != destination {
        let n = next(at).ok_or(RoutingError::NoRoute { at, destination })?;
        if !visited.insert(n) {
            return Err(RoutingError::Loop { origin, destination, at: n });
        }
        path.push(n);
        at = n;
    }
    Ok(path)
}
