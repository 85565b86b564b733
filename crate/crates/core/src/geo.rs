//! Node placement, random-waypoint mobility, free-space propagation and the
//! beacon neighbor graph.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::RandomStream;
use crate::NodeId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeoError {
    #[error("free-space model is singular at distance {0} m")]
    Singularity(f64),
    #[error("wavelength must be positive, got {0} m")]
    BadWavelength(f64),
    #[error("area dimensions must be positive, got {width} x {height} m")]
    BadArea { width: f64, height: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Area {
    pub width: f64,
    pub height: f64,
}

impl Default for Area {
    fn default() -> Self {
        Area { width: 1000.0, height: 1000.0 }
    }
}

impl Area {
    pub fn new(width: f64, height: f64) -> Result<Self, GeoError> {
        if !(width > 0.0 && height > 0.0) {
            return Err(GeoError::BadArea { width, height });
        }
        Ok(Area { width, height })
    }

    pub fn contains(&self, p: Point) -> bool {
        (0.0..=self.width).contains(&p.x) && (0.0..=self.height).contains(&p.y)
    }

    pub fn clamp(&self, p: Point) -> Point {
        Point::new(p.x.clamp(0.0, self.width), p.y.clamp(0.0, self.height))
    }

    pub fn random_point(&self, rng: &mut RandomStream) -> Point {
        Point::new(rng.uniform(0.0, self.width), rng.uniform(0.0, self.height))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Sensor,
    ClusterHead,
    Sink,
    Detector,
    RescueSu,
    PrimaryUser,
    Gateway,
}

impl Role {
    /// The sensing tier is a fixed deployment.
    pub fn is_static(self) -> bool {
        matches!(self, Role::Sensor | Role::ClusterHead | Role::Sink | Role::Detector)
    }
}

/// Random-waypoint parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MobilityParams {
    pub v_min: f64,
    pub v_max: f64,
    pub pause_max: f64,
}

impl Default for MobilityParams {
    fn default() -> Self {
        MobilityParams { v_min: 1.0, v_max: 5.0, pause_max: 10.0 }
    }
}

/// Free-space link budget: carrier wavelength and receiver sensitivity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    pub wavelength_m: f64,
    pub rx_sensitivity_w: f64,
}

/// 2.4 GHz ISM carrier.
pub const ISM_WAVELENGTH_M: f64 = 0.125;
pub const DEFAULT_TX_POWER_W: f64 = 0.1;
pub const DEFAULT_RADIO_RANGE_M: f64 = 250.0;

impl LinkBudget {
    /// The sensitivity at which a unit-gain transmitter at `tx_power_w` is
    /// heard out to exactly `range_m`.
    pub fn for_range(range_m: f64, tx_power_w: f64, wavelength_m: f64) -> Self {
        let sens = friis_received_power(tx_power_w, 1.0, 1.0, wavelength_m, range_m)
            .expect("positive range and wavelength");
        LinkBudget { wavelength_m, rx_sensitivity_w: sens }
    }

    /// Distance at which received power falls to the sensitivity threshold.
    pub fn range_m(&self, tx_power_w: f64, gain_tx: f64, gain_rx: f64) -> f64 {
        self.wavelength_m / (4.0 * PI) * (tx_power_w * gain_tx * gain_rx / self.rx_sensitivity_w).sqrt()
    }

    pub fn hears(&self, tx_power_w: f64, gain_tx: f64, gain_rx: f64, distance: f64) -> bool {
        match friis_received_power(tx_power_w, gain_tx, gain_rx, self.wavelength_m, distance) {
            Ok(p) => p >= self.rx_sensitivity_w,
            Err(_) => true,
        }
    }
}

impl Default for LinkBudget {
    fn default() -> Self {
        LinkBudget::for_range(DEFAULT_RADIO_RANGE_M, DEFAULT_TX_POWER_W, ISM_WAVELENGTH_M)
    }
}

/// Received power under the Friis free-space model, in watts.
pub fn friis_received_power(
    tx_power: f64,
    gain_tx: f64,
    gain_rx: f64,
    wavelength: f64,
    distance: f64,
) -> Result<f64, GeoError> {
    if !(wavelength > 0.0) {
        return Err(GeoError::BadWavelength(wavelength));
    }
    if !(distance > 0.0) {
        return Err(GeoError::Singularity(distance));
    }
    let denom = (4.0 * PI * distance).powi(2);
    Ok(tx_power * gain_tx * gain_rx * wavelength * wavelength / denom)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * (w * 1000.0).log10()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeState {
    pub id: NodeId,
    pub position: Point,
    pub speed: f64,
    pub waypoint: Point,
    pub pause_until: f64,
    pub role: Role,
    pub tx_power_w: f64,
    pub antenna_gain: f64,
    pub radio_range_m: f64,
}

impl NodeState {
    /// A fixed node with default radio parameters.
    pub fn fixed(id: NodeId, role: Role, position: Point) -> Self {
        NodeState {
            id,
            position,
            speed: 0.0,
            waypoint: position,
            pause_until: 0.0,
            role,
            tx_power_w: DEFAULT_TX_POWER_W,
            antenna_gain: 1.0,
            radio_range_m: DEFAULT_RADIO_RANGE_M,
        }
    }

    /// A mobile node at a uniform position, heading for its first waypoint.
    pub fn mobile(id: NodeId, role: Role, area: &Area, params: &MobilityParams, rng: &mut RandomStream) -> Self {
        let position = area.random_point(rng);
        let waypoint = area.random_point(rng);
        let speed = rng.uniform(params.v_min, params.v_max);
        NodeState { position, waypoint, speed, ..NodeState::fixed(id, role, position) }
    }

    pub fn with_range(mut self, range_m: f64) -> Self {
        self.radio_range_m = range_m;
        self
    }
}

/// Advance a node by `dt` seconds of random-waypoint motion starting at `now`.
///
/// On reaching its waypoint the node parks for a pause drawn uniformly from
/// `[0, pause_max]`, then leaves for a fresh uniform waypoint at a fresh
/// uniform speed. Nodes with zero speed never move.
pub fn step_waypoint(
    node: &NodeState,
    now: f64,
    dt: f64,
    area: &Area,
    params: &MobilityParams,
    rng: &mut RandomStream,
) -> NodeState {
    let mut n = node.clone();
    if n.speed <= 0.0 || dt <= 0.0 {
        return n;
    }
    let end = now + dt;
    let mut t = now;
    // Bounded so a degenerate config (zero pauses, waypoint == position) cannot spin.
    for _ in 0..1024 {
        if t >= end {
            break;
        }
        if t < n.pause_until {
            t = n.pause_until.min(end);
            continue;
        }
        let dist = n.position.distance(n.waypoint);
        let reach = n.speed * (end - t);
        if dist <= reach {
            t += dist / n.speed;
            n.position = n.waypoint;
            n.pause_until = t + rng.uniform(0.0, params.pause_max);
            n.waypoint = area.random_point(rng);
            n.speed = rng.uniform(params.v_min, params.v_max).max(f64::MIN_POSITIVE);
        } else {
            let f = reach / dist;
            n.position = Point::new(
                n.position.x + (n.waypoint.x - n.position.x) * f,
                n.position.y + (n.waypoint.y - n.position.y) * f,
            );
            t = end;
        }
    }
    n.position = area.clamp(n.position);
    n
}

/// Undirected neighbor graph keyed by node id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Adjacency {
    adj: BTreeMap<NodeId, BTreeSet<NodeId>>,
}

impl Adjacency {
    pub fn with_nodes(ids: impl IntoIterator<Item = NodeId>) -> Self {
        Adjacency { adj: ids.into_iter().map(|id| (id, BTreeSet::new())).collect() }
    }

    pub fn add_edge(&mut self, a: NodeId, b: NodeId) {
        if a == b {
            return;
        }
        self.adj.entry(a).or_default().insert(b);
        self.adj.entry(b).or_default().insert(a);
    }

    pub fn has_edge(&self, a: NodeId, b: NodeId) -> bool {
        self.adj.get(&a).is_some_and(|s| s.contains(&b))
    }

    pub fn neighbors(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.adj.get(&id).into_iter().flat_map(|s| s.iter().copied())
    }

    pub fn degree(&self, id: NodeId) -> usize {
        self.adj.get(&id).map_or(0, BTreeSet::len)
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.adj.keys().copied()
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adj.values().map(BTreeSet::len).sum::<usize>() / 2
    }
}

/// Beacon-range neighbor graph: `a` and `b` are neighbors when each hears the
/// other, i.e. their distance is within both radio ranges.
pub fn neighbor_graph(nodes: &[NodeState]) -> Adjacency {
    let mut g = Adjacency::with_nodes(nodes.iter().map(|n| n.id));
    for (i, a) in nodes.iter().enumerate() {
        for b in &nodes[i + 1..] {
            let d = a.position.distance(b.position);
            if d <= a.radio_range_m.min(b.radio_range_m) {
                g.add_edge(a.id, b.id);
            }
        }
    }
    g
}

/// Connected components, each sorted by id, ordered by their smallest id.
pub fn connectivity_components(graph: &Adjacency) -> Vec<Vec<NodeId>> {
    let ids: Vec<NodeId> = graph.nodes().collect();
    let index: BTreeMap<NodeId, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let mut parent: Vec<usize> = (0..ids.len()).collect();

    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }

    for (i, id) in ids.iter().enumerate() {
        for nb in graph.neighbors(*id) {
            let (ra, rb) = (find(&mut parent, i), find(&mut parent, index[&nb]));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<NodeId>> = BTreeMap::new();
    for (i, id) in ids.iter().enumerate() {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(*id);
    }
    groups.into_values().collect()
}

/// Component membership lookup built from [`connectivity_components`].
pub fn component_index(graph: &Adjacency) -> BTreeMap<NodeId, usize> {
    connectivity_components(graph)
        .into_iter()
        .enumerate()
        .flat_map(|(c, members)| members.into_iter().map(move |id| (id, c)))
        .collect()
}
