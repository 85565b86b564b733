//! Discrete-event kernel: a time-ordered event queue, the simulation clock and
//! named, seeded random streams.
//!
//! Events execute in `(at, id)` order. Ids are handed out in scheduling order,
//! so two events at the same instant run first-scheduled first.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::fmt;

use ordered_float::OrderedFloat;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use thiserror::Error;

use crate::NodeId;

/// Default horizon of a run, in seconds.
pub const DEFAULT_SIM_TIME_S: f64 = 500.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KernelError {
    #[error("cannot schedule at t={at} s: clock is already at {now} s")]
    PastTime { at: f64, now: f64 },
    #[error("event time {0} is not a finite number")]
    NonFinite(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventId(pub u64);

impl fmt::Display for EventId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Who an event is addressed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Target {
    System,
    Node(NodeId),
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::System => write!(f, "system"),
            Target::Node(n) => write!(f, "{n}"),
        }
    }
}

/// Short label for an event payload, used in trace dumps.
pub trait EventKind {
    fn kind(&self) -> &'static str;
}

#[derive(Debug, Clone)]
pub struct SimEvent<P> {
    pub id: EventId,
    pub at: f64,
    pub target: Target,
    pub payload: P,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimClock {
    pub now: f64,
    pub end: f64,
}

impl Default for SimClock {
    fn default() -> Self {
        SimClock { now: 0.0, end: DEFAULT_SIM_TIME_S }
    }
}

/// The event queue plus clock. Client modules pick their own payload type.
pub struct Scheduler<P> {
    clock: SimClock,
    next_id: u64,
    heap: BinaryHeap<Reverse<(OrderedFloat<f64>, u64)>>,
    pending: HashMap<u64, SimEvent<P>>,
    trace: Option<Vec<String>>,
}

impl<P> Default for Scheduler<P> {
    fn default() -> Self {
        Self::new(DEFAULT_SIM_TIME_S)
    }
}

impl<P> Scheduler<P> {
    pub fn new(end: f64) -> Self {
        Scheduler {
            clock: SimClock { now: 0.0, end },
            next_id: 1,
            heap: BinaryHeap::new(),
            pending: HashMap::new(),
            trace: None,
        }
    }

    pub fn now(&self) -> f64 {
        self.clock.now
    }

    pub fn clock(&self) -> SimClock {
        self.clock
    }

    /// Record one `time,id,target,kind` line per executed event from now on.
    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn trace(&self) -> Option<&[String]> {
        self.trace.as_deref()
    }

    pub fn pending_count(&self) -> usize {
        self.pending.len()
    }

    pub fn is_pending(&self, id: EventId) -> bool {
        self.pending.contains_key(&id.0)
    }

    pub fn schedule(&mut self, target: Target, payload: P, at: f64) -> Result<EventId, KernelError> {
        if !at.is_finite() {
            return Err(KernelError::NonFinite(at));
        }
        if at < self.clock.now {
            return Err(KernelError::PastTime { at, now: self.clock.now });
        }
        let id = self.next_id;
        self.next_id += 1;
        self.heap.push(Reverse((OrderedFloat(at), id)));
        self.pending.insert(id, SimEvent { id: EventId(id), at, target, payload });
        Ok(EventId(id))
    }

    /// Schedule `delay` seconds after the current clock.
    pub fn schedule_in(&mut self, target: Target, payload: P, delay: f64) -> Result<EventId, KernelError> {
        self.schedule(target, payload, self.clock.now + delay)
    }

    pub fn cancel(&mut self, id: EventId) -> bool {
        // The heap entry stays behind and is skipped when popped.
        self.pending.remove(&id.0).is_some()
    }

    /// Time of the next pending event, if any.
    pub fn peek_time(&mut self) -> Option<f64> {
        while let Some(Reverse((at, id))) = self.heap.peek().copied() {
            if self.pending.contains_key(&id) {
                return Some(at.0);
            }
            self.heap.pop();
        }
        None
    }

    fn pop_due(&mut self, horizon: f64) -> Option<SimEvent<P>> {
        let at = self.peek_time()?;
        if at > horizon {
            return None;
        }
        let Reverse((_, id)) = self.heap.pop()?;
        self.pending.remove(&id)
    }
}

impl<P: EventKind> Scheduler<P> {
    /// Execute every event with `at <= t_end` in `(at, id)` order, including
    /// events that handlers schedule along the way, then park the clock at
    /// `t_end`. Returns how many events ran.
    pub fn run_until<F>(&mut self, t_end: f64, mut handler: F) -> Result<usize, KernelError>
    where
        F: FnMut(&mut Scheduler<P>, SimEvent<P>),
    {
        if !t_end.is_finite() {
            return Err(KernelError::NonFinite(t_end));
        }
        if t_end < self.clock.now {
            return Err(KernelError::PastTime { at: t_end, now: self.clock.now });
        }
        let mut executed = 0;
        while let Some(ev) = self.pop_due(t_end) {
            self.clock.now = ev.at;
            if let Some(trace) = self.trace.as_mut() {
                trace.push(format!("{:.9},{},{},{}", ev.at, ev.id, ev.target, ev.payload.kind()));
            }
            executed += 1;
            handler(self, ev);
        }
        self.clock.now = t_end;
        Ok(executed)
    }
}

/// A reproducible random stream keyed by `(seed, label)`.
///
/// Each concern draws from its own stream so that changing how often one
/// subsystem samples does not shift the draws another subsystem sees.
#[derive(Debug, Clone)]
pub struct RandomStream {
    seed: u64,
    label: String,
    rng: ChaCha8Rng,
}

fn label_hash(label: &str) -> u64 {
    // FNV-1a, stable across platforms and releases.
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

impl RandomStream {
    pub fn new(seed: u64, label: impl Into<String>) -> Self {
        let label = label.into();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(label_hash(&label));
        RandomStream { seed, label, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Uniform in `[lo, hi)`; returns `lo` when the interval is empty.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return lo;
        }
        lo + (hi - lo) * self.rng.random::<f64>()
    }

    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        p > 0.0 && self.rng.random::<f64>() < p
    }

    pub fn exponential(&mut self, mean: f64) -> f64 {
        Exp::new(1.0 / mean).expect("positive mean").sample(&mut self.rng)
    }

    pub fn normal(&mut self, mean: f64, sd: f64) -> f64 {
        Normal::new(mean, sd).expect("finite sd").sample(&mut self.rng)
    }
}

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}
