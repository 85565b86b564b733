//! Primary-user activity, spectrum holes, and hole selection for secondary
//! users.
//!
//! Every channel is licensed to at most one primary user (PU). A secondary
//! user (SU) may occupy a channel only while its PU is idle and is evicted the
//! instant the PU transmits again; the time it got to stay is its switching
//! time. The history-aware policy scores each hole with an MLP trained online
//! on the PU's recent session lengths, signal strength and mobility; the
//! baseline ignores history and picks uniformly.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{self, Area, LinkBudget, MobilityParams, NodeState, Point, Role};
use crate::kernel::{EventKind, RandomStream, Scheduler, Target};
use crate::mlp::{Loss, MlpError, MlpModel, OutputActivation, TrainConfig};
use crate::NodeId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpectrumError {
    #[error("session ({start}, {end}) is reversed or empty")]
    ReversedSession { start: f64, end: f64 },
    #[error("session starting at {start} overlaps the previous one ending at {previous_end}")]
    OverlappingSession { start: f64, previous_end: f64 },
    #[error("PU {0} is transmitting; features are only defined for holes")]
    NotIdle(usize),
    #[error("no spectrum hole available")]
    NoSpectrum,
    #[error("channel {0} has no usage log")]
    MissingLog(usize),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] MlpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PuState {
    Transmitting,
    Idle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Channel {
    pub index: usize,
    pub licensed_pu: Option<usize>,
}

/// Sliding record of one PU's last `n` transmission sessions plus its
/// current state, signal strength and speed.
#[derive(Debug, Clone, PartialEq)]
pub struct PuUsageLog {
    pub pu: usize,
    pub channel: usize,
    window: usize,
    durations: VecDeque<f64>,
    pub signal_strength_dbm: f64,
    pub mobility_mps: f64,
    state: PuState,
    state_since: f64,
    last_end: Option<f64>,
}

impl PuUsageLog {
    pub fn new(pu: usize, channel: usize, window: usize, state: PuState, since: f64) -> Self {
        PuUsageLog {
            pu,
            channel,
            window,
            durations: VecDeque::with_capacity(window),
            signal_strength_dbm: 0.0,
            mobility_mps: 0.0,
            state,
            state_since: since,
            last_end: None,
        }
    }

    /// Session lengths, oldest first.
    pub fn durations(&self) -> Vec<f64> {
        self.durations.iter().copied().collect()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn state(&self) -> PuState {
        self.state
    }

    pub fn state_since(&self) -> f64 {
        self.state_since
    }

    pub fn set_state(&mut self, state: PuState, at: f64) {
        if state != self.state {
            self.state = state;
            self.state_since = at;
        }
    }

    /// Append a finished session, keeping only the newest `n`.
    pub fn record_session(&mut self, start: f64, end: f64) -> Result<(), SpectrumError> {
        if !(end > start) {
            return Err(SpectrumError::ReversedSession { start, end });
        }
        if let Some(prev) = self.last_end {
            if start < prev {
                return Err(SpectrumError::OverlappingSession { start, previous_end: prev });
            }
        }
        self.durations.push_back(end - start);
        while self.durations.len() > self.window {
            self.durations.pop_front();
        }
        self.last_end = Some(end);
        Ok(())
    }

    /// Seed the window directly, oldest first.
    pub fn with_durations(mut self, durations: &[f64]) -> Self {
        for d in durations {
            self.durations.push_back(*d);
        }
        while self.durations.len() > self.window {
            self.durations.pop_front();
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumHole {
    pub channel: usize,
    pub idle_since: f64,
}

/// Channels whose PU is idle at `t`; unlicensed channels are always holes.
pub fn spectrum_holes(channels: &[Channel], logs: &BTreeMap<usize, PuUsageLog>, t: f64) -> Result<Vec<SpectrumHole>, SpectrumError> {
    let _ = t;
    let mut holes = Vec::new();
    for ch in channels {
        match ch.licensed_pu {
            None => holes.push(SpectrumHole { channel: ch.index, idle_since: 0.0 }),
            Some(pu) => {
                let log = logs.get(&pu).ok_or(SpectrumError::MissingLog(ch.index))?;
                if log.state == PuState::Idle {
                    holes.push(SpectrumHole { channel: ch.index, idle_since: log.state_since });
                }
            }
        }
    }
    Ok(holes)
}

/// `[n zero-padded session lengths (oldest first), signal dBm, speed, idle so far]`.
pub fn extract_features(log: &PuUsageLog, t: f64) -> Result<Vec<f64>, SpectrumError> {
    if log.state != PuState::Idle {
        return Err(SpectrumError::NotIdle(log.pu));
    }
    let mut v = vec![0.0; log.window - log.durations.len()];
    v.extend(log.durations.iter());
    v.push(log.signal_strength_dbm);
    v.push(log.mobility_mps);
    v.push(t - log.state_since);
    Ok(v)
}

/// Predicted remaining idle seconds, clamped at zero.
pub fn score_hole(model: &MlpModel, features: &[f64]) -> Result<f64, SpectrumError> {
    Ok(model.forward(features)?[0].max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    MlpHistory,
    RandomBaseline,
}

impl Policy {
    pub fn name(self) -> &'static str {
        match self {
            Policy::MlpHistory => "mlp-history",
            Policy::RandomBaseline => "random-baseline",
        }
    }
}

/// Pick a channel among `holes`. `scores` is parallel to `holes` and only
/// read by the history policy: highest score wins, lowest channel on ties.
pub fn select_hole(holes: &[SpectrumHole], scores: &[f64], policy: Policy, rng: &mut RandomStream) -> Result<usize, SpectrumError> {
    if holes.is_empty() {
        return Err(SpectrumError::NoSpectrum);
    }
    match policy {
        Policy::MlpHistory => {
            let mut best = 0;
            for i in 1..holes.len() {
                let (s, b) = (scores[i], scores[best]);
                if s > b || (s == b && holes[i].channel < holes[best].channel) {
                    best = i;
                }
            }
            Ok(holes[best].channel)
        }
        Policy::RandomBaseline => Ok(holes[rng.index(holes.len())].channel),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SuAssignment {
    pub su: usize,
    pub channel: usize,
    pub assigned_at: f64,
    /// `None` when the run ended with the SU still on the channel.
    pub evicted_at: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct SwitchingStats {
    pub mean: Option<f64>,
    pub samples: usize,
}

/// Mean of `evicted_at - assigned_at` over closed assignments.
pub fn switching_time_metric(assignments: &[SuAssignment]) -> SwitchingStats {
    let samples: Vec<f64> = assignments.iter().filter_map(|a| a.evicted_at.map(|e| e - a.assigned_at)).collect();
    SwitchingStats {
        mean: (!samples.is_empty()).then(|| samples.iter().sum::<f64>() / samples.len() as f64),
        samples: samples.len(),
    }
}

/// How a PU alternates between transmitting and idle.
#[derive(Debug, Clone, PartialEq)]
pub enum PuActivity {
    /// Alternating renewal process with exponential busy and idle periods.
    Renewal { mean_busy: f64, mean_idle: f64 },
    /// Fixed busy intervals `(start, end)`; idle everywhere else.
    Scripted(Vec<(f64, f64)>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumParams {
    pub su_count: usize,
    pub pu_counts: Vec<usize>,
    pub n_window: usize,
    pub policies: Vec<Policy>,
    /// Per-PU mean idle period is drawn uniformly from this range.
    pub idle_mean_range_s: [f64; 2],
    /// Per-PU mean busy period is the idle mean times a factor from this range.
    pub busy_ratio_range: [f64; 2],
    pub pu_tx_power_w: f64,
    pub warmup_samples: usize,
    pub observe_interval_s: f64,
    pub refit_every: usize,
    pub max_training_samples: usize,
    pub hidden_units: usize,
    pub initial_epochs: usize,
    pub refit_epochs: usize,
    pub learning_rate: f64,
    pub beacon_interval_s: f64,
}

impl Default for SpectrumParams {
    fn default() -> Self {
        SpectrumParams {
            su_count: 3,
            pu_counts: vec![5, 10, 15, 20, 25],
            n_window: 5,
            policies: vec![Policy::MlpHistory, Policy::RandomBaseline],
            idle_mean_range_s: [0.2, 2.0],
            busy_ratio_range: [0.8, 1.25],
            pu_tx_power_w: 1.0,
            warmup_samples: 200,
            observe_interval_s: 0.25,
            refit_every: 50,
            max_training_samples: 600,
            hidden_units: 8,
            initial_epochs: 150,
            refit_epochs: 15,
            learning_rate: 0.02,
            beacon_interval_s: 1.0,
        }
    }
}

impl SpectrumParams {
    pub fn validate(&self) -> Result<(), SpectrumError> {
        let bad = |m: &str| Err(SpectrumError::Config(m.to_string()));
        if self.su_count == 0 || self.n_window == 0 || self.pu_counts.is_empty() || self.pu_counts.contains(&0) {
            return bad("su_count, n_window and pu_counts must be positive");
        }
        let [lo, hi] = self.idle_mean_range_s;
        let [rlo, rhi] = self.busy_ratio_range;
        if !(lo > 0.0 && hi >= lo && rlo > 0.0 && rhi >= rlo) {
            return bad("idle_mean_range_s and busy_ratio_range must be positive, ordered ranges");
        }
        if self.refit_every == 0 || self.warmup_samples == 0 || self.observe_interval_s <= 0.0 {
            return bad("refit_every, warmup_samples and observe_interval_s must be positive");
        }
        Ok(())
    }
}

/// One PU: where it is and how it behaves.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimaryUser {
    pub node: NodeState,
    pub activity: PuActivity,
}

/// Everything a spectrum run needs apart from the policy.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumScenario {
    pub area: Area,
    pub mobility: MobilityParams,
    pub pus: Vec<PrimaryUser>,
    pub sus: Vec<NodeState>,
    pub params: SpectrumParams,
}

impl SpectrumScenario {
    /// Heterogeneous renewal PUs, one per channel, plus mobile SUs.
    pub fn generate(params: &SpectrumParams, pu_count: usize, area: Area, mobility: MobilityParams, seed: u64) -> Self {
        let mut rng = RandomStream::new(seed, format!("pu-population/{pu_count}"));
        let mut place = RandomStream::new(seed, format!("placement/{pu_count}"));
        let pus = (0..pu_count)
            .map(|p| {
                let mean_idle = rng.uniform(params.idle_mean_range_s[0], params.idle_mean_range_s[1]);
                let mean_busy = mean_idle * rng.uniform(params.busy_ratio_range[0], params.busy_ratio_range[1]);
                let mut node = NodeState::mobile(NodeId(p as u32), Role::PrimaryUser, &area, &mobility, &mut place);
                node.tx_power_w = params.pu_tx_power_w;
                PrimaryUser { node, activity: PuActivity::Renewal { mean_busy, mean_idle } }
            })
            .collect();
        let sus = (0..params.su_count)
            .map(|s| NodeState::mobile(NodeId((pu_count + s) as u32), Role::RescueSu, &area, &mobility, &mut place))
            .collect();
        SpectrumScenario { area, mobility, pus, sus, params: params.clone() }
    }

    pub fn channels(&self) -> Vec<Channel> {
        (0..self.pus.len()).map(|i| Channel { index: i, licensed_pu: Some(i) }).collect()
    }
}

#[derive(Debug, Clone)]
enum SpecEvent {
    PuStart(usize),
    PuStop(usize),
    Tick,
    Observe,
}

impl EventKind for SpecEvent {
    fn kind(&self) -> &'static str {
        match self {
            SpecEvent::PuStart(_) => "pu-start",
            SpecEvent::PuStop(_) => "pu-stop",
            SpecEvent::Tick => "beacon",
            SpecEvent::Observe => "observe",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumRun {
    pub policy: Policy,
    pub pu_count: usize,
    pub assignments: Vec<SuAssignment>,
    /// When the warm-up finished and SUs started transmitting.
    pub su_start: Option<f64>,
    pub refits: usize,
    /// Busy intervals each PU actually produced, for oracle checks.
    pub pu_busy: Vec<Vec<(f64, f64)>>,
}

impl SpectrumRun {
    pub fn stats(&self) -> SwitchingStats {
        switching_time_metric(&self.assignments)
    }
}

struct Scorer {
    model: MlpModel,
    data: VecDeque<(Vec<f64>, Vec<f64>)>,
    fresh: usize,
    refits: usize,
    seed: u64,
}

impl Scorer {
    fn fit(&mut self, epochs: usize, lr: f64) -> Result<(), SpectrumError> {
        let data: Vec<_> = self.data.iter().cloned().collect();
        let cfg = TrainConfig {
            learning_rate: lr,
            epochs,
            batch_size: 16,
            seed: self.seed.wrapping_add(self.refits as u64),
            loss: Loss::SquaredError,
        };
        // Keep serving the previous model if a refit blows up.
        let mut candidate = self.model.clone();
        if candidate.train(&data, &cfg).is_ok() {
            self.model = candidate;
        }
        self.refits += 1;
        self.fresh = 0;
        Ok(())
    }

    fn push(&mut self, features: Vec<f64>, remaining: f64, cap: usize) {
        self.data.push_back((features, vec![remaining]));
        while self.data.len() > cap {
            self.data.pop_front();
        }
        self.fresh += 1;
    }
}

struct SpectrumSim<'a> {
    sc: &'a SpectrumScenario,
    policy: Policy,
    budget: LinkBudget,
    channels: Vec<Channel>,
    logs: BTreeMap<usize, PuUsageLog>,
    pu_nodes: Vec<NodeState>,
    su_nodes: Vec<NodeState>,
    busy_since: Vec<Option<f64>>,
    pu_busy: Vec<Vec<(f64, f64)>>,
    activity_rng: Vec<RandomStream>,
    mobility_rng: RandomStream,
    select_rng: RandomStream,
    observe_rng: RandomStream,
    occupant: Vec<Option<usize>>,
    su_assignment: Vec<Option<usize>>,
    su_features: Vec<Option<Vec<f64>>>,
    waiting: VecDeque<usize>,
    assignments: Vec<SuAssignment>,
    pending_obs: Vec<Vec<(f64, Vec<f64>)>>,
    labelled: usize,
    sus_active: bool,
    su_start: Option<f64>,
    scorer: Scorer,
    error: Option<SpectrumError>,
}

impl SpectrumSim<'_> {
    fn signal_dbm(&self, pu: usize, at: Point) -> f64 {
        let n = &self.pu_nodes[pu];
        let d = n.position.distance(at).max(1.0);
        let w = geo::friis_received_power(n.tx_power_w, n.antenna_gain, 1.0, self.budget.wavelength_m, d)
            .unwrap_or(n.tx_power_w);
        geo::watts_to_dbm(w)
    }

    fn features_for(&mut self, pu: usize, at: Point, now: f64) -> Result<Vec<f64>, SpectrumError> {
        let s = self.signal_dbm(pu, at);
        let m = self.pu_nodes[pu].speed;
        let log = self.logs.get_mut(&pu).ok_or(SpectrumError::MissingLog(pu))?;
        log.signal_strength_dbm = s;
        log.mobility_mps = m;
        extract_features(log, now)
    }

    fn free_holes(&self, now: f64) -> Result<Vec<SpectrumHole>, SpectrumError> {
        Ok(spectrum_holes(&self.channels, &self.logs, now)?
            .into_iter()
            .filter(|h| self.occupant[h.channel].is_none())
            .collect())
    }

    /// Try to put `su` on a hole; parks it in the wait queue if none is free.
    fn acquire(&mut self, su: usize, now: f64) -> Result<(), SpectrumError> {
        let holes = self.free_holes(now)?;
        if holes.is_empty() {
            if !self.waiting.contains(&su) {
                self.waiting.push_back(su);
            }
            return Ok(());
        }
        let at = self.su_nodes[su].position;
        let mut feats = Vec::with_capacity(holes.len());
        let mut scores = Vec::with_capacity(holes.len());
        for h in &holes {
            let f = match self.channels[h.channel].licensed_pu {
                Some(pu) => Some(self.features_for(pu, at, now)?),
                None => None,
            };
            let score = match (&f, self.policy) {
                (Some(f), Policy::MlpHistory) => score_hole(&self.scorer.model, f)?,
                (None, _) => f64::INFINITY,
                _ => 0.0,
            };
            feats.push(f);
            scores.push(score);
        }
        let ch = select_hole(&holes, &scores, self.policy, &mut self.select_rng)?;
        let idx = holes.iter().position(|h| h.channel == ch).expect("selected from holes");
        self.occupant[ch] = Some(su);
        self.su_assignment[su] = Some(self.assignments.len());
        self.su_features[su] = feats.swap_remove(idx);
        self.assignments.push(SuAssignment { su, channel: ch, assigned_at: now, evicted_at: None });
        Ok(())
    }

    fn on_pu_start(&mut self, s: &mut Scheduler<SpecEvent>, pu: usize) -> Result<(), SpectrumError> {
        let now = s.now();
        self.logs.get_mut(&pu).ok_or(SpectrumError::MissingLog(pu))?.set_state(PuState::Transmitting, now);
        self.busy_since[pu] = Some(now);
        for (obs_at, f) in std::mem::take(&mut self.pending_obs[pu]) {
            self.scorer.push(f, now - obs_at, self.sc.params.max_training_samples);
            self.labelled += 1;
        }
        let ch = pu;
        if let Some(su) = self.occupant[ch].take() {
            if let Some(a) = self.su_assignment[su].take() {
                self.assignments[a].evicted_at = Some(now);
                if let Some(f) = self.su_features[su].take() {
                    let realised = now - self.assignments[a].assigned_at;
                    self.scorer.push(f, realised, self.sc.params.max_training_samples);
                }
            }
            if self.sus_active && self.policy == Policy::MlpHistory && self.scorer.fresh >= self.sc.params.refit_every {
                self.scorer.fit(self.sc.params.refit_epochs, self.sc.params.learning_rate)?;
            }
            self.acquire(su, now)?;
        }
        if let PuActivity::Renewal { mean_busy, .. } = self.sc.pus[pu].activity {
            let d = self.activity_rng[pu].exponential(mean_busy);
            s.schedule_in(Target::Node(NodeId(pu as u32)), SpecEvent::PuStop(pu), d).expect("future");
        }
        Ok(())
    }

    fn on_pu_stop(&mut self, s: &mut Scheduler<SpecEvent>, pu: usize) -> Result<(), SpectrumError> {
        let now = s.now();
        let log = self.logs.get_mut(&pu).ok_or(SpectrumError::MissingLog(pu))?;
        if let Some(start) = self.busy_since[pu].take() {
            if now > start {
                log.record_session(start, now)?;
            }
            self.pu_busy[pu].push((start, now));
        }
        log.set_state(PuState::Idle, now);
        if let PuActivity::Renewal { mean_idle, .. } = self.sc.pus[pu].activity {
            let d = self.activity_rng[pu].exponential(mean_idle);
            s.schedule_in(Target::Node(NodeId(pu as u32)), SpecEvent::PuStart(pu), d).expect("future");
        }
        if self.sus_active {
            let waiting: Vec<usize> = self.waiting.drain(..).collect();
            for su in waiting {
                self.acquire(su, now)?;
            }
        }
        Ok(())
    }

    fn on_tick(&mut self, s: &mut Scheduler<SpecEvent>) {
        let now = s.now();
        let dt = self.sc.params.beacon_interval_s;
        for n in self.pu_nodes.iter_mut().chain(self.su_nodes.iter_mut()) {
            *n = geo::step_waypoint(n, now, dt, &self.sc.area, &self.sc.mobility, &mut self.mobility_rng);
        }
        s.schedule_in(Target::System, SpecEvent::Tick, dt).expect("future");
    }

    /// Passive warm-up: note the features of a random hole and label it when
    /// its PU comes back.
    fn on_observe(&mut self, s: &mut Scheduler<SpecEvent>) -> Result<(), SpectrumError> {
        let now = s.now();
        if self.labelled >= self.sc.params.warmup_samples {
            self.start_sus(now)?;
            return Ok(());
        }
        let holes = spectrum_holes(&self.channels, &self.logs, now)?;
        let licensed: Vec<usize> = holes.iter().filter_map(|h| self.channels[h.channel].licensed_pu).collect();
        if !licensed.is_empty() && !self.su_nodes.is_empty() {
            let pu = licensed[self.observe_rng.index(licensed.len())];
            let at = self.su_nodes[self.observe_rng.index(self.su_nodes.len())].position;
            let f = self.features_for(pu, at, now)?;
            self.pending_obs[pu].push((now, f));
        }
        s.schedule_in(Target::System, SpecEvent::Observe, self.sc.params.observe_interval_s).expect("future");
        Ok(())
    }

    fn start_sus(&mut self, now: f64) -> Result<(), SpectrumError> {
        if self.sus_active {
            return Ok(());
        }
        if self.policy == Policy::MlpHistory {
            self.scorer.fit(self.sc.params.initial_epochs, self.sc.params.learning_rate)?;
        }
        self.sus_active = true;
        self.su_start = Some(now);
        for su in 0..self.su_nodes.len() {
            self.acquire(su, now)?;
        }
        Ok(())
    }
}

/// Run one policy on one scenario until `horizon`.
pub fn simulate_spectrum(sc: &SpectrumScenario, policy: Policy, horizon: f64, seed: u64) -> Result<SpectrumRun, SpectrumError> {
    sc.params.validate()?;
    let n_pu = sc.pus.len();
    let window = sc.params.n_window;
    let mut sched: Scheduler<SpecEvent> = Scheduler::new(horizon);
    let mut activity_rng: Vec<RandomStream> =
        (0..n_pu).map(|p| RandomStream::new(seed, format!("pu-activity/{n_pu}/{p}"))).collect();
    let mut logs = BTreeMap::new();
    let mut busy_since = vec![None; n_pu];
    for (p, pu) in sc.pus.iter().enumerate() {
        let target = Target::Node(NodeId(p as u32));
        let state = match &pu.activity {
            PuActivity::Renewal { mean_busy, mean_idle } => {
                let rng = &mut activity_rng[p];
                let busy = rng.bernoulli(mean_busy / (mean_busy + mean_idle));
                let (ev, mean) = if busy { (SpecEvent::PuStop(p), *mean_busy) } else { (SpecEvent::PuStart(p), *mean_idle) };
                let d = rng.exponential(mean);
                sched.schedule(target, ev, d).expect("future");
                if busy {
                    PuState::Transmitting
                } else {
                    PuState::Idle
                }
            }
            PuActivity::Scripted(intervals) => {
                let mut state = PuState::Idle;
                for &(a, b) in intervals {
                    if a <= 0.0 {
                        state = PuState::Transmitting;
                    } else {
                        sched.schedule(target, SpecEvent::PuStart(p), a).expect("future");
                    }
                    sched.schedule(target, SpecEvent::PuStop(p), b).expect("future");
                }
                state
            }
        };
        if state == PuState::Transmitting {
            busy_since[p] = Some(0.0);
        }
        logs.insert(p, PuUsageLog::new(p, p, window, state, 0.0));
    }
    sched.schedule(Target::System, SpecEvent::Tick, sc.params.beacon_interval_s).expect("future");
    sched.schedule(Target::System, SpecEvent::Observe, 0.0).expect("future");

    let mut init = RandomStream::new(seed, "scorer-init");
    let model = MlpModel::new(&[window + 3, sc.params.hidden_units, 1], OutputActivation::Identity, &mut init)?;
    let mut sim = SpectrumSim {
        sc,
        policy,
        budget: LinkBudget::default(),
        channels: sc.channels(),
        logs,
        pu_nodes: sc.pus.iter().map(|p| p.node.clone()).collect(),
        su_nodes: sc.sus.clone(),
        busy_since,
        pu_busy: vec![Vec::new(); n_pu],
        activity_rng,
        mobility_rng: RandomStream::new(seed, "mobility"),
        select_rng: RandomStream::new(seed, "hole-select"),
        observe_rng: RandomStream::new(seed, "observer"),
        occupant: vec![None; n_pu],
        su_assignment: vec![None; sc.sus.len()],
        su_features: vec![None; sc.sus.len()],
        waiting: VecDeque::new(),
        assignments: Vec::new(),
        pending_obs: vec![Vec::new(); n_pu],
        labelled: 0,
        sus_active: false,
        su_start: None,
        scorer: Scorer { model, data: VecDeque::new(), fresh: 0, refits: 0, seed },
        error: None,
    };

    sched
        .run_until(horizon, |s, ev| {
            if sim.error.is_some() {
                return;
            }
            let r = match ev.payload {
                SpecEvent::PuStart(p) => sim.on_pu_start(s, p),
                SpecEvent::PuStop(p) => sim.on_pu_stop(s, p),
                SpecEvent::Tick => {
                    sim.on_tick(s);
                    Ok(())
                }
                SpecEvent::Observe => sim.on_observe(s),
            };
            if let Err(e) = r {
                sim.error = Some(e);
            }
        })
        .expect("finite horizon");
    if let Some(e) = sim.error {
        return Err(e);
    }
    for (p, since) in sim.busy_since.iter().enumerate() {
        if let Some(start) = since {
            sim.pu_busy[p].push((*start, f64::INFINITY));
        }
    }
    Ok(SpectrumRun {
        policy,
        pu_count: n_pu,
        assignments: sim.assignments,
        su_start: sim.su_start,
        refits: sim.scorer.refits,
        pu_busy: sim.pu_busy,
    })
}

/// Start of the first busy interval beginning strictly after `t`.
pub fn next_busy_start(busy: &[(f64, f64)], t: f64) -> Option<f64> {
    busy.iter().map(|b| b.0).filter(|s| *s > t).fold(None, |acc: Option<f64>, s| Some(acc.map_or(s, |a| a.min(s))))
}
