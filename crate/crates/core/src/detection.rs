//! Sensing tier and the polling disaster detector.
//!
//! Sensors sample once per `sample_interval_s` and report to their cluster
//! head only when the reading clears `report_threshold`. Each poll the heads
//! summarise their window as `(mean, max, count)` and forward it to the sink,
//! which lays the summaries out in cluster order as a [`ContextRecord`]. The
//! detector classifies that record every `poll_interval_s`.

use std::collections::BTreeSet;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{Area, Point};
use crate::kernel::{EventKind, RandomStream, Scheduler, Target};
use crate::mlp::{self, Decision, Loss, MlpError, MlpModel, OutputActivation, TrainConfig};
use crate::NodeId;

/// Features per cluster block: mean, max, count.
pub const FEATURES_PER_CLUSTER: usize = 3;

#[derive(Debug, Error)]
pub enum DetectionError {
    #[error("reading from {sensor} at t={time} s lies outside window ({start}, {end}]")]
    OutsideWindow { sensor: NodeId, time: f64, start: f64, end: f64 },
    #[error("cluster {0} reported twice in one window")]
    DuplicateCluster(usize),
    #[error("cluster id {id} out of range for {count} clusters")]
    UnknownCluster { id: usize, count: usize },
    #[error("disaster trace times must be strictly increasing (row {0})")]
    TraceOrder(usize),
    #[error("disaster trace row {row}: {msg}")]
    TraceRow { row: usize, msg: String },
    #[error("disaster trace: {0}")]
    TraceCsv(#[from] csv::Error),
    #[error(transparent)]
    Model(#[from] MlpError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorReading {
    pub sensor: NodeId,
    pub time: f64,
    pub magnitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterReport {
    pub cluster: usize,
    pub window_start: f64,
    pub window_end: f64,
    pub mean: f64,
    pub max: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextRecord {
    pub time: f64,
    pub features: Vec<f64>,
}

/// Summarise one head's window `(start, end]`. A silent window yields `None`.
pub fn aggregate_cluster(
    cluster: usize,
    readings: &[SensorReading],
    window_start: f64,
    window_end: f64,
) -> Result<Option<ClusterReport>, DetectionError> {
    if let Some(r) = readings.iter().find(|r| !(r.time > window_start && r.time <= window_end)) {
        return Err(DetectionError::OutsideWindow { sensor: r.sensor, time: r.time, start: window_start, end: window_end });
    }
    if readings.is_empty() {
        return Ok(None);
    }
    let sum: f64 = readings.iter().map(|r| r.magnitude).sum();
    let max = readings.iter().map(|r| r.magnitude).fold(f64::NEG_INFINITY, f64::max);
    Ok(Some(ClusterReport {
        cluster,
        window_start,
        window_end,
        mean: sum / readings.len() as f64,
        max,
        count: readings.len(),
    }))
}

/// Concatenate reports in cluster-id order, zero-filling silent clusters.
pub fn sink_collect(reports: &[ClusterReport], cluster_count: usize, time: f64) -> Result<ContextRecord, DetectionError> {
    let mut features = vec![0.0; FEATURES_PER_CLUSTER * cluster_count];
    let mut seen = BTreeSet::new();
    for r in reports {
        if r.cluster >= cluster_count {
            return Err(DetectionError::UnknownCluster { id: r.cluster, count: cluster_count });
        }
        if !seen.insert(r.cluster) {
            return Err(DetectionError::DuplicateCluster(r.cluster));
        }
        let block = &mut features[FEATURES_PER_CLUSTER * r.cluster..FEATURES_PER_CLUSTER * (r.cluster + 1)];
        block.copy_from_slice(&[r.mean, r.max, r.count as f64]);
    }
    Ok(ContextRecord { time, features })
}

/// Anything that can turn a context record into a 101/102 decision.
pub trait Classifier {
    fn classify(&self, record: &ContextRecord) -> Result<Decision, DetectionError>;
}

impl Classifier for MlpModel {
    fn classify(&self, record: &ContextRecord) -> Result<Decision, DetectionError> {
        detect(record, self)
    }
}

impl<F: Fn(&ContextRecord) -> Decision> Classifier for F {
    fn classify(&self, record: &ContextRecord) -> Result<Decision, DetectionError> {
        Ok(self(record))
    }
}

pub fn detect(record: &ContextRecord, model: &MlpModel) -> Result<Decision, DetectionError> {
    Ok(mlp::classify_binary(model, &record.features)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisasterEvent {
    pub time: f64,
    pub epicenter: Point,
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DisasterTrace {
    events: Vec<DisasterEvent>,
}

impl DisasterTrace {
    pub fn new(events: Vec<DisasterEvent>) -> Result<Self, DetectionError> {
        for (i, w) in events.windows(2).enumerate() {
            if w[1].time <= w[0].time {
                return Err(DetectionError::TraceOrder(i + 1));
            }
        }
        for (i, e) in events.iter().enumerate() {
            if !(e.intensity >= 0.0) || !e.time.is_finite() || e.time < 0.0 {
                return Err(DetectionError::TraceRow { row: i, msg: "bad time or intensity".into() });
            }
        }
        Ok(DisasterTrace { events })
    }

    pub fn events(&self) -> &[DisasterEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Header-first CSV: `time_s,epicenter_x_m,epicenter_y_m,intensity`.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, DetectionError> {
        #[derive(Deserialize)]
        struct Row {
            time_s: f64,
            epicenter_x_m: f64,
            epicenter_y_m: f64,
            intensity: f64,
        }
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["time_s", "epicenter_x_m", "epicenter_y_m", "intensity"] {
            return Err(DetectionError::TraceRow { row: 0, msg: format!("unexpected header {headers:?}") });
        }
        let mut events = Vec::new();
        for row in rdr.deserialize() {
            let r: Row = row?;
            events.push(DisasterEvent {
                time: r.time_s,
                epicenter: Point::new(r.epicenter_x_m, r.epicenter_y_m),
                intensity: r.intensity,
            });
        }
        Self::new(events)
    }

    /// `count` events spread one per equal slot of the horizon, each placed
    /// so that its signal and detection deadline finish inside the slot.
    pub fn synthetic(count: usize, horizon: f64, area: &Area, intensity: f64, settle_s: f64, rng: &mut RandomStream) -> Self {
        let slot = horizon / count.max(1) as f64;
        let lead = (slot - settle_s).max(0.0);
        let events = (0..count)
            .map(|i| {
                let start = i as f64 * slot;
                DisasterEvent {
                    time: start + rng.uniform(0.1 * lead, 0.9 * lead),
                    epicenter: area.random_point(rng),
                    intensity,
                }
            })
            .collect();
        DisasterTrace { events }
    }
}

/// Parameters of the sensing tier, detector and experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionParams {
    /// Sensors deployed around each cluster head.
    pub sensor_count: usize,
    pub cluster_counts: Vec<usize>,
    pub disaster_count: usize,
    pub intensity: f64,
    pub cluster_radius_m: f64,
    pub decay_m: f64,
    pub noise_sd: f64,
    pub report_threshold: f64,
    pub signal_duration_s: f64,
    pub sample_interval_s: f64,
    pub poll_interval_s: f64,
    pub hop_delay_s: f64,
    /// Detector processing cost per cluster feeding it.
    pub processing_delay_per_cluster_s: f64,
    pub hidden_units: usize,
    pub training_per_class: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub trace_csv: Option<String>,
}

impl Default for DetectionParams {
    fn default() -> Self {
        DetectionParams {
            sensor_count: 10,
            cluster_counts: vec![1, 2, 3, 4, 5],
            disaster_count: 10,
            intensity: 8.0,
            cluster_radius_m: 150.0,
            decay_m: 200.0,
            noise_sd: 0.1,
            report_threshold: 0.4,
            signal_duration_s: 10.0,
            sample_interval_s: 1.0,
            poll_interval_s: 10.0,
            hop_delay_s: 0.001,
            processing_delay_per_cluster_s: 0.020,
            hidden_units: 8,
            training_per_class: 500,
            epochs: 60,
            learning_rate: 0.5,
            trace_csv: None,
        }
    }
}

impl DetectionParams {
    /// Latest a poll may fire and still count as detecting an event.
    pub fn detection_deadline(&self) -> f64 {
        self.signal_duration_s + self.poll_interval_s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sensor {
    pub id: NodeId,
    pub position: Point,
    pub cluster: usize,
}

/// Fixed sensing deployment: heads, their member sensors and one sink.
#[derive(Debug, Clone, PartialEq)]
pub struct Deployment {
    pub heads: Vec<Point>,
    pub sensors: Vec<Sensor>,
    pub sink: Point,
}

impl Deployment {
    /// Uniform heads, `per_cluster` sensors scattered in a disc around each,
    /// each sensor then joining its nearest head.
    pub fn generate(cluster_count: usize, per_cluster: usize, radius: f64, area: &Area, rng: &mut RandomStream) -> Self {
        let heads: Vec<Point> = (0..cluster_count).map(|_| area.random_point(rng)).collect();
        let mut sensors = Vec::with_capacity(cluster_count * per_cluster);
        for h in &heads {
            for _ in 0..per_cluster {
                let r = radius * rng.uniform(0.0, 1.0).sqrt();
                let a = rng.uniform(0.0, std::f64::consts::TAU);
                let p = area.clamp(Point::new(h.x + r * a.cos(), h.y + r * a.sin()));
                let id = NodeId(sensors.len() as u32);
                sensors.push(Sensor { id, position: p, cluster: nearest(&heads, p) });
            }
        }
        Deployment { heads, sensors, sink: Point::new(area.width / 2.0, area.height / 2.0) }
    }

    pub fn cluster_count(&self) -> usize {
        self.heads.len()
    }

    pub fn input_dim(&self) -> usize {
        FEATURES_PER_CLUSTER * self.cluster_count()
    }
}

fn nearest(heads: &[Point], p: Point) -> usize {
    heads
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.distance(p).total_cmp(&b.1.distance(p)))
        .map_or(0, |(i, _)| i)
}

/// Noise-free disaster signal at a sensor.
pub fn signal_at(event: &DisasterEvent, at: Point, decay_m: f64) -> f64 {
    event.intensity * (-at.distance(event.epicenter) / decay_m).exp()
}

fn sample_window(
    dep: &Deployment,
    params: &DetectionParams,
    window_end: f64,
    event: Option<&DisasterEvent>,
    rng: &mut RandomStream,
) -> Result<ContextRecord, DetectionError> {
    let start = window_end - params.poll_interval_s;
    let mut per_cluster: Vec<Vec<SensorReading>> = vec![Vec::new(); dep.cluster_count()];
    let steps = (params.poll_interval_s / params.sample_interval_s).round() as usize;
    for k in 0..steps {
        let t = start + (k as f64 + 0.5) * params.sample_interval_s;
        for s in &dep.sensors {
            let m = magnitude(s.position, t, event.into_iter(), params, rng);
            if m > params.report_threshold {
                per_cluster[s.cluster].push(SensorReading { sensor: s.id, time: t, magnitude: m });
            }
        }
    }
    let reports: Vec<ClusterReport> = per_cluster
        .iter()
        .enumerate()
        .filter_map(|(c, r)| aggregate_cluster(c, r, start, window_end).transpose())
        .collect::<Result<_, _>>()?;
    sink_collect(&reports, dep.cluster_count(), window_end)
}

fn magnitude<'a>(
    at: Point,
    t: f64,
    events: impl Iterator<Item = &'a DisasterEvent>,
    params: &DetectionParams,
    rng: &mut RandomStream,
) -> f64 {
    let signal: f64 = events
        .filter(|e| t >= e.time && t < e.time + params.signal_duration_s)
        .map(|e| signal_at(e, at, params.decay_m))
        .sum();
    signal + rng.normal(0.0, params.noise_sd)
}

/// Labelled context records for the detector: `per_class` windows overlapping
/// a random disaster (label 1) and `per_class` quiet windows (label 0),
/// interleaved.
pub fn training_set(
    dep: &Deployment,
    params: &DetectionParams,
    area: &Area,
    per_class: usize,
    rng: &mut RandomStream,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>, DetectionError> {
    let end = params.poll_interval_s;
    let mut out = Vec::with_capacity(2 * per_class);
    for _ in 0..per_class {
        let event = DisasterEvent {
            time: end - rng.uniform(0.0, params.poll_interval_s + params.signal_duration_s),
            epicenter: area.random_point(rng),
            intensity: params.intensity,
        };
        out.push((sample_window(dep, params, end, Some(&event), rng)?.features, vec![1.0]));
        out.push((sample_window(dep, params, end, None, rng)?.features, vec![0.0]));
    }
    Ok(out)
}

/// A trained detector plus its held-out accuracy.
#[derive(Debug, Clone)]
pub struct TrainedDetector {
    pub model: MlpModel,
    pub validation_accuracy: f64,
}

/// Train the detector on an 80/20 split of a fresh synthetic training set.
pub fn train_detector(dep: &Deployment, params: &DetectionParams, area: &Area, seed: u64) -> Result<TrainedDetector, DetectionError> {
    let k = dep.cluster_count();
    let mut data_rng = RandomStream::new(seed, format!("detector-data/k{k}"));
    let data = training_set(dep, params, area, params.training_per_class, &mut data_rng)?;
    let split = data.len() * 4 / 5;
    let (train, valid) = data.split_at(split);
    let mut init = RandomStream::new(seed, format!("detector-init/k{k}"));
    let mut model = MlpModel::new(&[dep.input_dim(), params.hidden_units, 1], OutputActivation::Sigmoid, &mut init)?;
    let cfg = TrainConfig {
        learning_rate: params.learning_rate,
        epochs: params.epochs,
        batch_size: 16,
        seed,
        loss: Loss::CrossEntropy,
    };
    model.train(train, &cfg)?;
    let correct = valid
        .iter()
        .filter(|(x, t)| {
            let d = mlp::classify_binary(&model, x).unwrap_or(Decision::NotHappened);
            (d == Decision::Happened) == (t[0] > 0.5)
        })
        .count();
    Ok(TrainedDetector { model, validation_accuracy: correct as f64 / valid.len().max(1) as f64 })
}

#[derive(Debug, Clone)]
enum DetEvent {
    Sample,
    HeadReceive(SensorReading),
    HeadFlush,
    SinkReceive(Vec<ClusterReport>),
    Poll,
}

impl EventKind for DetEvent {
    fn kind(&self) -> &'static str {
        match self {
            DetEvent::Sample => "sample",
            DetEvent::HeadReceive(_) => "head-receive",
            DetEvent::HeadFlush => "head-flush",
            DetEvent::SinkReceive(_) => "sink-receive",
            DetEvent::Poll => "poll",
        }
    }
}

/// One detector poll and its verdict.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Poll {
    pub time: f64,
    pub decision: Decision,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventOutcome {
    pub event_time: f64,
    /// First poll at or after the event, within the deadline, that said 101.
    pub detected_at: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRun {
    pub cluster_count: usize,
    pub polls: Vec<Poll>,
    pub outcomes: Vec<EventOutcome>,
    pub false_alarms: usize,
    pub validation_accuracy: Option<f64>,
}

impl DetectionRun {
    pub fn injected(&self) -> usize {
        self.outcomes.len()
    }

    pub fn missed(&self) -> usize {
        self.outcomes.iter().filter(|o| o.detected_at.is_none()).count()
    }

    /// Percentage of injected disasters never reported; `None` when nothing
    /// was injected.
    pub fn false_negative_rate(&self) -> Option<f64> {
        (self.injected() > 0).then(|| 100.0 * self.missed() as f64 / self.injected() as f64)
    }

    /// Mean of `(first 101 poll - event time) + per-cluster processing delay`
    /// over detected events.
    pub fn mean_response_time(&self, processing_delay_per_cluster_s: f64) -> Option<f64> {
        let lat: Vec<f64> = self
            .outcomes
            .iter()
            .filter_map(|o| o.detected_at.map(|d| d - o.event_time))
            .collect();
        (!lat.is_empty()).then(|| {
            lat.iter().sum::<f64>() / lat.len() as f64 + processing_delay_per_cluster_s * self.cluster_count as f64
        })
    }
}

/// Drive the sensing pipeline through the kernel for `horizon` seconds.
pub fn simulate_detection(
    dep: &Deployment,
    trace: &DisasterTrace,
    classifier: &dyn Classifier,
    params: &DetectionParams,
    horizon: f64,
    noise: &mut RandomStream,
) -> Result<DetectionRun, DetectionError> {
    let k = dep.cluster_count();
    let mut sched: Scheduler<DetEvent> = Scheduler::new(horizon);
    let dt = params.sample_interval_s;
    let hop = params.hop_delay_s;
    let mut t = dt / 2.0;
    while t <= horizon {
        sched.schedule(Target::System, DetEvent::Sample, t).expect("future");
        t += dt;
    }
    let mut p = 0.0;
    while p <= horizon + 1e-9 {
        if p - 2.0 * hop >= 0.0 && p > 0.0 {
            sched.schedule(Target::System, DetEvent::HeadFlush, p - 2.0 * hop).expect("future");
        }
        sched.schedule(Target::System, DetEvent::Poll, p).expect("future");
        p += params.poll_interval_s;
    }

    let mut buffers: Vec<Vec<SensorReading>> = vec![Vec::new(); k];
    let mut inbox: Vec<ClusterReport> = Vec::new();
    let mut polls = Vec::new();
    let mut error = None;

    sched
        .run_until(horizon, |s, ev| {
            if error.is_some() {
                return;
            }
            let now = s.now();
            match ev.payload {
                DetEvent::Sample => {
                    for sensor in &dep.sensors {
                        let m = magnitude(sensor.position, now, trace.events().iter(), params, noise);
                        if m > params.report_threshold {
                            let r = SensorReading { sensor: sensor.id, time: now, magnitude: m };
                            s.schedule_in(Target::Node(sensor.id), DetEvent::HeadReceive(r), hop).expect("future");
                        }
                    }
                }
                DetEvent::HeadReceive(r) => {
                    let c = dep.sensors[r.sensor.0 as usize].cluster;
                    buffers[c].push(r);
                }
                DetEvent::HeadFlush => {
                    let end = now + 2.0 * hop;
                    let start = end - params.poll_interval_s;
                    let mut reports = Vec::new();
                    for (c, buf) in buffers.iter_mut().enumerate() {
                        match aggregate_cluster(c, buf, start, end) {
                            Ok(Some(r)) => reports.push(r),
                            Ok(None) => {}
                            Err(e) => error = Some(e),
                        }
                        buf.clear();
                    }
                    s.schedule_in(Target::System, DetEvent::SinkReceive(reports), hop).expect("future");
                }
                DetEvent::SinkReceive(reports) => inbox = reports,
                DetEvent::Poll => {
                    let record = match sink_collect(&std::mem::take(&mut inbox), k, now) {
                        Ok(r) => r,
                        Err(e) => {
                            error = Some(e);
                            return;
                        }
                    };
                    match classifier.classify(&record) {
                        Ok(decision) => polls.push(Poll { time: now, decision }),
                        Err(e) => error = Some(e),
                    }
                }
            }
        })
        .expect("horizon is finite");
    if let Some(e) = error {
        return Err(e);
    }

    let deadline = params.detection_deadline();
    let outcomes: Vec<EventOutcome> = trace
        .events()
        .iter()
        .map(|e| EventOutcome {
            event_time: e.time,
            detected_at: polls
                .iter()
                .find(|p| p.decision == Decision::Happened && p.time >= e.time && p.time <= e.time + deadline)
                .map(|p| p.time),
        })
        .collect();
    let false_alarms = polls
        .iter()
        .filter(|p| p.decision == Decision::Happened)
        .filter(|p| !trace.events().iter().any(|e| p.time >= e.time && p.time <= e.time + deadline))
        .count();
    Ok(DetectionRun { cluster_count: k, polls, outcomes, false_alarms, validation_accuracy: None })
}

/// One replication for one cluster count: deploy, train, simulate.
pub fn run_detection_replication(
    params: &DetectionParams,
    area: &Area,
    horizon: f64,
    seed: u64,
    cluster_count: usize,
    trace: Option<&DisasterTrace>,
) -> Result<DetectionRun, DetectionError> {
    let mut dep_rng = RandomStream::new(seed, format!("deployment/k{cluster_count}"));
    let dep = Deployment::generate(cluster_count, params.sensor_count, params.cluster_radius_m, area, &mut dep_rng);
    let detector = train_detector(&dep, params, area, seed)?;
    // The disaster schedule depends on the seed only, so every cluster count
    // faces the same events.
    let synthetic;
    let trace = match trace {
        Some(t) => t,
        None => {
            let mut rng = RandomStream::new(seed, "disasters");
            synthetic = DisasterTrace::synthetic(
                params.disaster_count,
                horizon,
                area,
                params.intensity,
                params.detection_deadline() + params.poll_interval_s,
                &mut rng,
            );
            &synthetic
        }
    };
    let mut noise = RandomStream::new(seed, format!("sensor-noise/k{cluster_count}"));
    let mut run = simulate_detection(&dep, trace, &detector.model, params, horizon, &mut noise)?;
    run.validation_accuracy = Some(detector.validation_accuracy);
    Ok(run)
}

/// Averages over replications for one cluster count.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionPoint {
    pub cluster_count: usize,
    pub false_negative_rate: Option<f64>,
    pub response_time_s: Option<f64>,
}

/// Sweep cluster counts over seeds. False-negative rate is pooled per
/// injected event; response time is the mean of per-replication means.
pub fn run_detection_experiment(
    params: &DetectionParams,
    area: &Area,
    horizon: f64,
    seeds: &[u64],
    cluster_counts: &[usize],
) -> Result<Vec<DetectionPoint>, DetectionError> {
    let mut out = Vec::new();
    for &k in cluster_counts {
        let runs: Vec<DetectionRun> = seeds
            .iter()
            .map(|&s| run_detection_replication(params, area, horizon, s, k, None))
            .collect::<Result<_, _>>()?;
        out.push(summarise(k, &runs, params.processing_delay_per_cluster_s));
    }
    Ok(out)
}

pub fn summarise(cluster_count: usize, runs: &[DetectionRun], kappa: f64) -> DetectionPoint {
    let injected: usize = runs.iter().map(DetectionRun::injected).sum();
    let missed: usize = runs.iter().map(DetectionRun::missed).sum();
    let resp: Vec<f64> = runs.iter().filter_map(|r| r.mean_response_time(kappa)).collect();
    DetectionPoint {
        cluster_count,
        false_negative_rate: (injected > 0).then(|| 100.0 * missed as f64 / injected as f64),
        response_time_s: (!resp.is_empty()).then(|| resp.iter().sum::<f64>() / resp.len() as f64),
    }
}
