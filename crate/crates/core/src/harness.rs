//! Scenario files, seeded replications, CSV metrics, JSON reports and plots.
//!
//! A scenario is a TOML document. Every key is optional; missing keys take
//! the defaults listed in the README. Replication `r` runs with seed
//! `seed + r`, replications run in parallel and are merged in seed order, so
//! a scenario and seed fully determine every byte written.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{self, DetectionParams, DisasterTrace};
use crate::discovery::{self, DiscoveryParams, LatencyRun};
use crate::geo::{Area, MobilityParams};
use crate::plot::{self, Panel, Series};
use crate::spectrum::{self, Policy, SpectrumParams, SpectrumScenario};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {msg}")]
    Io { path: String, msg: String },
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("invalid value for `{key}`: {msg}")]
    Invalid { key: String, msg: String },
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {msg}")]
    Io { path: PathBuf, msg: String },
    #[error("csv: {0}")]
    Csv(String),
    #[error("json: {0}")]
    Json(String),
    #[error("aggregate {group}/{metric}: recorded {recorded}, rows give {recomputed}")]
    Aggregate { group: String, metric: String, recorded: String, recomputed: String },
}

fn io_err(path: &Path, e: impl fmt::Display) -> HarnessError {
    HarnessError::Io { path: path.to_path_buf(), msg: e.to_string() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub sim_time_s: f64,
    /// Width and height in metres.
    pub area_m: [f64; 2],
    pub mac: String,
    pub routing: String,
    pub pathloss: String,
    pub mobility: String,
    pub seed: u64,
    pub replications: usize,
    pub motion: MobilityParams,
    pub detection: DetectionParams,
    pub spectrum: SpectrumParams,
    pub discovery: DiscoveryParams,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            sim_time_s: crate::kernel::DEFAULT_SIM_TIME_S,
            area_m: [1000.0, 1000.0],
            mac: "ieee-802.11".into(),
            routing: "aodv".into(),
            pathloss: "free-space".into(),
            mobility: "random-waypoint".into(),
            seed: 1,
            replications: 30,
            motion: MobilityParams::default(),
            detection: DetectionParams::default(),
            spectrum: SpectrumParams::default(),
            discovery: DiscoveryParams::default(),
        }
    }
}

fn invalid(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.to_string(), msg: msg.into() }
}

fn positive(key: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(key, format!("{v} must be a positive number")))
    }
}

fn non_negative(key: &str, v: f64) -> Result<(), ConfigError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(key, format!("{v} must not be negative")))
    }
}

fn at_least_one(key: &str, v: usize) -> Result<(), ConfigError> {
    if v >= 1 {
        Ok(())
    } else {
        Err(invalid(key, "must be at least 1"))
    }
}

fn counts(key: &str, v: &[usize]) -> Result<(), ConfigError> {
    if v.is_empty() || v.contains(&0) {
        return Err(invalid(key, "must be a non-empty list of counts >= 1"));
    }
    Ok(())
}

fn range(key: &str, r: [f64; 2]) -> Result<(), ConfigError> {
    if r[0] > 0.0 && r[1] >= r[0] && r[1].is_finite() {
        Ok(())
    } else {
        Err(invalid(key, "must be [low, high] with 0 < low <= high"))
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(1, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            ConfigError::Syntax { line, msg: e.message().trim().to_string() }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn area(&self) -> Area {
        Area { width: self.area_m[0], height: self.area_m[1] }
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.replications as u64).map(|r| self.seed.wrapping_add(r)).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        positive("sim_time_s", self.sim_time_s)?;
        positive("area_m", self.area_m[0])?;
        positive("area_m", self.area_m[1])?;
        for (key, got, want) in [
            ("mac", &self.mac, "ieee-802.11"),
            ("routing", &self.routing, "aodv"),
            ("pathloss", &self.pathloss, "free-space"),
            ("mobility", &self.mobility, "random-waypoint"),
        ] {
            if got != want {
                return Err(invalid(key, format!("only \"{want}\" is supported, got \"{got}\"")));
            }
        }
        at_least_one("replications", self.replications)?;
        let m = &self.motion;
        positive("motion.v_min", m.v_min)?;
        if m.v_max < m.v_min || !m.v_max.is_finite() {
            return Err(invalid("motion.v_max", "must be at least motion.v_min"));
        }
        non_negative("motion.pause_max", m.pause_max)?;

        let d = &self.detection;
        at_least_one("detection.sensor_count", d.sensor_count)?;
        counts("detection.cluster_counts", &d.cluster_counts)?;
        at_least_one("detection.disaster_count", d.disaster_count)?;
        positive("detection.intensity", d.intensity)?;
        positive("detection.cluster_radius_m", d.cluster_radius_m)?;
        positive("detection.decay_m", d.decay_m)?;
        non_negative("detection.noise_sd", d.noise_sd)?;
        non_negative("detection.report_threshold", d.report_threshold)?;
        positive("detection.signal_duration_s", d.signal_duration_s)?;
        positive("detection.sample_interval_s", d.sample_interval_s)?;
        positive("detection.poll_interval_s", d.poll_interval_s)?;
        non_negative("detection.hop_delay_s", d.hop_delay_s)?;
        if 2.0 * d.hop_delay_s >= d.poll_interval_s {
            return Err(invalid("detection.hop_delay_s", "two hops must fit inside one poll interval"));
        }
        non_negative("detection.processing_delay_per_cluster_s", d.processing_delay_per_cluster_s)?;
        at_least_one("detection.hidden_units", d.hidden_units)?;
        at_least_one("detection.training_per_class", d.training_per_class)?;
        at_least_one("detection.epochs", d.epochs)?;
        positive("detection.learning_rate", d.learning_rate)?;
        let slot = self.sim_time_s / d.disaster_count as f64;
        if d.trace_csv.is_none() && slot < d.detection_deadline() + d.poll_interval_s {
            return Err(invalid(
                "detection.disaster_count",
                format!("{} disasters leave {slot:.1} s each, less than the {:.1} s a detection needs", d.disaster_count, d.detection_deadline() + d.poll_interval_s),
            ));
        }

        let s = &self.spectrum;
        at_least_one("spectrum.su_count", s.su_count)?;
        counts("spectrum.pu_counts", &s.pu_counts)?;
        at_least_one("spectrum.n_window", s.n_window)?;
        if s.policies.is_empty() {
            return Err(invalid("spectrum.policies", "must list at least one policy"));
        }
        range("spectrum.idle_mean_range_s", s.idle_mean_range_s)?;
        range("spectrum.busy_ratio_range", s.busy_ratio_range)?;
        positive("spectrum.pu_tx_power_w", s.pu_tx_power_w)?;
        at_least_one("spectrum.warmup_samples", s.warmup_samples)?;
        positive("spectrum.observe_interval_s", s.observe_interval_s)?;
        at_least_one("spectrum.refit_every", s.refit_every)?;
        if s.max_training_samples < s.warmup_samples {
            return Err(invalid("spectrum.max_training_samples", "must be at least spectrum.warmup_samples"));
        }
        at_least_one("spectrum.hidden_units", s.hidden_units)?;
        at_least_one("spectrum.initial_epochs", s.initial_epochs)?;
        positive("spectrum.learning_rate", s.learning_rate)?;
        positive("spectrum.beacon_interval_s", s.beacon_interval_s)?;

        let q = &self.discovery;
        at_least_one("discovery.node_count", q.node_count)?;
        at_least_one("discovery.service_count", q.service_count)?;
        if q.service_count > q.node_count {
            return Err(invalid("discovery.service_count", "cannot exceed discovery.node_count"));
        }
        at_least_one("discovery.query_count", q.query_count)?;
        counts("discovery.node_counts", &q.node_counts)?;
        if q.node_counts.iter().any(|n| *n < q.service_count) {
            return Err(invalid("discovery.node_counts", "every swept node count must host discovery.service_count services"));
        }
        counts("discovery.service_counts", &q.service_counts)?;
        if q.service_counts.iter().any(|n| *n > q.node_count) {
            return Err(invalid("discovery.service_counts", "cannot exceed discovery.node_count"));
        }
        positive("discovery.advert_interval_s", q.advert_interval_s)?;
        at_least_one("discovery.advert_hops", q.advert_hops)?;
        positive("discovery.advert_ttl_s", q.advert_ttl_s)?;
        positive("discovery.query_retry_s", q.query_retry_s)?;
        positive("discovery.query_deadline_s", q.query_deadline_s)?;
        non_negative("discovery.warmup_s", q.warmup_s)?;
        if q.warmup_s + q.query_deadline_s > self.sim_time_s {
            return Err(invalid("discovery.warmup_s", "warm-up plus one query deadline must fit in sim_time_s"));
        }
        positive("discovery.beacon_interval_s", q.beacon_interval_s)?;
        if q.ontology_tags.is_empty() {
            return Err(invalid("discovery.ontology_tags", "must not be empty"));
        }
        let a = &q.aodv;
        positive("discovery.aodv.hop_delay_min_s", a.hop_delay_min_s)?;
        if a.hop_delay_max_s < a.hop_delay_min_s {
            return Err(invalid("discovery.aodv.hop_delay_max_s", "must be at least hop_delay_min_s"));
        }
        if !(0.0..=1.0).contains(&a.loss_rate) {
            return Err(invalid("discovery.aodv.loss_rate", "must lie in [0, 1]"));
        }
        at_least_one("discovery.aodv.ttl", a.ttl as usize)?;
        positive("discovery.aodv.route_lifetime_s", a.route_lifetime_s)?;
        Ok(())
    }
}

pub fn load_scenario(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError::Io { path: path.display().to_string(), msg: e.to_string() })?;
    ScenarioConfig::from_toml_str(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Detection,
    Spectrum,
    Discovery,
    All,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Detection => "detection",
            Experiment::Spectrum => "spectrum",
            Experiment::Discovery => "discovery",
            Experiment::All => "all",
        }
    }

    fn parts(self) -> Vec<Experiment> {
        match self {
            Experiment::All => vec![Experiment::Detection, Experiment::Spectrum, Experiment::Discovery],
            e => vec![e],
        }
    }
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "detection" => Ok(Experiment::Detection),
            "spectrum" => Ok(Experiment::Spectrum),
            "discovery" => Ok(Experiment::Discovery),
            "all" => Ok(Experiment::All),
            _ => Err(format!("unknown experiment '{s}' (detection, spectrum, discovery, all)")),
        }
    }
}

/// One measured value from one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub replication: usize,
    pub seed: u64,
    pub group: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub group: String,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; zero for a single row.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub replication: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub experiment: String,
    pub seeds: Vec<u64>,
    pub config: ScenarioConfig,
    pub rows: Vec<MetricRow>,
    pub aggregates: Vec<Aggregate>,
    pub failures: Vec<Failure>,
}

fn aggregate_rows(rows: &[MetricRow]) -> Vec<Aggregate> {
    let mut order: Vec<(String, String)> = Vec::new();
    let mut values: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for r in rows {
        let key = (r.group.clone(), r.metric.clone());
        values.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            Vec::new()
        });
        values.get_mut(&(r.group.clone(), r.metric.clone())).expect("inserted").push(r.value);
    }
    order
        .into_iter()
        .map(|key| {
            let v = &values[&key];
            let n = v.len();
            let mean = v.iter().sum::<f64>() / n as f64;
            let std = if n > 1 { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
            Aggregate { group: key.0, metric: key.1, n, mean, std }
        })
        .collect()
}

impl MetricsReport {
    pub fn new(experiment: &str, config: &ScenarioConfig, rows: Vec<MetricRow>, failures: Vec<Failure>) -> Self {
        let aggregates = aggregate_rows(&rows);
        MetricsReport { experiment: experiment.to_string(), seeds: config.seeds(), config: config.clone(), rows, aggregates, failures }
    }

    pub fn aggregate(&self, group: &str, metric: &str) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.group == group && a.metric == metric)
    }

    /// Values of one metric across replications, in seed order.
    pub fn values(&self, group: &str, metric: &str) -> Vec<(u64, f64)> {
        self.rows.iter().filter(|r| r.group == group && r.metric == metric).map(|r| (r.seed, r.value)).collect()
    }

    /// Recompute every aggregate from the rows and compare to within 1e-9.
    pub fn check_aggregates(&self) -> Result<(), HarnessError> {
        let fresh = aggregate_rows(&self.rows);
        let mismatch = |g: &str, m: &str, rec: String, got: String| HarnessError::Aggregate { group: g.into(), metric: m.into(), recorded: rec, recomputed: got };
        if fresh.len() != self.aggregates.len() {
            return Err(mismatch("*", "*", format!("{} aggregates", self.aggregates.len()), format!("{}", fresh.len())));
        }
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0);
        for (a, b) in self.aggregates.iter().zip(&fresh) {
            if a.group != b.group || a.metric != b.metric || a.n != b.n || !close(a.mean, b.mean) || !close(a.std, b.std) {
                return Err(mismatch(&a.group, &a.metric, format!("{}/{}/{}", a.n, a.mean, a.std), format!("{}/{}/{}", b.n, b.mean, b.std)));
            }
        }
        Ok(())
    }
}

pub fn load_report(path: &Path) -> Result<MetricsReport, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let report: MetricsReport = serde_json::from_str(&text).map_err(|e| HarnessError::Json(e.to_string()))?;
    report.check_aggregates()?;
    Ok(report)
}

fn metric(rows: &mut Vec<MetricRow>, rep: usize, seed: u64, group: impl Into<String>, name: impl Into<String>, value: Option<f64>) {
    if let Some(value) = value.filter(|v| v.is_finite()) {
        rows.push(MetricRow { replication: rep, seed, group: group.into(), metric: name.into(), value });
    }
}

struct RepOutput<C> {
    csv: Vec<C>,
    rows: Vec<MetricRow>,
}

fn replicate<C: Send>(cfg: &ScenarioConfig, f: impl Fn(usize, u64) -> Result<RepOutput<C>, String> + Sync) -> (Vec<C>, Vec<MetricRow>, Vec<Failure>) {
    let seeds = cfg.seeds();
    let results: Vec<(usize, u64, Result<RepOutput<C>, String>)> =
        seeds.par_iter().enumerate().map(|(r, &seed)| (r, seed, f(r, seed))).collect();
    let (mut csv, mut rows, mut failures) = (Vec::new(), Vec::new(), Vec::new());
    for (replication, seed, res) in results {
        match res {
            Ok(out) => {
                csv.extend(out.csv);
                rows.extend(out.rows);
            }
            Err(error) => failures.push(Failure { replication, seed, error }),
        }
    }
    (csv, rows, failures)
}

#[derive(Debug, Clone, Serialize)]
pub struct DetectionCsvRow {
    pub replication: usize,
    pub seed: u64,
    pub cluster_count: usize,
    pub injected: usize,
    pub missed: usize,
    pub false_alarms: usize,
    pub false_negative_rate_pct: Option<f64>,
    pub response_time_s: Option<f64>,
    pub validation_accuracy: Option<f64>,
}

pub const GROUP_CLUSTERS: &str = "clusters=";

fn run_detection(cfg: &ScenarioConfig) -> Result<(MetricsReport, Vec<DetectionCsvRow>), HarnessError> {
    let p = &cfg.detection;
    let trace = match &p.trace_csv {
        Some(path) => {
            let f = fs::File::open(path).map_err(|e| io_err(Path::new(path), e))?;
            Some(DisasterTrace::from_csv(f).map_err(|e| ConfigError::Invalid { key: "detection.trace_csv".into(), msg: e.to_string() })?)
        }
        None => None,
    };
    let area = cfg.area();
    let (csv, rows, failures) = replicate(cfg, |rep, seed| {
        let mut out = RepOutput { csv: Vec::new(), rows: Vec::new() };
        for &k in &p.cluster_counts {
            let run = detection::run_detection_replication(p, &area, cfg.sim_time_s, seed, k, trace.as_ref()).map_err(|e| e.to_string())?;
            let fnr = run.false_negative_rate();
            let resp = run.mean_response_time(p.processing_delay_per_cluster_s);
            let group = format!("{GROUP_CLUSTERS}{k}");
            metric(&mut out.rows, rep, seed, &group, "false_negative_rate_pct", fnr);
            metric(&mut out.rows, rep, seed, &group, "response_time_s", resp);
            out.csv.push(DetectionCsvRow {
                replication: rep,
                seed,
                cluster_count: k,
                injected: run.injected(),
                missed: run.missed(),
                false_alarms: run.false_alarms,
                false_negative_rate_pct: fnr,
                response_time_s: resp,
                validation_accuracy: run.validation_accuracy,
            });
        }
        Ok(out)
    });
    Ok((MetricsReport::new("detection", cfg, rows, failures), csv))
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumCsvRow {
    pub replication: usize,
    pub seed: u64,
    pub pu_count: usize,
    pub policy: String,
    pub closed_assignments: usize,
    pub mean_switching_time_s: Option<f64>,
}

pub const GROUP_PU: &str = "pu=";
pub const GROUP_ALL_PU: &str = "all-pu-counts";

fn switching_metric(policy: Policy) -> String {
    format!("switching_time_s/{}", policy.name())
}

fn run_spectrum(cfg: &ScenarioConfig) -> Result<(MetricsReport, Vec<SpectrumCsvRow>), HarnessError> {
    let p = &cfg.spectrum;
    let area = cfg.area();
    let (csv, rows, failures) = replicate(cfg, |rep, seed| {
        let mut out = RepOutput { csv: Vec::new(), rows: Vec::new() };
        // Pooled over every closed assignment at every PU count.
        let mut pooled: BTreeMap<Policy, (f64, usize)> = BTreeMap::new();
        for &n in &p.pu_counts {
            let sc = SpectrumScenario::generate(p, n, area, cfg.motion, seed);
            for &policy in &p.policies {
                let run = spectrum::simulate_spectrum(&sc, policy, cfg.sim_time_s, seed).map_err(|e| e.to_string())?;
                let st = run.stats();
                metric(&mut out.rows, rep, seed, format!("{GROUP_PU}{n}"), switching_metric(policy), st.mean);
                let e = pooled.entry(policy).or_insert((0.0, 0));
                e.0 += st.mean.unwrap_or(0.0) * st.samples as f64;
                e.1 += st.samples;
                out.csv.push(SpectrumCsvRow {
                    replication: rep,
                    seed,
                    pu_count: n,
                    policy: policy.name().to_string(),
                    closed_assignments: st.samples,
                    mean_switching_time_s: st.mean,
                });
            }
        }
        let grand: BTreeMap<Policy, f64> = pooled.iter().filter(|(_, v)| v.1 > 0).map(|(k, v)| (*k, v.0 / v.1 as f64)).collect();
        for (policy, m) in &grand {
            metric(&mut out.rows, rep, seed, GROUP_ALL_PU, switching_metric(*policy), Some(*m));
        }
        if let (Some(h), Some(b)) = (grand.get(&Policy::MlpHistory), grand.get(&Policy::RandomBaseline)) {
            metric(&mut out.rows, rep, seed, GROUP_ALL_PU, "improvement_pct", Some(100.0 * (h - b) / b));
            metric(&mut out.rows, rep, seed, GROUP_ALL_PU, "history_wins", Some(if h > b { 1.0 } else { 0.0 }));
        }
        Ok(out)
    });
    Ok((MetricsReport::new("spectrum", cfg, rows, failures), csv))
}

#[derive(Debug, Clone, Serialize)]
pub struct DiscoveryCsvRow {
    pub replication: usize,
    pub seed: u64,
    pub caches: String,
    pub node_count: usize,
    pub service_count: usize,
    pub queries: usize,
    pub hits: usize,
    pub misses: usize,
    pub hit_messages: u64,
    pub mean_latency_s: Option<f64>,
    /// Misses whose provider was reachable when the query was issued.
    pub miss_latency_s: Option<f64>,
    pub miss_latency_all_s: Option<f64>,
    /// Misses that only resolved after a partition healed.
    pub partition_healed: usize,
    pub reachable_failures: usize,
}

pub const GROUP_DEFAULT: &str = "default";

fn caches_label(warm: bool) -> &'static str {
    if warm {
        "warm"
    } else {
        "cold"
    }
}

fn discovery_row(rep: usize, seed: u64, r: &LatencyRun) -> DiscoveryCsvRow {
    let connected: Vec<f64> = r.queries.iter().filter(|q| q.cache_hit == Some(false) && q.reachable).filter_map(|q| q.latency_s).collect();
    DiscoveryCsvRow {
        replication: rep,
        seed,
        caches: caches_label(r.warm).into(),
        node_count: r.node_count,
        service_count: r.service_count,
        queries: r.queries.len(),
        hits: r.hit_latencies().len(),
        misses: r.miss_latencies().len(),
        hit_messages: r.hit_messages(),
        mean_latency_s: r.mean_latency(),
        miss_latency_s: discovery::mean(&connected),
        miss_latency_all_s: discovery::mean(&r.miss_latencies()),
        partition_healed: r.queries.iter().filter(|q| q.cache_hit == Some(false) && !q.reachable).count(),
        reachable_failures: r.reachable_failures(),
    }
}

fn push_discovery_metrics(rows: &mut Vec<MetricRow>, rep: usize, seed: u64, group: &str, c: &DiscoveryCsvRow) {
    metric(rows, rep, seed, group, "mean_latency_s", c.mean_latency_s);
    metric(rows, rep, seed, group, "miss_latency_s", c.miss_latency_s);
    metric(rows, rep, seed, group, "hit_rate", Some(c.hits as f64 / c.queries as f64));
    metric(rows, rep, seed, group, "hit_messages", Some(c.hit_messages as f64));
    metric(rows, rep, seed, group, "reachable_failures", Some(c.reachable_failures as f64));
}

fn run_discovery(cfg: &ScenarioConfig) -> Result<(MetricsReport, Vec<DiscoveryCsvRow>), HarnessError> {
    let p = &cfg.discovery;
    let base = cfg.area();
    let (csv, rows, failures) = replicate(cfg, |rep, seed| {
        let mut out = RepOutput { csv: Vec::new(), rows: Vec::new() };
        let mut memo: BTreeMap<(usize, usize, bool), DiscoveryCsvRow> = BTreeMap::new();
        let mut run = |n: usize, s: usize, warm: bool| -> Result<DiscoveryCsvRow, String> {
            if let Some(c) = memo.get(&(n, s, warm)) {
                return Ok(c.clone());
            }
            let area = discovery::area_for(n, &base, p.node_count);
            let r = discovery::latency_experiment(p, n, s, &area, &cfg.motion, cfg.sim_time_s, seed, warm).map_err(|e| e.to_string())?;
            let c = discovery_row(rep, seed, &r);
            memo.insert((n, s, warm), c.clone());
            Ok(c)
        };
        let default = run(p.node_count, p.service_count, true)?;
        push_discovery_metrics(&mut out.rows, rep, seed, GROUP_DEFAULT, &default);
        out.csv.push(default);
        for warm in [false, true] {
            for &n in &p.node_counts {
                let c = run(n, p.service_count, warm)?;
                push_discovery_metrics(&mut out.rows, rep, seed, &format!("{}/nodes={n}", caches_label(warm)), &c);
                if (n, warm) != (p.node_count, true) {
                    out.csv.push(c);
                }
            }
        }
        for &s in &p.service_counts {
            let c = run(p.node_count, s, true)?;
            push_discovery_metrics(&mut out.rows, rep, seed, &format!("warm/services={s}"), &c);
            if s != p.service_count && !out.csv.iter().any(|x| x.node_count == p.node_count && x.service_count == s && x.caches == "warm") {
                out.csv.push(c);
            }
        }
        Ok(out)
    });
    Ok((MetricsReport::new("discovery", cfg, rows, failures), csv))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<(), HarnessError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(header).map_err(|e| HarnessError::Csv(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| HarnessError::Csv(e.to_string()))?;
    }
    w.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

pub const DETECTION_CSV_HEADER: [&str; 9] = [
    "replication",
    "seed",
    "cluster_count",
    "injected",
    "missed",
    "false_alarms",
    "false_negative_rate_pct",
    "response_time_s",
    "validation_accuracy",
];
pub const SPECTRUM_CSV_HEADER: [&str; 6] = ["replication", "seed", "pu_count", "policy", "closed_assignments", "mean_switching_time_s"];
pub const DISCOVERY_CSV_HEADER: [&str; 14] = [
    "replication",
    "seed",
    "caches",
    "node_count",
    "service_count",
    "queries",
    "hits",
    "misses",
    "hit_messages",
    "mean_latency_s",
    "miss_latency_s",
    "miss_latency_all_s",
    "partition_healed",
    "reachable_failures",
];

/// The aggregates behind one plotted series: `(x, group, metric)`.
type SeriesSpec = (String, Vec<(f64, String, String)>);

fn panel_from(report: &MetricsReport, title: &str, x_label: &str, y_label: &str, specs: &[SeriesSpec], used: &mut Vec<Aggregate>) -> Panel {
    let series = specs
        .iter()
        .map(|(name, pts)| Series {
            name: name.clone(),
            points: pts
                .iter()
                .filter_map(|(x, g, m)| {
                    let a = report.aggregate(g, m)?;
                    used.push(a.clone());
                    Some(plot::Point { x: *x, y: a.mean, err: if a.n > 1 { a.std / (a.n as f64).sqrt() } else { 0.0 } })
                })
                .collect(),
        })
        .collect();
    Panel { title: title.into(), x_label: x_label.into(), y_label: y_label.into(), series }
}

fn write_figure(out: &Path, stem: &str, panels: Vec<Panel>, used: &[Aggregate]) -> Result<Option<PathBuf>, HarnessError> {
    if panels.iter().all(Panel::is_empty) {
        info!("no data for {stem}; plot skipped");
        return Ok(None);
    }
    let svg = out.join(format!("{stem}.svg"));
    fs::write(&svg, plot::render_svg(&panels)).map_err(|e| io_err(&svg, e))?;
    let data = out.join(format!("{stem}.csv"));
    write_csv(&data, used, &["group", "metric", "n", "mean", "std"])?;
    Ok(Some(svg))
}

/// Write the figure analogues for one report; returns the SVG paths written.
pub fn emit_plots(report: &MetricsReport, out: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let cfg = &report.config;
    let mut written = Vec::new();
    match report.experiment.as_str() {
        "detection" => {
            let ks = &cfg.detection.cluster_counts;
            let pts = |m: &str| ks.iter().map(|k| (*k as f64, format!("{GROUP_CLUSTERS}{k}"), m.to_string())).collect::<Vec<_>>();
            let mut used = Vec::new();
            let a = panel_from(report, "False negative alarm rate", "cluster heads", "FNR (%)", &[("FNR".into(), pts("false_negative_rate_pct"))], &mut used);
            let b = panel_from(report, "Response time", "cluster heads", "seconds", &[("response".into(), pts("response_time_s"))], &mut used);
            written.extend(write_figure(out, "fig8_detection", vec![a, b], &used)?);
        }
        "spectrum" => {
            let ns = &cfg.spectrum.pu_counts;
            let pts = |p: Policy| ns.iter().map(|n| (*n as f64, format!("{GROUP_PU}{n}"), switching_metric(p))).collect::<Vec<_>>();
            let primary = if cfg.spectrum.policies.contains(&Policy::MlpHistory) { Policy::MlpHistory } else { cfg.spectrum.policies[0] };
            let mut used = Vec::new();
            let a = panel_from(report, "Average spectrum switching time", "primary users", "seconds", &[(primary.name().into(), pts(primary))], &mut used);
            written.extend(write_figure(out, "fig9_switching_time", vec![a], &used)?);
            let mut used = Vec::new();
            let specs: Vec<SeriesSpec> = cfg.spectrum.policies.iter().map(|p| (p.name().to_string(), pts(*p))).collect();
            let b = panel_from(report, "History-aware vs random hole selection", "primary users", "switching time (s)", &specs, &mut used);
            written.extend(write_figure(out, "fig10_policy_comparison", vec![b], &used)?);
        }
        "discovery" => {
            let d = &cfg.discovery;
            let by_nodes = |warm: bool, m: &str| {
                d.node_counts.iter().map(|n| (*n as f64, format!("{}/nodes={n}", caches_label(warm)), m.to_string())).collect::<Vec<_>>()
            };
            let mut used = Vec::new();
            let a = panel_from(
                report,
                "Discovery latency vs nodes",
                "nodes",
                "seconds",
                &[("cold-cache miss".into(), by_nodes(false, "miss_latency_s")), ("warm, all queries".into(), by_nodes(true, "mean_latency_s"))],
                &mut used,
            );
            let svc = d.service_counts.iter().map(|s| (*s as f64, format!("warm/services={s}"), "mean_latency_s".to_string())).collect();
            let b = panel_from(report, "Discovery latency vs services", "services", "seconds", &[("warm, all queries".into(), svc)], &mut used);
            written.extend(write_figure(out, "fig11_discovery_latency", vec![a, b], &used)?);
        }
        other => info!("no plots defined for experiment '{other}'"),
    }
    Ok(written)
}

/// Everything one experiment wrote.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub report: MetricsReport,
    pub files: Vec<PathBuf>,
}

/// Run one experiment (or all three), writing `<name>.csv`,
/// `<name>_report.json` and the figure files into `out`.
pub fn run_experiment(cfg: &ScenarioConfig, which: Experiment, out: &Path) -> Result<Vec<ExperimentOutput>, HarnessError> {
    cfg.validate()?;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let mut outputs = Vec::new();
    for e in which.parts() {
        info!("running {} with {} replications from seed {}", e.name(), cfg.replications, cfg.seed);
        let csv_path = out.join(format!("{}.csv", e.name()));
        let report = match e {
            Experiment::Detection => {
                let (r, rows) = run_detection(cfg)?;
                write_csv(&csv_path, &rows, &DETECTION_CSV_HEADER)?;
                r
            }
            Experiment::Spectrum => {
                let (r, rows) = run_spectrum(cfg)?;
                write_csv(&csv_path, &rows, &SPECTRUM_CSV_HEADER)?;
                r
            }
            Experiment::Discovery => {
                let (r, rows) = run_discovery(cfg)?;
                write_csv(&csv_path, &rows, &DISCOVERY_CSV_HEADER)?;
                r
            }
            Experiment::All => unreachable!("expanded by parts()"),
        };
        for f in &report.failures {
            log::warn!("{} replication {} (seed {}) failed: {}", e.name(), f.replication, f.seed, f.error);
        }
        let json_path = out.join(format!("{}_report.json", e.name()));
        let json = serde_json::to_string_pretty(&report).map_err(|e| HarnessError::Json(e.to_string()))?;
        fs::write(&json_path, json + "\n").map_err(|err| io_err(&json_path, err))?;
        let mut files = vec![csv_path, json_path];
        files.extend(emit_plots(&report, out)?);
        outputs.push(ExperimentOutput { report, files });
    }
    Ok(outputs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = ScenarioConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, ScenarioConfig::default());
        assert_eq!(cfg.sim_time_s, 500.0);
        assert_eq!(cfg.area_m, [1000.0, 1000.0]);
        assert_eq!((cfg.routing.as_str(), cfg.pathloss.as_str(), cfg.mobility.as_str()), ("aodv", "free-space", "random-waypoint"));
        assert_eq!((cfg.discovery.node_count, cfg.discovery.service_count), (50, 10));
        assert_eq!(cfg.replications, 30);
    }

    #[test]
    fn negative_time_names_key() {
        let err = ScenarioConfig::from_toml_str("sim_time_s = -5").unwrap_err();
        assert!(matches!(&err, ConfigError::Invalid { key, .. } if key == "sim_time_s"), "{err}");
    }

    #[test]
    fn unknown_key_and_syntax_errors_carry_line() {
        let err = ScenarioConfig::from_toml_str("seed = 3\n\n[spectrum]\nbogus = 1\n").unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { line: 4, .. }), "{err}");
        let err = ScenarioConfig::from_toml_str("seed = 3\nsim_time_s = = 2\n").unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { line: 2, .. }), "{err}");
    }

    #[test]
    fn nested_values_validated() {
        let err = ScenarioConfig::from_toml_str("[detection]\ncluster_counts = []\n").unwrap_err();
        assert!(matches!(&err, ConfigError::Invalid { key, .. } if key == "detection.cluster_counts"));
        let err = ScenarioConfig::from_toml_str("[discovery]\nservice_count = 60\n").unwrap_err();
        assert!(matches!(&err, ConfigError::Invalid { key, .. } if key == "discovery.service_count"));
        let cfg = ScenarioConfig::from_toml_str("[spectrum]\npolicies = [\"random-baseline\"]\n").unwrap();
        assert_eq!(cfg.spectrum.policies, vec![Policy::RandomBaseline]);
    }

    #[test]
    fn aggregates_recompute() {
        let row = |r: usize, v: f64| MetricRow { replication: r, seed: r as u64, group: "g".into(), metric: "m".into(), value: v };
        let rep = MetricsReport::new("x", &ScenarioConfig::default(), vec![row(0, 1.0), row(1, 3.0)], vec![]);
        let a = rep.aggregate("g", "m").unwrap();
        assert_eq!((a.n, a.mean), (2, 2.0));
        assert!((a.std - 2f64.sqrt()).abs() < 1e-12);
        rep.check_aggregates().unwrap();
        let mut bad = rep.clone();
        bad.aggregates[0].mean = 2.1;
        assert!(bad.check_aggregates().is_err());
    }

    #[test]
    fn experiment_names() {
        for e in [Experiment::Detection, Experiment::Spectrum, Experiment::Discovery, Experiment::All] {
            assert_eq!(e.name().parse::<Experiment>().unwrap(), e);
        }
        assert!("fig8".parse::<Experiment>().is_err());
    }
}
