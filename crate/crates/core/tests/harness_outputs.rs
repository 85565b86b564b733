use std::fs;

use crahn_sim::harness::{self, ConfigError, Experiment, HarnessError, ScenarioConfig};

fn quick() -> ScenarioConfig {
    ScenarioConfig::from_toml_str(
        r#"
sim_time_s = 200
seed = 7
replications = 2

[detection]
cluster_counts = [1, 3]
disaster_count = 4
training_per_class = 100
epochs = 20

[spectrum]
pu_counts = [5, 10]
warmup_samples = 40
initial_epochs = 30

[discovery]
node_count = 20
service_count = 5
query_count = 20
node_counts = [10, 20]
service_counts = [5]
"#,
    )
    .unwrap()
}

#[test]
fn every_experiment_writes_reports_and_figures() {
    let dir = tempfile::tempdir().unwrap();
    let outputs = harness::run_experiment(&quick(), Experiment::All, dir.path()).unwrap();
    assert_eq!(outputs.len(), 3);
    for name in [
        "detection.csv",
        "detection_report.json",
        "fig8_detection.svg",
        "fig8_detection.csv",
        "spectrum.csv",
        "spectrum_report.json",
        "fig9_switching_time.svg",
        "fig10_policy_comparison.svg",
        "discovery.csv",
        "discovery_report.json",
        "fig11_discovery_latency.svg",
        "fig11_discovery_latency.csv",
    ] {
        assert!(dir.path().join(name).is_file(), "missing {name}");
    }
    let det = fs::read_to_string(dir.path().join("detection.csv")).unwrap();
    let mut lines = det.lines();
    assert_eq!(lines.next().unwrap(), harness::DETECTION_CSV_HEADER.join(","));
    assert_eq!(lines.count(), 2 * 2);
    let report = harness::load_report(&dir.path().join("spectrum_report.json")).unwrap();
    assert_eq!(report.seeds, vec![7, 8]);
    assert!(report.failures.is_empty());
    assert!(report.aggregate(harness::GROUP_ALL_PU, "improvement_pct").is_some());
    let fig = fs::read_to_string(dir.path().join("fig11_discovery_latency.csv")).unwrap();
    assert!(fig.starts_with("group,metric,n,mean,std\n"));
}

#[test]
fn tampered_aggregates_are_caught_on_load() {
    let dir = tempfile::tempdir().unwrap();
    harness::run_experiment(&quick(), Experiment::Detection, dir.path()).unwrap();
    let path = dir.path().join("detection_report.json");
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    let mean = v["aggregates"][0]["mean"].as_f64().unwrap();
    v["aggregates"][0]["mean"] = serde_json::json!(mean + 1e-6);
    fs::write(&path, serde_json::to_string(&v).unwrap()).unwrap();
    assert!(matches!(harness::load_report(&path), Err(HarnessError::Aggregate { .. })));
}

#[test]
fn seeds_shift_results_and_repeat_exactly() {
    let run = |seed: u64| {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ScenarioConfig { seed, replications: 1, ..quick() };
        harness::run_experiment(&cfg, Experiment::Spectrum, dir.path()).unwrap();
        fs::read(dir.path().join("spectrum.csv")).unwrap()
    };
    assert_eq!(run(3), run(3));
    assert_ne!(run(3), run(4));
}

#[test]
fn scenario_files_are_checked() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "replications = 0\n").unwrap();
    assert!(matches!(harness::load_scenario(&path), Err(ConfigError::Invalid { key, .. }) if key == "replications"));
    fs::write(&path, "[discovery.aodv]\nloss_rate = 1.5\n").unwrap();
    assert!(matches!(harness::load_scenario(&path), Err(ConfigError::Invalid { key, .. }) if key == "discovery.aodv.loss_rate"));
    fs::write(&path, "routing = \"dsr\"\n").unwrap();
    assert!(matches!(harness::load_scenario(&path), Err(ConfigError::Invalid { key, .. }) if key == "routing"));
    assert!(matches!(harness::load_scenario(&dir.path().join("absent.toml")), Err(ConfigError::Io { .. })));
}
