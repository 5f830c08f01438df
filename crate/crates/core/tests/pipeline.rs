use std::fs;
use std::path::Path;

use geoscholar::pipeline::{
    reference_plan, run_pipeline, validate, write_reference_fixture, PipelineError, RunConfig, StageStatus,
};

fn fixture(dir: &Path) -> RunConfig {
    let path = write_reference_fixture(&reference_plan(), dir).unwrap();
    RunConfig::from_path(&path).unwrap()
}

fn with_controls(cfg: &RunConfig, controls: &str) -> RunConfig {
    let text = fs::read_to_string(cfg.base_dir.join("run.toml")).unwrap();
    let start = text.find("[controls]").unwrap();
    let end = text.find("[analysis]").unwrap();
    let patched = format!("{}[controls]\n{controls}\n\n{}", &text[..start], &text[end..]);
    RunConfig::from_toml_str(&patched, &cfg.base_dir).unwrap()
}

#[test]
fn reference_fixture_runs_clean() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path());
    assert!(validate(&cfg).is_empty());
    let m = run_pipeline(&cfg, 2).unwrap();
    assert!(m.ok(), "{:?}", m.stages);
    for s in ["load", "extract", "network", "metrics", "eval", "cem", "panel", "did"] {
        assert_eq!(m.stage(s).unwrap().status, StageStatus::Ok, "{s}");
    }
    for f in
        ["mentions.jsonl", "edges_attention.csv", "metrics.csv", "ranks.csv", "did.json", "cem.json", "manifest.json"]
    {
        assert!(cfg.output_path().join(f).is_file(), "{f}");
    }
}

#[test]
fn cem_controls_feed_the_panel() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with_controls(&fixture(dir.path()), "kind = \"cem\"");
    let m = run_pipeline(&cfg, 1).unwrap();
    assert!(m.ok(), "{:?}", m.stages);
    let did: serde_json::Value =
        serde_json::from_slice(&fs::read(cfg.output_path().join("did.json")).unwrap()).unwrap();
    let cem: serde_json::Value =
        serde_json::from_slice(&fs::read(cfg.output_path().join("cem.json")).unwrap()).unwrap();
    let matched: Vec<String> =
        cem["matched_controls"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect();
    let controls: Vec<String> =
        did["controls"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect();
    assert_eq!(controls, matched);
}

#[test]
fn failing_stage_skips_dependents_only() {
    let dir = tempfile::tempdir().unwrap();
    // A roster of unassigned codes has no covariates, so every panel
    // is control-free and estimation fails.
    let cfg = with_controls(&fixture(dir.path()), "kind = \"mena\"\ncountries = [\"QMA\", \"QMB\"]");
    let m = run_pipeline(&cfg, 1).unwrap();
    assert!(!m.ok());
    assert_eq!(m.stage("did").unwrap().status, StageStatus::Failed);
    assert!(m.stage("did").unwrap().detail.is_some());
    for s in ["load", "extract", "network", "metrics", "eval", "cem", "panel"] {
        assert_eq!(m.stage(s).unwrap().status, StageStatus::Ok, "{s}");
    }
}

#[test]
fn invalid_config_stops_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path());
    fs::remove_file(dir.path().join("covariates.csv")).unwrap();
    match run_pipeline(&cfg, 1) {
        Err(PipelineError::Invalid(d)) => assert!(d.iter().any(|d| d.message.contains("covariates"))),
        other => panic!("expected invalid config, got {other:?}"),
    }
    assert!(!cfg.output_path().exists());
}

#[test]
fn topic_filter_restricts_network() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path());
    // The fixture config ends inside [analysis].
    let text = fs::read_to_string(dir.path().join("run.toml")).unwrap() + "topic_filter = true\n";
    let text = text.replacen("output_dir = \"out\"", "output_dir = \"filtered\"", 1);
    let filtered = RunConfig::from_toml_str(&text, dir.path()).unwrap();
    let a = run_pipeline(&cfg, 1).unwrap();
    let b = run_pipeline(&filtered, 1).unwrap();
    // The filtered corpus may be too thin for estimation; only the
    // network needs to succeed here.
    assert!(a.ok());
    assert_eq!(b.stage("network").unwrap().status, StageStatus::Ok);
    let report = |c: &RunConfig| -> serde_json::Value {
        serde_json::from_slice(&fs::read(c.output_path().join("report.json")).unwrap()).unwrap()
    };
    let (ra, rb) = (report(&cfg), report(&filtered));
    let wa = ra["attention_total_weight"].as_f64().unwrap();
    let wb = rb["attention_total_weight"].as_f64().unwrap();
    let matches = rb["extraction"]["topic_matches"].as_u64().unwrap() as f64;
    assert!(wb < wa && wb <= matches + 1e-9, "{wb} vs {wa}, {matches} topic matches");
}
