use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use discedge::report::Report;
use discedge::scenario::default_scenario;

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("discedge-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn discedge(args: &[&str], seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_discedge"));
    cmd.args(args).env_remove("DISCEDGE_SEED");
    if let Some(s) = seed {
        cmd.env("DISCEDGE_SEED", s);
    }
    cmd.output().unwrap()
}

fn write_scenario(dir: &Path, edit: impl FnOnce(&mut discedge::ScenarioConfig)) -> String {
    let mut s = default_scenario();
    s.harness.repeats = 1;
    edit(&mut s);
    let path = dir.join("scenario.yaml");
    std::fs::write(&path, serde_yaml::to_string(&s).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

#[test]
fn sim_run_then_compare() {
    let dir = scratch("sim");
    let scenario = write_scenario(&dir, |s| s.harness.jitter_ms = 2.0);
    let out = dir.join("report");
    let o = discedge(&["run", "--scenario", &scenario, "--sim", "--out", out.to_str().unwrap()], None);
    assert!(o.status.success(), "{}", text(&o));
    assert!(text(&o).contains("27 turns, 0 failed"));

    let report = Report::read(&out).unwrap();
    assert_eq!(report.turns.len(), 27);
    assert_eq!(report.tokens(discedge_core::protocol::ContextMode::Raw, 0)[0].len(), 128);

    let o = discedge(&["compare", out.to_str().unwrap()], None);
    assert!(o.status.success(), "{}", text(&o));
    assert!(out.join("comparison.csv").exists());
    assert!(String::from_utf8_lossy(&o.stdout).contains("request_bytes"));
}

#[test]
fn seed_comes_from_the_environment() {
    let dir = scratch("seed");
    let scenario = write_scenario(&dir, |s| s.harness.jitter_ms = 2.0);
    let run = |name: &str, seed| {
        let out = dir.join(name);
        let o = discedge(&["run", "--scenario", &scenario, "--out", out.to_str().unwrap()], seed);
        assert!(o.status.success(), "{}", text(&o));
        std::fs::read(out.join("response_time_ms.csv")).unwrap()
    };
    let base = run("base", None);
    assert_eq!(run("same", Some("42")), base);
    assert_ne!(run("other", Some("7")), base);
}

#[test]
fn failed_strong_turn_fails_the_command() {
    let dir = scratch("strong");
    let scenario = write_scenario(&dir, |s| s.harness.node_latency_ms = 50.0);
    let out = dir.join("report");
    let o = discedge(&["run", "--scenario", &scenario, "--out", out.to_str().unwrap()], None);
    assert!(!o.status.success(), "{}", text(&o));
    // the report is still written
    assert!(out.join("turns.csv").exists());

    let scenario = write_scenario(&dir, |s| {
        s.harness.node_latency_ms = 50.0;
        s.harness.policy.mode = discedge_core::manager::PolicyMode::Available;
    });
    let o = discedge(&["run", "--scenario", &scenario, "--out", out.to_str().unwrap()], None);
    assert!(o.status.success(), "{}", text(&o));
}

#[test]
fn live_run_spawns_nodes() {
    let dir = scratch("live");
    let scenario = write_scenario(&dir, |s| s.harness.modes.truncate(2));
    let out = dir.join("report");
    let o = discedge(&["run", "--scenario", &scenario, "--live", "--out", out.to_str().unwrap()], None);
    assert!(o.status.success(), "{}", text(&o));
    let report = Report::read(&out).unwrap();
    assert_eq!(report.failures().count(), 0);
    assert!(report.turns.iter().filter(|t| t.turn > 1).all(|t| t.consistency == "fresh"));
}

#[test]
fn vocab_build_writes_entries() {
    let dir = scratch("vocab");
    let corpus = dir.join("corpus.txt");
    std::fs::write(&corpus, "the robot sees the wall and the robot turns\n").unwrap();
    let vocab = dir.join("vocab.txt");
    let o = discedge(&["vocab", "build", corpus.to_str().unwrap(), "-o", vocab.to_str().unwrap(), "--size", "50"], None);
    assert!(o.status.success(), "{}", text(&o));
    let body = std::fs::read_to_string(&vocab).unwrap();
    assert!(body.lines().any(|l| l.contains("robot")));
    assert!(!body.lines().any(str::is_empty));

    let empty = dir.join("empty.txt");
    std::fs::write(&empty, "").unwrap();
    let o = discedge(&["vocab", "build", empty.to_str().unwrap(), "-o", vocab.to_str().unwrap()], None);
    assert!(!o.status.success());
}

#[test]
fn bad_scenario_is_reported() {
    let dir = scratch("bad");
    let path = dir.join("bad.yaml");
    std::fs::write(&path, "name: x\nmodel_name: m\nuser_id: u\nmessages: []\n").unwrap();
    let o = discedge(&["run", "--scenario", path.to_str().unwrap()], None);
    assert!(!o.status.success());
    assert!(text(&o).contains("at least one message"), "{}", text(&o));
}
