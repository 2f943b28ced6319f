use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use scl_cli::{run_suite, Overrides, SuiteOptions};
use scl_core::trace::{EpisodeTrace, MetricsReport};
use scl_core::{run_episode, Scenario};
use serde_json::Value;

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn scl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scl")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn run_compare_writes_traces_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = scl(&["run", "weather_two_city", "--compare", "--seed", "7", "--out", out]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["scl.trace.jsonl", "baseline.trace.jsonl", "report.json"] {
        assert!(dir.path().join(format!("weather_two_city.seed7.{f}")).exists(), "{f}");
    }
    let r = read_json(&dir.path().join("weather_two_city.seed7.report.json"));
    assert_eq!(r["scl"]["spa"]["ratio"], 1.0);
    assert_eq!(r["scl"]["tc"]["ratio"], 1.0);
    assert!(r["baseline"]["spa"]["ratio"].as_f64().unwrap() < 1.0);
    assert!(r["baseline"]["tc"]["ratio"].as_f64().unwrap() < 1.0);
    assert!(r["scl"].get("elp").is_none());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("SCL") && stdout.contains("Baseline"), "{stdout}");
}

#[test]
fn faults_flag_adds_elp() {
    let dir = tempfile::tempdir().unwrap();
    let o = scl(&["run", "weather_two_city", "--faults", "duplicates=0.3", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_json(&dir.path().join("weather_two_city.seed7.report.json"));
    assert!(r["scl"]["elp"].is_object());
}

#[test]
fn reports_are_bit_stable() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = scl(&["run", "weather_two_city", "--compare", "--faults", "all=0.3", "--out", d.path().to_str().unwrap()]);
        // rejected faults consume cycles, so the default budget may run out
        assert!(matches!(code(&o), 0 | 2), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["scl.trace.jsonl", "baseline.trace.jsonl"] {
        let name = format!("weather_two_city.seed7.{f}");
        assert_eq!(std::fs::read(a.path().join(&name)).unwrap(), std::fs::read(b.path().join(&name)).unwrap());
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(code(&scl(&["run", "no_such_scenario", "--out", out])), 1);
    assert_eq!(code(&scl(&["run", "weather_two_city", "--max-cycles", "1", "--out", out])), 2);
    assert_eq!(code(&scl(&["run", "weather_two_city", "--max-cycles", "0", "--out", out])), 1);
    assert_eq!(code(&scl(&["run", "weather_two_city", "--faults", "gremlins=0.2", "--out", out])), 1);
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "name = \"bad\"\ntask = \"t\"\n[goal]\nrequired = 3\n").unwrap();
    let o = scl(&["run", bad.to_str().unwrap(), "--out", out]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 4"), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn trace_command_prints_chains_and_flags_gaps() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(code(&scl(&["run", "weather_two_city", "--out", out])), 0);
    let trace = dir.path().join("weather_two_city.seed7.scl.trace.jsonl");
    let t = trace.to_str().unwrap();

    let o = scl(&["trace", t]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("book_flight(\"Seoul\")"), "{text}");
    assert!(text.contains("obs.Seoul.temp_f=51.8, obs.Jeju.temp_f=60.8"), "{text}");

    let o = scl(&["trace", t, "act.book_flight"]);
    assert_eq!(code(&o), 0);
    assert_eq!(code(&scl(&["trace", t, "cycle99"])), 1);

    let o = scl(&["trace", t, "--metrics"]);
    let m: MetricsReport = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(m, MetricsReport::from_trace(&EpisodeTrace::read(&trace).unwrap()));

    let mut corrupted = EpisodeTrace::read(&trace).unwrap();
    corrupted.cycles[2].decision = None;
    let bad = dir.path().join("corrupted.jsonl");
    corrupted.write(&bad).unwrap();
    let o = scl(&["trace", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stdout).contains("cycle 3: decision link missing"));

    std::fs::write(&bad, "not json\n").unwrap();
    assert_eq!(code(&scl(&["trace", bad.to_str().unwrap()])), 1);
}

#[test]
fn suite_of_one_equals_the_episode() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(scenarios().join("weather_two_city.toml"), dir.path().join("one.toml")).unwrap();
    let report = run_suite(
        dir.path(),
        &SuiteOptions {
            seeds: vec![7],
            overrides: Overrides::default(),
            out: None,
        },
    )
    .unwrap();
    let s = Scenario::load(dir.path().join("one.toml")).unwrap();
    let single = MetricsReport::from_trace(&run_episode(&s.episode(7).unwrap()).unwrap().trace);
    assert_eq!(report.scl.spa.pooled, single.spa);
    assert_eq!(report.scl.spa.mean, single.spa.ratio);
    assert_eq!(report.scl.tc.pooled, single.tc);
}

#[test]
fn suite_baseline_override_stays_below_scl() {
    let dir = tempfile::tempdir().unwrap();
    let o = scl(&[
        "suite",
        scenarios().join("suite").to_str().unwrap(),
        "--seeds",
        "1-2",
        "--baseline-budget",
        "2",
        "--baseline-decay",
        "0.3",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_json(&dir.path().join("suite_report.json"));
    for m in ["spa", "tc", "elp"] {
        let s = r["scl"][m]["mean"].as_f64().unwrap();
        let b = r["baseline"][m]["mean"].as_f64().unwrap();
        assert!(b < s, "{m}: baseline {b} vs SCL {s}");
        assert_eq!(s, 1.0, "{m}");
    }
    assert_eq!(r["runs"].as_array().unwrap().len(), 100);
}

#[test]
fn gen_suite_reproduces_shipped_files() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&scl(&["gen-suite", dir.path().to_str().unwrap()])), 0);
    let mut n = 0;
    for e in std::fs::read_dir(dir.path()).unwrap() {
        let p = e.unwrap().path();
        let shipped = scenarios().join("suite").join(p.file_name().unwrap());
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&shipped).unwrap());
        n += 1;
    }
    assert_eq!(n, 50);
}
