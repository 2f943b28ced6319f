//! Acceptance criteria, one pass/fail line each. Run with
//! `cargo test -p scl-cli --test acceptance`.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use scl_cli::{cmd_trace, run_suite, Overrides, SuiteOptions, EXIT_GAP, EXIT_OK};
use scl_core::cognition::{FaultConfig, ToolCall};
use scl_core::control::Verdict;
use scl_core::memory::{EntryKind, MemoryKey, MemoryQuery, MemoryStore, NewEntry, Payload};
use scl_core::runtime::{builtin_registry, Runtime, WorldState};
use scl_core::scenario::{load_dir, Scenario};
use scl_core::trace::chain::{all_chains, is_executed};
use scl_core::trace::{compute_elp, compute_spa, compute_tc, EpisodeTrace, Metric, MetricsReport};
use scl_core::{run_baseline_episode, run_episode, ContextModel, EpisodeConfig, EpisodeStatus, ProposerConfig};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn fixture(name: &str) -> Scenario {
    Scenario::load(scenarios().join(format!("{name}.toml"))).expect("fixture loads")
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let took = start.elapsed();
    ensure(took < limit, || format!("took {took:?}, limit {limit:?}"))
}

fn is_one(m: Metric) -> bool {
    m.ratio == Some(1.0)
}

fn clean_run() -> Check {
    let start = Instant::now();
    let r = run_episode(&fixture("weather_two_city").episode(7).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    within(start, Duration::from_secs(1))?;
    let (spa, tc) = (compute_spa(&r.trace), compute_tc(&r.trace));
    ensure(is_one(spa) && is_one(tc), || format!("SPA {spa:?}, TC {tc:?}"))?;
    let mut approved = BTreeSet::new();
    for c in &r.trace.cycles {
        let verdict = c.decision.as_ref().map(|d| &d.verdict);
        if let Some(Verdict::Approved { call }) = verdict {
            ensure(approved.insert(call.canonical_key()), || format!("duplicate approval of {call}"))?;
        }
        if c.invocation.is_some() {
            ensure(matches!(verdict, Some(Verdict::Approved { .. })), || {
                format!("cycle {} executed without approval", c.cycle)
            })?;
        }
    }
    ensure(r.status == EpisodeStatus::Completed && r.cycles_used <= 6, || {
        format!("{:?} after {} cycles", r.status, r.cycles_used)
    })?;
    Ok(format!("Completed in {} cycles, SPA 1.0, TC 1.0", r.cycles_used))
}

fn faulty_config(seed: u64, p: f64) -> Result<EpisodeConfig, String> {
    let mut cfg = fixture("weather_two_city").episode(seed).map_err(|e| e.to_string())?;
    cfg.proposer = ProposerConfig::Faulty(FaultConfig::uniform(seed, p));
    Ok(cfg)
}

fn containment() -> Check {
    let start = Instant::now();
    let mut elps = Vec::new();
    for p in [0.1, 0.3, 0.5] {
        for seed in 1..=10 {
            let r = run_episode(&faulty_config(seed, p)?).map_err(|e| e.to_string())?;
            for c in r.trace.cycles.iter().filter(|c| c.fault_label.is_some()) {
                let rejected = matches!(c.decision.as_ref().map(|d| &d.verdict), Some(Verdict::Rejected { .. }));
                ensure(rejected && c.invocation.is_none(), || {
                    format!("p={p} seed={seed}: fault in cycle {} was not rejected", c.cycle)
                })?;
            }
            let elp = compute_elp(&r.trace).map_err(|e| e.to_string())?;
            ensure(elp.ratio.is_none() || is_one(elp), || format!("p={p} seed={seed}: ELP {elp:?}"))?;
            elps.push(elp);
        }
    }
    within(start, Duration::from_secs(10))?;
    let pooled = Metric::pooled(elps);
    ensure(pooled.denominator > 0 && is_one(pooled), || format!("pooled ELP {pooled:?}"))?;
    Ok(format!("{} injected faults, all rejected with the mapped rule", pooled.denominator))
}

fn directional_table() -> Check {
    let start = Instant::now();
    let report = run_suite(
        &scenarios().join("suite"),
        &SuiteOptions {
            seeds: (1..=5).collect(),
            overrides: Overrides::default(),
            out: None,
        },
    )
    .map_err(|e| format!("{e:#}"))?;
    within(start, Duration::from_secs(60))?;
    ensure(report.episodes.len() == 250, || format!("{} episodes", report.episodes.len()))?;
    let mean = |a: &scl_core::trace::metrics::Aggregate| a.mean.unwrap_or(f64::NAN);
    let (s, b) = (&report.scl, &report.baseline);
    for (name, sv, bv) in [
        ("SPA", mean(&s.spa), mean(&b.spa)),
        ("TC", mean(&s.tc), mean(&b.tc)),
        ("ELP", mean(&s.elp), mean(&b.elp)),
    ] {
        ensure(sv > bv, || format!("{name}: SCL {sv:.3} does not exceed baseline {bv:.3}"))?;
    }
    ensure(mean(&s.spa) >= 0.95 && mean(&b.spa) <= 0.75, || {
        format!("SPA SCL {:.3}, baseline {:.3}", mean(&s.spa), mean(&b.spa))
    })?;
    Ok(format!(
        "SPA {:.3}/{:.3}  TC {:.3}/{:.3}  ELP {:.3}/{:.3} (SCL/baseline)",
        mean(&s.spa),
        mean(&b.spa),
        mean(&s.tc),
        mean(&b.tc),
        mean(&s.elp),
        mean(&b.elp)
    ))
}

fn clean_scenarios() -> Result<Vec<Scenario>, String> {
    let mut all = load_dir(scenarios()).map_err(|e| e.to_string())?;
    all.extend(load_dir(scenarios().join("suite")).map_err(|e| e.to_string())?);
    Ok(all
        .into_iter()
        .filter(|s| s.file.proposer == ProposerConfig::Scripted)
        .collect())
}

fn degenerate_baseline() -> Check {
    let scenarios = clean_scenarios()?;
    for s in &scenarios {
        let cfg = s.episode(s.file.seed).map_err(|e| e.to_string())?;
        let scl = run_episode(&cfg).map_err(|e| e.to_string())?;
        let cm = ContextModel::unconstrained(&cfg);
        let base = run_baseline_episode(&cfg, &cm).map_err(|e| e.to_string())?;
        ensure(
            scl.status == base.status
                && scl.cycles_used == base.cycles_used
                && scl.invocations == base.invocations
                && scl.world == base.world,
            || format!("{}: SCL and unconstrained baseline diverge", s.name()),
        )?;
    }
    Ok(format!("{} scripted scenarios match exactly", scenarios.len()))
}

fn atomicity() -> Check {
    let r = run_episode(&fixture("weather_transient_failure").episode(7).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let key: MemoryKey = "obs.Seoul".parse().expect("valid key");
    let versions = r.final_snapshot().read(&MemoryQuery::prefix(key.clone()));
    ensure(versions.len() == 2, || format!("{} versions of {key}", versions.len()))?;
    ensure(versions[0].timestamp < versions[1].timestamp, || "timestamps out of order".into())?;

    let mut store = MemoryStore::default();
    let mut payload = Payload::new();
    payload.insert("temp_f".into(), 51.8.into());
    store
        .write_staged(NewEntry::new(key.clone(), EntryKind::Observation, payload.clone(), "get_weather"))
        .map_err(|e| e.to_string())?;
    let before = store.commit_cycle();
    store
        .write_staged(NewEntry::new(key, EntryKind::Observation, payload, "get_weather"))
        .map_err(|e| e.to_string())?;
    let after = store.abort_cycle();
    ensure(after == before && store.snapshot() == before && store.log().len() == 1, || {
        "aborted cycle changed memory".into()
    })?;
    Ok("2 ordered versions; aborted cycle left the snapshot unchanged".into())
}

fn replay() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let two_city = fixture("weather_two_city");
    let mut configs = vec![two_city.episode(7).map_err(|e| e.to_string())?, faulty_config(4, 0.3)?];
    for s in load_dir(scenarios().join("suite")).map_err(|e| e.to_string())?.iter().take(10) {
        configs.push(s.episode(2).map_err(|e| e.to_string())?);
    }
    let mut n = 0;
    for cfg in &configs {
        let runs = [
            run_episode(cfg).map_err(|e| e.to_string())?.trace,
            run_baseline_episode(cfg, &ContextModel { budget: 1, decay: 0.3, seed: cfg.seed })
                .map_err(|e| e.to_string())?
                .trace,
        ];
        for (i, trace) in runs.iter().enumerate() {
            let again = if i == 0 {
                run_episode(cfg).map_err(|e| e.to_string())?.trace
            } else {
                run_baseline_episode(cfg, &ContextModel { budget: 1, decay: 0.3, seed: cfg.seed })
                    .map_err(|e| e.to_string())?
                    .trace
            };
            ensure(again.to_jsonl() == trace.to_jsonl(), || format!("{}: trace bytes differ on rerun", cfg.name))?;
            let path = dir.path().join(format!("{n}.jsonl"));
            trace.write(&path).map_err(|e| e.to_string())?;
            let loaded = EpisodeTrace::read(&path).map_err(|e| e.to_string())?;
            ensure(
                MetricsReport::from_trace(&loaded).to_json() == MetricsReport::from_trace(trace).to_json(),
                || format!("{}: metrics differ after reload", cfg.name),
            )?;
            n += 1;
        }
    }
    Ok(format!("{n} traces reproduced byte-for-byte; metrics identical after reload"))
}

fn idempotency() -> Check {
    let world = WorldState::default().with_weather("Seoul", 51.8, false);
    let mut rt = Runtime::new(builtin_registry(), world, 1);
    let mut memory = MemoryStore::default();
    let n = 5;
    let call = ToolCall::new("get_weather").arg("location", "Seoul");
    let mut payloads = Vec::new();
    for cycle in 1..=n {
        payloads.push(rt.execute(&call, cycle, &mut memory).payload().cloned());
        memory.commit_cycle();
    }
    ensure(rt.handler_invocations("get_weather") == 1, || {
        format!("{} handler invocations", rt.handler_invocations("get_weather"))
    })?;
    ensure(rt.log().len() == n as usize, || format!("{} log records", rt.log().len()))?;
    ensure(payloads.iter().all(|p| p.is_some() && *p == payloads[0]), || "payloads differ".into())?;
    Ok(format!("{n} calls, 1 handler invocation, {n} log records, identical payloads"))
}

fn mutations(trace: &EpisodeTrace) -> Vec<(String, EpisodeTrace)> {
    let mut out = Vec::new();
    for (i, c) in trace.cycles.iter().enumerate() {
        if !is_executed(c) {
            continue;
        }
        let mut push = |label: String, f: &dyn Fn(&mut EpisodeTrace)| {
            let mut t = trace.clone();
            f(&mut t);
            out.push((format!("cycle {}: {label}", c.cycle), t));
        };
        push("proposal".into(), &|t| t.cycles[i].proposal = None);
        push("decision".into(), &|t| t.cycles[i].decision = None);
        push("invocation".into(), &|t| t.cycles[i].invocation = None);
        let cites = c.proposal.as_ref().map_or(0, |p| p.citations.len());
        for j in 0..cites {
            push(format!("citation {j}"), &|t| {
                t.cycles[i].proposal.as_mut().expect("has proposal").citations.remove(j);
            });
        }
        for j in 0..c.memory_delta.len() {
            push(format!("memory entry {j}"), &|t| {
                t.cycles[i].memory_delta.remove(j);
            });
        }
    }
    out
}

fn chain_reconstruction() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut chains = 0;
    for s in clean_scenarios()? {
        let r = run_episode(&s.episode(s.file.seed).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let executed = r.trace.cycles.iter().filter(|c| is_executed(c)).count();
        let all = all_chains(&r.trace);
        ensure(all.len() == executed && all.iter().all(|c| c.is_complete()), || {
            format!("{}: incomplete chains", s.name())
        })?;
        chains += all.len();
    }

    let trace = run_episode(&fixture("weather_two_city").episode(7).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?
        .trace;
    let clean = dir.path().join("clean.jsonl");
    trace.write(&clean).map_err(|e| e.to_string())?;
    let mut sink = Vec::new();
    let code = cmd_trace(&clean, None, false, &mut sink).map_err(|e| e.to_string())?;
    ensure(code == EXIT_OK, || format!("cmd_trace exited {code} on a clean trace"))?;

    let muts = mutations(&trace);
    for (label, mutated) in &muts {
        let path = dir.path().join("mutated.jsonl");
        mutated.write(&path).map_err(|e| e.to_string())?;
        let mut sink = Vec::new();
        let code = cmd_trace(&path, None, false, &mut sink).map_err(|e| e.to_string())?;
        ensure(code == EXIT_GAP, || format!("deleting {label} went undetected"))?;
    }
    Ok(format!("{chains} complete chains; {} single-link deletions all detected", muts.len()))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("clean-run guarantee", clean_run),
        ("containment under faults", containment),
        ("directional table reproduction", directional_table),
        ("degenerate-baseline equivalence", degenerate_baseline),
        ("atomicity and versioning", atomicity),
        ("replay determinism", replay),
        ("idempotency and log completeness", idempotency),
        ("chain reconstruction", chain_reconstruction),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS  {}. {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL  {}. {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} acceptance criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
