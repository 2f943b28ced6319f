//! Commands behind the `scl` binary: run one scenario, run a suite, inspect
//! a trace, regenerate the shipped suite.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::{json, Value};

use scl_core::cognition::FaultConfig;
use scl_core::scenario::{load_dir, write_suite};
use scl_core::trace::chain::all_chains;
use scl_core::trace::metrics::{Aggregate, ModeSummary};
use scl_core::trace::{reconstruct_chain, ActionRef, ChainOutcome, EpisodeTrace, Metric, MetricsReport};
use scl_core::{
    run_baseline_episode, run_episode, ContextModel, EpisodeConfig, EpisodeResult, EpisodeStatus, ProposerConfig,
    Scenario,
};

pub mod table;

use table::Table;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_INCOMPLETE: i32 = 2;
pub const EXIT_GAP: i32 = 3;

/// Shipped scenarios, used when a bare name is given to `run`.
pub fn shipped_scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

/// A path, or a scenario name looked up in `./scenarios` and then the
/// shipped directory.
pub fn resolve_scenario(arg: &str) -> PathBuf {
    let direct = PathBuf::from(arg);
    if direct.exists() {
        return direct;
    }
    let file = if arg.ends_with(".toml") { arg.to_string() } else { format!("{arg}.toml") };
    [Path::new("scenarios").join(&file), shipped_scenarios().join(&file)]
        .into_iter()
        .find(|p| p.exists())
        .unwrap_or(direct)
}

/// Parses `--faults`: `none`, `all=<p>`, or `<kind>=<p>,...` with kinds
/// duplicate, missing_arg, uncited_claim, premature_action, false_citation
/// (a plural `s` is accepted).
pub fn parse_faults(spec: &str) -> Result<Option<FaultConfig>> {
    let spec = spec.trim();
    if spec.eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    let mut fc = FaultConfig::default();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (kind, p) = part
            .split_once('=')
            .with_context(|| format!("fault spec `{part}` is not <kind>=<probability>"))?;
        let p: f64 = p
            .trim()
            .parse()
            .with_context(|| format!("fault probability `{p}` is not a number"))?;
        let kind = kind.trim().trim_start_matches("p_");
        let kind = kind.strip_suffix('s').unwrap_or(kind);
        match kind {
            "all" => fc = FaultConfig::uniform(0, p),
            "duplicate" => fc.p_duplicate = p,
            "missing_arg" | "missing_argument" => fc.p_missing_arg = p,
            "uncited_claim" | "uncited" => fc.p_uncited_claim = p,
            "premature_action" | "premature" => fc.p_premature_action = p,
            "false_citation" => fc.p_false_citation = p,
            other => bail!(
                "unknown fault kind `{other}` (expected duplicate, missing_arg, uncited_claim, premature_action, false_citation or all)"
            ),
        }
    }
    fc.validate()?;
    Ok(Some(fc))
}

/// Parses `--seeds`: `1-5`, `1,2,7` or a single seed.
pub fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
                if a > b {
                    bail!("seed range `{part}` is empty");
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().with_context(|| format!("seed `{part}` is not an integer"))?),
        }
    }
    if out.is_empty() {
        bail!("no seeds given");
    }
    Ok(out)
}

/// Overrides shared by `run` and `suite`.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    /// `Some(None)` forces the scripted proposer.
    pub faults: Option<Option<FaultConfig>>,
    pub max_cycles: Option<u32>,
    pub baseline_budget: Option<usize>,
    pub baseline_decay: Option<f64>,
}

impl Overrides {
    pub fn episode(&self, scenario: &Scenario, seed: u64) -> Result<EpisodeConfig> {
        let mut cfg = scenario.episode(seed)?;
        if let Some(faults) = self.faults {
            cfg.proposer = match faults {
                Some(fc) => ProposerConfig::Faulty(FaultConfig { seed, ..fc }),
                None => ProposerConfig::Scripted,
            };
        }
        if let Some(m) = self.max_cycles {
            cfg.max_cycles = m;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn context_model(&self, scenario: &Scenario, seed: u64) -> ContextModel {
        let mut cm = scenario.context_model(seed);
        if let Some(b) = self.baseline_budget {
            cm.budget = b;
        }
        if let Some(d) = self.baseline_decay {
            cm.decay = d;
        }
        cm
    }
}

pub fn status_name(s: EpisodeStatus) -> &'static str {
    match s {
        EpisodeStatus::Completed => "Completed",
        EpisodeStatus::PartialCompletion => "PartialCompletion",
        EpisodeStatus::BudgetExhausted => "BudgetExhausted",
    }
}

pub fn fmt_metric(m: &Metric) -> String {
    match m.ratio {
        Some(r) => format!("{r:.3} ({}/{})", m.numerator, m.denominator),
        None => "n/a".to_string(),
    }
}

fn fmt_mean(a: &Aggregate) -> String {
    match a.mean {
        Some(m) => format!("{m:.3}"),
        None => "n/a".to_string(),
    }
}

fn write_trace(dir: &Path, stem: &str, trace: &EpisodeTrace) -> Result<PathBuf> {
    let path = dir.join(format!("{stem}.trace.jsonl"));
    trace.write(&path).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn mode_json(r: &EpisodeResult, report: &MetricsReport, trace_file: &Path) -> Value {
    let mut v = json!({
        "status": status_name(r.status),
        "cycles_used": r.cycles_used,
        "final_response": r.final_response,
        "trace_file": trace_file.display().to_string(),
        "spa": report.spa,
        "tc": report.tc,
    });
    if r.trace.header.fault_injection {
        v["elp"] = serde_json::to_value(report.elp).expect("metric serializes");
    }
    v
}

fn exit_for(status: EpisodeStatus) -> i32 {
    match status {
        EpisodeStatus::Completed => EXIT_OK,
        _ => EXIT_INCOMPLETE,
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub compare: bool,
    pub seed: Option<u64>,
    pub overrides: Overrides,
    pub out: PathBuf,
}

/// Runs one scenario (and the baseline with `compare`), writes traces and
/// `<name>.seed<k>.report.json` into `out`, prints a summary; returns the
/// exit code for the SCL episode's status.
pub fn cmd_run(scenario_arg: &str, opts: &RunOptions, w: &mut dyn Write) -> Result<i32> {
    let path = resolve_scenario(scenario_arg);
    let scenario = Scenario::load(&path)?;
    let seed = opts.seed.unwrap_or(scenario.file.seed);
    let cfg = opts.overrides.episode(&scenario, seed)?;
    std::fs::create_dir_all(&opts.out).with_context(|| format!("creating {}", opts.out.display()))?;
    let stem = format!("{}.seed{seed}", scenario.name());

    let scl = run_episode(&cfg)?;
    let scl_report = MetricsReport::from_trace(&scl.trace);
    let scl_trace = write_trace(&opts.out, &format!("{stem}.scl"), &scl.trace)?;
    let mut report = json!({
        "scenario": scenario.name(),
        "seed": seed,
        "config_digest": scl.trace.header.config_digest,
        "scl": mode_json(&scl, &scl_report, &scl_trace),
    });
    let mut rows = vec![("SCL", &scl, scl_report.clone())];

    let baseline;
    if opts.compare {
        let cm = opts.overrides.context_model(&scenario, seed);
        baseline = run_baseline_episode(&cfg, &cm)?;
        let base_report = MetricsReport::from_trace(&baseline.trace);
        let base_trace = write_trace(&opts.out, &format!("{stem}.baseline"), &baseline.trace)?;
        let mut b = mode_json(&baseline, &base_report, &base_trace);
        b["context_model"] = json!({"budget": cm.budget, "decay": cm.decay, "seed": cm.seed});
        report["baseline"] = b;
        rows.push(("Baseline", &baseline, base_report));
    }
    let report_path = opts.out.join(format!("{stem}.report.json"));
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)? + "\n")?;

    let faulty = scl.trace.header.fault_injection;
    let mut header = vec!["mode", "status", "cycles", "SPA", "TC"];
    if faulty {
        header.push("ELP");
    }
    let mut t = Table::new(header);
    for (mode, r, m) in &rows {
        let mut row = vec![
            mode.to_string(),
            status_name(r.status).to_string(),
            r.cycles_used.to_string(),
            fmt_metric(&m.spa),
            fmt_metric(&m.tc),
        ];
        if faulty {
            row.push(fmt_metric(&m.elp));
        }
        t.row(row);
    }
    writeln!(w, "scenario {}  seed {seed}", scenario.name())?;
    write!(w, "{t}")?;
    writeln!(w)?;
    writeln!(w, "{}", scl.final_response)?;
    writeln!(w, "report: {}", report_path.display())?;
    Ok(exit_for(scl.status))
}

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    /// Seeds to run; empty means each scenario's own seed.
    pub seeds: Vec<u64>,
    pub overrides: Overrides,
    /// Where per-episode traces and `suite_report.json` go, if anywhere.
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct EpisodeRow {
    pub scenario: String,
    pub seed: u64,
    pub scl_status: EpisodeStatus,
    pub baseline_status: EpisodeStatus,
    pub scl: MetricsReport,
    pub baseline: MetricsReport,
    /// Injected faults that reached execution in the SCL episode.
    pub scl_faults_executed: usize,
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub episodes: Vec<EpisodeRow>,
    pub scl: ModeSummary,
    pub baseline: ModeSummary,
}

impl SuiteReport {
    pub fn to_json(&self) -> Value {
        let rows: Vec<Value> = self
            .episodes
            .iter()
            .map(|e| {
                json!({
                    "scenario": e.scenario,
                    "seed": e.seed,
                    "scl": {"status": status_name(e.scl_status), "spa": e.scl.spa, "tc": e.scl.tc, "elp": e.scl.elp},
                    "baseline": {"status": status_name(e.baseline_status), "spa": e.baseline.spa, "tc": e.baseline.tc, "elp": e.baseline.elp},
                })
            })
            .collect();
        json!({
            "episodes": self.episodes.len(),
            "scl": self.scl,
            "baseline": self.baseline,
            "runs": rows,
        })
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(vec!["metric", "SCL mean", "SCL pooled", "Baseline mean", "Baseline pooled"]);
        for (name, s, b) in [
            ("SPA", &self.scl.spa, &self.baseline.spa),
            ("TC", &self.scl.tc, &self.baseline.tc),
            ("ELP", &self.scl.elp, &self.baseline.elp),
        ] {
            t.row(vec![
                name.to_string(),
                fmt_mean(s),
                fmt_metric(&s.pooled),
                fmt_mean(b),
                fmt_metric(&b.pooled),
            ]);
        }
        t
    }
}

/// Cycles whose labelled fault was executed rather than rejected.
pub fn faults_executed(trace: &EpisodeTrace) -> usize {
    trace
        .cycles
        .iter()
        .filter(|c| c.fault_label.is_some() && c.invocation.is_some())
        .count()
}

pub fn run_suite(dir: &Path, opts: &SuiteOptions) -> Result<SuiteReport> {
    let scenarios = load_dir(dir)?;
    let mut jobs = Vec::new();
    for s in &scenarios {
        let seeds = if opts.seeds.is_empty() { vec![s.file.seed] } else { opts.seeds.clone() };
        for seed in seeds {
            jobs.push((s, seed));
        }
    }
    if let Some(out) = &opts.out {
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    }
    let run = |(s, seed): &(&Scenario, u64)| -> Result<EpisodeRow> {
        let cfg = opts.overrides.episode(s, *seed)?;
        let scl = run_episode(&cfg)?;
        let base = run_baseline_episode(&cfg, &opts.overrides.context_model(s, *seed))?;
        if let Some(out) = &opts.out {
            let stem = format!("{}.seed{seed}", s.name());
            write_trace(out, &format!("{stem}.scl"), &scl.trace)?;
            write_trace(out, &format!("{stem}.baseline"), &base.trace)?;
        }
        Ok(EpisodeRow {
            scenario: s.name().to_string(),
            seed: *seed,
            scl_status: scl.status,
            baseline_status: base.status,
            scl_faults_executed: faults_executed(&scl.trace),
            scl: MetricsReport::from_trace(&scl.trace),
            baseline: MetricsReport::from_trace(&base.trace),
        })
    };
    // episodes are independent; results are merged back in job order
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len().max(1));
    let chunk = jobs.len().div_ceil(workers).max(1);
    let episodes: Vec<EpisodeRow> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(run).collect::<Result<Vec<_>>>()))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("suite worker panicked"))
            .collect::<Result<Vec<Vec<_>>>>()
    })?
    .into_iter()
    .flatten()
    .collect();
    let scl: Vec<&MetricsReport> = episodes.iter().map(|e| &e.scl).collect();
    let base: Vec<&MetricsReport> = episodes.iter().map(|e| &e.baseline).collect();
    Ok(SuiteReport {
        scl: ModeSummary::over(&scl),
        baseline: ModeSummary::over(&base),
        episodes,
    })
}

pub fn cmd_suite(dir: &Path, opts: &SuiteOptions, w: &mut dyn Write) -> Result<SuiteReport> {
    let report = run_suite(dir, opts)?;
    if let Some(out) = &opts.out {
        let p = out.join("suite_report.json");
        std::fs::write(&p, serde_json::to_string_pretty(&report.to_json())? + "\n")?;
        writeln!(w, "report: {}", p.display())?;
    }
    writeln!(w, "{} episodes from {}", report.episodes.len(), dir.display())?;
    write!(w, "{}", report.table())?;
    Ok(report)
}

/// Prints justification chains from a trace file; `EXIT_GAP` if any link
/// is missing.
pub fn cmd_trace(file: &Path, action: Option<&str>, metrics: bool, w: &mut dyn Write) -> Result<i32> {
    let trace = EpisodeTrace::read(file)?;
    if metrics {
        writeln!(w, "{}", MetricsReport::from_trace(&trace).to_json())?;
        return Ok(EXIT_OK);
    }
    let outcomes = match action {
        Some(a) => vec![reconstruct_chain(&trace, &a.parse::<ActionRef>()?)?],
        None => all_chains(&trace),
    };
    if outcomes.is_empty() {
        writeln!(w, "no executed actions in {}", file.display())?;
    }
    let mut code = EXIT_OK;
    for o in outcomes {
        match o {
            ChainOutcome::Complete(c) => write!(w, "{c}")?,
            ChainOutcome::Gap(g) => {
                writeln!(w, "GAP {g}")?;
                code = EXIT_GAP;
            }
        }
    }
    Ok(code)
}

pub fn cmd_gen_suite(dir: &Path, w: &mut dyn Write) -> Result<()> {
    let written = write_suite(dir).with_context(|| format!("writing suite to {}", dir.display()))?;
    writeln!(w, "wrote {} scenarios to {}", written.len(), dir.display())?;
    Ok(())
}
