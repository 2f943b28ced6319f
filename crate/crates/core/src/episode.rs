//! The reasoning loop: assemble input, propose, validate, execute if
//! approved, commit, record — until a termination condition fires.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cognition::facts::{format_memory_fact, FACT_PREFIX};
use crate::cognition::{
    assemble_input, FaultConfig, FaultConfigError, FaultyProposer, Proposal, Proposed, Proposer, ScriptedProposer,
    TaskContext,
};
use crate::control::{
    feedback_key, rejection_entry, Control, DedupCache, GoalSpec, TerminateReason, Verdict,
};
use crate::memory::{
    EntryKind, KeyRoot, MemoryEntry, MemoryError, MemoryKey, MemorySnapshot, MemoryStore, NewEntry, Payload,
    StatusUpdate,
};
use crate::regulation::RuleSet;
use crate::runtime::{builtin_registry, InvocationLog, Runtime, WorldState};
use crate::trace::{consumptions, CycleRecord, EpisodeTrace, Mode, TraceHeader, TRACE_FORMAT};

pub const DEFAULT_SYSTEM_MESSAGE: &str =
    "You are an expert assistant. Propose one tool call per turn, cite the memory keys your reasoning depends on, and signal completion with a null call.";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProposerConfig {
    Scripted,
    Faulty(FaultConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub name: String,
    pub task: TaskContext,
    /// Static context committed before the first cycle, keyed under `goal.*`.
    pub context: BTreeMap<MemoryKey, Payload>,
    pub goal: GoalSpec,
    pub ruleset: RuleSet,
    pub proposer: ProposerConfig,
    pub world: WorldState,
    pub max_cycles: u32,
    pub seed: u64,
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("max_cycles must be at least 1")]
    ZeroBudget,
    #[error("invalid goal: {0}")]
    Goal(String),
    #[error(transparent)]
    Faults(#[from] FaultConfigError),
    #[error("context key `{0}` must live under goal.*")]
    ContextKey(String),
    #[error("invalid context entry: {0}")]
    Context(#[from] MemoryError),
    #[error("invalid context model: {0}")]
    ContextModel(String),
}

/// Budget used when a scenario does not set one: three cycles per fact and
/// per action, leaving room for rejected proposals.
pub fn default_max_cycles(goal: &GoalSpec) -> u32 {
    (3 * goal.size()).max(1) as u32
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_cycles == 0 {
            return Err(ConfigError::ZeroBudget);
        }
        let registry = builtin_registry();
        self.goal
            .validate(&|name| registry.contains(name))
            .map_err(ConfigError::Goal)?;
        if let ProposerConfig::Faulty(fc) = &self.proposer {
            fc.validate()?;
        }
        for key in self.context.keys() {
            if key.root() != KeyRoot::Goal {
                return Err(ConfigError::ContextKey(key.to_string()));
            }
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }

    pub fn fault_injection(&self) -> bool {
        matches!(self.proposer, ProposerConfig::Faulty(fc) if !fc.is_inert())
    }

    pub(crate) fn proposer(&self) -> Result<Box<dyn Proposer>, ConfigError> {
        Ok(match self.proposer {
            ProposerConfig::Scripted => Box::new(ScriptedProposer::new(self.goal.clone())),
            ProposerConfig::Faulty(fc) => Box::new(FaultyProposer::new(self.goal.clone(), fc)?),
        })
    }

    /// Commits the static context and the termination flag; returns the entries.
    pub(crate) fn initialize(&self, memory: &mut MemoryStore) -> Result<Vec<MemoryEntry>, ConfigError> {
        for (key, payload) in &self.context {
            memory.write_staged(NewEntry::new(key.clone(), EntryKind::Observation, payload.clone(), "context"))?;
        }
        memory.write_staged(NewEntry::new(
            terminated_key(),
            EntryKind::TerminationFlag,
            object(json!({"terminated": false})),
            "control",
        ))?;
        memory.commit_cycle();
        Ok(memory.log().to_vec())
    }

    pub(crate) fn header(&self, mode: Mode, init_delta: Vec<MemoryEntry>) -> TraceHeader {
        TraceHeader {
            format: TRACE_FORMAT.into(),
            scenario: self.name.clone(),
            mode,
            seed: self.seed,
            config_digest: self.digest(),
            ruleset: self.ruleset.clone(),
            fault_injection: self.fault_injection(),
            context_model: None,
            init_delta,
        }
    }
}

pub fn terminated_key() -> MemoryKey {
    "status.terminated".parse().expect("valid key")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EpisodeStatus {
    Completed,
    PartialCompletion,
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub status: EpisodeStatus,
    pub final_response: String,
    pub cycles_used: u32,
    pub trace: EpisodeTrace,
    /// Complete committed memory log.
    pub memory: Vec<MemoryEntry>,
    pub invocations: Vec<InvocationLog>,
    pub world: WorldState,
}

impl EpisodeResult {
    pub fn final_snapshot(&self) -> MemorySnapshot {
        MemorySnapshot::from_entries(self.memory.iter().cloned())
    }
}

pub(crate) fn object(v: Value) -> Payload {
    match v {
        Value::Object(m) => m,
        _ => unreachable!("built from an object literal"),
    }
}

pub(crate) fn proposal_entry(cycle: u32, proposal: &Proposal) -> NewEntry {
    let proposition = proposal
        .rationale
        .clone()
        .unwrap_or_else(|| proposal.call.as_ref().map(ToString::to_string).unwrap_or_default());
    let evidence: Vec<String> = proposal.citations.iter().map(ToString::to_string).collect();
    NewEntry::new(
        MemoryKey::new(["prop".to_string(), format!("cycle{cycle}")]).expect("valid key"),
        EntryKind::Proposal,
        object(json!({"proposition": proposition, "evidence": evidence})),
        "cognition",
    )
}

fn stage(memory: &mut MemoryStore, entry: NewEntry) {
    memory
        .write_staged(entry)
        .expect("loop-built entries match their schemas");
}

pub fn run_episode(cfg: &EpisodeConfig) -> Result<EpisodeResult, ConfigError> {
    cfg.validate()?;
    let registry = builtin_registry();
    let proposer = cfg.proposer()?;
    let mut memory = MemoryStore::default();
    let init_delta = cfg.initialize(&mut memory)?;
    let mut runtime = Runtime::new(registry.clone(), cfg.world.clone(), cfg.seed);
    let control = Control {
        goal: &cfg.goal,
        rules: &cfg.ruleset,
        registry: &registry,
        max_cycles: cfg.max_cycles,
    };
    let mut cache = DedupCache::default();
    let mut constraints: Vec<String> = Vec::new();
    let mut records = Vec::new();
    let mut cycles_used = 0u32;

    let status = loop {
        let snapshot = memory.snapshot();
        if cycles_used >= cfg.max_cycles {
            break if cfg.goal.success(&snapshot) {
                EpisodeStatus::Completed
            } else {
                EpisodeStatus::BudgetExhausted
            };
        }
        let cycle = cycles_used + 1;
        let input = assemble_input(&cfg.task, &snapshot, &constraints, &cfg.ruleset);
        let log_len = memory.log().len();
        let mut record = CycleRecord {
            cycle,
            input_digest: input.digest(),
            proposal: None,
            proposer_error: None,
            decision: None,
            invocation: None,
            memory_delta: Vec::new(),
            fault_label: None,
            consumptions: Vec::new(),
        };
        let mut exit = None;
        let mut executed = None;

        match proposer.propose(&input) {
            Err(failure) => {
                let message = format!("Proposal failed: {failure}. Propose a well-formed action or signal completion.");
                stage(
                    &mut memory,
                    NewEntry::new(
                        feedback_key(cycle),
                        EntryKind::ControlFeedback,
                        object(json!({"message": message, "kind": "proposer_failure"})),
                        "control",
                    ),
                );
                constraints = vec![message];
                record.proposer_error = Some(failure);
            }
            Ok(Proposed { proposal, fault }) => {
                record.fault_label = fault;
                let decision = control.validate(&proposal, &snapshot, &cache, cycles_used);
                match &decision.verdict {
                    Verdict::Approved { call } => {
                        record.consumptions = consumptions(&proposal, &cfg.goal, &snapshot);
                        let result = runtime.execute(call, cycle, &mut memory);
                        match result.error() {
                            None => {
                                if !proposal.citations.is_empty() {
                                    stage(&mut memory, proposal_entry(cycle, &proposal));
                                }
                                constraints.clear();
                                executed = Some((call.clone(), decision.read_set.clone()));
                            }
                            Some(err) => {
                                let response = control.on_tool_failure(call, &err, cycle, &snapshot);
                                response.entries.into_iter().for_each(|e| stage(&mut memory, e));
                                constraints = vec![response.constraint];
                            }
                        }
                        record.invocation = runtime.log().last().cloned();
                    }
                    Verdict::Rejected { .. } => {
                        stage(&mut memory, rejection_entry(cycle, &decision).expect("rejected"));
                        constraints = decision.constraints_next.clone();
                    }
                    Verdict::Terminate { reason } => {
                        let met = cfg.goal.success(&snapshot);
                        if met {
                            memory
                                .update_status(&terminated_key(), StatusUpdate::Terminated(true))
                                .expect("flag initialized false");
                        }
                        exit = Some(match reason {
                            TerminateReason::GoalSatisfied => EpisodeStatus::Completed,
                            TerminateReason::CompletionSignal if met => EpisodeStatus::Completed,
                            TerminateReason::CompletionSignal => EpisodeStatus::PartialCompletion,
                            TerminateReason::BudgetExhausted => EpisodeStatus::BudgetExhausted,
                        });
                    }
                }
                record.proposal = Some(proposal);
                record.decision = Some(decision);
            }
        }

        let after = memory.commit_cycle();
        if let Some((call, read_set)) = executed {
            cache.record(&call, &read_set, &after);
        }
        record.memory_delta = memory.committed_since(log_len).to_vec();
        records.push(record);
        cycles_used = cycle;
        if let Some(s) = exit {
            break s;
        }
    };

    let snapshot = memory.snapshot();
    Ok(EpisodeResult {
        status,
        final_response: final_response(status, &cfg.goal, &snapshot),
        cycles_used,
        trace: EpisodeTrace {
            header: cfg.header(Mode::Scl, init_delta),
            cycles: records,
        },
        memory: memory.log().to_vec(),
        invocations: runtime.log().to_vec(),
        world: runtime.into_world(),
    })
}

/// Deterministic summary of facts, actions and anything left undone.
pub fn final_response(status: EpisodeStatus, goal: &GoalSpec, snapshot: &MemorySnapshot) -> String {
    let mut out = vec![match status {
        EpisodeStatus::Completed => "Outcome: completed.".to_string(),
        EpisodeStatus::PartialCompletion => "Outcome: partial completion; stopped before the goal was met.".to_string(),
        EpisodeStatus::BudgetExhausted => "Outcome: cycle budget exhausted before the goal was met.".to_string(),
    }];
    let line = |e: &MemoryEntry| format_memory_fact(e).trim_start_matches(FACT_PREFIX).to_string();
    out.push("Facts:".into());
    for f in &goal.required {
        match snapshot.latest(&f.key) {
            Some(e) if GoalSpec::fact_observed(snapshot, &f.key) => out.push(format!("- {}", line(e))),
            Some(_) => out.push(format!("- {}: observation failed", f.key)),
            None => out.push(format!("- {}: not observed", f.key)),
        }
    }
    out.push("Actions:".into());
    let actions: Vec<&MemoryEntry> = snapshot
        .keys()
        .filter(|k| k.root() == KeyRoot::Act)
        .filter_map(|k| snapshot.latest(k))
        .collect();
    if actions.is_empty() {
        out.push("- none".into());
    }
    for e in actions {
        out.push(format!("- {}", line(e)));
    }
    let mut unmet: Vec<String> = goal
        .missing_facts(snapshot)
        .iter()
        .map(|f| format!("{} is not observed", f.key))
        .collect();
    if goal.cancellation_truth(snapshot) == Some(crate::cognition::Truth::Unknown) {
        unmet.push("cancellation condition is undetermined".into());
    }
    for (_, t) in goal.triggered(snapshot) {
        if !GoalSpec::action_executed(snapshot, t) {
            unmet.push(format!("{} has not been executed", t.name));
        }
    }
    out.push("Unmet:".into());
    if unmet.is_empty() {
        out.push("- none".into());
    }
    out.extend(unmet.into_iter().map(|u| format!("- {u}")));
    out.join("\n")
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::control::goal::tests::two_city_goal;
    use crate::memory::MemoryQuery;
    use crate::runtime::ErrorCode;
    use crate::trace::{compute_spa, compute_tc};

    pub(crate) fn two_city(world: WorldState) -> EpisodeConfig {
        let goal = two_city_goal();
        EpisodeConfig {
            name: "two_city".into(),
            task: TaskContext {
                system_message: DEFAULT_SYSTEM_MESSAGE.into(),
                task_instruction: "Book a flight to the colder of Seoul and Jeju unless both have rain.".into(),
            },
            context: [(
                "goal.choose_colder".parse().unwrap(),
                object(json!({"statement": "Book a flight to the colder city"})),
            )]
            .into_iter()
            .collect(),
            max_cycles: default_max_cycles(&goal),
            goal,
            ruleset: RuleSet::default_rules(),
            proposer: ProposerConfig::Scripted,
            world,
            seed: 7,
        }
    }

    pub(crate) fn clear_world() -> WorldState {
        WorldState::default()
            .with_weather("Seoul", 51.8, false)
            .with_weather("Jeju", 60.8, false)
    }

    #[test]
    fn clean_run_completes_in_four_cycles() {
        let r = run_episode(&two_city(clear_world())).unwrap();
        assert_eq!(r.status, EpisodeStatus::Completed);
        assert_eq!(r.cycles_used, 4);
        let calls: Vec<String> = r.invocations.iter().map(|i| i.tool.clone()).collect();
        assert_eq!(calls, ["get_weather", "get_weather", "book_flight"]);
        assert_eq!(r.world.bookings[0].location, "Seoul");
        assert_eq!(r.world.bookings[0].confirmation, "ABC123");
        let s = r.final_snapshot();
        assert_eq!(s.latest(&terminated_key()).unwrap().terminated(), Some(true));
        assert_eq!(compute_spa(&r.trace).ratio, Some(1.0));
        assert_eq!(compute_tc(&r.trace).ratio, Some(1.0));
        assert!(r.final_response.contains("act.book_flight: status=executed, confirmation=ABC123"));
    }

    #[test]
    fn rain_in_both_cities_sends_email_instead() {
        let world = WorldState::default()
            .with_weather("Seoul", 51.8, true)
            .with_weather("Jeju", 60.8, true);
        let r = run_episode(&two_city(world)).unwrap();
        assert_eq!(r.status, EpisodeStatus::Completed);
        assert_eq!(r.world.outbox.len(), 1);
        assert!(r.world.bookings.is_empty());
    }

    #[test]
    fn budget_of_one_is_exhausted() {
        let mut cfg = two_city(clear_world());
        cfg.max_cycles = 1;
        let r = run_episode(&cfg).unwrap();
        assert_eq!(r.status, EpisodeStatus::BudgetExhausted);
        assert_eq!(r.cycles_used, 1);
        assert!(r.final_response.contains("obs.Jeju is not observed"));
    }

    #[test]
    fn transient_failure_leaves_two_versions() {
        let r = run_episode(&two_city(clear_world().with_fault("get_weather", 1, ErrorCode::TransientFailure))).unwrap();
        assert_eq!(r.status, EpisodeStatus::Completed);
        let s = r.final_snapshot();
        let history = s.read(&MemoryQuery::prefix("obs.Seoul".parse().unwrap()));
        assert_eq!(history.len(), 2);
        assert!(history[0].timestamp < history[1].timestamp);
        assert!(history[0].payload.contains_key("error"));
        assert_eq!(history[1].payload["temp_f"], json!(51.8));
    }

    #[test]
    fn zero_budget_is_a_config_error() {
        let mut cfg = two_city(clear_world());
        cfg.max_cycles = 0;
        assert_eq!(run_episode(&cfg).unwrap_err(), ConfigError::ZeroBudget);
    }

    #[test]
    fn identical_config_identical_trace() {
        let cfg = two_city(clear_world());
        assert_eq!(
            run_episode(&cfg).unwrap().trace.to_jsonl(),
            run_episode(&cfg).unwrap().trace.to_jsonl()
        );
    }
}
