//! Deterministic validation of proposals.
//!
//! Every proposal runs through a fixed sequence of checks against the cycle
//! snapshot, the goal and the active rules. A proposal that fails any check is
//! rejected with every violated rule id, never just the first.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::cognition::evidence::{EvidenceExpr, Truth};
use crate::cognition::{Proposal, ToolCall};
use crate::memory::{
    values_equal, EntryKind, KeyRoot, MemoryKey, MemorySnapshot, NewEntry, Payload, Resolved, Resolver,
};
use crate::regulation::{CheckKind, RuleSet};
use crate::runtime::{RecordTarget, ToolError, ToolRegistry};

pub mod goal;

pub use goal::{ArgTemplate, Branch, CallRole, CallTemplate, GoalSpec, RequiredFact};

/// Rule id for repeated calls; deduplication is a control policy rather
/// than one of the configurable rules.
pub const DEDUP: &str = "R-DEDUP";

/// Consecutive failures of one tool after which control asks for clarification.
pub const ESCALATION_THRESHOLD: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminateReason {
    GoalSatisfied,
    CompletionSignal,
    BudgetExhausted,
}

impl fmt::Display for TerminateReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TerminateReason::GoalSatisfied => "GoalSatisfied",
            TerminateReason::CompletionSignal => "CompletionSignal",
            TerminateReason::BudgetExhausted => "BudgetExhausted",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Approved { call: ToolCall },
    Rejected { violated_rule_ids: Vec<String>, feedback: String },
    Terminate { reason: TerminateReason },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlDecision {
    #[serde(flatten)]
    pub verdict: Verdict,
    pub constraints_next: Vec<String>,
    pub log: Vec<String>,
    /// Keys whose versions decide whether a later identical call is a duplicate.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub read_set: Vec<MemoryKey>,
}

impl ControlDecision {
    pub fn approved_call(&self) -> Option<&ToolCall> {
        match &self.verdict {
            Verdict::Approved { call } => Some(call),
            _ => None,
        }
    }

    pub fn rejected_ids(&self) -> Option<&[String]> {
        match &self.verdict {
            Verdict::Rejected { violated_rule_ids, .. } => Some(violated_rule_ids),
            _ => None,
        }
    }

    fn terminate(reason: TerminateReason, detail: &str) -> Self {
        Self {
            verdict: Verdict::Terminate { reason },
            constraints_next: Vec::new(),
            log: vec![format!("[Control] Termination: {detail} → Terminate ({reason})")],
            read_set: Vec::new(),
        }
    }
}

/// Version of the entry that currently answers `key` (0 if none).
fn answering_version(snapshot: &MemorySnapshot, key: &MemoryKey) -> u64 {
    (1..=key.len())
        .rev()
        .map(|len| MemoryKey::new(key.segments()[..len].to_vec()).expect("prefix of a valid key"))
        .map(|prefix| snapshot.version(&prefix))
        .find(|v| *v > 0)
        .unwrap_or(0)
}

/// Successful executions, keyed by canonical call, with the versions of their
/// read-set at the time. A repeat is a duplicate only while none of those
/// keys has gained a version.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DedupCache {
    entries: BTreeMap<String, BTreeMap<MemoryKey, u64>>,
}

impl DedupCache {
    pub fn record(&mut self, call: &ToolCall, read_set: &[MemoryKey], snapshot: &MemorySnapshot) {
        let watermark = read_set
            .iter()
            .map(|k| (k.clone(), answering_version(snapshot, k)))
            .collect();
        self.entries.insert(call.canonical_key(), watermark);
    }

    pub fn is_duplicate(&self, call: &ToolCall, snapshot: &MemorySnapshot) -> bool {
        self.entries
            .get(&call.canonical_key())
            .is_some_and(|w| w.iter().all(|(k, v)| answering_version(snapshot, k) == *v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Absent, null, blank, or the literal "TBD".
pub fn is_placeholder(v: Option<&Value>) -> bool {
    match v {
        None | Some(Value::Null) => true,
        Some(Value::String(s)) => {
            let t = s.trim();
            t.is_empty() || t.eq_ignore_ascii_case("tbd")
        }
        _ => false,
    }
}

/// Termination precedence: goal satisfied, then completion signal, then budget.
pub fn check_termination(
    snapshot: &MemorySnapshot,
    goal: &GoalSpec,
    proposal: Option<&Proposal>,
    cycle_index: u32,
    max_cycles: u32,
) -> Option<TerminateReason> {
    if goal.success(snapshot) {
        Some(TerminateReason::GoalSatisfied)
    } else if proposal.is_some_and(Proposal::is_completion) {
        Some(TerminateReason::CompletionSignal)
    } else if cycle_index >= max_cycles {
        Some(TerminateReason::BudgetExhausted)
    } else {
        None
    }
}

/// What control stages and asks for after a tool failure.
#[derive(Debug, Clone, PartialEq)]
pub struct FailureResponse {
    pub constraint: String,
    pub entries: Vec<NewEntry>,
}

pub fn feedback_key(cycle: u32) -> MemoryKey {
    MemoryKey::new(["feedback".to_string(), format!("cycle{cycle}")]).expect("valid key")
}

struct Violation {
    ids: Vec<String>,
    check: &'static str,
    detail: String,
}

pub struct Control<'a> {
    pub goal: &'a GoalSpec,
    pub rules: &'a RuleSet,
    pub registry: &'a ToolRegistry,
    pub max_cycles: u32,
}

impl Control<'_> {
    pub fn validate(
        &self,
        proposal: &Proposal,
        snapshot: &MemorySnapshot,
        cache: &DedupCache,
        cycles_used: u32,
    ) -> ControlDecision {
        match check_termination(snapshot, self.goal, Some(proposal), cycles_used, self.max_cycles) {
            Some(TerminateReason::GoalSatisfied) => {
                return ControlDecision::terminate(
                    TerminateReason::GoalSatisfied,
                    "all required facts observed and goal actions confirmed",
                )
            }
            Some(TerminateReason::CompletionSignal) => {
                return ControlDecision::terminate(TerminateReason::CompletionSignal, "completion signalled with goal unmet")
            }
            Some(TerminateReason::BudgetExhausted) => {
                return ControlDecision::terminate(
                    TerminateReason::BudgetExhausted,
                    &format!("cycle budget of {} used", self.max_cycles),
                )
            }
            None => {}
        }
        let call = proposal.call.as_ref().expect("completion handled above").canonical();
        let role = self.goal.classify(&call);
        let mut violations = Vec::new();
        self.check_arguments(&call, &mut violations);
        if cache.is_duplicate(&call, snapshot) {
            let detail = match role {
                CallRole::Gather { .. } => "Observation already exists".to_string(),
                _ => format!("{call} already executed with no intervening state change"),
            };
            violations.push(Violation {
                ids: vec![DEDUP.to_string()],
                check: "Precondition",
                detail,
            });
        }
        self.check_preconditions(&call, role, snapshot, &mut violations);
        self.check_priority(role, snapshot, &mut violations);
        self.check_condition(role, snapshot, &mut violations);
        self.check_citations(proposal, role, snapshot, &mut violations);

        if violations.is_empty() {
            ControlDecision {
                log: vec![self.approval_line(&call, role, snapshot)],
                read_set: self.read_set(&call, role),
                verdict: Verdict::Approved { call },
                constraints_next: Vec::new(),
            }
        } else {
            self.reject(&call, violations)
        }
    }

    fn reject(&self, call: &ToolCall, violations: Vec<Violation>) -> ControlDecision {
        let mut ids: Vec<String> = Vec::new();
        for v in &violations {
            for id in &v.ids {
                if !ids.contains(id) {
                    ids.push(id.clone());
                }
            }
        }
        let log = violations
            .iter()
            .map(|v| {
                let reason = if v.ids == [DEDUP] {
                    "duplicate".to_string()
                } else {
                    v.ids.join(", ")
                };
                format!("[Control] {}: {} → Rejected ({reason})", v.check, v.detail)
            })
            .collect();
        let details: Vec<&str> = violations.iter().map(|v| v.detail.as_str()).collect();
        let feedback = format!("Rejected {call}: {} [{}]", details.join("; "), ids.join(", "));
        ControlDecision {
            verdict: Verdict::Rejected {
                violated_rule_ids: ids,
                feedback: feedback.clone(),
            },
            constraints_next: vec![feedback],
            log,
            read_set: Vec::new(),
        }
    }

    fn check_arguments(&self, call: &ToolCall, out: &mut Vec<Violation>) {
        let ids = self.rules.ids_for(CheckKind::ArgumentsComplete);
        let Some(spec) = self.registry.get(&call.name) else { return };
        if ids.is_empty() {
            return;
        }
        let mut push = |detail: String| {
            out.push(Violation {
                ids: ids.clone(),
                check: "Arguments",
                detail,
            })
        };
        for f in spec.required_args() {
            if is_placeholder(call.arguments.get(&f.name)) {
                push(format!("`{}` is missing or a placeholder", f.name));
            }
        }
        for (name, v) in &call.arguments {
            let required = spec.required_args().any(|f| &f.name == name);
            if !required && is_placeholder(Some(v)) {
                push(format!("`{name}` is a placeholder"));
            }
        }
        if let Some(x) = spec.extra_args {
            let declared = |n: &String| spec.args.iter().any(|f| &f.name == n);
            let given = call
                .arguments
                .iter()
                .filter(|(n, v)| !declared(n) && !is_placeholder(Some(v)))
                .count();
            if given < x.min {
                push(format!("needs at least {} named values, got {given}", x.min));
            }
        }
    }

    fn check_preconditions(&self, call: &ToolCall, role: CallRole, snapshot: &MemorySnapshot, out: &mut Vec<Violation>) {
        let ids = self.rules.ids_for(CheckKind::PreconditionsSatisfied);
        if !ids.is_empty() {
            let mut push = |detail: String| {
                out.push(Violation {
                    ids: ids.clone(),
                    check: "Precondition",
                    detail,
                })
            };
            if !self.registry.contains(&call.name) {
                push(format!("tool `{}` is not registered", call.name));
            } else if role == CallRole::Unplanned {
                push(format!("{call} is not part of the goal"));
            } else if let Some(template) = self.goal.template_of(role) {
                for (arg, a) in &template.args {
                    let given = call.arguments.get(arg).filter(|v| !is_placeholder(Some(v)));
                    match a {
                        ArgTemplate::FromMemory(key) => match snapshot.resolve(key) {
                            Resolved::NotFound => push(format!("required {key} is not in memory")),
                            Resolved::Value(expected) => {
                                if given.is_some_and(|g| !values_equal(g, &expected)) {
                                    push(format!("`{arg}` disagrees with {key}"));
                                }
                            }
                        },
                        ArgTemplate::Literal(expected) => {
                            let expected = crate::cognition::canonical_value(expected);
                            if given.is_some_and(|g| !values_equal(g, &expected)) {
                                push(format!("`{arg}` differs from the goal's {expected}"));
                            }
                        }
                    }
                }
            }
        }
        let seq = self.rules.ids_for(CheckKind::OneActionPerCycle);
        if !seq.is_empty() {
            for e in snapshot.keys().filter_map(|k| snapshot.latest(k)) {
                if e.kind == EntryKind::ActionRecord && e.action_status() == Some(crate::memory::ActionStatus::Pending) {
                    out.push(Violation {
                        ids: seq.clone(),
                        check: "Sequence",
                        detail: format!("{} is still pending", e.key),
                    });
                }
            }
        }
    }

    fn check_priority(&self, role: CallRole, snapshot: &MemorySnapshot, out: &mut Vec<Violation>) {
        let ids = self.rules.ids_for(CheckKind::CancellationBeforeBranch);
        if ids.is_empty() || !matches!(role, CallRole::Branch { .. }) {
            return;
        }
        let detail = match self.goal.cancellation_truth(snapshot) {
            Some(Truth::Unknown) => "cancellation condition is not yet evaluated",
            Some(Truth::True) => "cancellation condition holds; branch actions are skipped",
            _ => return,
        };
        out.push(Violation {
            ids,
            check: "Priority",
            detail: detail.into(),
        });
    }

    fn check_condition(&self, role: CallRole, snapshot: &MemorySnapshot, out: &mut Vec<Violation>) {
        let ids = self.rules.ids_for(CheckKind::PreconditionsSatisfied);
        let Some(branch) = self.goal.branch_of(role) else { return };
        if ids.is_empty() {
            return;
        }
        let truth = branch.truth(snapshot);
        if truth != Truth::True {
            let state = if truth == Truth::False { "false" } else { "unknown" };
            out.push(Violation {
                ids,
                check: "Condition",
                detail: format!("{} is {state}", render_condition(&branch.when)),
            });
        }
    }

    fn check_citations(&self, proposal: &Proposal, role: CallRole, snapshot: &MemorySnapshot, out: &mut Vec<Violation>) {
        let ids = self.rules.ids_for(CheckKind::CitationRequiredForComparison);
        if ids.is_empty() {
            return;
        }
        let mut push = |detail: String| {
            out.push(Violation {
                ids: ids.clone(),
                check: "Citation",
                detail,
            })
        };
        if self.goal.branch_of(role).is_some() && proposal.citations.is_empty() {
            push("evidence-dependent action cites no evidence".into());
        }
        for c in &proposal.citations {
            match c {
                EvidenceExpr::MemoryRef(k) | EvidenceExpr::GoalRef(k) => {
                    if !snapshot.resolve(k).is_found() {
                        push(format!("{k} does not resolve"));
                    }
                }
                EvidenceExpr::Comparison { .. } => match c.evaluate(snapshot) {
                    Truth::True => {}
                    Truth::False => push(format!("{c} is false over memory")),
                    Truth::Unknown => push(format!("{c} does not resolve")),
                },
            }
        }
    }

    fn approval_line(&self, call: &ToolCall, role: CallRole, snapshot: &MemorySnapshot) -> String {
        match role {
            CallRole::Gather { fact } => {
                let key = &self.goal.required[fact].key;
                let entity = key.entity().unwrap_or("entity");
                if snapshot.resolve(key).is_found() {
                    format!("[Control] Precondition: Previous observation of {entity} failed → Approved")
                } else {
                    format!("[Control] Precondition: No prior observation for {entity} → Approved")
                }
            }
            CallRole::Cancellation { .. } | CallRole::Branch { .. } => {
                let branch = self.goal.branch_of(role).expect("role has a branch");
                format!("[Control] Condition: {} → Approved", render_condition(&branch.when))
            }
            CallRole::Unplanned => format!("[Control] Checks: {call} passed every enabled check → Approved"),
        }
    }

    fn read_set(&self, call: &ToolCall, role: CallRole) -> Vec<MemoryKey> {
        let mut keys: Vec<MemoryKey> = Vec::new();
        let mut add = |k: &MemoryKey| {
            if k.root() != KeyRoot::Goal && !keys.contains(k) {
                keys.push(k.clone());
            }
        };
        if let Some(c) = self.goal.branch_of(role).and(self.goal.cancellation.as_ref()) {
            c.condition_keys().into_iter().for_each(&mut add);
        }
        if let Some(b) = self.goal.branch_of(role) {
            b.condition_keys().into_iter().for_each(&mut add);
        }
        if let Some(t) = self.goal.template_of(role) {
            t.bound_keys().into_iter().for_each(|(_, k)| add(k));
        }
        if let Some(k) = self.registry.get(&call.name).and_then(|s| s.record_key(call).ok()) {
            add(&k);
        }
        keys
    }

    /// Feedback entry, retry constraint and (for observation tools) a failure
    /// marker at the observation key so the failed attempt stays on record.
    pub fn on_tool_failure(
        &self,
        call: &ToolCall,
        error: &ToolError,
        cycle: u32,
        snapshot: &MemorySnapshot,
    ) -> FailureResponse {
        let tool = call.name.trim();
        let previous = (1..cycle)
            .rev()
            .map_while(|j| {
                let fb = snapshot.latest(&feedback_key(j))?;
                let same = fb.payload.get("kind") == Some(&json!("tool_failure"))
                    && fb.payload.get("tool") == Some(&json!(tool));
                same.then_some(())
            })
            .count();
        let constraint = if previous + 1 >= ESCALATION_THRESHOLD {
            format!("Tool {tool} failed: {}. Seek clarification.", error.code)
        } else {
            format!("Tool {tool} failed: {}. Propose an alternative or retry.", error.code)
        };
        let mut entries = vec![NewEntry::new(
            feedback_key(cycle),
            EntryKind::ControlFeedback,
            object(json!({
                "message": constraint,
                "kind": "tool_failure",
                "tool": tool,
                "code": error.code.to_string(),
            })),
            "control",
        )];
        if let Some(spec) = self.registry.get(tool) {
            if let (RecordTarget::Observation { entity_arg }, Ok(key)) = (&spec.target, spec.record_key(call)) {
                let entity = key.entity().unwrap_or_default().to_string();
                entries.push(NewEntry::new(
                    key,
                    EntryKind::Observation,
                    object(json!({
                        entity_arg.as_str(): entity,
                        "error": error.code.to_string(),
                        "message": error.message,
                    })),
                    "control",
                ));
            }
        }
        FailureResponse { constraint, entries }
    }
}

/// Feedback entry recording a rejection for the proposer's next input.
pub fn rejection_entry(cycle: u32, decision: &ControlDecision) -> Option<NewEntry> {
    let Verdict::Rejected {
        violated_rule_ids,
        feedback,
    } = &decision.verdict
    else {
        return None;
    };
    Some(NewEntry::new(
        feedback_key(cycle),
        EntryKind::ControlFeedback,
        object(json!({
            "message": feedback,
            "kind": "rejection",
            "rules": violated_rule_ids,
        })),
        "control",
    ))
}

fn render_condition(when: &[EvidenceExpr]) -> String {
    when.iter().map(ToString::to_string).collect::<Vec<_>>().join(" and ")
}

fn object(v: Value) -> Payload {
    match v {
        Value::Object(m) => m,
        _ => unreachable!("built from an object literal"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::MemoryStore;
    use crate::runtime::{builtin_registry, ErrorCode};

    fn goal() -> GoalSpec {
        goal::tests::two_city_goal()
    }

    fn snapshot(cities: &[(&str, f64, bool)]) -> MemorySnapshot {
        let mut m = MemoryStore::default();
        m.write_staged(NewEntry::new(
            "goal.choose_colder".parse().unwrap(),
            EntryKind::Observation,
            object(json!({"statement": "Book a flight to the colder city"})),
            "context",
        ))
        .unwrap();
        for (c, t, p) in cities {
            m.write_staged(NewEntry::new(
                format!("obs.{c}").parse().unwrap(),
                EntryKind::Observation,
                object(json!({"location": c, "temp_f": t, "precipitation": p})),
                "get_weather",
            ))
            .unwrap();
        }
        m.commit_cycle()
    }

    fn decide(p: &Proposal, s: &MemorySnapshot, cache: &DedupCache) -> ControlDecision {
        let (g, rules, reg) = (goal(), RuleSet::default_rules(), builtin_registry());
        Control {
            goal: &g,
            rules: &rules,
            registry: &reg,
            max_cycles: 12,
        }
        .validate(p, s, cache, 0)
    }

    fn weather(c: &str) -> Proposal {
        Proposal::call(ToolCall::new("get_weather").arg("location", c))
    }

    fn book(c: &str) -> Proposal {
        Proposal::call(ToolCall::new("book_flight").arg("location", c))
            .citing(vec!["obs.Seoul.temp_f < obs.Jeju.temp_f".parse().unwrap()])
    }

    fn ids(d: &ControlDecision) -> Vec<String> {
        d.rejected_ids().unwrap_or_default().to_vec()
    }

    #[test]
    fn first_gather_is_approved_with_log_line() {
        let d = decide(&weather("Seoul"), &MemorySnapshot::default(), &DedupCache::default());
        assert!(d.approved_call().is_some());
        assert_eq!(d.log, ["[Control] Precondition: No prior observation for Seoul → Approved"]);
        assert_eq!(d.read_set, ["obs.Seoul".parse::<MemoryKey>().unwrap()]);
    }

    #[test]
    fn repeated_gather_is_a_duplicate() {
        let s = snapshot(&[("Seoul", 51.8, false)]);
        let mut cache = DedupCache::default();
        cache.record(&weather("Seoul").call.unwrap(), &["obs.Seoul".parse().unwrap()], &s);
        let d = decide(&weather("Seoul"), &s, &cache);
        assert_eq!(ids(&d), [DEDUP]);
        assert_eq!(d.log, ["[Control] Precondition: Observation already exists → Rejected (duplicate)"]);
        // a newer version of the read-set lifts the block
        let mut m = MemoryStore::default();
        for _ in 0..2 {
            m.write_staged(NewEntry::new(
                "obs.Seoul".parse().unwrap(),
                EntryKind::Observation,
                object(json!({"location": "Seoul", "temp_f": 51.8})),
                "get_weather",
            ))
            .unwrap();
        }
        let newer = m.commit_cycle();
        assert!(!cache.is_duplicate(&weather("Seoul").call.unwrap(), &newer));
    }

    #[test]
    fn branch_action_with_true_citation_is_approved() {
        let s = snapshot(&[("Seoul", 51.8, false), ("Jeju", 60.8, false)]);
        let d = decide(&book("Seoul"), &s, &DedupCache::default());
        assert_eq!(d.approved_call().unwrap().name, "book_flight");
        assert_eq!(d.log, ["[Control] Condition: obs.Seoul.temp_f < obs.Jeju.temp_f → Approved"]);
    }

    #[test]
    fn false_comparison_is_rejected_for_citation() {
        let s = snapshot(&[("Seoul", 51.8, false), ("Jeju", 60.8, false)]);
        let p = Proposal::call(ToolCall::new("book_flight").arg("location", "Seoul"))
            .citing(vec!["obs.Jeju.temp_f < obs.Seoul.temp_f".parse().unwrap()]);
        assert_eq!(ids(&decide(&p, &s, &DedupCache::default())), ["R-NUM-COMPARE"]);
    }

    #[test]
    fn false_branch_means_nothing_left_to_do() {
        let s = snapshot(&[("Seoul", 68.0, false), ("Jeju", 60.8, false)]);
        let d = decide(&book("Seoul"), &s, &DedupCache::default());
        assert_eq!(
            d.verdict,
            Verdict::Terminate {
                reason: TerminateReason::GoalSatisfied
            }
        );
    }

    #[test]
    fn branch_with_unmet_condition_is_rejected() {
        let s = snapshot(&[("Seoul", 51.8, false)]);
        let got = ids(&decide(&book("Seoul"), &s, &DedupCache::default()));
        assert!(got.contains(&"R-COND-EXEC".to_string()), "{got:?}");
        assert!(!got.contains(&"R-COND-PRIORITY".to_string()), "{got:?}");
    }

    #[test]
    fn branch_before_cancellation_is_rejected() {
        let s = snapshot(&[("Seoul", 51.8, true)]);
        let d = decide(&book("Seoul"), &s, &DedupCache::default());
        assert!(ids(&d).contains(&"R-COND-PRIORITY".to_string()));
        let rain = snapshot(&[("Seoul", 51.8, true), ("Jeju", 60.8, true)]);
        let d = decide(&book("Seoul"), &rain, &DedupCache::default());
        assert!(ids(&d).contains(&"R-COND-PRIORITY".to_string()));
    }

    #[test]
    fn placeholders_violate_argument_completeness() {
        let s = snapshot(&[("Seoul", 51.8, false), ("Jeju", 60.8, false)]);
        for args in [json!({}), json!({"location": "TBD"}), json!({"location": "  "}), json!({"location": null})] {
            let mut call = ToolCall::new("book_flight");
            call.arguments = args.as_object().unwrap().clone().into_iter().collect();
            let p = Proposal::call(call).citing(book("Seoul").citations);
            assert_eq!(ids(&decide(&p, &s, &DedupCache::default())), ["R-ARGS"], "{args}");
        }
    }

    #[test]
    fn every_violation_is_reported() {
        let s = snapshot(&[("Seoul", 51.8, true)]);
        let p = Proposal::call(ToolCall::new("book_flight").arg("location", "TBD"));
        let got = ids(&decide(&p, &s, &DedupCache::default()));
        assert_eq!(got, ["R-ARGS", "R-COND-PRIORITY", "R-COND-EXEC", "R-NUM-COMPARE"]);
    }

    #[test]
    fn phantom_citation_is_rejected() {
        let p = weather("Seoul").citing(vec!["obs.Atlantis.temp_f".parse().unwrap()]);
        let d = decide(&p, &MemorySnapshot::default(), &DedupCache::default());
        assert_eq!(ids(&d), ["R-NUM-COMPARE"]);
    }

    #[test]
    fn termination_precedence() {
        let g = goal();
        let done = {
            let mut m = MemoryStore::default();
            for (c, t) in [("Seoul", 51.8), ("Jeju", 60.8)] {
                m.write_staged(NewEntry::new(
                    format!("obs.{c}").parse().unwrap(),
                    EntryKind::Observation,
                    object(json!({"location": c, "temp_f": t, "precipitation": false})),
                    "get_weather",
                ))
                .unwrap();
            }
            m.write_staged(NewEntry::new(
                "act.book_flight".parse().unwrap(),
                EntryKind::ActionRecord,
                object(json!({"name": "book_flight", "args": {"location": "Seoul"}, "status": "executed"})),
                "book_flight",
            ))
            .unwrap();
            m.commit_cycle()
        };
        let fin = Proposal::completion("done");
        assert_eq!(check_termination(&done, &g, Some(&fin), 12, 12), Some(TerminateReason::GoalSatisfied));
        let empty = MemorySnapshot::default();
        assert_eq!(check_termination(&empty, &g, Some(&fin), 3, 12), Some(TerminateReason::CompletionSignal));
        assert_eq!(check_termination(&empty, &g, None, 12, 12), Some(TerminateReason::BudgetExhausted));
        assert_eq!(check_termination(&empty, &g, None, 11, 12), None);
    }

    #[test]
    fn disabled_rule_skips_its_check() {
        let cfg = crate::regulation::DEFAULT_RULES_TOML.replace(
            "check = \"arguments_complete\"",
            "check = \"arguments_complete\"\nenabled = false",
        );
        let rules = crate::regulation::load_ruleset(&cfg).unwrap();
        let (g, reg) = (goal(), builtin_registry());
        let c = Control {
            goal: &g,
            rules: &rules,
            registry: &reg,
            max_cycles: 12,
        };
        let s = snapshot(&[("Seoul", 51.8, false), ("Jeju", 60.8, false)]);
        let p = Proposal::call(ToolCall::new("book_flight").arg("location", "Seoul").arg("date", "TBD"))
            .citing(book("Seoul").citations);
        assert!(c.validate(&p, &s, &DedupCache::default(), 0).approved_call().is_some());
    }

    #[test]
    fn tool_failure_escalates_after_two() {
        let (g, rules, reg) = (goal(), RuleSet::default_rules(), builtin_registry());
        let c = Control {
            goal: &g,
            rules: &rules,
            registry: &reg,
            max_cycles: 12,
        };
        let call = ToolCall::new("get_weather").arg("location", "Seoul");
        let err = ToolError::new(ErrorCode::TransientFailure, "timeout");
        let first = c.on_tool_failure(&call, &err, 1, &MemorySnapshot::default());
        assert_eq!(first.constraint, "Tool get_weather failed: TransientFailure. Propose an alternative or retry.");
        assert_eq!(first.entries.len(), 2);
        assert_eq!(first.entries[1].key.to_string(), "obs.Seoul");
        let mut m = MemoryStore::default();
        for e in first.entries {
            m.write_staged(e).unwrap();
        }
        let s = m.commit_cycle();
        let second = c.on_tool_failure(&call, &err, 2, &s);
        assert_eq!(second.constraint, "Tool get_weather failed: TransientFailure. Seek clarification.");
    }

    #[test]
    fn validation_is_deterministic() {
        let s = snapshot(&[("Seoul", 68.0, false), ("Jeju", 60.8, false)]);
        let a = decide(&book("Seoul"), &s, &DedupCache::default());
        let b = decide(&book("Seoul"), &s, &DedupCache::default());
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}
