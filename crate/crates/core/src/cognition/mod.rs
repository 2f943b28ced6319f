//! The proposer side of the loop.
//!
//! Cognition only recommends: a [`Proposal`] is a tool call or a completion
//! signal plus evidence citations. Proposers never touch memory, tools or the
//! termination flag.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::memory::MemorySnapshot;
use crate::regulation::{render_for_cognition, RuleSet};

pub mod evidence;
pub mod facts;
pub mod faulty;
pub mod scripted;
pub mod wire;

pub use evidence::{CmpOp, EvidenceExpr, Literal, Operand, Truth};
pub use facts::{format_memory_fact, parse_memory_fact, FactView};
pub use faulty::{FaultConfig, FaultConfigError, FaultKind, FaultLabel, FaultyProposer};
pub use scripted::ScriptedProposer;
pub use wire::{ExternalProposer, WireRequest, WireResponse};

/// A named-argument tool invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    #[serde(default)]
    pub arguments: BTreeMap<String, Value>,
}

impl ToolCall {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            arguments: BTreeMap::new(),
        }
    }

    pub fn arg(mut self, key: impl Into<String>, value: impl Into<Value>) -> Self {
        self.arguments.insert(key.into(), value.into());
        self
    }

    /// Keys sorted, string values trimmed.
    pub fn canonical(&self) -> ToolCall {
        ToolCall {
            name: self.name.trim().to_string(),
            arguments: self
                .arguments
                .iter()
                .map(|(k, v)| (k.trim().to_string(), canonical_value(v)))
                .collect(),
        }
    }

    /// Identity used for idempotency and deduplication.
    pub fn canonical_key(&self) -> String {
        let c = self.canonical();
        format!(
            "{}{}",
            c.name,
            serde_json::to_string(&c.arguments).expect("arguments serialize")
        )
    }
}

/// Strings trimmed, object keys sorted, recursively.
pub fn canonical_value(v: &Value) -> Value {
    match v {
        Value::String(s) => Value::String(s.trim().to_string()),
        Value::Array(items) => Value::Array(items.iter().map(canonical_value).collect()),
        Value::Object(m) => Value::Object(
            m.iter()
                .map(|(k, v)| (k.clone(), canonical_value(v)))
                .collect::<BTreeMap<_, _>>()
                .into_iter()
                .collect(),
        ),
        other => other.clone(),
    }
}

impl fmt::Display for ToolCall {
    /// `get_weather("Seoul")` for one argument, `f(a="x", b=1)` otherwise.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let json = |v: &Value| serde_json::to_string(v).expect("values serialize");
        let args = if self.arguments.len() == 1 {
            json(self.arguments.values().next().expect("one argument"))
        } else {
            self.arguments
                .iter()
                .map(|(k, v)| format!("{k}={}", json(v)))
                .collect::<Vec<_>>()
                .join(", ")
        };
        write!(f, "{}({args})", self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    /// `None` is the completion signal.
    pub call: Option<ToolCall>,
    #[serde(default)]
    pub citations: Vec<EvidenceExpr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
}

impl Proposal {
    pub fn call(call: ToolCall) -> Self {
        Self {
            call: Some(call),
            citations: Vec::new(),
            rationale: None,
        }
    }

    pub fn completion(rationale: impl Into<String>) -> Self {
        Self {
            call: None,
            citations: Vec::new(),
            rationale: Some(rationale.into()),
        }
    }

    pub fn citing(mut self, citations: Vec<EvidenceExpr>) -> Self {
        self.citations = citations;
        self
    }

    pub fn because(mut self, rationale: impl Into<String>) -> Self {
        self.rationale = Some(rationale.into());
        self
    }

    pub fn is_completion(&self) -> bool {
        self.call.is_none()
    }
}

impl fmt::Display for Proposal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.call {
            Some(c) => write!(f, "{c}")?,
            None => f.write_str("<completion>")?,
        }
        if !self.citations.is_empty() {
            let cites: Vec<String> = self.citations.iter().map(ToString::to_string).collect();
            write!(f, " because [{}]", cites.join("; "))?;
        }
        Ok(())
    }
}

/// Fixed task text handed to cognition every cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskContext {
    pub system_message: String,
    pub task_instruction: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CognitionInput {
    pub system_message: String,
    pub task_instruction: String,
    pub rules_text: String,
    pub memory_facts: Vec<String>,
    pub constraints: Vec<String>,
}

impl CognitionInput {
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("input serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

pub fn assemble_input(
    task: &TaskContext,
    snapshot: &MemorySnapshot,
    constraints: &[String],
    rules: &RuleSet,
) -> CognitionInput {
    CognitionInput {
        system_message: task.system_message.clone(),
        task_instruction: task.task_instruction.clone(),
        rules_text: render_for_cognition(rules),
        memory_facts: facts::fact_entries(snapshot).map(format_memory_fact).collect(),
        constraints: constraints.to_vec(),
    }
}

#[derive(Debug, Clone, Error, PartialEq, Serialize, Deserialize)]
pub enum ProposerFailure {
    #[error("policy does not cover the current state: {0}")]
    PolicyGap(String),
    #[error("malformed proposer response: {0}")]
    Malformed(String),
    #[error("proposer transport failed: {0}")]
    Transport(String),
}

/// What a proposer returns: the proposal plus, for fault-injecting
/// proposers, the ground-truth label of the injected fault.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposed {
    pub proposal: Proposal,
    pub fault: Option<FaultLabel>,
}

impl From<Proposal> for Proposed {
    fn from(proposal: Proposal) -> Self {
        Self {
            proposal,
            fault: None,
        }
    }
}

pub trait Proposer {
    fn propose(&self, input: &CognitionInput) -> Result<Proposed, ProposerFailure>;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::{EntryKind, MemoryStore, NewEntry};
    use serde_json::json;

    fn task() -> TaskContext {
        TaskContext {
            system_message: "You are an expert assistant.".into(),
            task_instruction: "Book a flight to the colder city.".into(),
        }
    }

    #[test]
    fn call_rendering_and_canonical_form() {
        let c = ToolCall::new("get_weather").arg("location", "Seoul");
        assert_eq!(c.to_string(), r#"get_weather("Seoul")"#);
        let padded = ToolCall::new("get_weather").arg("location", "  Seoul ");
        assert_eq!(padded.canonical_key(), c.canonical_key());
        let two = ToolCall::new("get_weather").arg("location", "Seoul").arg("date", "tomorrow");
        assert_eq!(two.to_string(), r#"get_weather(date="tomorrow", location="Seoul")"#);
    }

    #[test]
    fn empty_memory_gives_empty_facts() {
        let input = assemble_input(&task(), &MemorySnapshot::default(), &[], &RuleSet::default_rules());
        assert!(input.memory_facts.is_empty());
        assert!(input.constraints.is_empty());
        assert_eq!(input.rules_text.lines().count(), 5);
    }

    #[test]
    fn facts_exclude_goal_context_and_follow_key_order() {
        let mut m = MemoryStore::default();
        let obj = |v: Value| v.as_object().unwrap().clone();
        m.write_staged(NewEntry::new(
            "goal.choose_colder".parse().unwrap(),
            EntryKind::Observation,
            obj(json!({"statement": "pick the colder city"})),
            "context",
        ))
        .unwrap();
        for (city, t) in [("Seoul", 51.8), ("Jeju", 60.8)] {
            m.write_staged(NewEntry::new(
                format!("obs.{city}").parse().unwrap(),
                EntryKind::Observation,
                obj(json!({"location": city, "temp_f": t, "precipitation": false})),
                "get_weather",
            ))
            .unwrap();
        }
        let snap = m.commit_cycle();
        let constraints = vec!["Rejected x: R-DEDUP".to_string()];
        let input = assemble_input(&task(), &snap, &constraints, &RuleSet::default_rules());
        assert_eq!(
            input.memory_facts,
            [
                "[Memory Fact] Jeju: temp_f=60.8, precipitation=false",
                "[Memory Fact] Seoul: temp_f=51.8, precipitation=false",
            ]
        );
        assert_eq!(input.constraints, constraints);
        assert_eq!(input.digest(), input.clone().digest());
    }
}
