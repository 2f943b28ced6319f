//! Event-sourced episode traces.
//!
//! A trace file is JSON lines: a header (config digest, rules, initial
//! memory) followed by one [`CycleRecord`] per executed cycle. Chains and
//! metrics are computed from the file alone.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline::ContextModel;
use crate::cognition::{FaultLabel, Proposal, ProposerFailure};
use crate::control::{ControlDecision, GoalSpec};
use crate::memory::{KeyRoot, MemoryEntry, MemoryKey, MemorySnapshot, Resolved, Resolver};
use crate::regulation::RuleSet;
use crate::runtime::InvocationLog;

pub mod chain;
pub mod metrics;

pub use chain::{reconstruct_chain, ActionRef, ChainError, ChainOutcome, GapReport, JustificationChain, Link};
pub use metrics::{compute_elp, compute_spa, compute_tc, FaultMap, Metric, MetricsError, MetricsReport};

pub const TRACE_FORMAT: &str = "scl-trace/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Scl,
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format: String,
    pub scenario: String,
    pub mode: Mode,
    pub seed: u64,
    pub config_digest: String,
    pub ruleset: RuleSet,
    /// Whether the proposer injected labelled faults.
    pub fault_injection: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_model: Option<ContextModel>,
    /// Entries committed before the first cycle (goal context, status flag).
    pub init_delta: Vec<MemoryEntry>,
}

/// How a memory key fed into a cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Via {
    Citation,
    Argument,
    Gather,
    Condition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Consumption {
    pub key: MemoryKey,
    pub via: Via,
    pub consumed: Resolved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: u32,
    pub input_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposal: Option<Proposal>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposer_error: Option<ProposerFailure>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<ControlDecision>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub invocation: Option<InvocationLog>,
    pub memory_delta: Vec<MemoryEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault_label: Option<FaultLabel>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub consumptions: Vec<Consumption>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub header: TraceHeader,
    pub cycles: Vec<CycleRecord>,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace is empty")]
    Empty,
    #[error("trace line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("cannot read trace: {0}")]
    Io(String),
}

impl EpisodeTrace {
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for c in &self.cycles {
            out.push_str(&serde_json::to_string(c).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, TraceError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or(TraceError::Empty)?;
        let parse_err = |line: usize, e: serde_json::Error| TraceError::Parse {
            line: line + 1,
            reason: e.to_string(),
        };
        let header: TraceHeader = serde_json::from_str(first).map_err(|e| parse_err(0, e))?;
        if header.format != TRACE_FORMAT {
            return Err(TraceError::Parse {
                line: 1,
                reason: format!("unsupported format `{}`", header.format),
            });
        }
        let cycles = lines
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| parse_err(i, e)))
            .collect::<Result<_, _>>()?;
        Ok(Self { header, cycles })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), TraceError> {
        std::fs::write(path.as_ref(), self.to_jsonl()).map_err(|e| TraceError::Io(e.to_string()))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, TraceError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| TraceError::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_jsonl(&text)
    }

    /// Authoritative memory at the start of each cycle, rebuilt from the
    /// recorded deltas; `states()[i]` precedes `cycles[i]`.
    pub fn states(&self) -> Vec<MemorySnapshot> {
        let mut acc: Vec<MemoryEntry> = self.header.init_delta.clone();
        let mut out = Vec::with_capacity(self.cycles.len());
        for c in &self.cycles {
            out.push(MemorySnapshot::from_entries(acc.iter().cloned()));
            acc.extend(c.memory_delta.iter().cloned());
        }
        out
    }

    pub fn final_state(&self) -> MemorySnapshot {
        MemorySnapshot::from_entries(
            self.header
                .init_delta
                .iter()
                .chain(self.cycles.iter().flat_map(|c| &c.memory_delta))
                .cloned(),
        )
    }
}

/// Memory keys a proposal relies on, with the values `view` gave for them.
/// Goal context is static and excluded.
pub fn consumptions(proposal: &Proposal, goal: &GoalSpec, view: &dyn Resolver) -> Vec<Consumption> {
    let mut out: Vec<Consumption> = Vec::new();
    let mut add = |key: &MemoryKey, via: Via| {
        if key.root() != KeyRoot::Goal && !out.iter().any(|c| &c.key == key && c.via == via) {
            out.push(Consumption {
                key: key.clone(),
                via,
                consumed: view.resolve(key),
            });
        }
    };
    if let Some(call) = &proposal.call {
        let role = goal.classify(call);
        if let crate::control::CallRole::Gather { fact } = role {
            add(&goal.required[fact].key, Via::Gather);
        }
        if let Some(branch) = goal.branch_of(role) {
            if let Some(c) = &goal.cancellation {
                c.condition_keys().into_iter().for_each(|k| add(k, Via::Condition));
            }
            branch.condition_keys().into_iter().for_each(|k| add(k, Via::Condition));
        }
        if let Some(t) = goal.template_of(role) {
            t.bound_keys().into_iter().for_each(|(_, k)| add(k, Via::Argument));
        }
    }
    for c in &proposal.citations {
        c.keys().into_iter().for_each(|k| add(k, Via::Citation));
    }
    out
}
