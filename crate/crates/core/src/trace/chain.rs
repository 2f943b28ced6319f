//! Justification chains: proposal → citations → approval → invocation →
//! memory record, rebuilt for one executed action from the trace alone.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{CycleRecord, EpisodeTrace};
use crate::cognition::evidence::{EvidenceExpr, Truth};
use crate::cognition::ToolCall;
use crate::memory::{EntryKind, MemoryEntry, MemoryKey, MemorySnapshot, Resolved, Resolver};
use crate::runtime::{InvocationLog, Outcome};

/// Names an executed action: a cycle number (`3` or `cycle3`) or the memory
/// key it wrote (`act.book_flight`, meaning its latest execution).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ActionRef {
    Cycle(u32),
    Key(MemoryKey),
}

impl std::str::FromStr for ActionRef {
    type Err = ChainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let digits = s.strip_prefix("cycle").unwrap_or(s);
        if let Ok(n) = digits.parse() {
            return Ok(ActionRef::Cycle(n));
        }
        s.parse()
            .map(ActionRef::Key)
            .map_err(|_| ChainError::UnknownAction(s.to_string()))
    }
}

impl fmt::Display for ActionRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActionRef::Cycle(n) => write!(f, "cycle{n}"),
            ActionRef::Key(k) => write!(f, "{k}"),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ChainError {
    #[error("no executed action matches `{0}`")]
    UnknownAction(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Proposal,
    Citation(usize),
    Decision,
    Invocation,
    Memory,
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Link::Proposal => f.write_str("proposal"),
            Link::Citation(i) => write!(f, "citation {}", i + 1),
            Link::Decision => f.write_str("decision"),
            Link::Invocation => f.write_str("invocation"),
            Link::Memory => f.write_str("memory"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub cycle: u32,
    pub link: Link,
    pub reason: String,
}

impl fmt::Display for GapReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "cycle {}: {} link missing: {}", self.cycle, self.link, self.reason)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CitedEvidence {
    pub citation: String,
    pub values: Vec<(MemoryKey, Resolved)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JustificationChain {
    pub cycle: u32,
    pub action: ToolCall,
    pub citations: Vec<CitedEvidence>,
    pub decision_log: Vec<String>,
    pub invocation: InvocationLog,
    pub memory: Vec<MemoryEntry>,
}

impl fmt::Display for JustificationChain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "cycle {}: {}", self.cycle, self.action)?;
        for c in &self.citations {
            let vals: Vec<String> = c
                .values
                .iter()
                .map(|(k, v)| match v {
                    Resolved::Value(v) => format!("{k}={v}"),
                    Resolved::NotFound => format!("{k}=<not found>"),
                })
                .collect();
            writeln!(f, "  cites   {}  [{}]", c.citation, vals.join(", "))?;
        }
        for l in &self.decision_log {
            writeln!(f, "  control {l}")?;
        }
        let status = match &self.invocation.outcome {
            Outcome::Ok { .. } => "ok".to_string(),
            Outcome::Err { code, .. } => code.to_string(),
        };
        writeln!(
            f,
            "  runtime {} → {status} ({} ms{})",
            self.invocation.tool,
            self.invocation.latency_ms,
            if self.invocation.idempotency_hit { ", cached" } else { "" }
        )?;
        for e in &self.memory {
            writeln!(f, "  memory  {} v{} ({})", e.key, e.version, e.source)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ChainOutcome {
    Complete(Box<JustificationChain>),
    Gap(GapReport),
}

impl ChainOutcome {
    pub fn is_complete(&self) -> bool {
        matches!(self, ChainOutcome::Complete(_))
    }
}

fn is_tool_sourced(e: &MemoryEntry) -> bool {
    matches!(e.kind, EntryKind::Observation | EntryKind::ActionRecord) && !matches!(e.source.as_str(), "control" | "context")
}

/// A cycle that changed the world: its invocation succeeded, or (if the
/// invocation record is gone) it was approved or left a tool-written entry.
pub fn is_executed(record: &CycleRecord) -> bool {
    match &record.invocation {
        Some(inv) => matches!(inv.outcome, Outcome::Ok { .. }),
        None => {
            record.decision.as_ref().is_some_and(|d| d.approved_call().is_some())
                || record.memory_delta.iter().any(is_tool_sourced)
        }
    }
}

pub fn executed_cycles(trace: &EpisodeTrace) -> Vec<u32> {
    trace.cycles.iter().filter(|c| is_executed(c)).map(|c| c.cycle).collect()
}

pub fn reconstruct_chain(trace: &EpisodeTrace, action: &ActionRef) -> Result<ChainOutcome, ChainError> {
    let idx = match action {
        ActionRef::Cycle(n) => trace.cycles.iter().position(|c| c.cycle == *n && is_executed(c)),
        ActionRef::Key(k) => trace
            .cycles
            .iter()
            .rposition(|c| is_executed(c) && c.memory_delta.iter().any(|e| &e.key == k && is_tool_sourced(e))),
    }
    .ok_or_else(|| ChainError::UnknownAction(action.to_string()))?;
    let states = trace.states();
    Ok(chain_at(&trace.cycles[idx], &states[idx]))
}

/// Chains for every executed action, in cycle order.
pub fn all_chains(trace: &EpisodeTrace) -> Vec<ChainOutcome> {
    let states = trace.states();
    trace
        .cycles
        .iter()
        .zip(&states)
        .filter(|(c, _)| is_executed(c))
        .map(|(c, s)| chain_at(c, s))
        .collect()
}

fn chain_at(record: &CycleRecord, before: &MemorySnapshot) -> ChainOutcome {
    match build(record, before) {
        Ok(chain) => ChainOutcome::Complete(Box::new(chain)),
        Err((link, reason)) => ChainOutcome::Gap(GapReport {
            cycle: record.cycle,
            link,
            reason,
        }),
    }
}

fn build(record: &CycleRecord, before: &MemorySnapshot) -> Result<JustificationChain, (Link, String)> {
    let proposal = record
        .proposal
        .as_ref()
        .ok_or((Link::Proposal, "no proposal recorded".to_string()))?;
    let call = proposal
        .call
        .as_ref()
        .ok_or((Link::Proposal, "proposal is a completion signal".to_string()))?
        .canonical();

    let mut citations = Vec::new();
    for (i, c) in proposal.citations.iter().enumerate() {
        let values: Vec<(MemoryKey, Resolved)> = c.keys().into_iter().map(|k| (k.clone(), before.resolve(k))).collect();
        if let Some((k, _)) = values.iter().find(|(_, v)| !v.is_found()) {
            return Err((Link::Citation(i), format!("{k} does not resolve")));
        }
        if matches!(c, EvidenceExpr::Comparison { .. }) && c.evaluate(before) != Truth::True {
            return Err((Link::Citation(i), format!("{c} does not hold")));
        }
        citations.push(CitedEvidence {
            citation: c.to_string(),
            values,
        });
    }

    let decision = record
        .decision
        .as_ref()
        .ok_or((Link::Decision, "no control decision recorded".to_string()))?;
    match decision.approved_call() {
        Some(approved) if approved.canonical() == call => {}
        Some(approved) => return Err((Link::Decision, format!("approved {approved}, proposed {call}"))),
        None => return Err((Link::Decision, "decision is not an approval".to_string())),
    }

    let invocation = record
        .invocation
        .as_ref()
        .ok_or((Link::Invocation, "no invocation recorded".to_string()))?;
    if invocation.tool != call.name || invocation.args != call.arguments {
        return Err((Link::Invocation, format!("invocation of {} does not match {call}", invocation.tool)));
    }
    let Outcome::Ok { payload } = &invocation.outcome else {
        return Err((Link::Invocation, "invocation failed".to_string()));
    };

    check_versions(record, before)?;
    let written: Vec<MemoryEntry> = record
        .memory_delta
        .iter()
        .filter(|e| e.source == call.name && is_tool_sourced(e))
        .cloned()
        .collect();
    let recorded = written.iter().any(|e| match e.kind {
        EntryKind::Observation => &e.payload == payload,
        EntryKind::ActionRecord => e.action_status() == Some(crate::memory::ActionStatus::Executed),
        _ => false,
    });
    if !recorded {
        return Err((Link::Memory, format!("no record of {} in the committed delta", call.name)));
    }
    let mut memory = written;
    if !proposal.citations.is_empty() {
        let cited: Vec<String> = proposal.citations.iter().map(ToString::to_string).collect();
        let prop = record
            .memory_delta
            .iter()
            .find(|e| e.kind == EntryKind::Proposal)
            .ok_or((Link::Memory, "cited proposal was not recorded in memory".to_string()))?;
        let evidence: Vec<String> = prop
            .payload
            .get("evidence")
            .and_then(|v| serde_json::from_value(v.clone()).ok())
            .unwrap_or_default();
        if evidence != cited {
            return Err((Link::Citation(0), "recorded evidence differs from the proposal's citations".to_string()));
        }
        memory.push(prop.clone());
    }

    Ok(JustificationChain {
        cycle: record.cycle,
        action: call,
        citations,
        decision_log: decision.log.clone(),
        invocation: invocation.clone(),
        memory,
    })
}

/// Every committed entry must extend its key's history by exactly one version.
fn check_versions(record: &CycleRecord, before: &MemorySnapshot) -> Result<(), (Link, String)> {
    let mut next: BTreeMap<&MemoryKey, u64> = BTreeMap::new();
    for e in &record.memory_delta {
        let expected = next.entry(&e.key).or_insert_with(|| before.version(&e.key)) ;
        *expected += 1;
        if e.version != *expected {
            return Err((Link::Memory, format!("{} jumps to version {} (expected {})", e.key, e.version, expected)));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn action_refs_parse() {
        assert_eq!("3".parse::<ActionRef>().unwrap(), ActionRef::Cycle(3));
        assert_eq!("cycle12".parse::<ActionRef>().unwrap(), ActionRef::Cycle(12));
        assert_eq!(
            "act.book_flight".parse::<ActionRef>().unwrap(),
            ActionRef::Key("act.book_flight".parse().unwrap())
        );
        assert!("not a ref".parse::<ActionRef>().is_err());
    }
}
