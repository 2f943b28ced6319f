//! JSON wire contract for an out-of-process proposer (e.g. a hosted model).

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::cognition::{CognitionInput, EvidenceExpr, Proposal, Proposed, Proposer, ProposerFailure, ToolCall};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub system: String,
    pub task: String,
    pub rules: String,
    pub facts: Vec<String>,
    pub constraints: Vec<String>,
}

impl From<&CognitionInput> for WireRequest {
    fn from(input: &CognitionInput) -> Self {
        Self {
            system: input.system_message.clone(),
            task: input.task_instruction.clone(),
            rules: input.rules_text.clone(),
            facts: input.memory_facts.clone(),
            constraints: input.constraints.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireCall {
    pub name: String,
    #[serde(default)]
    pub arguments: serde_json::Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireResponse {
    pub call: Option<WireCall>,
    #[serde(default)]
    pub citations: Vec<String>,
    #[serde(default)]
    pub rationale: Option<String>,
}

impl WireResponse {
    pub fn into_proposal(self) -> Result<Proposal, ProposerFailure> {
        let citations = self
            .citations
            .iter()
            .map(|c| c.parse::<EvidenceExpr>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| ProposerFailure::Malformed(e.to_string()))?;
        let call = match self.call {
            Some(c) if c.name.trim().is_empty() => {
                return Err(ProposerFailure::Malformed("call name is empty".into()))
            }
            Some(c) => Some(ToolCall {
                name: c.name,
                arguments: c.arguments.into_iter().collect(),
            }),
            None => None,
        };
        Ok(Proposal {
            call,
            citations,
            rationale: self.rationale,
        })
    }
}

/// Parses a raw response body; anything off-contract is a [`ProposerFailure::Malformed`].
pub fn parse_response(body: &str) -> Result<Proposal, ProposerFailure> {
    let resp: WireResponse = serde_json::from_str(body).map_err(|e| ProposerFailure::Malformed(e.to_string()))?;
    resp.into_proposal()
}

type Transport = Box<dyn Fn(&str) -> Result<String, String> + Send + Sync>;

/// Proposer backed by a transport that takes a request body and returns a
/// response body.
pub struct ExternalProposer {
    transport: Transport,
}

impl ExternalProposer {
    pub fn new(transport: impl Fn(&str) -> Result<String, String> + Send + Sync + 'static) -> Self {
        Self {
            transport: Box::new(transport),
        }
    }
}

impl Proposer for ExternalProposer {
    fn propose(&self, input: &CognitionInput) -> Result<Proposed, ProposerFailure> {
        let body = serde_json::to_string(&WireRequest::from(input)).expect("request serializes");
        let reply = (self.transport)(&body).map_err(ProposerFailure::Transport)?;
        parse_response(&reply).map(Proposed::from)
    }
}
