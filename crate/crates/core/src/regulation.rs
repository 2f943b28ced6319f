//! Versioned rule sets.
//!
//! A rule carries prose for the cognition input and a [`CheckKind`] that
//! control maps onto one deterministic validation routine.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_RULES_TOML: &str = include_str!("../rules/default.toml");

pub const NUM_COMPARE: &str = "R-NUM-COMPARE";
pub const COND_PRIORITY: &str = "R-COND-PRIORITY";
pub const COND_EXEC: &str = "R-COND-EXEC";
pub const SEQUENTIAL: &str = "R-SEQ";
pub const ARGS_COMPLETE: &str = "R-ARGS";

/// Ids every loaded config must list (enabled or not).
pub const REQUIRED_RULE_IDS: [&str; 5] = [NUM_COMPARE, COND_PRIORITY, COND_EXEC, SEQUENTIAL, ARGS_COMPLETE];

#[derive(Debug, Error, PartialEq)]
pub enum RegulationError {
    #[error("rule config does not parse: {0}")]
    Parse(String),
    #[error("rule `{id}` uses unknown check `{check}`")]
    UnknownCheck { id: String, check: String },
    #[error("duplicate rule id `{0}`")]
    DuplicateRuleId(String),
    #[error("rule `{0}` is missing; list it with enabled = false to disable it")]
    MissingRule(String),
    #[error("cannot read rule config: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    CitationRequiredForComparison,
    CancellationBeforeBranch,
    PreconditionsSatisfied,
    OneActionPerCycle,
    ArgumentsComplete,
}

impl CheckKind {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "citation_required_for_comparison" => CheckKind::CitationRequiredForComparison,
            "cancellation_before_branch" => CheckKind::CancellationBeforeBranch,
            "preconditions_satisfied" => CheckKind::PreconditionsSatisfied,
            "one_action_per_cycle" => CheckKind::OneActionPerCycle,
            "arguments_complete" => CheckKind::ArgumentsComplete,
            _ => return None,
        })
    }
}

impl fmt::Display for CheckKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CheckKind::CitationRequiredForComparison => "citation_required_for_comparison",
            CheckKind::CancellationBeforeBranch => "cancellation_before_branch",
            CheckKind::PreconditionsSatisfied => "preconditions_satisfied",
            CheckKind::OneActionPerCycle => "one_action_per_cycle",
            CheckKind::ArgumentsComplete => "arguments_complete",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub id: String,
    pub name: String,
    pub statement: String,
    pub check: CheckKind,
    pub enabled: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSet {
    pub version: String,
    pub rules: Vec<Rule>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    rule: Vec<RawRule>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule {
    id: String,
    name: String,
    statement: String,
    check: String,
    #[serde(default = "enabled_default")]
    enabled: bool,
}

fn enabled_default() -> bool {
    true
}

impl RuleSet {
    /// Builds a rule set without the required-rules check; the version is
    /// the content hash.
    pub fn new(rules: Vec<Rule>) -> Result<Self, RegulationError> {
        let mut seen = BTreeSet::new();
        for r in &rules {
            if !seen.insert(r.id.as_str()) {
                return Err(RegulationError::DuplicateRuleId(r.id.clone()));
            }
        }
        let version = content_version(&rules);
        Ok(Self { version, rules })
    }

    pub fn empty() -> Self {
        Self::new(Vec::new()).expect("no duplicates in an empty set")
    }

    pub fn default_rules() -> Self {
        load_ruleset(DEFAULT_RULES_TOML).expect("shipped rule config is valid")
    }

    pub fn get(&self, id: &str) -> Option<&Rule> {
        self.rules.iter().find(|r| r.id == id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.get(id).is_some()
    }

    /// Ids of the enabled rules enforced by `check`, in declaration order.
    pub fn ids_for(&self, check: CheckKind) -> Vec<String> {
        self.rules
            .iter()
            .filter(|r| r.enabled && r.check == check)
            .map(|r| r.id.clone())
            .collect()
    }

    pub fn enabled(&self) -> impl Iterator<Item = &Rule> {
        self.rules.iter().filter(|r| r.enabled)
    }
}

fn content_version(rules: &[Rule]) -> String {
    let canonical = serde_json::to_vec(rules).expect("rules serialize");
    let digest = Sha256::digest(&canonical);
    format!("rs-{}", &hex::encode(digest)[..16])
}

/// Parses and validates a TOML rule config.
pub fn load_ruleset(source: &str) -> Result<RuleSet, RegulationError> {
    let raw: RawConfig = toml::from_str(source).map_err(|e| RegulationError::Parse(e.to_string()))?;
    let mut rules = Vec::with_capacity(raw.rule.len());
    for r in raw.rule {
        let check = CheckKind::parse(&r.check).ok_or_else(|| RegulationError::UnknownCheck {
            id: r.id.clone(),
            check: r.check.clone(),
        })?;
        rules.push(Rule {
            id: r.id,
            name: r.name,
            statement: r.statement,
            check,
            enabled: r.enabled,
        });
    }
    let rs = RuleSet::new(rules)?;
    for id in REQUIRED_RULE_IDS {
        if !rs.contains(id) {
            return Err(RegulationError::MissingRule(id.to_string()));
        }
    }
    Ok(rs)
}

pub fn load_ruleset_file(path: impl AsRef<Path>) -> Result<RuleSet, RegulationError> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| RegulationError::Io(format!("{}: {e}", path.as_ref().display())))?;
    load_ruleset(&text)
}

/// One `<id>: <statement>` line per enabled rule.
pub fn render_for_cognition(rs: &RuleSet) -> String {
    rs.enabled()
        .map(|r| format!("{}: {}", r.id, r.statement))
        .collect::<Vec<_>>()
        .join("\n")
}
