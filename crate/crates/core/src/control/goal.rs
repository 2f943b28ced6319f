//! Goal specifications: which facts must be gathered, an optional
//! cancellation, and conditional branches of actions.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use crate::cognition::evidence::{evaluate_all, EvidenceExpr, Truth};
use crate::cognition::{canonical_value, ToolCall};
use crate::memory::{values_equal, ActionStatus, KeyRoot, MemoryKey, Resolved, Resolver};

/// An argument fixed by the goal or bound from memory at proposal time.
#[derive(Debug, Clone, PartialEq)]
pub enum ArgTemplate {
    Literal(Value),
    FromMemory(MemoryKey),
}

impl Serialize for ArgTemplate {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            ArgTemplate::Literal(v) => v.serialize(serializer),
            ArgTemplate::FromMemory(k) => {
                let mut m = BTreeMap::new();
                m.insert("from", k.to_string());
                m.serialize(serializer)
            }
        }
    }
}

impl<'de> Deserialize<'de> for ArgTemplate {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = Value::deserialize(deserializer)?;
        if let Value::Object(m) = &v {
            if m.len() == 1 {
                if let Some(Value::String(k)) = m.get("from") {
                    return k
                        .parse()
                        .map(ArgTemplate::FromMemory)
                        .map_err(serde::de::Error::custom);
                }
            }
        }
        Ok(ArgTemplate::Literal(v))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CallTemplate {
    pub name: String,
    #[serde(default)]
    pub args: BTreeMap<String, ArgTemplate>,
}

impl CallTemplate {
    /// Binds memory-sourced arguments; `None` if any of them is absent.
    pub fn bind(&self, resolver: &dyn Resolver) -> Option<ToolCall> {
        let mut call = ToolCall::new(&self.name);
        for (k, a) in &self.args {
            let v = match a {
                ArgTemplate::Literal(v) => v.clone(),
                ArgTemplate::FromMemory(key) => resolver.resolve(key).value()?.clone(),
            };
            call.arguments.insert(k.clone(), v);
        }
        Some(call)
    }

    pub fn bound_keys(&self) -> Vec<(&str, &MemoryKey)> {
        self.args
            .iter()
            .filter_map(|(k, a)| match a {
                ArgTemplate::FromMemory(key) => Some((k.as_str(), key)),
                ArgTemplate::Literal(_) => None,
            })
            .collect()
    }

    /// Same tool, every literal argument equal, every bound argument present.
    pub fn matches(&self, call: &ToolCall) -> bool {
        let call = call.canonical();
        call.name == self.name
            && self.args.iter().all(|(k, a)| match (a, call.arguments.get(k)) {
                (ArgTemplate::Literal(v), Some(got)) => values_equal(&canonical_value(v), got),
                (ArgTemplate::FromMemory(_), Some(_)) => true,
                (_, None) => false,
            })
    }

    pub fn action_key(&self) -> MemoryKey {
        MemoryKey::new(["act", self.name.as_str()]).expect("tool names are valid key segments")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequiredFact {
    pub key: MemoryKey,
    pub call: CallTemplate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Branch {
    pub when: Vec<EvidenceExpr>,
    /// Goal context keys cited alongside the condition.
    #[serde(default)]
    pub cite: Vec<MemoryKey>,
    /// Proposition recorded with the proposal, e.g. "Seoul is colder".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub claim: Option<String>,
    pub actions: Vec<CallTemplate>,
}

impl Branch {
    pub fn truth(&self, resolver: &dyn Resolver) -> Truth {
        evaluate_all(&self.when, resolver)
    }

    pub fn citations(&self) -> Vec<EvidenceExpr> {
        self.when
            .iter()
            .cloned()
            .chain(self.cite.iter().cloned().map(EvidenceExpr::reference))
            .collect()
    }

    pub fn condition_keys(&self) -> Vec<&MemoryKey> {
        self.when.iter().flat_map(EvidenceExpr::keys).collect()
    }
}

/// Where a proposed call sits in the goal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CallRole {
    Gather { fact: usize },
    Cancellation { action: usize },
    Branch { branch: usize, action: usize },
    Unplanned,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalSpec {
    #[serde(default)]
    pub required: Vec<RequiredFact>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cancellation: Option<Branch>,
    #[serde(default)]
    pub branches: Vec<Branch>,
}

impl GoalSpec {
    /// Gather calls must match their template exactly; effect calls are
    /// identified by tool name alone (names are unique across effect
    /// templates), so a wrong argument is reported against the right action.
    pub fn classify(&self, call: &ToolCall) -> CallRole {
        if let Some(i) = self.required.iter().position(|f| f.call.matches(call)) {
            return CallRole::Gather { fact: i };
        }
        let name = call.name.trim();
        if let Some(c) = &self.cancellation {
            if let Some(i) = c.actions.iter().position(|t| t.name == name) {
                return CallRole::Cancellation { action: i };
            }
        }
        for (b, branch) in self.branches.iter().enumerate() {
            if let Some(i) = branch.actions.iter().position(|t| t.name == name) {
                return CallRole::Branch { branch: b, action: i };
            }
        }
        CallRole::Unplanned
    }

    pub fn branch_of(&self, role: CallRole) -> Option<&Branch> {
        match role {
            CallRole::Cancellation { .. } => self.cancellation.as_ref(),
            CallRole::Branch { branch, .. } => self.branches.get(branch),
            _ => None,
        }
    }

    pub fn template_of(&self, role: CallRole) -> Option<&CallTemplate> {
        match role {
            CallRole::Gather { fact } => self.required.get(fact).map(|f| &f.call),
            CallRole::Cancellation { action } => self.cancellation.as_ref()?.actions.get(action),
            CallRole::Branch { branch, action } => self.branches.get(branch)?.actions.get(action),
            CallRole::Unplanned => None,
        }
    }

    /// A fact is observed when its latest record exists and is not a failure marker.
    pub fn fact_observed(resolver: &dyn Resolver, key: &MemoryKey) -> bool {
        match resolver.resolve(key) {
            Resolved::Value(Value::Object(m)) => !m.contains_key("error"),
            Resolved::Value(_) => true,
            Resolved::NotFound => false,
        }
    }

    pub fn missing_facts<'a>(&'a self, resolver: &dyn Resolver) -> Vec<&'a RequiredFact> {
        self.required
            .iter()
            .filter(|f| !Self::fact_observed(resolver, &f.key))
            .collect()
    }

    pub fn cancellation_truth(&self, resolver: &dyn Resolver) -> Option<Truth> {
        self.cancellation.as_ref().map(|c| c.truth(resolver))
    }

    /// Actions the goal currently calls for. Empty while the cancellation is
    /// still unevaluated.
    pub fn triggered<'a>(&'a self, resolver: &dyn Resolver) -> Vec<(&'a Branch, &'a CallTemplate)> {
        match self.cancellation_truth(resolver) {
            Some(Truth::Unknown) => Vec::new(),
            Some(Truth::True) => {
                let c = self.cancellation.as_ref().expect("truth implies presence");
                c.actions.iter().map(|a| (c, a)).collect()
            }
            _ => self
                .branches
                .iter()
                .filter(|b| b.truth(resolver) == Truth::True)
                .flat_map(|b| b.actions.iter().map(move |a| (b, a)))
                .collect(),
        }
    }

    /// The latest `act.<name>` record is executed, and if it carries its
    /// arguments they equal the template bound over `resolver`.
    pub fn action_executed(resolver: &dyn Resolver, template: &CallTemplate) -> bool {
        let Resolved::Value(Value::Object(record)) = resolver.resolve(&template.action_key()) else {
            return false;
        };
        let executed = record.get("status").and_then(Value::as_str) == Some(ActionStatus::Executed.as_str());
        if !executed {
            return false;
        }
        match (record.get("args"), template.bind(resolver)) {
            (Some(Value::Object(args)), Some(expected)) => {
                let expected = expected.canonical().arguments;
                args.len() == expected.len()
                    && expected
                        .iter()
                        .all(|(k, v)| args.get(k).is_some_and(|got| values_equal(got, v)))
            }
            (Some(Value::Object(_)), None) => false,
            _ => true,
        }
    }

    pub fn success(&self, resolver: &dyn Resolver) -> bool {
        self.missing_facts(resolver).is_empty()
            && self.cancellation_truth(resolver) != Some(Truth::Unknown)
            && self
                .triggered(resolver)
                .into_iter()
                .all(|(_, t)| Self::action_executed(resolver, t))
    }

    /// Facts plus every action template, the budget unit for episodes.
    pub fn size(&self) -> usize {
        self.required.len()
            + self.cancellation.as_ref().map_or(0, |c| c.actions.len())
            + self.branches.iter().map(|b| b.actions.len()).sum::<usize>()
    }

    pub fn effect_templates(&self) -> impl Iterator<Item = &CallTemplate> {
        self.cancellation
            .iter()
            .chain(self.branches.iter())
            .flat_map(|b| b.actions.iter())
    }

    pub fn all_templates(&self) -> impl Iterator<Item = &CallTemplate> {
        self.required.iter().map(|f| &f.call).chain(self.effect_templates())
    }

    /// Structural checks; `is_tool` reports whether a tool name is registered.
    pub fn validate(&self, is_tool: &dyn Fn(&str) -> bool) -> Result<(), String> {
        for t in self.all_templates() {
            if !is_tool(&t.name) {
                return Err(format!("unknown tool `{}`", t.name));
            }
        }
        let mut seen = BTreeSet::new();
        for t in self.effect_templates() {
            if !seen.insert(t.name.as_str()) {
                return Err(format!(
                    "tool `{}` appears in more than one action template; each action records under act.<tool>",
                    t.name
                ));
            }
        }
        for f in &self.required {
            if f.key.root() != KeyRoot::Obs {
                return Err(format!("required fact `{}` must live under obs.*", f.key));
            }
        }
        let derivable = |k: &MemoryKey| self.required.iter().any(|f| f.key.is_prefix_of(k));
        for b in self.cancellation.iter().chain(self.branches.iter()) {
            if b.actions.is_empty() {
                return Err("a branch needs at least one action".into());
            }
            for k in b.condition_keys() {
                if !derivable(k) {
                    return Err(format!("condition key `{k}` is not covered by a required fact"));
                }
            }
            for k in &b.cite {
                if k.root() != KeyRoot::Goal {
                    return Err(format!("cited context key `{k}` must live under goal.*"));
                }
            }
            // arguments may also come from an earlier action of the same branch
            for (i, t) in b.actions.iter().enumerate() {
                for (_, k) in t.bound_keys() {
                    let from_earlier = b.actions[..i].iter().any(|e| e.action_key().is_prefix_of(k));
                    if !derivable(k) && !from_earlier {
                        return Err(format!(
                            "argument source `{k}` is neither a required fact nor an earlier action's record"
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}
