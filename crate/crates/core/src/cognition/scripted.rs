//! Deterministic stand-in for a language model, driven by the goal spec.
//!
//! The policy reads only the fact lines of its input, never the store:
//! gather missing facts one at a time, settle the cancellation condition,
//! then emit triggered branch actions with citations, then complete.

use crate::cognition::evidence::Truth;
use crate::cognition::{CognitionInput, FactView, Proposal, Proposed, Proposer, ProposerFailure};
use crate::control::goal::{Branch, GoalSpec};

#[derive(Debug, Clone)]
pub struct ScriptedProposer {
    goal: GoalSpec,
}

impl ScriptedProposer {
    pub fn new(goal: GoalSpec) -> Self {
        Self { goal }
    }

    pub fn goal(&self) -> &GoalSpec {
        &self.goal
    }

    /// The policy over an already-parsed view of the facts.
    pub fn plan(&self, view: &FactView) -> Result<Proposal, ProposerFailure> {
        if let Some(fact) = self.goal.missing_facts(view).first() {
            let call = fact.call.bind(view).ok_or_else(|| {
                ProposerFailure::PolicyGap(format!("cannot bind the gather call for {}", fact.key))
            })?;
            return Ok(Proposal::call(call).because(format!("{} has not been observed", fact.key)));
        }
        match self.goal.cancellation_truth(view) {
            Some(Truth::Unknown) => {
                return Err(ProposerFailure::PolicyGap(
                    "cancellation condition cannot be evaluated from the observed facts".into(),
                ))
            }
            Some(Truth::True) => {
                let c = self.goal.cancellation.as_ref().expect("truth implies presence");
                return next_action(c, view, "cancellation condition holds");
            }
            _ => {}
        }
        for branch in &self.goal.branches {
            match branch.truth(view) {
                Truth::True => {
                    if let Some(p) = next_action_opt(branch, view)? {
                        return Ok(p);
                    }
                }
                Truth::False => {}
                Truth::Unknown => {
                    return Err(ProposerFailure::PolicyGap(
                        "a branch condition cannot be evaluated from the observed facts".into(),
                    ))
                }
            }
        }
        Ok(Proposal::completion("all goal actions are complete"))
    }
}

fn next_action(branch: &Branch, view: &FactView, done: &str) -> Result<Proposal, ProposerFailure> {
    Ok(next_action_opt(branch, view)?.unwrap_or_else(|| Proposal::completion(done)))
}

/// The first action of `branch` not yet executed, bound and cited.
fn next_action_opt(branch: &Branch, view: &FactView) -> Result<Option<Proposal>, ProposerFailure> {
    let Some(template) = branch
        .actions
        .iter()
        .find(|t| !GoalSpec::action_executed(view, t))
    else {
        return Ok(None);
    };
    let call = template.bind(view).ok_or_else(|| {
        ProposerFailure::PolicyGap(format!("cannot bind arguments for {}", template.name))
    })?;
    let claim = branch
        .claim
        .clone()
        .unwrap_or_else(|| branch.when.iter().map(ToString::to_string).collect::<Vec<_>>().join(" and "));
    Ok(Some(Proposal::call(call).citing(branch.citations()).because(claim)))
}

impl Proposer for ScriptedProposer {
    fn propose(&self, input: &CognitionInput) -> Result<Proposed, ProposerFailure> {
        self.plan(&FactView::from_lines(&input.memory_facts)).map(Proposed::from)
    }
}
