//! Fault-injecting wrapper around the scripted proposer.
//!
//! Each cycle draws one uniform per fault type in a fixed order from a
//! generator seeded by the configured seed and the input digest; the first
//! fault that fires and applies to the current state is injected. At most one
//! fault per cycle, always labelled with its ground truth.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cognition::evidence::{EvidenceExpr, Truth};
use crate::cognition::{
    CognitionInput, FactView, Proposal, Proposed, Proposer, ProposerFailure, ScriptedProposer, ToolCall,
};
use crate::control::goal::GoalSpec;

/// Citation injected by the false-citation fault; no fixture world contains it.
pub const PHANTOM_CITATION: &str = "obs.Atlantis.temp_f";

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub p_duplicate: f64,
    #[serde(default)]
    pub p_missing_arg: f64,
    #[serde(default)]
    pub p_uncited_claim: f64,
    #[serde(default)]
    pub p_premature_action: f64,
    #[serde(default)]
    pub p_false_citation: f64,
}

#[derive(Debug, Error, PartialEq)]
#[error("fault probability `{field}` = {value} is outside [0, 1]")]
pub struct FaultConfigError {
    pub field: &'static str,
    pub value: f64,
}

impl FaultConfig {
    pub fn uniform(seed: u64, p: f64) -> Self {
        Self {
            seed,
            p_duplicate: p,
            p_missing_arg: p,
            p_uncited_claim: p,
            p_premature_action: p,
            p_false_citation: p,
        }
    }

    pub fn probabilities(&self) -> [(&'static str, f64); 5] {
        [
            ("p_duplicate", self.p_duplicate),
            ("p_missing_arg", self.p_missing_arg),
            ("p_uncited_claim", self.p_uncited_claim),
            ("p_premature_action", self.p_premature_action),
            ("p_false_citation", self.p_false_citation),
        ]
    }

    pub fn validate(&self) -> Result<(), FaultConfigError> {
        for (field, value) in self.probabilities() {
            if !(0.0..=1.0).contains(&value) {
                return Err(FaultConfigError { field, value });
            }
        }
        Ok(())
    }

    pub fn is_inert(&self) -> bool {
        self.probabilities().iter().all(|(_, p)| *p == 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    Duplicate,
    MissingArgument,
    UncitedComparison,
    /// A branch action while the cancellation is unevaluated or holds.
    PrematureBeforeCancellation,
    /// A branch action whose own condition does not hold.
    PrematureUnmetCondition,
    FalseCitation,
}

impl FaultKind {
    pub const ALL: [FaultKind; 6] = [
        FaultKind::Duplicate,
        FaultKind::MissingArgument,
        FaultKind::UncitedComparison,
        FaultKind::PrematureBeforeCancellation,
        FaultKind::PrematureUnmetCondition,
        FaultKind::FalseCitation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FaultKind::Duplicate => "duplicate",
            FaultKind::MissingArgument => "missing_argument",
            FaultKind::UncitedComparison => "uncited_comparison",
            FaultKind::PrematureBeforeCancellation => "premature_before_cancellation",
            FaultKind::PrematureUnmetCondition => "premature_unmet_condition",
            FaultKind::FalseCitation => "false_citation",
        }
    }
}

impl fmt::Display for FaultKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Ground truth for one injected fault, carried into the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultLabel {
    pub kind: FaultKind,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct FaultyProposer {
    base: ScriptedProposer,
    config: FaultConfig,
}

impl FaultyProposer {
    pub fn new(goal: GoalSpec, config: FaultConfig) -> Result<Self, FaultConfigError> {
        config.validate()?;
        Ok(Self {
            base: ScriptedProposer::new(goal),
            config,
        })
    }

    pub fn config(&self) -> &FaultConfig {
        &self.config
    }

    fn rng_for(&self, input: &CognitionInput) -> ChaCha8Rng {
        let digest = input.digest();
        let mix = u64::from_str_radix(&digest[..16], 16).expect("digest is hex");
        ChaCha8Rng::seed_from_u64(self.config.seed ^ mix)
    }

    fn inject(&self, kind_slot: usize, base: &Proposal, view: &FactView) -> Option<(Proposal, FaultLabel)> {
        let goal = self.base.goal();
        let call = base.call.as_ref()?;
        let label = |kind, detail: String| FaultLabel { kind, detail };
        match kind_slot {
            0 => {
                let fact = goal.required.iter().find(|f| GoalSpec::fact_observed(view, &f.key))?;
                let dup = fact.call.bind(view)?;
                let detail = format!("repeated {dup}");
                Some((Proposal::call(dup), label(FaultKind::Duplicate, detail)))
            }
            1 => {
                let stripped = ToolCall::new(&call.name);
                let detail = format!("dropped every argument of {}", call.name);
                Some((
                    Proposal { call: Some(stripped), ..base.clone() },
                    label(FaultKind::MissingArgument, detail),
                ))
            }
            2 => {
                if base.citations.is_empty() {
                    return None;
                }
                let detail = format!("stripped citations from {call}");
                Some((
                    Proposal { citations: Vec::new(), ..base.clone() },
                    label(FaultKind::UncitedComparison, detail),
                ))
            }
            3 => premature(goal, view),
            4 => {
                let mut p = base.clone();
                p.citations.push(PHANTOM_CITATION.parse().expect("valid key"));
                let detail = format!("cited {PHANTOM_CITATION}");
                Some((p, label(FaultKind::FalseCitation, detail)))
            }
            _ => None,
        }
    }
}

/// A branch action proposed before it is licensed.
fn premature(goal: &GoalSpec, view: &FactView) -> Option<(Proposal, FaultLabel)> {
    let cancellation = goal.cancellation_truth(view);
    let blocked_by_cancellation = matches!(cancellation, Some(Truth::Unknown) | Some(Truth::True));
    for branch in &goal.branches {
        if !blocked_by_cancellation && branch.truth(view) == Truth::True {
            continue;
        }
        for template in &branch.actions {
            if let Some(call) = template.bind(view) {
                let (kind, why) = if blocked_by_cancellation {
                    (FaultKind::PrematureBeforeCancellation, "before the cancellation was settled")
                } else {
                    (FaultKind::PrematureUnmetCondition, "while its condition does not hold")
                };
                let detail = format!("proposed {call} {why}");
                let citations: Vec<EvidenceExpr> = branch.citations();
                return Some((
                    Proposal::call(call).citing(citations),
                    FaultLabel { kind, detail },
                ));
            }
        }
    }
    None
}

impl Proposer for FaultyProposer {
    fn propose(&self, input: &CognitionInput) -> Result<Proposed, ProposerFailure> {
        let view = FactView::from_lines(&input.memory_facts);
        let base = self.base.plan(&view)?;
        if self.config.is_inert() || base.is_completion() {
            return Ok(base.into());
        }
        let mut rng = self.rng_for(input);
        let draws: Vec<f64> = (0..5).map(|_| rng.gen::<f64>()).collect();
        for (slot, ((_, p), u)) in self.config.probabilities().iter().zip(&draws).enumerate() {
            if *u < *p {
                if let Some((proposal, label)) = self.inject(slot, &base, &view) {
                    return Ok(Proposed {
                        proposal,
                        fault: Some(label),
                    });
                }
            }
        }
        Ok(base.into())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::goal::tests::two_city_goal;
    use proptest::prelude::*;

    fn input(facts: &[&str]) -> CognitionInput {
        CognitionInput {
            system_message: "s".into(),
            task_instruction: "t".into(),
            rules_text: String::new(),
            memory_facts: facts.iter().map(|s| s.to_string()).collect(),
            constraints: Vec::new(),
        }
    }

    fn only(kind: usize) -> FaultConfig {
        let mut c = FaultConfig::default();
        match kind {
            0 => c.p_duplicate = 1.0,
            1 => c.p_missing_arg = 1.0,
            2 => c.p_uncited_claim = 1.0,
            3 => c.p_premature_action = 1.0,
            _ => c.p_false_citation = 1.0,
        }
        c
    }

    const SEOUL: &str = "[Memory Fact] Seoul: temp_f=51.8, precipitation=false";
    const JEJU: &str = "[Memory Fact] Jeju: temp_f=60.8, precipitation=false";
    const SEOUL_RAIN: &str = "[Memory Fact] Seoul: temp_f=51.8, precipitation=true";

    #[test]
    fn duplicate_repeats_observed_gather() {
        let f = FaultyProposer::new(two_city_goal(), only(0)).unwrap();
        let out = f.propose(&input(&[SEOUL])).unwrap();
        assert_eq!(out.proposal.call, Some(ToolCall::new("get_weather").arg("location", "Seoul")));
        assert_eq!(out.fault.unwrap().kind, FaultKind::Duplicate);
        // nothing observed yet: not applicable
        assert!(f.propose(&input(&[])).unwrap().fault.is_none());
    }

    #[test]
    fn missing_argument_empties_the_call() {
        let f = FaultyProposer::new(two_city_goal(), only(1)).unwrap();
        let out = f.propose(&input(&[SEOUL, JEJU])).unwrap();
        assert_eq!(out.proposal.call, Some(ToolCall::new("book_flight")));
        assert_eq!(out.fault.unwrap().kind, FaultKind::MissingArgument);
    }

    #[test]
    fn uncited_comparison_needs_a_cited_base() {
        let f = FaultyProposer::new(two_city_goal(), only(2)).unwrap();
        assert!(f.propose(&input(&[SEOUL])).unwrap().fault.is_none());
        let out = f.propose(&input(&[SEOUL, JEJU])).unwrap();
        assert!(out.proposal.citations.is_empty());
        assert_eq!(out.fault.unwrap().kind, FaultKind::UncitedComparison);
    }

    #[test]
    fn premature_action_subtypes() {
        let f = FaultyProposer::new(two_city_goal(), only(3)).unwrap();
        // rain in Seoul, Jeju unknown: the cancellation is undecided
        let out = f.propose(&input(&[SEOUL_RAIN])).unwrap();
        assert_eq!(out.proposal.call.as_ref().unwrap().name, "book_flight");
        assert_eq!(out.fault.unwrap().kind, FaultKind::PrematureBeforeCancellation);
        // both known, branch true: nothing premature to propose
        assert!(f.propose(&input(&[SEOUL, JEJU])).unwrap().fault.is_none());
        let mut goal = two_city_goal();
        goal.branches.push(toml::from_str(
            r#"when = ["obs.Jeju.temp_f < obs.Seoul.temp_f"]
            actions = [{ name = "make_chart", args = { location = "Jeju" } }]"#,
        ).unwrap());
        let f = FaultyProposer::new(goal, only(3)).unwrap();
        let out = f.propose(&input(&[SEOUL, JEJU])).unwrap();
        assert_eq!(out.proposal.call.as_ref().unwrap().name, "make_chart");
        assert_eq!(out.fault.unwrap().kind, FaultKind::PrematureUnmetCondition);
    }

    #[test]
    fn false_citation_adds_phantom_key() {
        let f = FaultyProposer::new(two_city_goal(), only(4)).unwrap();
        let out = f.propose(&input(&[])).unwrap();
        assert_eq!(out.proposal.citations, vec![PHANTOM_CITATION.parse().unwrap()]);
    }

    #[test]
    fn completion_is_never_faulted() {
        let f = FaultyProposer::new(two_city_goal(), FaultConfig::uniform(3, 1.0)).unwrap();
        let done = "[Memory Fact] act.book_flight: status=executed, confirmation=ABC123";
        let out = f.propose(&input(&[SEOUL, JEJU, done])).unwrap();
        assert!(out.proposal.is_completion());
        assert!(out.fault.is_none());
    }

    #[test]
    fn invalid_probability_rejected() {
        let c = FaultConfig {
            p_duplicate: 1.5,
            ..FaultConfig::default()
        };
        assert!(FaultyProposer::new(two_city_goal(), c).is_err());
    }

    proptest! {
        #[test]
        fn zero_probabilities_match_scripted(seed in any::<u64>(), n in 0usize..3) {
            let facts = [SEOUL, JEJU];
            let inp = input(&facts[..n]);
            let f = FaultyProposer::new(two_city_goal(), FaultConfig { seed, ..FaultConfig::default() }).unwrap();
            let s = ScriptedProposer::new(two_city_goal());
            prop_assert_eq!(f.propose(&inp).unwrap(), s.propose(&inp).unwrap());
        }

        #[test]
        fn same_seed_same_faults(seed in any::<u64>(), p in 0.0f64..=1.0) {
            let inp = input(&[SEOUL]);
            let a = FaultyProposer::new(two_city_goal(), FaultConfig::uniform(seed, p)).unwrap();
            let b = FaultyProposer::new(two_city_goal(), FaultConfig::uniform(seed, p)).unwrap();
            prop_assert_eq!(a.propose(&inp).unwrap(), b.propose(&inp).unwrap());
        }
    }
}
