//! State persistence accuracy (SPA), trace completeness (TC) and error
//! localization precision (ELP), computed from a trace alone.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::chain::{all_chains, ChainOutcome};
use super::{EpisodeTrace, Mode};
use crate::cognition::FaultKind;
use crate::control::{Verdict, DEDUP};
use crate::memory::Resolver;
use crate::regulation::{ARGS_COMPLETE, COND_EXEC, COND_PRIORITY, NUM_COMPARE};

/// A ratio that stays undefined (`ratio: null`) on an empty denominator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub numerator: u64,
    pub denominator: u64,
    pub ratio: Option<f64>,
}

impl Metric {
    pub fn new(numerator: u64, denominator: u64) -> Self {
        Self {
            numerator,
            denominator,
            ratio: (denominator > 0).then(|| numerator as f64 / denominator as f64),
        }
    }

    pub fn undefined() -> Self {
        Self::new(0, 0)
    }

    pub fn is_defined(&self) -> bool {
        self.ratio.is_some()
    }

    pub fn pooled(metrics: impl IntoIterator<Item = Metric>) -> Metric {
        let (n, d) = metrics
            .into_iter()
            .fold((0, 0), |(n, d), m| (n + m.numerator, d + m.denominator));
        Metric::new(n, d)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("trace carries no injected-fault labels")]
    MissingLabels,
}

/// Fault type → rule id that a correct rejection must cite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultMap(pub BTreeMap<FaultKind, String>);

impl Default for FaultMap {
    fn default() -> Self {
        Self(
            [
                (FaultKind::Duplicate, DEDUP),
                (FaultKind::MissingArgument, ARGS_COMPLETE),
                (FaultKind::UncitedComparison, NUM_COMPARE),
                (FaultKind::FalseCitation, NUM_COMPARE),
                (FaultKind::PrematureBeforeCancellation, COND_PRIORITY),
                (FaultKind::PrematureUnmetCondition, COND_EXEC),
            ]
            .into_iter()
            .map(|(k, r)| (k, r.to_string()))
            .collect(),
        )
    }
}

impl FaultMap {
    pub fn rule_for(&self, kind: FaultKind) -> Option<&str> {
        self.0.get(&kind).map(String::as_str)
    }
}

/// Cross-cycle consumptions whose value matched the authoritative store.
pub fn compute_spa(trace: &EpisodeTrace) -> Metric {
    let states = trace.states();
    let (mut num, mut den) = (0, 0);
    for (record, state) in trace.cycles.iter().zip(&states) {
        for c in &record.consumptions {
            let authoritative = state.resolve(&c.key);
            if authoritative.is_found() {
                den += 1;
                if c.consumed.same_as(&authoritative) {
                    num += 1;
                }
            }
        }
    }
    Metric::new(num, den)
}

/// Executed actions whose justification chain is complete.
pub fn compute_tc(trace: &EpisodeTrace) -> Metric {
    let chains = all_chains(trace);
    let complete = chains.iter().filter(|c| matches!(c, ChainOutcome::Complete(_))).count();
    Metric::new(complete as u64, chains.len() as u64)
}

pub fn compute_elp(trace: &EpisodeTrace) -> Result<Metric, MetricsError> {
    compute_elp_with(trace, &FaultMap::default())
}

/// Injected faults whose rejection cites the mapped rule.
pub fn compute_elp_with(trace: &EpisodeTrace, map: &FaultMap) -> Result<Metric, MetricsError> {
    if !trace.header.fault_injection {
        return Err(MetricsError::MissingLabels);
    }
    let (mut num, mut den) = (0, 0);
    for record in &trace.cycles {
        let Some(label) = &record.fault_label else { continue };
        den += 1;
        let expected = map.rule_for(label.kind);
        let cited = match record.decision.as_ref().map(|d| &d.verdict) {
            Some(Verdict::Rejected { violated_rule_ids, .. }) => {
                expected.is_some_and(|r| violated_rule_ids.iter().any(|id| id == r))
            }
            _ => false,
        };
        if cited {
            num += 1;
        }
    }
    Ok(Metric::new(num, den))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub mode: Mode,
    pub seed: u64,
    pub spa: Metric,
    pub tc: Metric,
    pub elp: Metric,
}

impl MetricsReport {
    pub fn from_trace(trace: &EpisodeTrace) -> Self {
        Self {
            scenario: trace.header.scenario.clone(),
            mode: trace.header.mode,
            seed: trace.header.seed,
            spa: compute_spa(trace),
            tc: compute_tc(trace),
            elp: compute_elp(trace).unwrap_or_else(|_| Metric::undefined()),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// One metric across many episodes: pooled counts and the mean of the
/// per-episode ratios that are defined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub pooled: Metric,
    pub mean: Option<f64>,
    pub defined_episodes: usize,
}

impl Aggregate {
    pub fn over(metrics: &[Metric]) -> Self {
        let defined: Vec<f64> = metrics.iter().filter_map(|m| m.ratio).collect();
        Self {
            pooled: Metric::pooled(metrics.iter().copied()),
            mean: (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64),
            defined_episodes: defined.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub episodes: usize,
    pub spa: Aggregate,
    pub tc: Aggregate,
    pub elp: Aggregate,
}

impl ModeSummary {
    pub fn over(reports: &[&MetricsReport]) -> Self {
        let pick = |f: fn(&MetricsReport) -> Metric| reports.iter().map(|r| f(r)).collect::<Vec<_>>();
        Self {
            episodes: reports.len(),
            spa: Aggregate::over(&pick(|r| r.spa)),
            tc: Aggregate::over(&pick(|r| r.tc)),
            elp: Aggregate::over(&pick(|r| r.elp)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn undefined_never_reads_as_one() {
        let m = Metric::new(0, 0);
        assert_eq!(m.ratio, None);
        assert_eq!(serde_json::to_string(&m).unwrap(), r#"{"numerator":0,"denominator":0,"ratio":null}"#);
        assert_eq!(Metric::new(3, 4).ratio, Some(0.75));
    }

    #[test]
    fn aggregation_skips_undefined_episodes() {
        let a = Aggregate::over(&[Metric::new(1, 1), Metric::undefined(), Metric::new(1, 2)]);
        assert_eq!(a.pooled, Metric::new(2, 3));
        assert_eq!(a.mean, Some(0.75));
        assert_eq!(a.defined_episodes, 2);
        let single = Aggregate::over(&[Metric::new(2, 4)]);
        assert_eq!(single.mean, Metric::new(2, 4).ratio);
        assert_eq!(single.pooled, Metric::new(2, 4));
    }

    #[test]
    fn fault_map_covers_every_kind() {
        let m = FaultMap::default();
        for k in FaultKind::ALL {
            assert!(m.rule_for(k).is_some(), "{k}");
        }
        assert_eq!(m.rule_for(FaultKind::Duplicate), Some("R-DEDUP"));
    }
}
