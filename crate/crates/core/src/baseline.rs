//! Prompt-centric baseline: the same proposer and tools, but no control
//! layer and no structured memory in the prompt. What the proposer sees is a
//! bounded FIFO context whose items are recalled with probability decaying
//! linearly with age.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cognition::facts::fact_entries;
use crate::cognition::{assemble_input, Proposed};
use crate::episode::{final_response, ConfigError, EpisodeConfig, EpisodeResult, EpisodeStatus};
use crate::memory::{KeyRoot, MemoryEntry, MemorySnapshot, MemoryStore};
use crate::runtime::{builtin_registry, Runtime};
use crate::trace::{consumptions, CycleRecord, EpisodeTrace, Mode};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContextModel {
    /// Maximum number of context items; oldest are evicted first.
    pub budget: usize,
    /// Per-cycle drop in recall probability.
    pub decay: f64,
    pub seed: u64,
}

impl ContextModel {
    /// Everything fits and nothing is forgotten.
    pub fn unconstrained(cfg: &EpisodeConfig) -> Self {
        Self {
            budget: cfg.goal.size().max(1),
            decay: 0.0,
            seed: cfg.seed,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !self.decay.is_finite() || self.decay < 0.0 {
            return Err(ConfigError::ContextModel(format!("decay must be a non-negative number, got {}", self.decay)));
        }
        Ok(())
    }

    pub fn recall_probability(&self, age: u32) -> f64 {
        (1.0 - self.decay * f64::from(age)).max(0.0)
    }
}

#[derive(Debug, Clone)]
struct Item {
    entry: MemoryEntry,
    added: u32,
}

/// Key-addressed FIFO: re-adding a key refreshes its slot.
#[derive(Debug, Default)]
struct Context {
    items: Vec<Item>,
}

impl Context {
    fn add(&mut self, entry: MemoryEntry, cycle: u32, budget: usize) {
        self.items.retain(|i| i.entry.key != entry.key);
        self.items.push(Item { entry, added: cycle });
        let excess = self.items.len().saturating_sub(budget);
        self.items.drain(..excess);
    }

    /// One recall draw per item, in slot order, from a (seed, cycle) stream.
    fn recall(&self, model: &ContextModel, cycle: u32) -> Vec<MemoryEntry> {
        let mut rng = ChaCha8Rng::seed_from_u64(model.seed ^ u64::from(cycle).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        self.items
            .iter()
            .filter(|i| {
                let u: f64 = rng.gen();
                u < model.recall_probability(cycle - i.added - 1)
            })
            .map(|i| i.entry.clone())
            .collect()
    }
}

fn remembered(e: &MemoryEntry) -> bool {
    e.key.root() != KeyRoot::Feedback
}

pub fn run_baseline_episode(cfg: &EpisodeConfig, model: &ContextModel) -> Result<EpisodeResult, ConfigError> {
    cfg.validate()?;
    model.validate()?;
    let proposer = cfg.proposer()?;
    let mut memory = MemoryStore::default();
    let init_delta = cfg.initialize(&mut memory)?;
    let goal_entries: Vec<MemoryEntry> = init_delta.iter().filter(|e| e.key.root() == KeyRoot::Goal).cloned().collect();
    let mut runtime = Runtime::new(builtin_registry(), cfg.world.clone(), cfg.seed);
    let mut context = Context::default();
    let mut records = Vec::new();
    let mut cycles_used = 0u32;

    let status = loop {
        if cycles_used >= cfg.max_cycles {
            break if cfg.goal.success(&memory.snapshot()) {
                EpisodeStatus::Completed
            } else {
                EpisodeStatus::BudgetExhausted
            };
        }
        let cycle = cycles_used + 1;
        let view = MemorySnapshot::from_entries(goal_entries.iter().cloned().chain(context.recall(model, cycle)));
        let input = assemble_input(&cfg.task, &view, &[], &cfg.ruleset);
        let log_len = memory.log().len();
        let mut record = CycleRecord {
            cycle,
            input_digest: input.digest(),
            proposal: None,
            proposer_error: None,
            decision: None,
            invocation: None,
            memory_delta: Vec::new(),
            fault_label: None,
            consumptions: Vec::new(),
        };
        let mut exit = None;
        match proposer.propose(&input) {
            Err(failure) => record.proposer_error = Some(failure),
            Ok(Proposed { proposal, fault }) => {
                record.fault_label = fault;
                record.consumptions = consumptions(&proposal, &cfg.goal, &view);
                match &proposal.call {
                    None => {
                        exit = Some(if cfg.goal.success(&memory.snapshot()) {
                            EpisodeStatus::Completed
                        } else {
                            EpisodeStatus::PartialCompletion
                        })
                    }
                    Some(call) => {
                        runtime.execute(call, cycle, &mut memory);
                        record.invocation = runtime.log().last().cloned();
                    }
                }
                record.proposal = Some(proposal);
            }
        }
        memory.commit_cycle();
        record.memory_delta = memory.committed_since(log_len).to_vec();
        let committed = MemorySnapshot::from_entries(record.memory_delta.iter().cloned());
        for e in fact_entries(&committed).filter(|e| remembered(e)) {
            context.add(e.clone(), cycle, model.budget);
        }
        records.push(record);
        cycles_used = cycle;
        if let Some(s) = exit {
            break s;
        }
    };

    let mut header = cfg.header(Mode::Baseline, init_delta);
    header.context_model = Some(*model);
    let snapshot = memory.snapshot();
    Ok(EpisodeResult {
        status,
        final_response: final_response(status, &cfg.goal, &snapshot),
        cycles_used,
        trace: EpisodeTrace { header, cycles: records },
        memory: memory.log().to_vec(),
        invocations: runtime.log().to_vec(),
        world: runtime.into_world(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episode::run_episode;
    use crate::episode::tests::{clear_world, two_city};
    use crate::memory::MemoryKey;
    use crate::trace::{compute_spa, compute_tc};

    fn keys(ctx: &Context) -> Vec<MemoryKey> {
        ctx.items.iter().map(|i| i.entry.key.clone()).collect()
    }

    fn entry(key: &str) -> MemoryEntry {
        MemoryEntry {
            key: key.parse().unwrap(),
            kind: crate::memory::EntryKind::Observation,
            payload: Default::default(),
            source: "get_weather".into(),
            timestamp: String::new(),
            version: 1,
        }
    }

    #[test]
    fn fifo_evicts_oldest_and_refreshes_on_readd() {
        let mut ctx = Context::default();
        ctx.add(entry("obs.A"), 1, 2);
        ctx.add(entry("obs.B"), 2, 2);
        ctx.add(entry("obs.A"), 3, 2);
        assert_eq!(keys(&ctx), ["obs.B".parse().unwrap(), "obs.A".parse().unwrap()]);
        ctx.add(entry("obs.C"), 4, 2);
        assert_eq!(keys(&ctx), ["obs.A".parse().unwrap(), "obs.C".parse().unwrap()]);
    }

    #[test]
    fn recall_decays_linearly() {
        let m = ContextModel {
            budget: 4,
            decay: 0.3,
            seed: 1,
        };
        assert_eq!(m.recall_probability(0), 1.0);
        assert!((m.recall_probability(2) - 0.4).abs() < 1e-12);
        assert_eq!(m.recall_probability(4), 0.0);
    }

    #[test]
    fn unconstrained_baseline_matches_scl_outcome() {
        let cfg = two_city(clear_world());
        let scl = run_episode(&cfg).unwrap();
        let base = run_baseline_episode(&cfg, &ContextModel::unconstrained(&cfg)).unwrap();
        assert_eq!(base.status, scl.status);
        assert_eq!(base.cycles_used, scl.cycles_used);
        assert_eq!(base.invocations, scl.invocations);
        assert_eq!(base.world, scl.world);
        assert_eq!(compute_spa(&base.trace).ratio, Some(1.0));
        assert_eq!(compute_tc(&base.trace).ratio, Some(0.0));
    }

    #[test]
    fn tight_context_forgets_and_regathers() {
        let cfg = two_city(clear_world());
        let model = ContextModel {
            budget: 1,
            decay: 0.0,
            seed: 3,
        };
        let base = run_baseline_episode(&cfg, &model).unwrap();
        let gathers = base.invocations.iter().filter(|i| i.tool == "get_weather").count();
        assert!(gathers > 2, "expected repeated gathers, got {gathers}");
        assert_ne!(base.status, EpisodeStatus::Completed);
        assert!(compute_spa(&base.trace).ratio.unwrap() < 1.0);
    }

    #[test]
    fn negative_decay_is_rejected() {
        let cfg = two_city(clear_world());
        let model = ContextModel {
            budget: 2,
            decay: -0.1,
            seed: 0,
        };
        assert!(matches!(run_baseline_episode(&cfg, &model), Err(ConfigError::ContextModel(_))));
    }
}
