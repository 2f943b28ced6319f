//! Structured cognitive loop: cognition proposes, control validates against
//! explicit rules, the runtime executes, and an append-only memory records
//! every cycle so traces can be replayed and audited.

pub mod baseline;
pub mod cognition;
pub mod control;
pub mod episode;
pub mod memory;
pub mod regulation;
pub mod runtime;
pub mod scenario;
pub mod trace;

pub use baseline::{run_baseline_episode, ContextModel};
pub use episode::{run_episode, ConfigError, EpisodeConfig, EpisodeResult, EpisodeStatus, ProposerConfig};
pub use scenario::{Scenario, ScenarioError, ScenarioFile};
