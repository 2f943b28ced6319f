//! Scenario files (TOML) and the generated evaluation suite.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::baseline::ContextModel;
use crate::cognition::{FaultConfig, TaskContext};
use crate::control::goal::{ArgTemplate, Branch, CallTemplate, GoalSpec, RequiredFact};
use crate::episode::{default_max_cycles, object, ConfigError, EpisodeConfig, ProposerConfig, DEFAULT_SYSTEM_MESSAGE};
use crate::memory::MemoryKey;
use crate::regulation::{load_ruleset_file, RegulationError, RuleSet};
use crate::runtime::{ErrorCode, WorldState};

/// Baseline context settings; unset fields fall back to
/// `budget = required facts − 1` and `decay = 0.3`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay: Option<f64>,
}

pub const DEFAULT_BASELINE_DECAY: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_cycles: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    pub task: String,
    /// Rule config path, relative to the scenario file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ruleset: Option<PathBuf>,
    /// `name = "statement"` pairs committed as `goal.<name>`.
    #[serde(default)]
    pub context: BTreeMap<String, String>,
    pub goal: GoalSpec,
    #[serde(default)]
    pub world: WorldState,
    #[serde(default = "scripted")]
    pub proposer: ProposerConfig,
    #[serde(default)]
    pub baseline: BaselineSection,
}

fn default_seed() -> u64 {
    1
}

fn scripted() -> ProposerConfig {
    ProposerConfig::Scripted
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("{path}: {reason}")]
    Parse { path: String, reason: String },
    #[error("{path}: {source}")]
    Rules {
        path: String,
        #[source]
        source: RegulationError,
    },
    #[error("{path}: {source}")]
    Config {
        path: String,
        #[source]
        source: ConfigError,
    },
}

/// A parsed scenario with its rule config resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub rules: RuleSet,
    pub path: Option<PathBuf>,
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let mut s = Self::parse(&text, path.parent().unwrap_or(Path::new(".")), &path.display().to_string())?;
        s.path = Some(path.to_path_buf());
        Ok(s)
    }

    /// Parses scenario text; `base` anchors a relative ruleset path and
    /// `label` names the source in errors.
    pub fn parse(text: &str, base: &Path, label: &str) -> Result<Self, ScenarioError> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| ScenarioError::Parse {
            path: label.to_string(),
            reason: e.to_string(),
        })?;
        let rules = match &file.ruleset {
            None => RuleSet::default_rules(),
            Some(p) => load_ruleset_file(base.join(p)).map_err(|source| ScenarioError::Rules {
                path: label.to_string(),
                source,
            })?,
        };
        let s = Self { file, rules, path: None };
        s.episode(s.file.seed).map_err(|source| ScenarioError::Config {
            path: label.to_string(),
            source,
        })?;
        Ok(s)
    }

    pub fn name(&self) -> &str {
        &self.file.name
    }

    /// The episode this scenario defines under `seed`; the seed drives
    /// latencies, fault injection and baseline recall alike.
    pub fn episode(&self, seed: u64) -> Result<EpisodeConfig, ConfigError> {
        let f = &self.file;
        let mut context = BTreeMap::new();
        for (name, statement) in &f.context {
            let key = MemoryKey::new(["goal", name.as_str()]).map_err(|_| ConfigError::ContextKey(format!("goal.{name}")))?;
            context.insert(key, object(json!({ "statement": statement })));
        }
        let proposer = match f.proposer {
            ProposerConfig::Scripted => ProposerConfig::Scripted,
            ProposerConfig::Faulty(fc) => ProposerConfig::Faulty(FaultConfig { seed, ..fc }),
        };
        let cfg = EpisodeConfig {
            name: f.name.clone(),
            task: TaskContext {
                system_message: f.system.clone().unwrap_or_else(|| DEFAULT_SYSTEM_MESSAGE.to_string()),
                task_instruction: f.task.clone(),
            },
            context,
            goal: f.goal.clone(),
            ruleset: self.rules.clone(),
            proposer,
            world: f.world.clone(),
            max_cycles: f.max_cycles.unwrap_or_else(|| default_max_cycles(&f.goal)),
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn context_model(&self, seed: u64) -> ContextModel {
        ContextModel {
            budget: self
                .file
                .baseline
                .budget
                .unwrap_or_else(|| self.file.goal.required.len().saturating_sub(1)),
            decay: self.file.baseline.decay.unwrap_or(DEFAULT_BASELINE_DECAY),
            seed,
        }
    }
}

/// Every `*.toml` scenario in `dir`, sorted by scenario name.
pub fn load_dir(dir: impl AsRef<Path>) -> Result<Vec<Scenario>, ScenarioError> {
    let dir = dir.as_ref();
    let io = |e: std::io::Error| ScenarioError::Io {
        path: dir.display().to_string(),
        reason: e.to_string(),
    };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(io)?;
    paths.retain(|p| p.extension().is_some_and(|x| x == "toml"));
    paths.sort();
    let mut out = paths.iter().map(Scenario::load).collect::<Result<Vec<_>, _>>()?;
    out.sort_by(|a, b| a.name().cmp(b.name()));
    if out.is_empty() {
        return Err(ScenarioError::Io {
            path: dir.display().to_string(),
            reason: "no .toml scenarios found".into(),
        });
    }
    Ok(out)
}

pub fn render(file: &ScenarioFile) -> String {
    toml::to_string_pretty(file).expect("scenario serializes")
}

pub const SUITE_SEED: u64 = 20_250_101;
pub const SUITE_SIZE: usize = 50;
const CITIES: [&str; 16] = [
    "Seoul", "Jeju", "Busan", "Tokyo", "Osaka", "Paris", "Lyon", "Oslo", "Rome", "Milan", "Lima", "Quito", "Cairo",
    "Delhi", "Hanoi", "Dublin",
];

fn gather(city: &str) -> RequiredFact {
    RequiredFact {
        key: MemoryKey::new(["obs", city]).expect("city names are valid segments"),
        call: CallTemplate {
            name: "get_weather".into(),
            args: [("location".to_string(), ArgTemplate::Literal(json!(city)))].into(),
        },
    }
}

fn literal_call(tool: &str, args: &[(&str, &str)]) -> CallTemplate {
    CallTemplate {
        name: tool.into(),
        args: args
            .iter()
            .map(|(k, v)| (k.to_string(), ArgTemplate::Literal(json!(v))))
            .collect(),
    }
}

/// Branch that fires when `city` is strictly colder than every other city.
fn coldest_branch(city: &str, cities: &[&str], cite: &str, action: CallTemplate) -> Branch {
    Branch {
        when: cities
            .iter()
            .filter(|c| **c != city)
            .map(|c| format!("obs.{city}.temp_f < obs.{c}.temp_f").parse().expect("valid comparison"))
            .collect(),
        cite: vec![format!("goal.{cite}").parse().expect("valid key")],
        claim: Some(format!("{city} is the coldest")),
        actions: vec![action],
    }
}

/// Deterministic 50-scenario suite: 2–4 cities, three goal families,
/// decoy branches, all-rain cancellations, transient tool faults and a
/// share of fault-injecting proposers.
pub fn generate_suite() -> Vec<ScenarioFile> {
    (0..SUITE_SIZE).map(generate_one).collect()
}

fn generate_one(i: usize) -> ScenarioFile {
    let mut rng = ChaCha8Rng::seed_from_u64(SUITE_SEED + i as u64);
    let n = rng.gen_range(2..=4);
    let cities: Vec<&str> = CITIES.choose_multiple(&mut rng, n).copied().collect();
    let all_rain = i % 5 == 4;
    let mut world = WorldState::default();
    for c in &cities {
        let temp = (rng.gen_range(300..900) as f64) / 10.0;
        let rain = all_rain || rng.gen_bool(0.3);
        world = world.with_weather(c, temp, rain);
    }
    if i % 7 == 2 {
        world = world.with_fault("get_weather", 1, ErrorCode::TransientFailure);
    }

    let family = ["colder_book", "colder_chart", "compare_book"][i % 3];
    let mut context = BTreeMap::new();
    context.insert("plan".to_string(), format!("Act on the weather in {}", cities.join(", ")));
    let cancellation = Branch {
        when: cities
            .iter()
            .map(|c| format!("obs.{c}.precipitation == true").parse().expect("valid comparison"))
            .collect(),
        cite: vec!["goal.cancel".parse().expect("valid key")],
        claim: Some("rain everywhere".into()),
        actions: vec![literal_call(
            "send_email",
            &[("to", "team@example.com"), ("subject", "Trip cancelled")],
        )],
    };
    context.insert("cancel".to_string(), "If it rains everywhere, email the team instead".to_string());

    let branches = match family {
        "compare_book" => {
            context.insert("compare".to_string(), "Compare temperatures, then book the colder city".to_string());
            vec![Branch {
                when: vec![],
                cite: vec!["goal.compare".parse().expect("valid key")],
                claim: Some("compare, then book the colder city".into()),
                actions: vec![
                    CallTemplate {
                        name: "compare_temperatures".into(),
                        args: cities
                            .iter()
                            .map(|c| {
                                (c.to_string(), ArgTemplate::FromMemory(format!("obs.{c}.temp_f").parse().expect("valid key")))
                            })
                            .collect(),
                    },
                    CallTemplate {
                        name: "book_flight".into(),
                        args: [(
                            "location".to_string(),
                            ArgTemplate::FromMemory("act.compare_temperatures.colder".parse().expect("valid key")),
                        )]
                        .into(),
                    },
                ],
            }]
        }
        _ => {
            let (primary, decoy) = if family == "colder_book" {
                ("book_flight", "make_chart")
            } else {
                ("make_chart", "book_flight")
            };
            context.insert("coldest".to_string(), format!("Use {primary} for the coldest city"));
            let picks: Vec<&str> = cities.choose_multiple(&mut rng, 2).copied().collect();
            let mut b = vec![coldest_branch(
                picks[0],
                &cities,
                "coldest",
                literal_call(primary, &[("location", picks[0])]),
            )];
            if rng.gen_bool(0.5) {
                b.push(coldest_branch(
                    picks[1],
                    &cities,
                    "coldest",
                    literal_call(decoy, &[("location", picks[1])]),
                ));
            }
            b
        }
    };

    let proposer = if i % 4 == 3 {
        ProposerConfig::Faulty(FaultConfig::uniform(0, 0.15))
    } else {
        ProposerConfig::Scripted
    };
    ScenarioFile {
        name: format!("s{i:02}_{family}_{}", cities.len()),
        seed: 1,
        max_cycles: None,
        system: None,
        task: format!(
            "Check the weather in {}. Unless it rains everywhere, act on the coldest city as the goal describes.",
            cities.join(", ")
        ),
        ruleset: None,
        context,
        goal: GoalSpec {
            required: cities.iter().map(|c| gather(c)).collect(),
            cancellation: Some(cancellation),
            branches,
        },
        world,
        proposer,
        baseline: BaselineSection {
            budget: Some(n - 1),
            decay: Some(DEFAULT_BASELINE_DECAY),
        },
    }
}

/// Writes the suite as `<name>.toml` files; returns the written paths.
pub fn write_suite(dir: impl AsRef<Path>) -> std::io::Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    generate_suite()
        .iter()
        .map(|s| {
            let p = dir.join(format!("{}.toml", s.name));
            std::fs::write(&p, render(s)).map(|_| p)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_scenarios_are_valid_and_round_trip() {
        for s in generate_suite() {
            let text = render(&s);
            let parsed = Scenario::parse(&text, Path::new("."), &s.name).unwrap_or_else(|e| panic!("{e}\n{text}"));
            assert_eq!(parsed.file, s);
        }
    }

    #[test]
    fn suite_is_deterministic_with_unique_names() {
        let a = generate_suite();
        assert_eq!(a, generate_suite());
        let mut names: Vec<_> = a.iter().map(|s| s.name.clone()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), SUITE_SIZE);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = Scenario::parse("name = \"x\"\ntask = 3\n", Path::new("."), "bad.toml").unwrap_err();
        let msg = err.to_string();
        assert!(msg.starts_with("bad.toml:"), "{msg}");
        assert!(msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn unknown_goal_tool_is_a_config_error() {
        let text = r#"
name = "x"
task = "t"
[[goal.required]]
key = "obs.Seoul"
call = { name = "get_forecast", args = { location = "Seoul" } }
"#;
        assert!(matches!(
            Scenario::parse(text, Path::new("."), "x").unwrap_err(),
            ScenarioError::Config { .. }
        ));
    }
}
