//! Run configuration: a TOML file merged over per-task defaults.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use scaffold_core::bandit::Landscape;
use scaffold_core::curriculum::CurriculumConfig;
use scaffold_core::envs::{EnvConfig, TaskKind};
use scaffold_core::geometry::{ActionBox, MetricKind};
use scaffold_core::innerloop::TrainConfig;
use scaffold_core::orchestrator::OuterConfig;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub rounds: usize,
    /// Bandit horizon T^f.
    pub horizon: usize,
    pub h: f64,
    pub metric: MetricKind,
    pub action_box: ActionBox,
    pub landscape: Landscape,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            rounds: 5000,
            horizon: 5000,
            h: 0.05,
            metric: MetricKind::ScaledLinf,
            action_box: ActionBox::unit(1),
            landscape: Landscape::unit_step(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    /// Environment steps per condition and seed.
    pub budget: usize,
    pub seeds: Vec<u64>,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            budget: 40_000,
            seeds: vec![0, 1, 2],
        }
    }
}

/// Every setting a command reads, resolved against the task's defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub task: TaskKind,
    pub env: EnvConfig,
    pub train: TrainConfig,
    pub bandit_bench: BenchConfig,
    pub outer: OuterConfig,
    pub curriculum: CurriculumConfig,
    pub compare: CompareConfig,
}

const SECTIONS: [&str; 6] = ["env", "train", "bandit_bench", "outer", "curriculum", "compare"];

impl RunConfig {
    pub fn defaults(task: TaskKind) -> Self {
        let env = EnvConfig::for_task(task);
        let outer = OuterConfig::for_env(&env);
        Self {
            seed: 0,
            task,
            env,
            train: TrainConfig::default(),
            bandit_bench: BenchConfig::default(),
            outer,
            curriculum: CurriculumConfig::default(),
            compare: CompareConfig::default(),
        }
    }

    /// Reads `path` (if any) and merges it over the defaults of the task
    /// named by `task`, else by the file's `task` key, else Insertion.
    pub fn load(path: Option<&Path>, task: Option<TaskKind>) -> Result<Self, CliError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml(&text, task)
    }

    pub fn from_toml(text: &str, task: Option<TaskKind>) -> Result<Self, CliError> {
        let user: Table = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::Config(format!("config is not valid TOML: {e}")))?;
        for key in user.keys() {
            if key != "seed" && key != "task" && !SECTIONS.contains(&key.as_str()) {
                return Err(CliError::Config(format!(
                    "unknown config key `{key}` (expected seed, task or one of [{}])",
                    SECTIONS.join("], [")
                )));
            }
        }
        let file_task = match user.get("task") {
            Some(Value::String(s)) => Some(TaskKind::parse(s).ok_or_else(|| unknown_task(s))?),
            Some(_) => return Err(CliError::Config("config key `task` must be a string".into())),
            None => None,
        };
        let task = task.or(file_task).unwrap_or(TaskKind::Insertion);

        let mut merged = Table::try_from(Self::defaults(task))
            .map_err(|e| CliError::Config(format!("cannot encode defaults: {e}")))?;
        merge(&mut merged, user, "")?;
        merged.insert("task".into(), Value::String(task.name().into()));
        if let Some(Value::Table(env)) = merged.get_mut("env") {
            env.insert("kind".into(), Value::String(task.name().into()));
        }

        let seed = match merged.get("seed") {
            Some(Value::Integer(i)) if *i >= 0 => *i as u64,
            _ => return Err(CliError::Config("config key `seed` must be a non-negative integer".into())),
        };
        let cfg = Self {
            seed,
            task,
            env: section(&merged, "env")?,
            train: section(&merged, "train")?,
            bandit_bench: section(&merged, "bandit_bench")?,
            outer: section(&merged, "outer")?,
            curriculum: section(&merged, "curriculum")?,
            compare: section(&merged, "compare")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        fn ctx(name: &'static str) -> impl Fn(scaffold_core::Error) -> CliError {
            move |e| CliError::Config(format!("[{name}] {e}"))
        }
        self.env.validate().map_err(ctx("env"))?;
        self.train.validate().map_err(ctx("train"))?;
        self.outer.validate().map_err(ctx("outer"))?;
        self.curriculum.schedule.validate().map_err(ctx("curriculum"))?;
        self.bandit_bench.landscape.validate().map_err(ctx("bandit_bench"))?;
        if self.bandit_bench.landscape.dims() != self.bandit_bench.action_box.dims() {
            return Err(CliError::Config(
                "[bandit_bench] landscape and action_box dimensions differ".into(),
            ));
        }
        Ok(())
    }

    /// The resolved configuration as TOML; loading it back gives the same
    /// configuration.
    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Runtime(format!("cannot encode config: {e}")))
    }
}

fn unknown_task(name: &str) -> CliError {
    let names: Vec<&str> = TaskKind::ALL.iter().map(|k| k.name()).collect();
    CliError::Config(format!("unknown task `{name}` (valid tasks: {})", names.join(", ")))
}

/// Tables merge key by key; anything else replaces the default. Keys the
/// defaults lack are kept and left to the section's own validation.
fn merge(base: &mut Table, user: Table, prefix: &str) -> Result<(), CliError> {
    for (k, v) in user {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(u)) => merge(b, u, &path)?,
            (Some(Value::Table(_)), _) if !prefix.is_empty() || SECTIONS.contains(&k.as_str()) => {
                return Err(CliError::Config(format!("config key `{path}` must be a table")));
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
    Ok(())
}

fn section<T: DeserializeOwned>(merged: &Table, name: &str) -> Result<T, CliError> {
    let v = merged.get(name).cloned().unwrap_or(Value::Table(Table::new()));
    v.try_into().map_err(|e: toml::de::Error| CliError::Config(format!("[{name}] {}", e.message())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::from_toml("", None).unwrap();
        assert_eq!(cfg, RunConfig::defaults(TaskKind::Insertion));
    }

    #[test]
    fn overrides_merge_into_sections() {
        let cfg = RunConfig::from_toml("seed = 7\n[train]\nactor_lr = 0.002\n[outer]\nouter_rounds = 5\n", None).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.train.actor_lr, 0.002);
        assert_eq!(cfg.train.critic_lr, TrainConfig::default().critic_lr);
        assert_eq!(cfg.outer.outer_rounds, 5);
        assert_eq!(cfg.outer.h, RunConfig::defaults(TaskKind::Insertion).outer.h);
    }

    #[test]
    fn task_flag_beats_file() {
        let cfg = RunConfig::from_toml("task = \"wrench\"", None).unwrap();
        assert_eq!(cfg.task, TaskKind::Wrench);
        assert_eq!(cfg.env.kind, TaskKind::Wrench);
        let cfg = RunConfig::from_toml("task = \"wrench\"", Some(TaskKind::SdInsertion)).unwrap();
        assert_eq!(cfg.env, EnvConfig::sd_insertion());
    }

    #[test]
    fn errors_name_the_key() {
        let msg = |t: &str| RunConfig::from_toml(t, None).unwrap_err().to_string();
        assert!(msg("[train]\nlearning_rate = 1.0").contains("learning_rate"));
        assert!(msg("[trian]\n").contains("trian"));
        assert!(msg("[outer]\nouter_rounds = \"many\"").contains("[outer]"));
        assert!(msg("[outer]\nouter_rounds = 0").contains("outer_rounds"));
        assert!(msg("task = \"drill\"").contains("insertion, wrench, sd-insertion"));
        assert!(matches!(RunConfig::from_toml("seed = ", None), Err(CliError::Config(_))));
    }

    #[test]
    fn snapshot_round_trips() {
        let cfg = RunConfig::from_toml("seed = 3\n[outer]\ninner_seed = 4\n", Some(TaskKind::Wrench)).unwrap();
        let again = RunConfig::from_toml(&cfg.to_toml().unwrap(), None).unwrap();
        assert_eq!(again, cfg);
    }
}
