use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backends::{BackendError, BackendStack, RoleConfig};
use crate::eval::QaAggregation;
use crate::pipeline::{RunConfig, DEFAULT_MAX_EDIT_STEPS};
use crate::planner::{PlannerMode, PromptLibrary};

use super::RunError;

/// Which pipelines a run executes per prompt.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeSelection {
    Base,
    Grape,
    #[default]
    Both,
}

impl std::str::FromStr for ModeSelection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "base" => Ok(ModeSelection::Base),
            "grape" => Ok(ModeSelection::Grape),
            "both" => Ok(ModeSelection::Both),
            _ => Err(format!("unknown mode {s:?}; expected base, grape or both")),
        }
    }
}

fn default_label() -> String {
    "run".into()
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_jobs() -> usize {
    4
}
fn default_true() -> bool {
    true
}
fn default_runs_dir() -> PathBuf {
    "runs".into()
}
fn default_cache_dir() -> PathBuf {
    "cache".into()
}
fn default_max_steps() -> u32 {
    DEFAULT_MAX_EDIT_STEPS
}

/// The `[run]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_label")]
    pub label: String,
    #[serde(default)]
    pub mode: ModeSelection,
    #[serde(default)]
    pub planner_mode: PlannerMode,
    /// One run per seed; summaries report mean and standard deviation
    /// across seeds.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    #[serde(default = "default_max_steps")]
    pub max_edit_steps: u32,
    #[serde(default = "default_true")]
    pub score: bool,
    #[serde(default)]
    pub replan: bool,
    #[serde(default)]
    pub qa_aggregation: QaAggregation,
    #[serde(default = "default_runs_dir")]
    pub runs_dir: PathBuf,
    #[serde(default = "default_true")]
    pub cache: bool,
    #[serde(default = "default_cache_dir")]
    pub cache_dir: PathBuf,
    /// Directory of planner prompts and few-shot examples; the built-in
    /// library is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompts_dir: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        toml::from_str("").expect("all fields have defaults")
    }
}

impl RunSection {
    pub fn pipeline_config(&self, seed: u64) -> RunConfig {
        RunConfig {
            max_edit_steps: self.max_edit_steps,
            planner_mode: self.planner_mode,
            seed,
            replan: self.replan,
            qa_aggregation: self.qa_aggregation,
        }
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |m: &str| Err(RunError::Config(m.to_owned()));
        if self.jobs == 0 {
            return bad("jobs must be at least 1");
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty");
        }
        if self.label.is_empty() || self.label.contains(['/', '\\']) {
            return bad("label must be nonempty and contain no path separators");
        }
        Ok(())
    }
}

/// A whole configuration file: `[run]` plus one section per backend role.
/// Relative paths are resolved against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub run: RunSection,
    pub generator: RoleConfig,
    pub editor: RoleConfig,
    pub planner: RoleConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vqa: Option<RoleConfig>,
}

impl FileConfig {
    /// Reads TOML, or JSON when the file name ends in `.json`.
    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunError::Config(format!("reading {}: {e}", path.display())))?;
        let mut config: FileConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut config.run.runs_dir);
        resolve(&mut config.run.cache_dir);
        if let Some(p) = config.run.prompts_dir.as_mut() {
            resolve(p);
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), RunError> {
        self.run.validate()?;
        if self.run.score && self.vqa.is_none() {
            return Err(RunError::Config("scoring is enabled but there is no [vqa] section".into()));
        }
        Ok(())
    }

    /// The effective configuration as TOML. Holds no secrets, since keys
    /// are only ever named, never stored.
    pub fn snapshot(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn backends(&self) -> Result<BackendStack, BackendError> {
        BackendStack::from_configs(&self.generator, &self.editor, &self.planner, self.vqa.as_ref())
    }

    pub fn library(&self) -> Result<PromptLibrary, RunError> {
        match &self.run.prompts_dir {
            Some(dir) => PromptLibrary::load(dir).map_err(|e| RunError::Config(e.to_string())),
            None => Ok(PromptLibrary::builtin()),
        }
    }
}
