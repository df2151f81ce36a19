//! Run and hierarchy configuration files.
//!
//! Both files are TOML. The run config gathers everything an operator can
//! turn: workspace location, objective, backend selection, window size,
//! consolidation cadence, budgets, and the evaluation parameters. The
//! hierarchy file declares the agent tree.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::OverflowBehavior;
use crate::context::{CONTEXT_BUDGET_MIN, DEFAULT_WINDOW_CAPACITY};
use crate::engine::ExecutionMode;
use crate::error::ConfigError;
use crate::hierarchy::{AgentSpec, Level};
use crate::util::sha256_hex;
use crate::workspace::SNAPSHOT_BUDGET_MIN;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub task: TaskSection,
    pub hierarchy: HierarchySection,
    pub backend: BackendSection,
    #[serde(default)]
    pub limits: LimitsSection,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskSection {
    pub workspace_root: PathBuf,
    pub task_id: String,
    pub objective: String,
    /// Defaults to the single alpha-level agent in the hierarchy.
    #[serde(default)]
    pub root_agent: Option<String>,
    #[serde(default = "default_mode")]
    pub mode: ExecutionMode,
    /// Local corpus for search and corpus-sourced documents.
    #[serde(default)]
    pub corpus_dir: Option<PathBuf>,
}

fn default_mode() -> ExecutionMode {
    ExecutionMode::FileCentric
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HierarchySection {
    pub file: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendSection {
    pub kind: BackendKind,
    /// Mock backends: path to the policy JSON.
    #[serde(default)]
    pub policy_file: Option<PathBuf>,
    /// HTTP backends: endpoint URL and model id.
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
}

fn default_timeout() -> u64 {
    60
}

fn default_retries() -> u32 {
    3
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LimitsSection {
    #[serde(default = "default_window")]
    pub window_capacity: usize,
    #[serde(default = "default_interval")]
    pub consolidation_interval: u64,
    #[serde(default = "default_max_response")]
    pub max_response: usize,
    #[serde(default = "default_read_cap")]
    pub read_cap: usize,
    /// Testing hook: interrupt cleanly after this many global steps.
    #[serde(default)]
    pub interrupt_after: Option<u64>,
}

fn default_window() -> usize {
    DEFAULT_WINDOW_CAPACITY
}

fn default_interval() -> u64 {
    25
}

fn default_max_response() -> usize {
    4096
}

fn default_read_cap() -> usize {
    4096
}

impl Default for LimitsSection {
    fn default() -> Self {
        Self {
            window_capacity: default_window(),
            consolidation_interval: default_interval(),
            max_response: default_max_response(),
            read_cap: default_read_cap(),
            interrupt_after: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSection {
    #[serde(default = "default_n_items")]
    pub n_items: usize,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_context_limit")]
    pub context_limit: usize,
    #[serde(default = "default_overflow")]
    pub on_overflow: OverflowBehavior,
    #[serde(default = "default_context_budget")]
    pub context_budget: usize,
    #[serde(default = "default_summary_min")]
    pub per_item_summary_min: usize,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_n_items() -> usize {
    80
}

fn default_runs() -> usize {
    10
}

fn default_seed() -> u64 {
    42
}

fn default_context_limit() -> usize {
    16_384
}

fn default_overflow() -> OverflowBehavior {
    OverflowBehavior::TruncateHead
}

fn default_context_budget() -> usize {
    8192
}

fn default_summary_min() -> usize {
    1
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("reports")
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            n_items: default_n_items(),
            runs: default_runs(),
            seed: default_seed(),
            context_limit: default_context_limit(),
            on_overflow: default_overflow(),
            context_budget: default_context_budget(),
            per_item_summary_min: default_summary_min(),
            out_dir: default_out_dir(),
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|e| ConfigError::Unreadable {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let config: RunConfig = toml::from_str(&raw).map_err(|e| ConfigError::Unparseable {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.task.task_id.is_empty() {
            return Err(ConfigError::Invalid("task_id is empty".into()));
        }
        if self.limits.window_capacity < 1 {
            return Err(ConfigError::Invalid("window_capacity must be >= 1".into()));
        }
        if self.limits.consolidation_interval < 1 {
            return Err(ConfigError::Invalid(
                "consolidation_interval must be >= 1".into(),
            ));
        }
        if self.eval.context_budget < CONTEXT_BUDGET_MIN {
            return Err(ConfigError::Invalid(format!(
                "eval context_budget below minimum {CONTEXT_BUDGET_MIN}"
            )));
        }
        match self.backend.kind {
            BackendKind::Mock => {
                if self.backend.policy_file.is_none() {
                    return Err(ConfigError::Invalid(
                        "mock backend requires policy_file".into(),
                    ));
                }
            }
            BackendKind::Http => {
                if self.backend.endpoint.is_none() || self.backend.model.is_none() {
                    return Err(ConfigError::Invalid(
                        "http backend requires endpoint and model".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// One agent entry in the hierarchy file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentEntry {
    pub id: String,
    pub level: Level,
    #[serde(default)]
    pub role_preamble: String,
    #[serde(default)]
    pub allowed_tools: Vec<String>,
    #[serde(default)]
    pub step_limit: Option<u64>,
    #[serde(default)]
    pub context_budget: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HierarchyFile {
    #[serde(rename = "agent")]
    pub agents: Vec<AgentEntry>,
}

/// Loaded hierarchy: the specs plus the file digest recorded in run
/// metadata (resume warns when it changes).
#[derive(Debug, Clone)]
pub struct LoadedHierarchy {
    pub specs: Vec<AgentSpec>,
    pub digest: String,
}

pub fn load_hierarchy(path: impl AsRef<Path>) -> Result<LoadedHierarchy, ConfigError> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path).map_err(|e| ConfigError::Unreadable {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let file: HierarchyFile = toml::from_str(&raw).map_err(|e| ConfigError::Unparseable {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    if file.agents.is_empty() {
        return Err(ConfigError::Invalid("hierarchy declares no agents".into()));
    }
    let mut specs = Vec::new();
    for entry in file.agents {
        let mut spec = AgentSpec::new(entry.id, entry.level).with_preamble(entry.role_preamble);
        spec.allowed_tools = entry.allowed_tools.into_iter().collect::<BTreeSet<_>>();
        if let Some(limit) = entry.step_limit {
            spec.step_limit = limit;
        }
        if let Some(budget) = entry.context_budget {
            if budget < CONTEXT_BUDGET_MIN || budget / 2 < SNAPSHOT_BUDGET_MIN {
                return Err(ConfigError::Invalid(format!(
                    "agent {:?} context_budget {budget} below minimum {CONTEXT_BUDGET_MIN}",
                    spec.agent_id
                )));
            }
            spec.context_budget = budget;
        }
        specs.push(spec);
    }
    Ok(LoadedHierarchy { digest: sha256_hex(raw.as_bytes()), specs })
}

/// Pick the run's root agent: the configured one, or the single alpha.
pub fn resolve_root_agent(
    specs: &[AgentSpec],
    configured: Option<&str>,
) -> Result<String, ConfigError> {
    if let Some(id) = configured {
        if specs.iter().any(|s| s.agent_id == id) {
            return Ok(id.to_string());
        }
        return Err(ConfigError::Invalid(format!(
            "root_agent {id:?} not present in the hierarchy"
        )));
    }
    let alphas: Vec<&AgentSpec> = specs.iter().filter(|s| s.level == Level::Alpha).collect();
    match alphas.as_slice() {
        [only] => Ok(only.agent_id.clone()),
        [] => Err(ConfigError::Invalid("hierarchy has no alpha agent".into())),
        _ => Err(ConfigError::Invalid(
            "hierarchy has several alpha agents; set task.root_agent".into(),
        )),
    }
}
