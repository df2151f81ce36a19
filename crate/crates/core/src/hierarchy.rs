//! The three-level agent hierarchy and its validation.
//!
//! Agents form a capability DAG: an agent's `allowed_tools` may name plain
//! tools or lower-level agents (agent-as-a-tool). Level direction is strict,
//! so delegation depth can never exceed the number of levels. Execution over
//! this structure is strictly serial; see the engine module.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

/// Hierarchy levels, highest orchestrates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Atomic,
    Domain,
    Alpha,
}

impl Level {
    pub fn rank(&self) -> u8 {
        match self {
            Level::Atomic => 1,
            Level::Domain => 2,
            Level::Alpha => 3,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Level::Atomic => "atomic",
            Level::Domain => "domain",
            Level::Alpha => "alpha",
        }
    }

    /// Default step limit per level.
    pub fn default_step_limit(&self) -> u64 {
        match self {
            Level::Alpha => 200,
            Level::Domain => 100,
            Level::Atomic => 20,
        }
    }
}

/// Static definition of one agent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentSpec {
    pub agent_id: String,
    pub level: Level,
    pub role_preamble: String,
    /// Tool names and/or lower-level agent ids this agent may call.
    pub allowed_tools: BTreeSet<String>,
    pub step_limit: u64,
    pub context_budget: usize,
}

impl AgentSpec {
    pub fn new(agent_id: impl Into<String>, level: Level) -> Self {
        Self {
            agent_id: agent_id.into(),
            level,
            role_preamble: String::new(),
            allowed_tools: BTreeSet::new(),
            step_limit: level.default_step_limit(),
            context_budget: 8192,
        }
    }

    pub fn with_preamble(mut self, preamble: impl Into<String>) -> Self {
        self.role_preamble = preamble.into();
        self
    }

    pub fn with_tools<I, S>(mut self, tools: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.allowed_tools = tools.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_step_limit(mut self, limit: u64) -> Self {
        self.step_limit = limit;
        self
    }

    pub fn with_context_budget(mut self, budget: usize) -> Self {
        self.context_budget = budget;
        self
    }
}

/// How one agent invocation ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeStatus {
    Done,
    Failed,
    StepLimitReached,
    /// Stopped by an external interruption request; resumable.
    Interrupted,
}

/// Result of running one agent invocation to completion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentOutcome {
    pub status: OutcomeStatus,
    pub result_summary: String,
    pub steps_used: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeStatus {
    Pending,
    Running,
    Done,
    Failed,
}

/// One delegated objective in the task tree.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskNode {
    pub node_id: String,
    pub parent_id: Option<String>,
    pub objective: String,
    pub assigned_agent: String,
    pub status: NodeStatus,
    pub result_summary: String,
}

/// The tree of task instances produced by delegation during one run.
/// Serial execution keeps at most one node running at any instant.
#[derive(Debug, Default, Clone)]
pub struct TaskTree {
    nodes: Vec<TaskNode>,
}

impl TaskTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn nodes(&self) -> &[TaskNode] {
        &self.nodes
    }

    /// Open a node in `Running` state and return its id.
    pub fn open(
        &mut self,
        parent_id: Option<&str>,
        objective: &str,
        assigned_agent: &str,
    ) -> String {
        let node_id = format!("n{:04}", self.nodes.len() + 1);
        self.nodes.push(TaskNode {
            node_id: node_id.clone(),
            parent_id: parent_id.map(str::to_string),
            objective: objective.to_string(),
            assigned_agent: assigned_agent.to_string(),
            status: NodeStatus::Running,
            result_summary: String::new(),
        });
        node_id
    }

    pub fn close(&mut self, node_id: &str, status: NodeStatus, result_summary: &str) {
        if let Some(node) = self.nodes.iter_mut().find(|n| n.node_id == node_id) {
            node.status = status;
            node.result_summary = result_summary.to_string();
        }
    }

    pub fn running_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| n.status == NodeStatus::Running)
            .count()
    }
}

/// Result of validating a set of agent specs.
#[derive(Debug, Clone, Default)]
pub struct HierarchyReport {
    pub violations: Vec<String>,
}

impl HierarchyReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check a hierarchy for duplicate ids, level-direction violations, and
/// references to names that are neither registered tools nor known agents.
pub fn validate_hierarchy(specs: &[AgentSpec], known_tools: &BTreeSet<String>) -> HierarchyReport {
    let mut report = HierarchyReport::default();
    let mut by_id: BTreeMap<&str, &AgentSpec> = BTreeMap::new();

    for spec in specs {
        if by_id.insert(spec.agent_id.as_str(), spec).is_some() {
            report
                .violations
                .push(format!("duplicate agent_id {:?}", spec.agent_id));
        }
        if spec.step_limit < 1 {
            report
                .violations
                .push(format!("agent {:?} has step_limit 0", spec.agent_id));
        }
    }

    for spec in specs {
        for name in &spec.allowed_tools {
            if let Some(child) = by_id.get(name.as_str()) {
                if child.level.rank() >= spec.level.rank() {
                    report.violations.push(format!(
                        "agent {:?} (level {}) lists agent {:?} (level {}) as a tool; \
                         only lower levels may be invoked",
                        spec.agent_id,
                        spec.level.as_str(),
                        child.agent_id,
                        child.level.as_str()
                    ));
                }
            } else if !known_tools.contains(name) {
                report.violations.push(format!(
                    "agent {:?} references unknown tool {:?}",
                    spec.agent_id, name
                ));
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn known_tools() -> BTreeSet<String> {
        ["read_file", "write_file", "list_dir"]
            .into_iter()
            .map(str::to_string)
            .collect()
    }

    fn standard_three_level() -> Vec<AgentSpec> {
        vec![
            AgentSpec::new("alpha", Level::Alpha).with_tools(["coder", "write_file"]),
            AgentSpec::new("coder", Level::Domain).with_tools(["io", "write_file"]),
            AgentSpec::new("io", Level::Atomic).with_tools(["read_file", "list_dir"]),
        ]
    }

    #[test]
    fn standard_config_is_valid() {
        let report = validate_hierarchy(&standard_three_level(), &known_tools());
        assert!(report.is_valid(), "{:?}", report.violations);
    }

    #[test]
    fn upward_reference_is_reported() {
        let specs = vec![
            AgentSpec::new("alpha", Level::Alpha).with_tools(["io"]),
            AgentSpec::new("io", Level::Atomic).with_tools(["coder"]),
            AgentSpec::new("coder", Level::Domain).with_tools(["write_file"]),
        ];
        let report = validate_hierarchy(&specs, &known_tools());
        assert!(!report.is_valid());
        assert!(report.violations[0].contains("\"io\""));
        assert!(report.violations[0].contains("lower levels"));
    }

    #[test]
    fn same_level_reference_is_reported() {
        let specs = vec![
            AgentSpec::new("a", Level::Domain).with_tools(["b"]),
            AgentSpec::new("b", Level::Domain),
        ];
        let report = validate_hierarchy(&specs, &known_tools());
        assert!(!report.is_valid());
    }

    #[test]
    fn duplicate_agent_id_is_reported() {
        let specs = vec![
            AgentSpec::new("dup", Level::Domain),
            AgentSpec::new("dup", Level::Atomic),
        ];
        let report = validate_hierarchy(&specs, &known_tools());
        assert!(report.violations.iter().any(|v| v.contains("duplicate")));
    }

    #[test]
    fn unknown_tool_reference_is_reported() {
        let specs = vec![AgentSpec::new("alpha", Level::Alpha).with_tools(["no_such_tool"])];
        let report = validate_hierarchy(&specs, &known_tools());
        assert!(report.violations.iter().any(|v| v.contains("unknown tool")));
    }

    #[test]
    fn task_tree_tracks_single_running_node() {
        let mut tree = TaskTree::new();
        let root = tree.open(None, "root objective", "alpha");
        assert_eq!(tree.running_count(), 1);
        let child = tree.open(Some(&root), "sub", "coder");
        // Serial engine closes the child before the parent acts again.
        tree.close(&child, NodeStatus::Done, "done");
        assert_eq!(tree.running_count(), 1);
        tree.close(&root, NodeStatus::Done, "done");
        assert_eq!(tree.running_count(), 0);
        assert_eq!(tree.nodes().len(), 2);
        assert_eq!(tree.nodes()[1].parent_id.as_deref(), Some("n0001"));
    }
}
