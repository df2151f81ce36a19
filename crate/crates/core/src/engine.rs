//! The serial execution engine: decision loop, agent-as-a-tool delegation,
//! consolidation cadence, and the compressed-context ablation mode.
//!
//! Exactly one agent is active per task at any instant. A delegation
//! suspends the parent, runs the child to completion on the same workspace
//! (with a fresh action window and its own context budget), and feeds only
//! the child's result summary back into the parent's window. Every executed
//! step appends one record to `logs/actions.jsonl`; the prompt for each step
//! is hash-logged (full text under verbose mode) to `logs/contexts.jsonl`.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backend::{estimate_size, LlmBackend, LlmRequest, Message, SessionTag};
use crate::context::{
    build_context, cap_summary, consolidate, ActionRecord, ActionStatus, ActionWindow,
    ConsolidationOutcome, ConsolidationPolicy, DEFAULT_WINDOW_CAPACITY, OBJECTIVE_HEADER,
};
use crate::error::EngineError;
use crate::hierarchy::{
    validate_hierarchy, AgentOutcome, AgentSpec, NodeStatus, OutcomeStatus, TaskTree,
};
use crate::tools::{Corpus, ToolContext, ToolRegistry, DEFAULT_READ_CAP};
use crate::util::now_rfc3339;
use crate::workspace::{Workspace, ACTION_LOG, CONTEXT_LOG};

/// How the per-step prompt is constructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutionMode {
    /// Rebuild the prompt each step from a workspace snapshot plus the
    /// action window; size is bounded by the agent's context budget.
    FileCentric,
    /// Baseline ablation: accumulate the full step history in the prompt
    /// and rely on the backend's overflow policy when it no longer fits.
    CompressedContext,
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub window_capacity: usize,
    pub consolidation: ConsolidationPolicy,
    pub mode: ExecutionMode,
    pub read_cap: usize,
    pub max_response: usize,
    /// Store full prompt text in the context log, not just the digest.
    pub verbose_contexts: bool,
    /// Testing hook: stop cleanly once this many global steps have run,
    /// leaving the task resumable (simulates a kill between steps).
    pub interrupt_after: Option<u64>,
    /// Digest of the hierarchy file, recorded in run metadata.
    pub hierarchy_digest: Option<String>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            window_capacity: DEFAULT_WINDOW_CAPACITY,
            consolidation: ConsolidationPolicy::default(),
            mode: ExecutionMode::FileCentric,
            read_cap: DEFAULT_READ_CAP,
            max_response: 4096,
            verbose_contexts: false,
            interrupt_after: None,
            hierarchy_digest: None,
        }
    }
}

/// One line of `logs/contexts.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContextLogRecord {
    pub step: u64,
    pub agent_id: String,
    pub digest: String,
    pub chars: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preamble: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sections: Option<String>,
}

/// Run result persisted to `logs/outcome.json` on completion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PersistedOutcome {
    pub status: OutcomeStatus,
    pub result_summary: String,
    pub steps_used: u64,
    pub global_steps: u64,
    pub finished_at: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMeta {
    pub root_agent: String,
    pub objective: String,
    pub backend: String,
    pub mode: ExecutionMode,
    pub window_capacity: usize,
    pub consolidation_interval: u64,
    pub temperature: f32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hierarchy_digest: Option<String>,
    pub started_at: String,
}

/// A parsed model directive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Directive {
    Call { tool: String, args: Value },
    Finish { final_answer: String },
}

/// Extract the single fenced JSON directive from a model reply. Accepts a
/// bare JSON object as a fallback.
pub fn parse_directive(content: &str) -> Result<Directive, String> {
    let inner = extract_json_block(content).ok_or("no JSON object found")?;
    let value: Value =
        serde_json::from_str(inner.trim()).map_err(|e| format!("invalid JSON: {e}"))?;
    let action = value
        .get("action")
        .and_then(Value::as_str)
        .ok_or("missing \"action\" field")?;
    match action {
        "call" => {
            let tool = value
                .get("tool")
                .and_then(Value::as_str)
                .ok_or("call directive missing \"tool\"")?;
            let args = value.get("args").cloned().unwrap_or_else(|| Value::Object(Default::default()));
            Ok(Directive::Call { tool: tool.to_string(), args })
        }
        "finish" => {
            let final_answer = value
                .get("final_answer")
                .and_then(Value::as_str)
                .unwrap_or("")
                .to_string();
            Ok(Directive::Finish { final_answer })
        }
        other => Err(format!("unknown action {other:?}")),
    }
}

fn extract_json_block(content: &str) -> Option<&str> {
    if let Some(open) = content.find("```") {
        let after_fence = &content[open + 3..];
        let body_start = after_fence.find('\n').map(|i| i + 1).unwrap_or(0);
        let body = &after_fence[body_start..];
        if let Some(close) = body.find("```") {
            return Some(&body[..close]);
        }
    }
    let trimmed = content.trim();
    if trimmed.starts_with('{') && trimmed.ends_with('}') {
        return Some(trimmed);
    }
    None
}

const REPAIR_INSTRUCTION: &str = "REPAIR:: The previous reply was not a single fenced JSON \
directive. Reply with exactly one fenced json object: either \
{\"action\":\"call\",\"tool\":\"<name>\",\"args\":{...}} or \
{\"action\":\"finish\",\"final_answer\":\"<summary>\"}.";

/// The serial engine for one task. Owns the workspace for the duration of
/// the run; drop or [`Engine::into_workspace`] releases it.
pub struct Engine<'a> {
    specs: BTreeMap<String, AgentSpec>,
    registry: &'a ToolRegistry,
    backend: &'a dyn LlmBackend,
    corpus: Option<&'a Corpus>,
    config: EngineConfig,
    ws: Workspace,
    global_step: u64,
    tree: TaskTree,
    interrupted: bool,
}

impl<'a> Engine<'a> {
    /// Validate the hierarchy against the registry and set up the engine.
    /// The global step counter continues from the action log, so a resumed
    /// task numbers its steps after the previous session's.
    pub fn new(
        ws: Workspace,
        specs: Vec<AgentSpec>,
        registry: &'a ToolRegistry,
        backend: &'a dyn LlmBackend,
        corpus: Option<&'a Corpus>,
        config: EngineConfig,
    ) -> Result<Self, EngineError> {
        let report = validate_hierarchy(&specs, &registry.names());
        if !report.is_valid() {
            return Err(EngineError::InvalidHierarchy(report.violations.join("; ")));
        }
        let global_step = read_action_log(ws.task_dir())
            .last()
            .map(|r| r.step)
            .unwrap_or(0);
        Ok(Self {
            specs: specs.into_iter().map(|s| (s.agent_id.clone(), s)).collect(),
            registry,
            backend,
            corpus,
            config,
            ws,
            global_step,
            tree: TaskTree::new(),
            interrupted: false,
        })
    }

    pub fn workspace(&self) -> &Workspace {
        &self.ws
    }

    pub fn into_workspace(self) -> Workspace {
        self.ws
    }

    pub fn task_tree(&self) -> &TaskTree {
        &self.tree
    }

    pub fn global_step(&self) -> u64 {
        self.global_step
    }

    /// Run the root agent to completion on a fresh window.
    pub fn run(&mut self, root_agent: &str, objective: &str) -> Result<AgentOutcome, EngineError> {
        self.write_run_meta(root_agent, objective)?;
        self.run_root(root_agent, objective, ActionWindow::new(self.config.window_capacity))
    }

    /// Continue an interrupted task: the window is rebuilt from the tail of
    /// the action log (up to its capacity) and the loop picks up where the
    /// step numbering left off.
    pub fn resume_run(
        &mut self,
        root_agent: &str,
        objective: &str,
    ) -> Result<AgentOutcome, EngineError> {
        let mut window = ActionWindow::new(self.config.window_capacity);
        let records = read_action_log(self.ws.task_dir());
        let tail_start = records.len().saturating_sub(self.config.window_capacity);
        for rec in &records[tail_start..] {
            if rec.tool_name == "consolidate" {
                continue; // shares its step number with the directive record
            }
            if window.last_step().map_or(true, |last| rec.step > last) {
                let _ = window.record(rec.clone());
            }
        }
        self.run_root(root_agent, objective, window)
    }

    fn run_root(
        &mut self,
        root_agent: &str,
        objective: &str,
        window: ActionWindow,
    ) -> Result<AgentOutcome, EngineError> {
        let node = self.tree.open(None, objective, root_agent);
        let outcome = self.run_invocation(root_agent, objective, &node, window)?;
        let status = match outcome.status {
            OutcomeStatus::Done => NodeStatus::Done,
            OutcomeStatus::Interrupted => NodeStatus::Running,
            _ => NodeStatus::Failed,
        };
        self.tree.close(&node, status, &outcome.result_summary);
        if outcome.status != OutcomeStatus::Interrupted {
            self.write_outcome(&outcome)?;
        }
        Ok(outcome)
    }

    /// The decision loop for one agent invocation.
    fn run_invocation(
        &mut self,
        agent_id: &str,
        objective: &str,
        node_id: &str,
        mut window: ActionWindow,
    ) -> Result<AgentOutcome, EngineError> {
        let spec = self
            .specs
            .get(agent_id)
            .cloned()
            .ok_or_else(|| EngineError::UnknownAgent(agent_id.to_string()))?;
        let preamble = self.render_preamble(&spec);
        let mut history: Vec<String> = Vec::new(); // compressed mode only
        let mut steps_used = 0u64;

        while steps_used < spec.step_limit {
            if self.interrupt_due() {
                self.interrupted = true;
                return Ok(AgentOutcome {
                    status: OutcomeStatus::Interrupted,
                    result_summary: "interrupted".into(),
                    steps_used,
                });
            }

            // 1. Build the prompt for this step.
            let (request, logged_preamble, logged_sections) = match self.config.mode {
                ExecutionMode::FileCentric => {
                    let snap = self.ws.snapshot(spec.context_budget / 2)?;
                    let ctx =
                        build_context(&snap, &window, objective, &preamble, spec.context_budget)?;
                    debug_assert!(ctx.total_size <= spec.context_budget);
                    let sections = ctx.user_sections();
                    (
                        ctx.to_request(self.config.max_response, SessionTag::Main),
                        ctx.system_preamble,
                        sections,
                    )
                }
                ExecutionMode::CompressedContext => {
                    let sections = format!(
                        "{OBJECTIVE_HEADER}\n{objective}\n## HISTORY\n{}",
                        history.join("\n")
                    );
                    let req = LlmRequest::new(
                        vec![Message::system(preamble.clone()), Message::user(sections.clone())],
                        self.config.max_response,
                        SessionTag::Main,
                    );
                    (req, preamble.clone(), sections)
                }
            };

            // 2. Call the backend, repairing one unparseable reply.
            let response = self.backend.complete(&request);
            let (tool_name, args_summary, result_summary, status, directive) =
                if response.is_error() {
                    let detail = response.error_detail.unwrap_or_else(|| "backend error".into());
                    ("backend".to_string(), String::new(), detail, ActionStatus::Error, None)
                } else {
                    match self.parse_with_repair(&request, &response.content) {
                        Ok(directive) => self.execute_directive(&spec, node_id, directive)?,
                        Err(reason) => (
                            "directive".to_string(),
                            cap_summary(&response.content),
                            format!("unparseable after repair: {reason}"),
                            ActionStatus::Error,
                            None,
                        ),
                    }
                };

            // Interruption inside a delegation propagates without a record.
            if self.interrupted {
                return Ok(AgentOutcome {
                    status: OutcomeStatus::Interrupted,
                    result_summary: "interrupted".into(),
                    steps_used,
                });
            }

            // 3. Assign the step number, then persist record and context.
            self.global_step += 1;
            steps_used += 1;
            let record = ActionRecord::new(
                self.global_step,
                agent_id,
                &tool_name,
                &args_summary,
                &result_summary,
                status,
            );
            self.append_action(&record)?;
            self.log_context(agent_id, &logged_preamble, &logged_sections)?;
            if self.config.mode == ExecutionMode::CompressedContext {
                // Full, uncapped entry; unbounded growth is the point.
                history.push(format!(
                    "[{}] {} {} ({}): args={} result={}",
                    self.global_step,
                    agent_id,
                    tool_name,
                    record.status.as_str(),
                    args_summary,
                    result_summary
                ));
            }
            window
                .record(record)
                .expect("global steps strictly increase");

            // 4. Finish directive ends the invocation.
            if let Some(Directive::Finish { final_answer }) = &directive {
                return Ok(AgentOutcome {
                    status: OutcomeStatus::Done,
                    result_summary: cap_summary(final_answer),
                    steps_used,
                });
            }

            // 5. Periodic state consolidation (file-centric mode only).
            if self.config.mode == ExecutionMode::FileCentric
                && self.config.consolidation.due(self.global_step)
            {
                self.consolidate_now(&spec, objective, &preamble, &window)?;
            }
        }

        Ok(AgentOutcome {
            status: OutcomeStatus::StepLimitReached,
            result_summary: format!("step limit {} reached", spec.step_limit),
            steps_used,
        })
    }

    fn parse_with_repair(
        &self,
        original: &LlmRequest,
        content: &str,
    ) -> Result<Directive, String> {
        match parse_directive(content) {
            Ok(d) => Ok(d),
            Err(first_err) => {
                let mut messages = original.messages.clone();
                messages.push(Message::assistant(content));
                messages.push(Message::user(REPAIR_INSTRUCTION));
                let retry = LlmRequest::new(messages, original.max_response, original.session_tag);
                let response = self.backend.complete(&retry);
                if response.is_error() {
                    return Err(format!(
                        "{first_err}; repair call failed: {}",
                        response.error_detail.unwrap_or_default()
                    ));
                }
                parse_directive(&response.content).map_err(|e| format!("{first_err}; then {e}"))
            }
        }
    }

    /// Execute one parsed directive, producing the record fields.
    #[allow(clippy::type_complexity)]
    fn execute_directive(
        &mut self,
        spec: &AgentSpec,
        node_id: &str,
        directive: Directive,
    ) -> Result<(String, String, String, ActionStatus, Option<Directive>), EngineError> {
        match directive {
            Directive::Finish { ref final_answer } => Ok((
                "finish".to_string(),
                String::new(),
                cap_summary(final_answer),
                ActionStatus::Ok,
                Some(directive),
            )),
            Directive::Call { tool, args } => {
                let args_summary = serde_json::to_string(&args).unwrap_or_default();
                if !spec.allowed_tools.contains(&tool) {
                    return Ok((
                        tool.clone(),
                        args_summary,
                        format!("tool {tool:?} not allowed for agent {:?}", spec.agent_id),
                        ActionStatus::Error,
                        None,
                    ));
                }
                if self.specs.contains_key(&tool) {
                    return self.delegate(spec, node_id, &tool, &args, &args_summary);
                }
                let backend = self.backend;
                let corpus = self.corpus;
                let mut ctx = ToolContext {
                    ws: &mut self.ws,
                    backend,
                    corpus,
                    read_cap: self.config.read_cap,
                };
                match self.registry.invoke(&tool, &args, &mut ctx) {
                    Ok(result) => Ok((tool, args_summary, result, ActionStatus::Ok, None)),
                    Err(e) => Ok((tool, args_summary, e.to_string(), ActionStatus::Error, None)),
                }
            }
        }
    }

    /// Agent-as-a-tool: suspend the caller, run the child to completion on
    /// the same workspace, and return only its result summary.
    #[allow(clippy::type_complexity)]
    fn delegate(
        &mut self,
        parent: &AgentSpec,
        parent_node: &str,
        child_id: &str,
        args: &Value,
        args_summary: &str,
    ) -> Result<(String, String, String, ActionStatus, Option<Directive>), EngineError> {
        let child_level = self.specs[child_id].level;
        if child_level.rank() >= parent.level.rank() {
            // Unreachable after validation; kept as a runtime guard.
            return Ok((
                child_id.to_string(),
                args_summary.to_string(),
                "delegation must target a lower level".into(),
                ActionStatus::Error,
                None,
            ));
        }
        let objective = match args.get("objective").and_then(Value::as_str) {
            Some(o) if !o.trim().is_empty() => o.to_string(),
            _ => {
                return Ok((
                    child_id.to_string(),
                    args_summary.to_string(),
                    "delegation requires an \"objective\" argument".into(),
                    ActionStatus::Error,
                    None,
                ));
            }
        };

        let node = self.tree.open(Some(parent_node), &objective, child_id);
        let child_window = ActionWindow::new(self.config.window_capacity);
        let outcome = self.run_invocation(child_id, &objective, &node, child_window)?;
        let (node_status, record_status, summary) = match outcome.status {
            OutcomeStatus::Done => (
                NodeStatus::Done,
                ActionStatus::Ok,
                outcome.result_summary.clone(),
            ),
            OutcomeStatus::StepLimitReached => (
                NodeStatus::Failed,
                ActionStatus::Error,
                "step_limit_reached".to_string(),
            ),
            OutcomeStatus::Interrupted => (NodeStatus::Running, ActionStatus::Error, String::new()),
            OutcomeStatus::Failed => (
                NodeStatus::Failed,
                ActionStatus::Error,
                format!("failed: {}", outcome.result_summary),
            ),
        };
        self.tree.close(&node, node_status, &summary);
        Ok((
            child_id.to_string(),
            args_summary.to_string(),
            summary,
            record_status,
            None,
        ))
    }

    fn consolidate_now(
        &mut self,
        spec: &AgentSpec,
        objective: &str,
        preamble: &str,
        window: &ActionWindow,
    ) -> Result<(), EngineError> {
        let outcome = consolidate(
            &mut self.ws,
            window,
            &self.config.consolidation,
            self.backend,
            objective,
            preamble,
            spec.context_budget,
            self.global_step,
        )?;
        let (status, summary) = match outcome {
            ConsolidationOutcome::Applied { plan_updated } => (
                ActionStatus::Ok,
                if plan_updated {
                    "progress and plan updated".to_string()
                } else {
                    "progress updated".to_string()
                },
            ),
            ConsolidationOutcome::Skipped { reason } => {
                log::warn!("consolidation skipped at step {}: {reason}", self.global_step);
                (ActionStatus::Error, format!("skipped: {reason}"))
            }
        };
        // Logged for observability, but kept out of the window: it shares
        // the step number with the directive that triggered it.
        let record = ActionRecord::new(
            self.global_step,
            &spec.agent_id,
            "consolidate",
            "",
            &summary,
            status,
        );
        self.append_action(&record)
    }

    fn interrupt_due(&self) -> bool {
        self.config
            .interrupt_after
            .map(|n| self.global_step >= n)
            .unwrap_or(false)
    }

    fn render_preamble(&self, spec: &AgentSpec) -> String {
        let mut listing = self.registry.render_listing(Some(&spec.allowed_tools));
        for name in &spec.allowed_tools {
            if let Some(child) = self.specs.get(name) {
                listing.push_str(&format!(
                    "- {}(objective: string): delegate a sub-objective to this {} agent\n",
                    child.agent_id,
                    child.level.as_str()
                ));
            }
        }
        format!(
            "{}\n\nTOOLS:\n{}DIRECTIVE FORMAT: reply with exactly one fenced json object: \
             {{\"action\":\"call\",\"tool\":\"<name>\",\"args\":{{...}}}} to use a tool, or \
             {{\"action\":\"finish\",\"final_answer\":\"<summary>\"}} when the objective is met.",
            spec.role_preamble, listing
        )
    }

    fn append_action(&self, record: &ActionRecord) -> Result<(), EngineError> {
        append_jsonl(&self.ws.task_dir().join(ACTION_LOG), record)
            .map_err(EngineError::Workspace)
    }

    fn log_context(
        &self,
        agent_id: &str,
        preamble: &str,
        sections: &str,
    ) -> Result<(), EngineError> {
        let digest = crate::util::sha256_hex(format!("{preamble}\0{sections}").as_bytes());
        let chars = estimate_size(preamble) + 1 + estimate_size(sections);
        let record = ContextLogRecord {
            step: self.global_step,
            agent_id: agent_id.to_string(),
            digest,
            chars,
            preamble: self.config.verbose_contexts.then(|| preamble.to_string()),
            sections: self.config.verbose_contexts.then(|| sections.to_string()),
        };
        append_jsonl(&self.ws.task_dir().join(CONTEXT_LOG), &record)
            .map_err(EngineError::Workspace)
    }

    fn write_run_meta(&self, root_agent: &str, objective: &str) -> Result<(), EngineError> {
        let meta = RunMeta {
            root_agent: root_agent.to_string(),
            objective: objective.to_string(),
            backend: self.backend.describe(),
            mode: self.config.mode,
            window_capacity: self.config.window_capacity,
            consolidation_interval: self.config.consolidation.interval_steps,
            temperature: 0.0,
            hierarchy_digest: self.config.hierarchy_digest.clone(),
            started_at: now_rfc3339(),
        };
        write_json(&self.ws.task_dir().join("logs/run_meta.json"), &meta)
            .map_err(EngineError::Workspace)
    }

    fn write_outcome(&self, outcome: &AgentOutcome) -> Result<(), EngineError> {
        let persisted = PersistedOutcome {
            status: outcome.status,
            result_summary: outcome.result_summary.clone(),
            steps_used: outcome.steps_used,
            global_steps: self.global_step,
            finished_at: now_rfc3339(),
        };
        write_json(&self.ws.task_dir().join("logs/outcome.json"), &persisted)
            .map_err(EngineError::Workspace)
    }
}

fn append_jsonl<T: Serialize>(path: &Path, record: &T) -> Result<(), crate::error::WorkspaceError> {
    let mut line = serde_json::to_string(record).expect("log record serializes");
    line.push('\n');
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| crate::error::WorkspaceError::Io { path: path.to_path_buf(), source: e })?;
    f.write_all(line.as_bytes())
        .map_err(|e| crate::error::WorkspaceError::Io { path: path.to_path_buf(), source: e })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), crate::error::WorkspaceError> {
    let text = serde_json::to_string_pretty(value).expect("json value serializes");
    std::fs::write(path, text)
        .map_err(|e| crate::error::WorkspaceError::Io { path: path.to_path_buf(), source: e })
}

/// Parsed contents of `logs/actions.jsonl` (invalid lines skipped).
pub fn read_action_log(task_dir: &Path) -> Vec<ActionRecord> {
    read_jsonl(&task_dir.join(ACTION_LOG))
}

/// Parsed contents of `logs/contexts.jsonl` (invalid lines skipped).
pub fn read_context_log(task_dir: &Path) -> Vec<ContextLogRecord> {
    read_jsonl(&task_dir.join(CONTEXT_LOG))
}

/// The persisted outcome of a completed run, if any.
pub fn read_outcome(task_dir: &Path) -> Option<PersistedOutcome> {
    let raw = std::fs::read_to_string(task_dir.join("logs/outcome.json")).ok()?;
    serde_json::from_str(&raw).ok()
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Vec<T> {
    match std::fs::read_to_string(path) {
        Ok(raw) => raw
            .lines()
            .filter(|l| !l.trim().is_empty())
            .filter_map(|l| serde_json::from_str(l).ok())
            .collect(),
        Err(_) => Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{MockBackend, MockPolicy, OverflowBehavior};
    use crate::hierarchy::Level;
    use tempfile::TempDir;

    fn call_json(tool: &str, args: Value) -> String {
        format!(
            "```json\n{}\n```",
            serde_json::json!({"action": "call", "tool": tool, "args": args})
        )
    }

    fn finish_json(answer: &str) -> String {
        format!(
            "```json\n{}\n```",
            serde_json::json!({"action": "finish", "final_answer": answer})
        )
    }

    fn solo_alpha() -> Vec<AgentSpec> {
        vec![AgentSpec::new("alpha", Level::Alpha)
            .with_preamble("You are the orchestrator.")
            .with_tools(["read_file", "write_file", "list_dir"])]
    }

    #[test]
    fn parse_directive_accepts_fenced_and_bare_json() {
        let fenced = "noise\n```json\n{\"action\":\"finish\",\"final_answer\":\"ok\"}\n```\ntail";
        assert_eq!(
            parse_directive(fenced).unwrap(),
            Directive::Finish { final_answer: "ok".into() }
        );
        let bare = "{\"action\":\"call\",\"tool\":\"list_dir\"}";
        assert!(matches!(parse_directive(bare).unwrap(), Directive::Call { .. }));
        assert!(parse_directive("just words").is_err());
        assert!(parse_directive("{\"action\":\"dance\"}").is_err());
    }

    #[test]
    fn two_step_script_writes_artifact_and_finishes() {
        let dir = TempDir::new().unwrap();
        let ws = Workspace::init(dir.path(), "t").unwrap();
        let registry = ToolRegistry::with_builtins();
        let mock = MockBackend::new(
            MockPolicy::new(1_000_000, OverflowBehavior::Error)
                .rule(
                    OBJECTIVE_HEADER,
                    call_json("write_file", serde_json::json!({"path": "artifacts/out.txt", "content": "hello"})),
                    1,
                )
                .rule(OBJECTIVE_HEADER, finish_json("wrote the file"), 1)
                .default_reply("unused"),
        )
        .unwrap();

        let mut engine = Engine::new(ws, solo_alpha(), &registry, &mock, None, EngineConfig::default()).unwrap();
        let outcome = engine.run("alpha", "write hello").unwrap();
        assert_eq!(outcome.status, OutcomeStatus::Done);
        assert_eq!(outcome.steps_used, 2);
        assert_eq!(outcome.result_summary, "wrote the file");

        let ws = engine.into_workspace();
        assert_eq!(ws.read_file("artifacts/out.txt").unwrap(), b"hello");
        let actions = read_action_log(ws.task_dir());
        assert_eq!(actions.len(), 2);
        assert_eq!(actions[0].tool_name, "write_file");
        assert_eq!(actions[1].tool_name, "finish");
        assert!(read_outcome(ws.task_dir()).is_some());
    }

    #[test]
    fn malformed_directive_twice_yields_one_error_record_then_continues() {
        let dir = TempDir::new().unwrap();
        let ws = Workspace::init(dir.path(), "t").unwrap();
        let registry = ToolRegistry::with_builtins();
        let mock = MockBackend::new(
            MockPolicy::new(1_000_000, OverflowBehavior::Error)
                .rule(OBJECTIVE_HEADER, "this is not a directive", 1)
                .rule("REPAIR::", "still not a directive", 1)
                .rule(OBJECTIVE_HEADER, finish_json("done"), 1)
                .default_reply("unused"),
        )
        .unwrap();

        let mut engine = Engine::new(ws, solo_alpha(), &registry, &mock, None, EngineConfig::default()).unwrap();
        let outcome = engine.run("alpha", "obj").unwrap();
        assert_eq!(outcome.status, OutcomeStatus::Done);

        let actions = read_action_log(engine.workspace().task_dir());
        assert_eq!(actions.len(), 2);
        assert_eq!(actions[0].status, ActionStatus::Error);
        assert_eq!(actions[0].tool_name, "directive");
        assert_eq!(actions[1].tool_name, "finish");
    }

    #[test]
    fn repair_retry_can_rescue_a_malformed_reply() {
        let dir = TempDir::new().unwrap();
        let ws = Workspace::init(dir.path(), "t").unwrap();
        let registry = ToolRegistry::with_builtins();
        let mock = MockBackend::new(
            MockPolicy::new(1_000_000, OverflowBehavior::Error)
                .rule(OBJECTIVE_HEADER, "oops", 1)
                .rule("REPAIR::", &finish_json("fixed"), 1)
                .default_reply("unused"),
        )
        .unwrap();

        let mut engine = Engine::new(ws, solo_alpha(), &registry, &mock, None, EngineConfig::default()).unwrap();
        let outcome = engine.run("alpha", "obj").unwrap();
        assert_eq!(outcome.status, OutcomeStatus::Done);
        assert_eq!(outcome.result_summary, "fixed");
        assert_eq!(outcome.steps_used, 1);
    }

    #[test]
    fn never_finishing_mock_hits_step_limit() {
        let dir = TempDir::new().unwrap();
        let ws = Workspace::init(dir.path(), "t").unwrap();
        let registry = ToolRegistry::with_builtins();
        let mock = MockBackend::new(
            MockPolicy::new(1_000_000, OverflowBehavior::Error)
                .default_reply(&call_json("list_dir", serde_json::json!({}))),
        )
        .unwrap();

        let specs = vec![AgentSpec::new("alpha", Level::Alpha)
            .with_tools(["list_dir"])
            .with_step_limit(50)];
        let mut engine = Engine::new(ws, specs, &registry, &mock, None, EngineConfig::default()).unwrap();
        let outcome = engine.run("alpha", "obj").unwrap();
        assert_eq!(outcome.status, OutcomeStatus::StepLimitReached);
        assert_eq!(outcome.steps_used, 50);
    }

    #[test]
    fn backend_error_every_call_still_logs_actions() {
        let dir = TempDir::new().unwrap();
        let ws = Workspace::init(dir.path(), "t").unwrap();
        let registry = ToolRegistry::with_builtins();
        let mock = MockBackend::new(
            MockPolicy::new(64, OverflowBehavior::Error).default_reply("x"),
        )
        .unwrap();

        let specs = vec![AgentSpec::new("alpha", Level::Alpha)
            .with_tools(["list_dir"])
            .with_step_limit(3)];
        let mut engine = Engine::new(ws, specs, &registry, &mock, None, EngineConfig::default()).unwrap();
        let outcome = engine.run("alpha", "obj").unwrap();
        assert_eq!(outcome.status, OutcomeStatus::StepLimitReached);

        let actions = read_action_log(engine.workspace().task_dir());
        assert_eq!(actions.len(), 3);
        assert!(actions.iter().all(|a| a.status == ActionStatus::Error));
        assert!(actions[0].result_summary.contains("context_overflow"));
    }

    #[test]
    fn delegation_feeds_only_summary_back_to_parent() {
        let dir = TempDir::new().unwrap();
        let ws = Workspace::init(dir.path(), "t").unwrap();
        let registry = ToolRegistry::with_builtins();
        let secret = "child-trace-secret-4711";
        let mock = MockBackend::new(
            MockPolicy::new(1_000_000, OverflowBehavior::Error)
                .rule(
                    "CODER-BRIEF",
                    call_json(
                        "write_file",
                        serde_json::json!({"path": "artifacts/out.py", "content": secret}),
                    ),
                    1,
                )
                .rule("CODER-BRIEF", finish_json("wrote out.py"), 1)
                .rule(
                    OBJECTIVE_HEADER,
                    call_json("coder", serde_json::json!({"objective": "CODER-BRIEF write the file"})),
                    1,
                )
                .rule(OBJECTIVE_HEADER, finish_json("delegated and done"), 1)
                .default_reply("unused"),
        )
        .unwrap();

        let specs = vec![
            AgentSpec::new("alpha", Level::Alpha)
                .with_preamble("orchestrator")
                .with_tools(["coder", "list_dir"]),
            AgentSpec::new("coder", Level::Domain)
                .with_preamble("coder")
                .with_tools(["write_file"]),
        ];
        let mut config = EngineConfig::default();
        config.verbose_contexts = true;
        let mut engine = Engine::new(ws, specs, &registry, &mock, None, config).unwrap();
        let outcome = engine.run("alpha", "build it").unwrap();
        assert_eq!(outcome.status, OutcomeStatus::Done);

        let ws = engine.into_workspace();
        assert_eq!(ws.read_file("artifacts/out.py").unwrap(), secret.as_bytes());

        let actions = read_action_log(ws.task_dir());
        // coder: write, finish; alpha: delegation record, finish.
        assert_eq!(actions.len(), 4);
        assert_eq!(actions[0].agent_id, "coder");
        assert_eq!(actions[1].agent_id, "coder");
        assert_eq!(actions[2].agent_id, "alpha");
        assert_eq!(actions[2].tool_name, "coder");
        assert_eq!(actions[2].result_summary, "wrote out.py");
        let steps: Vec<u64> = actions.iter().map(|a| a.step).collect();
        assert_eq!(steps, vec![1, 2, 3, 4]);

        // The child's trace content never enters the parent's contexts.
        let contexts = read_context_log(ws.task_dir());
        for ctx in contexts.iter().filter(|c| c.agent_id == "alpha") {
            let text = format!(
                "{}{}",
                ctx.preamble.as_deref().unwrap_or(""),
                ctx.sections.as_deref().unwrap_or("")
            );
            assert!(!text.contains(secret), "child trace leaked into parent context");
        }
        // But it does appear in the child's own contexts (as a tool arg).
        assert!(contexts
            .iter()
            .filter(|c| c.agent_id == "coder")
            .any(|c| c.sections.as_deref().unwrap_or("").contains(secret)));
    }

    #[test]
    fn child_step_limit_reaches_parent_as_error_record() {
        let dir = TempDir::new().unwrap();
        let ws = Workspace::init(dir.path(), "t").unwrap();
        let registry = ToolRegistry::with_builtins();
        let mock = MockBackend::new(
            MockPolicy::new(1_000_000, OverflowBehavior::Error)
                .rule("LOOPER-BRIEF", call_json("list_dir", serde_json::json!({})), 0)
                .rule(
                    OBJECTIVE_HEADER,
                    call_json("looper", serde_json::json!({"objective": "LOOPER-BRIEF loop"})),
                    1,
                )
                .rule(OBJECTIVE_HEADER, finish_json("done anyway"), 1)
                .default_reply("unused"),
        )
        .unwrap();

        let specs = vec![
            AgentSpec::new("alpha", Level::Alpha).with_tools(["looper"]),
            AgentSpec::new("looper", Level::Domain)
                .with_tools(["list_dir"])
                .with_step_limit(4),
        ];
        let mut engine =
            Engine::new(ws, specs, &registry, &mock, None, EngineConfig::default()).unwrap();
        let outcome = engine.run("alpha", "obj").unwrap();
        // The parent survives the child's failure and decides to finish.
        assert_eq!(outcome.status, OutcomeStatus::Done);

        let actions = read_action_log(engine.workspace().task_dir());
        let delegation = actions.iter().find(|a| a.tool_name == "looper").unwrap();
        assert_eq!(delegation.status, ActionStatus::Error);
        assert_eq!(delegation.result_summary, "step_limit_reached");
    }

    #[test]
    fn invalid_hierarchy_rejected_at_construction() {
        let dir = TempDir::new().unwrap();
        let ws = Workspace::init(dir.path(), "t").unwrap();
        let registry = ToolRegistry::with_builtins();
        let mock = MockBackend::new(
            MockPolicy::new(1_000_000, OverflowBehavior::Error).default_reply("x"),
        )
        .unwrap();
        let specs = vec![
            AgentSpec::new("a", Level::Domain).with_tools(["b"]),
            AgentSpec::new("b", Level::Domain),
        ];
        assert!(matches!(
            Engine::new(ws, specs, &registry, &mock, None, EngineConfig::default()),
            Err(EngineError::InvalidHierarchy(_))
        ));
    }

    #[test]
    fn disallowed_tool_becomes_error_record() {
        let dir = TempDir::new().unwrap();
        let ws = Workspace::init(dir.path(), "t").unwrap();
        let registry = ToolRegistry::with_builtins();
        let mock = MockBackend::new(
            MockPolicy::new(1_000_000, OverflowBehavior::Error)
                .rule(
                    OBJECTIVE_HEADER,
                    call_json("write_file", serde_json::json!({"path": "artifacts/x", "content": "x"})),
                    1,
                )
                .rule(OBJECTIVE_HEADER, finish_json("ok"), 1)
                .default_reply("unused"),
        )
        .unwrap();
        let specs = vec![AgentSpec::new("alpha", Level::Alpha).with_tools(["list_dir"])];
        let mut engine =
            Engine::new(ws, specs, &registry, &mock, None, EngineConfig::default()).unwrap();
        engine.run("alpha", "obj").unwrap();
        let actions = read_action_log(engine.workspace().task_dir());
        assert_eq!(actions[0].status, ActionStatus::Error);
        assert!(actions[0].result_summary.contains("not allowed"));
        // The write never happened.
        assert!(!engine.workspace().contains("artifacts/x"));
    }

    #[test]
    fn consolidation_cadence_and_log_records() {
        let dir = TempDir::new().unwrap();
        let ws = Workspace::init(dir.path(), "t").unwrap();
        let registry = ToolRegistry::with_builtins();
        let mock = MockBackend::new(
            MockPolicy::new(1_000_000, OverflowBehavior::Error)
                .rule("CONSOLIDATE::", "progress so far", 0)
                .rule(OBJECTIVE_HEADER, call_json("list_dir", serde_json::json!({})), 9)
                .rule(OBJECTIVE_HEADER, finish_json("done"), 1)
                .default_reply("unused"),
        )
        .unwrap();
        let mut config = EngineConfig::default();
        config.consolidation.interval_steps = 3;
        let mut engine =
            Engine::new(ws, solo_alpha(), &registry, &mock, None, config).unwrap();
        let outcome = engine.run("alpha", "obj").unwrap();
        assert_eq!(outcome.steps_used, 10);

        let actions = read_action_log(engine.workspace().task_dir());
        let consolidations: Vec<u64> = actions
            .iter()
            .filter(|a| a.tool_name == "consolidate")
            .map(|a| a.step)
            .collect();
        assert_eq!(consolidations, vec![3, 6, 9]);
        let progress =
            String::from_utf8(engine.workspace().read_file("progress.md").unwrap()).unwrap();
        assert_eq!(progress.matches("## step").count(), 3);
    }

    #[test]
    fn interrupt_and_resume_continue_step_numbering() {
        let dir = TempDir::new().unwrap();
        let ws = Workspace::init(dir.path(), "t").unwrap();
        let registry = ToolRegistry::with_builtins();
        let policy = MockPolicy::new(1_000_000, OverflowBehavior::Error)
            .rule(OBJECTIVE_HEADER, call_json("list_dir", serde_json::json!({})), 5)
            .rule(OBJECTIVE_HEADER, finish_json("done"), 1)
            .default_reply("unused");

        let mock = MockBackend::new(policy.clone()).unwrap();
        let mut config = EngineConfig::default();
        config.interrupt_after = Some(3);
        let mut engine =
            Engine::new(ws, solo_alpha(), &registry, &mock, None, config).unwrap();
        let outcome = engine.run("alpha", "obj").unwrap();
        assert_eq!(outcome.status, OutcomeStatus::Interrupted);
        assert!(read_outcome(engine.workspace().task_dir()).is_none());
        drop(engine);

        // Resume with a fresh backend (script restarts) and no interrupt.
        let (ws, _) = Workspace::resume(dir.path(), "t").unwrap();
        let mock = MockBackend::new(policy).unwrap();
        let mut engine =
            Engine::new(ws, solo_alpha(), &registry, &mock, None, EngineConfig::default()).unwrap();
        let outcome = engine.resume_run("alpha", "obj").unwrap();
        assert_eq!(outcome.status, OutcomeStatus::Done);

        let actions = read_action_log(engine.workspace().task_dir());
        let steps: Vec<u64> = actions.iter().map(|a| a.step).collect();
        // 3 steps before the interruption, then the script replays from the
        // top: 5 list_dir steps and the finish.
        assert_eq!(steps, (1..=9).collect::<Vec<_>>());
        assert!(read_outcome(engine.workspace().task_dir()).is_some());
    }

    #[test]
    fn compressed_mode_accumulates_history_and_degrades_on_overflow() {
        let dir = TempDir::new().unwrap();
        let ws = Workspace::init(dir.path(), "t").unwrap();
        let registry = ToolRegistry::with_builtins();
        // Each step writes ~600 chars of history; limit 4096 cuts the head
        // (objective included) after a handful of steps.
        let mock = MockBackend::new(
            MockPolicy::new(4096, OverflowBehavior::TruncateHead)
                .rule(
                    "TASK-BRIEF::",
                    call_json(
                        "write_file",
                        serde_json::json!({"path": "artifacts/log.txt", "content": "y".repeat(400)}),
                    ),
                    0,
                )
                .default_reply(&finish_json("gave up")),
        )
        .unwrap();

        let mut config = EngineConfig::default();
        config.mode = ExecutionMode::CompressedContext;
        let specs = vec![AgentSpec::new("alpha", Level::Alpha)
            .with_preamble("orchestrator")
            .with_tools(["write_file"])
            .with_step_limit(100)];
        let mut engine = Engine::new(ws, specs, &registry, &mock, None, config).unwrap();
        let outcome = engine.run("alpha", "TASK-BRIEF:: keep writing").unwrap();

        // The run ends via the default rule once truncation eats the brief,
        // long before the step limit.
        assert_eq!(outcome.status, OutcomeStatus::Done);
        assert_eq!(outcome.result_summary, "gave up");
        assert!(outcome.steps_used < 20, "{}", outcome.steps_used);
        assert!(outcome.steps_used > 2);
    }

    #[test]
    fn file_centric_mode_never_exceeds_budget_under_same_limit() {
        let dir = TempDir::new().unwrap();
        let ws = Workspace::init(dir.path(), "t").unwrap();
        let registry = ToolRegistry::with_builtins();
        let mock = MockBackend::new(
            MockPolicy::new(8192, OverflowBehavior::Error)
                // Consolidation prompts contain the objective too, so their
                // rule must come first or they would consume a write rule.
                .rule("CONSOLIDATE::", "progress noted", 0)
                .rule(
                    "TASK-BRIEF::",
                    call_json(
                        "write_file",
                        serde_json::json!({"path": "artifacts/log.txt", "content": "y".repeat(400)}),
                    ),
                    30,
                )
                .default_reply(&finish_json("done")),
        )
        .unwrap();

        let specs = vec![AgentSpec::new("alpha", Level::Alpha)
            .with_preamble("orchestrator")
            .with_tools(["write_file"])
            .with_context_budget(8192)
            .with_step_limit(100)];
        let mut engine =
            Engine::new(ws, specs, &registry, &mock, None, EngineConfig::default()).unwrap();
        let outcome = engine.run("alpha", "TASK-BRIEF:: keep writing").unwrap();
        // Bounded contexts never overflow the mock, so the scripted finish
        // is reached after all 30 writes.
        assert_eq!(outcome.status, OutcomeStatus::Done);
        assert_eq!(outcome.steps_used, 31);
        let contexts = read_context_log(engine.workspace().task_dir());
        assert!(contexts.iter().all(|c| c.chars <= 8192));
    }
}
