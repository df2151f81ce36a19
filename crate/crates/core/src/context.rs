//! Bounded reasoning context: the fixed-length action window, the per-step
//! context builder, and periodic state consolidation.
//!
//! The context sent to the model each step is rebuilt from scratch out of a
//! workspace snapshot, the window of recent actions, and the fixed
//! objective/preamble. Its size never exceeds the configured budget, no
//! matter how long the task has been running: overflow is resolved by
//! dropping the oldest actions first, then shrinking the state section.

use serde::{Deserialize, Serialize};

use crate::backend::{estimate_size, LlmBackend, LlmRequest, Message, SessionTag};
use crate::error::ContextError;
use crate::util::{now_rfc3339, sha256_hex, single_line, truncate_chars};
use crate::workspace::{StateSnapshot, TransitionOp, Workspace};

/// Per-record cap on argument and result summaries, in characters.
pub const RECORD_SUMMARY_CAP: usize = 512;
/// Contexts below this budget cannot hold their own scaffolding.
pub const CONTEXT_BUDGET_MIN: usize = 2048;
/// Default window capacity (k).
pub const DEFAULT_WINDOW_CAPACITY: usize = 10;

/// Fixed section delimiters; tests parse contexts against these.
pub const STATE_HEADER: &str = "## STATE";
pub const ACTIONS_HEADER: &str = "## RECENT ACTIONS";
pub const OBJECTIVE_HEADER: &str = "## OBJECTIVE";

/// Marker that opens every consolidation instruction.
pub const CONSOLIDATION_MARKER: &str = "CONSOLIDATE::";
/// Marker inside a consolidation reply that introduces plan changes.
pub const PLAN_UPDATE_MARKER: &str = "PLAN-UPDATE::";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionStatus {
    Ok,
    Error,
}

impl ActionStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            ActionStatus::Ok => "ok",
            ActionStatus::Error => "error",
        }
    }
}

/// One executed step. Summaries are single-line and capped at
/// [`RECORD_SUMMARY_CAP`] characters on construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActionRecord {
    pub step: u64,
    pub agent_id: String,
    pub tool_name: String,
    pub args_summary: String,
    pub result_summary: String,
    pub status: ActionStatus,
    pub timestamp: String,
}

impl ActionRecord {
    pub fn new(
        step: u64,
        agent_id: impl Into<String>,
        tool_name: impl Into<String>,
        args_summary: &str,
        result_summary: &str,
        status: ActionStatus,
    ) -> Self {
        Self {
            step,
            agent_id: agent_id.into(),
            tool_name: tool_name.into(),
            args_summary: cap_summary(args_summary),
            result_summary: cap_summary(result_summary),
            status,
            timestamp: now_rfc3339(),
        }
    }

    /// Single-line rendering used inside the actions section.
    pub fn render_line(&self) -> String {
        format!(
            "[{}] {} {} ({}): args={} result={}",
            self.step,
            self.agent_id,
            self.tool_name,
            self.status.as_str(),
            self.args_summary,
            self.result_summary
        )
    }
}

/// Collapse to one line and cap at the record summary limit.
pub fn cap_summary(s: &str) -> String {
    let line = single_line(s);
    truncate_chars(&line, RECORD_SUMMARY_CAP).to_string()
}

/// Ring buffer of the most recent actions, ordered by strictly increasing
/// step. Never holds more than `capacity` records.
#[derive(Debug, Clone)]
pub struct ActionWindow {
    capacity: usize,
    records: std::collections::VecDeque<ActionRecord>,
}

impl ActionWindow {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "window capacity must be at least 1");
        Self { capacity, records: std::collections::VecDeque::new() }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last_step(&self) -> Option<u64> {
        self.records.back().map(|r| r.step)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ActionRecord> {
        self.records.iter()
    }

    /// Append a record, evicting the oldest when full. Rejects steps that
    /// do not advance past the last recorded step.
    pub fn record(&mut self, rec: ActionRecord) -> Result<(), ContextError> {
        if let Some(last) = self.last_step() {
            if rec.step <= last {
                return Err(ContextError::NonIncreasingStep { got: rec.step, last });
            }
        }
        self.records.push_back(rec);
        while self.records.len() > self.capacity {
            self.records.pop_front();
        }
        Ok(())
    }
}

/// The bounded per-step prompt. `total_size` is the character count of the
/// two wire messages (system preamble + user sections) and never exceeds
/// `budget`.
#[derive(Debug, Clone)]
pub struct BoundedContext {
    pub system_preamble: String,
    pub state_section: String,
    pub actions_section: String,
    pub objective_section: String,
    pub total_size: usize,
    pub budget: usize,
}

impl BoundedContext {
    /// The user-message half of the prompt, with fixed section headers.
    pub fn user_sections(&self) -> String {
        format!(
            "{STATE_HEADER}\n{}\n{ACTIONS_HEADER}\n{}\n{OBJECTIVE_HEADER}\n{}",
            self.state_section, self.actions_section, self.objective_section
        )
    }

    /// Full prompt as displayed by inspection tooling.
    pub fn full_text(&self) -> String {
        format!("{}\n{}", self.system_preamble, self.user_sections())
    }

    /// Stable digest over the exact prompt content.
    pub fn digest(&self) -> String {
        sha256_hex(format!("{}\0{}", self.system_preamble, self.user_sections()).as_bytes())
    }

    pub fn to_request(&self, max_response: usize, tag: SessionTag) -> LlmRequest {
        LlmRequest::new(
            vec![
                Message::system(self.system_preamble.clone()),
                Message::user(self.user_sections()),
            ],
            max_response,
            tag,
        )
    }
}

/// Deterministically assemble the bounded context for one step.
///
/// Preconditions: `budget >= CONTEXT_BUDGET_MIN` and the snapshot was built
/// with a budget no larger than half of `budget`. The preamble and objective
/// are never truncated; if they alone exceed the budget the configuration is
/// unusable and an error is returned.
pub fn build_context(
    snap: &StateSnapshot,
    win: &ActionWindow,
    objective: &str,
    preamble: &str,
    budget: usize,
) -> Result<BoundedContext, ContextError> {
    if budget < CONTEXT_BUDGET_MIN {
        return Err(ContextError::BudgetTooSmall { got: budget, min: CONTEXT_BUDGET_MIN });
    }
    if snap.build_budget * 2 > budget {
        return Err(ContextError::SnapshotTooLarge { snap: snap.build_budget, budget });
    }

    // Scaffolding that is never truncated: preamble, headers, objective,
    // plus the newlines that join the sections.
    let scaffold = estimate_size(preamble)
        + estimate_size(STATE_HEADER)
        + estimate_size(ACTIONS_HEADER)
        + estimate_size(OBJECTIVE_HEADER)
        + estimate_size(objective)
        + 5; // joining newlines in the wire rendering
    if scaffold > budget {
        return Err(ContextError::FixedSectionsExceedBudget { fixed: scaffold, budget });
    }
    let room = budget - scaffold;

    let mut action_lines: std::collections::VecDeque<String> =
        win.iter().map(|r| r.render_line()).collect();
    let mut state = snap.render(snap.build_budget);
    let mut reshrunk = false;

    loop {
        let actions = render_actions(&action_lines);
        let used = estimate_size(&state) + estimate_size(&actions);
        if used <= room {
            let state_section = state;
            let actions_section = actions;
            let ctx = BoundedContext {
                system_preamble: preamble.to_string(),
                state_section,
                actions_section,
                objective_section: objective.to_string(),
                total_size: 0,
                budget,
            };
            let total_size =
                estimate_size(&ctx.system_preamble) + 1 + estimate_size(&ctx.user_sections());
            debug_assert!(total_size <= budget);
            return Ok(BoundedContext { total_size, ..ctx });
        }
        // Over budget: drop the oldest action first.
        if action_lines.pop_front().is_some() {
            continue;
        }
        // No actions left: re-render the state at half budget once, then
        // hard-truncate as the final guarantee.
        if !reshrunk {
            reshrunk = true;
            state = snap.render(budget / 2);
            continue;
        }
        let actions = render_actions(&action_lines);
        let allowed = room.saturating_sub(estimate_size(&actions));
        state = truncate_chars(&state, allowed).to_string();
    }
}

fn render_actions(lines: &std::collections::VecDeque<String>) -> String {
    if lines.is_empty() {
        "(none)".to_string()
    } else {
        lines.iter().cloned().collect::<Vec<_>>().join("\n")
    }
}

/// Cadence and output budgets for periodic state consolidation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConsolidationPolicy {
    pub interval_steps: u64,
    pub plan_budget: usize,
    pub progress_budget: usize,
}

impl Default for ConsolidationPolicy {
    fn default() -> Self {
        Self { interval_steps: 25, plan_budget: 2000, progress_budget: 2000 }
    }
}

impl ConsolidationPolicy {
    pub fn due(&self, engine_step: u64) -> bool {
        engine_step > 0 && engine_step % self.interval_steps.max(1) == 0
    }
}

/// Result of one consolidation attempt.
#[derive(Debug, Clone)]
pub enum ConsolidationOutcome {
    /// Progress notes written; plan additionally updated when flagged.
    Applied { plan_updated: bool },
    /// Backend failed; consolidation is best-effort so execution continues.
    Skipped { reason: String },
}

/// Ask the backend to summarize recent progress and fold the reply back
/// into `progress.md` (and `plan.md` when the reply marks plan changes)
/// through ordinary workspace transitions.
pub fn consolidate(
    ws: &mut Workspace,
    win: &ActionWindow,
    policy: &ConsolidationPolicy,
    backend: &dyn LlmBackend,
    objective: &str,
    preamble: &str,
    context_budget: usize,
    engine_step: u64,
) -> Result<ConsolidationOutcome, crate::error::EngineError> {
    let snap = ws.snapshot(context_budget / 2)?;
    let ctx = build_context(&snap, win, objective, preamble, context_budget)?;
    let instruction = format!(
        "\n{CONSOLIDATION_MARKER} Update the progress notes: list completed work and \
         what remains, in a few short lines. If the plan itself must change, add a \
         line starting with {PLAN_UPDATE_MARKER} followed by the revised plan lines."
    );
    let req = LlmRequest::new(
        vec![
            Message::system(ctx.system_preamble.clone()),
            Message::user(format!("{}{}", ctx.user_sections(), instruction)),
        ],
        policy.plan_budget + policy.progress_budget,
        SessionTag::Consolidation,
    );
    let resp = backend.complete(&req);
    if resp.is_error() {
        return Ok(ConsolidationOutcome::Skipped {
            reason: resp.error_detail.unwrap_or_else(|| "backend error".into()),
        });
    }

    let (progress_part, plan_part) = split_consolidation_reply(&resp.content);
    let progress_text = truncate_chars(progress_part.trim(), policy.progress_budget);
    let existing = String::from_utf8_lossy(&ws.read_file("progress.md")?).into_owned();
    let appended = format!("{existing}\n## step {engine_step}\n{progress_text}\n");
    ws.apply_transition(&TransitionOp::modify("progress.md", appended.into_bytes()))?;

    let mut plan_updated = false;
    if let Some(plan) = plan_part {
        let plan_text = truncate_chars(plan.trim(), policy.plan_budget);
        if !plan_text.is_empty() {
            let existing = String::from_utf8_lossy(&ws.read_file("plan.md")?).into_owned();
            let appended = format!("{existing}\n## step {engine_step}\n{plan_text}\n");
            ws.apply_transition(&TransitionOp::modify("plan.md", appended.into_bytes()))?;
            plan_updated = true;
        }
    }
    Ok(ConsolidationOutcome::Applied { plan_updated })
}

/// Split a consolidation reply into progress text and optional plan text.
fn split_consolidation_reply(reply: &str) -> (&str, Option<&str>) {
    match reply.find(PLAN_UPDATE_MARKER) {
        Some(idx) => {
            let plan = &reply[idx + PLAN_UPDATE_MARKER.len()..];
            (&reply[..idx], Some(plan))
        }
        None => (reply, None),
    }
}
