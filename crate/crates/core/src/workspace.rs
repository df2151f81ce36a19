//! Persistent task state as a directory tree with a write-ahead transition log.
//!
//! Every task owns one directory under a workspace root:
//!
//! ```text
//! <root>/<task_id>/
//!   plan.md               high-level plan, updated by consolidation
//!   progress.md           progress markers, updated by consolidation
//!   artifacts/            agent-created files
//!   logs/transitions.jsonl   durable write-ahead log of file transitions
//!   logs/actions.jsonl       one record per executed agent step
//! ```
//!
//! All file mutations flow through [`TransitionOp`]s. A transition is
//! appended to `logs/transitions.jsonl` and synced before it is applied to
//! the tree, so the log is always at least as new as the files. Resuming a
//! task replays the log from scratch, which both reconstructs metadata and
//! repairs any partially applied mutation left by a crash.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::WorkspaceError;
use crate::util::{now_rfc3339, sha256_hex, truncate_chars};

/// Snapshots below this budget cannot name their own structure.
pub const SNAPSHOT_BUDGET_MIN: usize = 512;

/// Relative path of the transition log within a task directory.
pub const TRANSITION_LOG: &str = "logs/transitions.jsonl";
/// Relative path of the action log within a task directory.
pub const ACTION_LOG: &str = "logs/actions.jsonl";
/// Relative path of the per-step context log within a task directory.
pub const CONTEXT_LOG: &str = "logs/contexts.jsonl";

/// Kind of file mutation carried by a [`TransitionOp`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionKind {
    Create,
    Modify,
    Delete,
}

/// A single file mutation. `payload` is absent for deletions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionOp {
    pub kind: TransitionKind,
    pub target: String,
    pub payload: Option<Vec<u8>>,
}

impl TransitionOp {
    pub fn create(target: impl Into<String>, payload: impl Into<Vec<u8>>) -> Self {
        Self {
            kind: TransitionKind::Create,
            target: target.into(),
            payload: Some(payload.into()),
        }
    }

    pub fn modify(target: impl Into<String>, payload: impl Into<Vec<u8>>) -> Self {
        Self {
            kind: TransitionKind::Modify,
            target: target.into(),
            payload: Some(payload.into()),
        }
    }

    pub fn delete(target: impl Into<String>) -> Self {
        Self {
            kind: TransitionKind::Delete,
            target: target.into(),
            payload: None,
        }
    }
}

/// Metadata tracked per live file in the workspace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileArtifact {
    pub relative_path: String,
    pub byte_size: u64,
    pub created_step: u64,
    pub modified_step: u64,
    pub content_digest: String,
}

/// One line of `logs/transitions.jsonl`. The payload travels inline
/// (base64) so that replaying the log alone reproduces the file tree.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct TransitionRecord {
    step: u64,
    kind: TransitionKind,
    target: String,
    payload_digest: String,
    payload_size: u64,
    timestamp: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    payload_b64: Option<String>,
}

/// Outcome of replaying the transition log during resume.
#[derive(Debug, Clone, Default)]
pub struct ResumeReport {
    pub replayed: u64,
    /// Lines dropped at the tail (torn write or corrupt record).
    pub discarded: usize,
    pub warning: Option<String>,
}

/// The persistent state of one task: a directory tree plus bookkeeping.
#[derive(Debug)]
pub struct Workspace {
    root: PathBuf,
    task_id: String,
    task_dir: PathBuf,
    step_counter: u64,
    files: BTreeMap<String, FileArtifact>,
    writable: bool,
}

impl Workspace {
    /// Create the directory layout for a fresh task.
    ///
    /// Fails if the task directory already exists (use [`Workspace::resume`])
    /// or if `root` is not writable.
    pub fn init(root: impl AsRef<Path>, task_id: &str) -> Result<Self, WorkspaceError> {
        let root = root.as_ref().to_path_buf();
        validate_task_id(task_id)?;
        fs::create_dir_all(&root)
            .map_err(|e| WorkspaceError::RootNotWritable(root.clone(), e.to_string()))?;

        let task_dir = root.join(task_id);
        if task_dir.exists() {
            return Err(WorkspaceError::TaskCollision(task_id.to_string()));
        }
        fs::create_dir(&task_dir)
            .map_err(|e| WorkspaceError::RootNotWritable(root.clone(), e.to_string()))?;

        for sub in ["artifacts", "logs"] {
            let dir = task_dir.join(sub);
            fs::create_dir(&dir).map_err(|e| io_err(&dir, e))?;
        }
        let mut files = BTreeMap::new();
        for name in ["plan.md", "progress.md"] {
            let path = task_dir.join(name);
            fs::write(&path, b"").map_err(|e| io_err(&path, e))?;
            files.insert(
                name.to_string(),
                FileArtifact {
                    relative_path: name.to_string(),
                    byte_size: 0,
                    created_step: 0,
                    modified_step: 0,
                    content_digest: sha256_hex(b""),
                },
            );
        }
        for log in [TRANSITION_LOG, ACTION_LOG] {
            let path = task_dir.join(log);
            fs::write(&path, b"").map_err(|e| io_err(&path, e))?;
        }

        Ok(Self {
            root,
            task_id: task_id.to_string(),
            task_dir,
            step_counter: 0,
            files,
            writable: true,
        })
    }

    /// Reopen an existing task by replaying its transition log from scratch.
    ///
    /// The file tree is rebuilt from the log, which discards any partially
    /// applied mutation left behind by a crash. A torn or corrupt tail is
    /// dropped and reported as a warning.
    pub fn resume(
        root: impl AsRef<Path>,
        task_id: &str,
    ) -> Result<(Self, ResumeReport), WorkspaceError> {
        let root = root.as_ref().to_path_buf();
        validate_task_id(task_id)?;
        let task_dir = root.join(task_id);
        if !task_dir.join(TRANSITION_LOG).is_file() {
            return Err(WorkspaceError::TaskNotFound(task_id.to_string(), root));
        }

        let (records, report) = read_log(&task_dir.join(TRANSITION_LOG))?;

        // Reset to the post-init state, then replay.
        reset_tree(&task_dir)?;
        let mut ws = Self {
            root,
            task_id: task_id.to_string(),
            task_dir,
            step_counter: 0,
            files: base_files(),
            writable: true,
        };
        for rec in &records {
            ws.apply_record(rec)?;
        }
        if let Some(w) = &report.warning {
            log::warn!("resume {}: {}", task_id, w);
        }
        Ok((ws, report))
    }

    /// Load step counter and file metadata from the log without touching
    /// any file. Inspection-only: transitions are rejected.
    pub fn open_readonly(root: impl AsRef<Path>, task_id: &str) -> Result<Self, WorkspaceError> {
        let root = root.as_ref().to_path_buf();
        let task_dir = root.join(task_id);
        if !task_dir.join(TRANSITION_LOG).is_file() {
            return Err(WorkspaceError::TaskNotFound(task_id.to_string(), root));
        }
        let (records, _) = read_log(&task_dir.join(TRANSITION_LOG))?;
        let mut ws = Self {
            root,
            task_id: task_id.to_string(),
            task_dir,
            step_counter: 0,
            files: base_files(),
            writable: false,
        };
        for rec in &records {
            ws.apply_metadata(rec);
        }
        Ok(ws)
    }

    pub fn task_id(&self) -> &str {
        &self.task_id
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Absolute path of this task's directory.
    pub fn task_dir(&self) -> &Path {
        &self.task_dir
    }

    /// Number of applied transitions.
    pub fn step_counter(&self) -> u64 {
        self.step_counter
    }

    /// Live file metadata, sorted by relative path.
    pub fn files(&self) -> impl Iterator<Item = &FileArtifact> {
        self.files.values()
    }

    pub fn file(&self, relative_path: &str) -> Option<&FileArtifact> {
        self.files.get(relative_path)
    }

    pub fn contains(&self, relative_path: &str) -> bool {
        self.files.contains_key(relative_path)
    }

    /// Read the bytes of a tracked file.
    pub fn read_file(&self, relative_path: &str) -> Result<Vec<u8>, WorkspaceError> {
        let rel = validate_target(relative_path)?;
        let path = self.task_dir.join(&rel);
        fs::read(&path).map_err(|e| io_err(&path, e))
    }

    /// Apply one transition: validate, append to the write-ahead log, then
    /// mutate the tree. Returns the new step counter. A rejected transition
    /// leaves the workspace byte-identical.
    pub fn apply_transition(&mut self, op: &TransitionOp) -> Result<u64, WorkspaceError> {
        if !self.writable {
            return Err(WorkspaceError::TransitionRejected(
                "workspace opened read-only".into(),
            ));
        }
        let target = validate_target(&op.target)?;
        match op.kind {
            TransitionKind::Create => {
                if self.files.contains_key(&target) {
                    return Err(WorkspaceError::TransitionRejected(format!(
                        "create target {:?} already exists",
                        target
                    )));
                }
                if op.payload.is_none() {
                    return Err(WorkspaceError::TransitionRejected(
                        "create requires a payload".into(),
                    ));
                }
            }
            TransitionKind::Modify => {
                if !self.files.contains_key(&target) {
                    return Err(WorkspaceError::TransitionRejected(format!(
                        "modify target {:?} does not exist",
                        target
                    )));
                }
                if op.payload.is_none() {
                    return Err(WorkspaceError::TransitionRejected(
                        "modify requires a payload".into(),
                    ));
                }
            }
            TransitionKind::Delete => {
                if !self.files.contains_key(&target) {
                    return Err(WorkspaceError::TransitionRejected(format!(
                        "delete target {:?} does not exist",
                        target
                    )));
                }
            }
        }

        let payload = op.payload.as_deref();
        let rec = TransitionRecord {
            step: self.step_counter + 1,
            kind: op.kind,
            target: target.clone(),
            payload_digest: payload.map(sha256_hex).unwrap_or_default(),
            payload_size: payload.map(|p| p.len() as u64).unwrap_or(0),
            timestamp: now_rfc3339(),
            payload_b64: payload.map(b64_encode),
        };
        self.append_log_record(&rec)?;
        self.apply_record(&rec)?;
        Ok(self.step_counter)
    }

    /// Build a deterministic, budget-bounded snapshot of the current state.
    pub fn snapshot(&self, budget: usize) -> Result<StateSnapshot, WorkspaceError> {
        if budget < SNAPSHOT_BUDGET_MIN {
            return Err(WorkspaceError::BudgetTooSmall {
                got: budget,
                min: SNAPSHOT_BUDGET_MIN,
            });
        }
        let plan = self.read_text_or_empty("plan.md");
        let progress = self.read_text_or_empty("progress.md");
        let listing: Vec<ListingEntry> = self
            .files
            .values()
            .map(|f| ListingEntry {
                relative_path: f.relative_path.clone(),
                byte_size: f.byte_size,
                modified_step: f.modified_step,
            })
            .collect();
        let snap = StateSnapshot {
            file_listing: listing,
            plan_excerpt: truncate_chars(&plan, budget).to_string(),
            progress_excerpt: truncate_chars(&progress, budget).to_string(),
            snapshot_step: self.step_counter,
            build_budget: budget,
            rendered_size: 0,
        };
        let rendered_size = snap.render(budget).chars().count();
        Ok(StateSnapshot {
            rendered_size,
            ..snap
        })
    }

    fn read_text_or_empty(&self, rel: &str) -> String {
        fs::read_to_string(self.task_dir.join(rel)).unwrap_or_default()
    }

    fn append_log_record(&self, rec: &TransitionRecord) -> Result<(), WorkspaceError> {
        let path = self.task_dir.join(TRANSITION_LOG);
        let mut line = serde_json::to_string(rec).expect("transition record serializes");
        line.push('\n');
        let mut f = OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(|e| io_err(&path, e))?;
        f.write_all(line.as_bytes()).map_err(|e| io_err(&path, e))?;
        f.sync_data().map_err(|e| io_err(&path, e))?;
        Ok(())
    }

    /// Apply a logged record to the tree and metadata. Used both for live
    /// transitions (after the log append) and for replay.
    fn apply_record(&mut self, rec: &TransitionRecord) -> Result<(), WorkspaceError> {
        let path = self.task_dir.join(&rec.target);
        match rec.kind {
            TransitionKind::Create | TransitionKind::Modify => {
                let payload = decode_payload(rec)?;
                if let Some(parent) = path.parent() {
                    fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
                }
                fs::write(&path, &payload).map_err(|e| io_err(&path, e))?;
            }
            TransitionKind::Delete => {
                if path.exists() {
                    fs::remove_file(&path).map_err(|e| io_err(&path, e))?;
                }
            }
        }
        self.apply_metadata(rec);
        Ok(())
    }

    /// Metadata-only application (no filesystem writes).
    fn apply_metadata(&mut self, rec: &TransitionRecord) {
        let step = rec.step;
        match rec.kind {
            TransitionKind::Create => {
                self.files.insert(
                    rec.target.clone(),
                    FileArtifact {
                        relative_path: rec.target.clone(),
                        byte_size: rec.payload_size,
                        created_step: step,
                        modified_step: step,
                        content_digest: rec.payload_digest.clone(),
                    },
                );
            }
            TransitionKind::Modify => {
                if let Some(f) = self.files.get_mut(&rec.target) {
                    f.byte_size = rec.payload_size;
                    f.modified_step = step;
                    f.content_digest = rec.payload_digest.clone();
                }
            }
            TransitionKind::Delete => {
                self.files.remove(&rec.target);
            }
        }
        self.step_counter = step;
    }
}

/// One row of a snapshot's file listing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ListingEntry {
    pub relative_path: String,
    pub byte_size: u64,
    pub modified_step: u64,
}

/// A budget-bounded, deterministic rendering of workspace state.
///
/// When the full rendering exceeds the budget, sections are cut in fixed
/// priority order: the plan head survives longest, then the progress head,
/// then a prefix of the file listing (with an explicit elision marker).
#[derive(Debug, Clone)]
pub struct StateSnapshot {
    pub file_listing: Vec<ListingEntry>,
    pub plan_excerpt: String,
    pub progress_excerpt: String,
    pub snapshot_step: u64,
    /// Budget the snapshot was built with; `render` may be asked for less.
    pub build_budget: usize,
    /// Character count of the rendering at `build_budget`.
    pub rendered_size: usize,
}

impl StateSnapshot {
    /// Render within `budget` characters. Deterministic for equal inputs.
    pub fn render(&self, budget: usize) -> String {
        let mut out = String::new();
        let mut left = budget;

        let head = format!(
            "workspace step {}, {} files\n",
            self.snapshot_step,
            self.file_listing.len()
        );
        push_within(&mut out, &head, &mut left);

        for (label, text) in [("PLAN:\n", &self.plan_excerpt), ("PROGRESS:\n", &self.progress_excerpt)] {
            if left == 0 {
                break;
            }
            push_within(&mut out, label, &mut left);
            let body = if text.is_empty() { "(empty)" } else { text.as_str() };
            let take = truncate_chars(body, left.saturating_sub(1));
            push_within(&mut out, take, &mut left);
            push_within(&mut out, "\n", &mut left);
        }

        if left > 0 {
            push_within(&mut out, "FILES:\n", &mut left);
            // Reserve room for the elision marker so it always fits.
            const MARKER_RESERVE: usize = 28;
            let total = self.file_listing.len();
            let mut shown = 0usize;
            for (idx, entry) in self.file_listing.iter().enumerate() {
                let line = format!(
                    "- {} ({} B, step {})\n",
                    entry.relative_path, entry.byte_size, entry.modified_step
                );
                let len = line.chars().count();
                let is_last = idx + 1 == total;
                let room = if is_last { left } else { left.saturating_sub(MARKER_RESERVE) };
                if len <= room {
                    out.push_str(&line);
                    left -= len;
                    shown += 1;
                } else {
                    break;
                }
            }
            if shown < total {
                let marker = format!("… {} more files\n", total - shown);
                push_within(&mut out, &marker, &mut left);
            }
        }
        out
    }
}

/// Append as much of `piece` as fits in `left` characters.
fn push_within(out: &mut String, piece: &str, left: &mut usize) {
    let take = truncate_chars(piece, *left);
    out.push_str(take);
    *left -= take.chars().count();
}

fn base_files() -> BTreeMap<String, FileArtifact> {
    let mut files = BTreeMap::new();
    for name in ["plan.md", "progress.md"] {
        files.insert(
            name.to_string(),
            FileArtifact {
                relative_path: name.to_string(),
                byte_size: 0,
                created_step: 0,
                modified_step: 0,
                content_digest: sha256_hex(b""),
            },
        );
    }
    files
}

/// Remove everything except `logs/` and recreate the post-init tree.
fn reset_tree(task_dir: &Path) -> Result<(), WorkspaceError> {
    let entries = fs::read_dir(task_dir).map_err(|e| io_err(task_dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| io_err(task_dir, e))?;
        let name = entry.file_name();
        if name == "logs" {
            continue;
        }
        let path = entry.path();
        if path.is_dir() {
            fs::remove_dir_all(&path).map_err(|e| io_err(&path, e))?;
        } else {
            fs::remove_file(&path).map_err(|e| io_err(&path, e))?;
        }
    }
    fs::create_dir_all(task_dir.join("artifacts")).map_err(|e| io_err(task_dir, e))?;
    for name in ["plan.md", "progress.md"] {
        let path = task_dir.join(name);
        fs::write(&path, b"").map_err(|e| io_err(&path, e))?;
    }
    Ok(())
}

/// Parse the transition log, stopping at the first corrupt or torn record.
fn read_log(path: &Path) -> Result<(Vec<TransitionRecord>, ResumeReport), WorkspaceError> {
    let raw = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut records = Vec::new();
    let mut report = ResumeReport::default();
    let complete_lines = raw.ends_with('\n');
    let lines: Vec<&str> = raw.lines().collect();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let torn_tail = i + 1 == lines.len() && !complete_lines;
        match serde_json::from_str::<TransitionRecord>(line) {
            Ok(rec) if !torn_tail => {
                // Payload must match its recorded digest.
                match decode_payload(&rec) {
                    Ok(_) | Err(WorkspaceError::Io { .. }) => records.push(rec),
                    Err(_) => {
                        report.warning = Some(format!(
                            "corrupt payload at log line {}, halting replay",
                            i + 1
                        ));
                        report.discarded = lines.len() - i;
                        break;
                    }
                }
            }
            _ => {
                report.warning = Some(format!(
                    "unparseable record at log line {}, halting replay",
                    i + 1
                ));
                report.discarded = lines.len() - i;
                break;
            }
        }
    }
    report.replayed = records.len() as u64;
    Ok((records, report))
}

fn decode_payload(rec: &TransitionRecord) -> Result<Vec<u8>, WorkspaceError> {
    match rec.kind {
        TransitionKind::Delete => Ok(Vec::new()),
        _ => {
            let b64 = rec.payload_b64.as_deref().ok_or(WorkspaceError::CorruptLog {
                line: rec.step as usize,
                reason: "missing payload".into(),
            })?;
            let bytes = b64_decode(b64).map_err(|reason| WorkspaceError::CorruptLog {
                line: rec.step as usize,
                reason,
            })?;
            if sha256_hex(&bytes) != rec.payload_digest {
                return Err(WorkspaceError::CorruptLog {
                    line: rec.step as usize,
                    reason: "payload digest mismatch".into(),
                });
            }
            Ok(bytes)
        }
    }
}

fn b64_encode(bytes: &[u8]) -> String {
    use base64::Engine;
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

fn b64_decode(s: &str) -> Result<Vec<u8>, String> {
    use base64::Engine;
    base64::engine::general_purpose::STANDARD
        .decode(s)
        .map_err(|e| e.to_string())
}

fn validate_task_id(task_id: &str) -> Result<(), WorkspaceError> {
    let ok = !task_id.is_empty()
        && !task_id.starts_with('.')
        && task_id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(WorkspaceError::BadTaskId(task_id.to_string()))
    }
}

/// Normalize and check a transition target: relative, inside the task
/// directory, and not under the engine-owned `logs/` area.
fn validate_target(target: &str) -> Result<String, WorkspaceError> {
    if target.is_empty() {
        return Err(WorkspaceError::TransitionRejected("empty target".into()));
    }
    let p = Path::new(target);
    if p.is_absolute() {
        return Err(WorkspaceError::TransitionRejected(format!(
            "absolute target {:?}",
            target
        )));
    }
    let mut parts = Vec::new();
    for comp in p.components() {
        match comp {
            std::path::Component::Normal(c) => parts.push(c.to_string_lossy().to_string()),
            std::path::Component::CurDir => {}
            _ => {
                return Err(WorkspaceError::TransitionRejected(format!(
                    "target {:?} escapes the task directory",
                    target
                )))
            }
        }
    }
    if parts.is_empty() {
        return Err(WorkspaceError::TransitionRejected("empty target".into()));
    }
    if parts[0] == "logs" {
        return Err(WorkspaceError::TransitionRejected(
            "targets under logs/ are engine-owned".into(),
        ));
    }
    Ok(parts.join("/"))
}

fn io_err(path: &Path, e: std::io::Error) -> WorkspaceError {
    WorkspaceError::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

/// Digest of an entire task tree (paths + bytes), excluding `logs/`.
/// Used by tests and read-only inspection checks.
pub fn tree_digest(task_dir: &Path) -> Result<String, WorkspaceError> {
    let mut paths: Vec<PathBuf> = walkdir::WalkDir::new(task_dir)
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file())
        .map(|e| e.into_path())
        .filter(|p| {
            p.strip_prefix(task_dir)
                .map(|r| !r.starts_with("logs"))
                .unwrap_or(true)
        })
        .collect();
    paths.sort();
    let mut acc = String::new();
    for p in paths {
        let rel = p.strip_prefix(task_dir).unwrap_or(&p).to_string_lossy().to_string();
        let bytes = fs::read(&p).map_err(|e| io_err(&p, e))?;
        acc.push_str(&rel);
        acc.push('\0');
        acc.push_str(&sha256_hex(&bytes));
        acc.push('\n');
    }
    Ok(sha256_hex(acc.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use tempfile::TempDir;

    fn fresh() -> (Workspace, TempDir) {
        let dir = TempDir::new().unwrap();
        let ws = Workspace::init(dir.path(), "t1").unwrap();
        (ws, dir)
    }

    #[test]
    fn init_creates_layout() {
        let (ws, dir) = fresh();
        assert_eq!(ws.step_counter(), 0);
        let task = dir.path().join("t1");
        assert!(task.join("plan.md").is_file());
        assert!(task.join("progress.md").is_file());
        assert!(task.join("artifacts").is_dir());
        assert!(task.join(TRANSITION_LOG).is_file());
        assert!(task.join(ACTION_LOG).is_file());
        let names: Vec<_> = ws.files().map(|f| f.relative_path.as_str()).collect();
        assert_eq!(names, vec!["plan.md", "progress.md"]);
    }

    #[test]
    fn init_collision_refused() {
        let (_ws, dir) = fresh();
        let err = Workspace::init(dir.path(), "t1").unwrap_err();
        assert!(matches!(err, WorkspaceError::TaskCollision(_)));
    }

    #[test]
    fn init_rejects_bad_task_ids() {
        let dir = TempDir::new().unwrap();
        for bad in ["", "../x", "a/b", ".hidden", "sp ace"] {
            assert!(Workspace::init(dir.path(), bad).is_err(), "{bad:?}");
        }
    }

    #[cfg(unix)]
    #[test]
    fn init_on_readonly_root_fails() {
        use std::os::unix::fs::PermissionsExt;
        let dir = TempDir::new().unwrap();
        let ro = dir.path().join("ro");
        fs::create_dir(&ro).unwrap();
        fs::set_permissions(&ro, fs::Permissions::from_mode(0o555)).unwrap();
        // Permission bits do not bind a privileged user; skip there.
        if fs::write(ro.join("probe"), b"x").is_ok() {
            fs::set_permissions(&ro, fs::Permissions::from_mode(0o755)).unwrap();
            return;
        }
        let err = Workspace::init(&ro, "t1").unwrap_err();
        assert!(matches!(err, WorkspaceError::RootNotWritable(_, _)));
        fs::set_permissions(&ro, fs::Permissions::from_mode(0o755)).unwrap();
    }

    #[test]
    fn create_then_modify_then_delete() {
        let (mut ws, _dir) = fresh();
        let t = ws
            .apply_transition(&TransitionOp::create("notes/p1.md", vec![b'x'; 120]))
            .unwrap();
        assert_eq!(t, 1);
        let f = ws.file("notes/p1.md").unwrap();
        assert_eq!(f.byte_size, 120);
        assert_eq!(f.created_step, 1);
        assert_eq!(f.modified_step, 1);

        let digest_before = f.content_digest.clone();
        ws.apply_transition(&TransitionOp::modify("notes/p1.md", b"yy".to_vec()))
            .unwrap();
        let f = ws.file("notes/p1.md").unwrap();
        assert_eq!(f.byte_size, 2);
        assert_eq!(f.created_step, 1);
        assert_eq!(f.modified_step, 2);
        assert_ne!(f.content_digest, digest_before);

        ws.apply_transition(&TransitionOp::delete("notes/p1.md")).unwrap();
        assert!(!ws.contains("notes/p1.md"));
        assert_eq!(ws.step_counter(), 3);
    }

    #[test]
    fn rejected_transitions_are_side_effect_free() {
        let (mut ws, dir) = fresh();
        ws.apply_transition(&TransitionOp::create("artifacts/a.txt", b"a".to_vec()))
            .unwrap();
        let before = tree_digest(&dir.path().join("t1")).unwrap();
        let step_before = ws.step_counter();

        assert!(ws.apply_transition(&TransitionOp::delete("x.md")).is_err());
        assert!(ws
            .apply_transition(&TransitionOp::create("artifacts/a.txt", b"b".to_vec()))
            .is_err());
        assert!(ws
            .apply_transition(&TransitionOp::modify("missing.md", b"b".to_vec()))
            .is_err());
        assert!(ws
            .apply_transition(&TransitionOp::create("../escape.md", b"b".to_vec()))
            .is_err());
        assert!(ws
            .apply_transition(&TransitionOp::create("logs/evil.md", b"b".to_vec()))
            .is_err());

        assert_eq!(ws.step_counter(), step_before);
        assert_eq!(tree_digest(&dir.path().join("t1")).unwrap(), before);
    }

    #[test]
    fn snapshot_empty_workspace() {
        let (ws, _dir) = fresh();
        let snap = ws.snapshot(2000).unwrap();
        let render = snap.render(2000);
        assert!(render.contains("plan.md"));
        assert!(render.contains("progress.md"));
        assert!(snap.rendered_size < 200);
        assert_eq!(render.chars().count(), snap.rendered_size);
    }

    #[test]
    fn snapshot_is_deterministic() {
        let (mut ws, _dir) = fresh();
        for i in 0..20 {
            ws.apply_transition(&TransitionOp::create(
                format!("artifacts/f{i}.txt"),
                format!("content {i}").into_bytes(),
            ))
            .unwrap();
        }
        let a = ws.snapshot(1500).unwrap().render(1500);
        let b = ws.snapshot(1500).unwrap().render(1500);
        assert_eq!(a, b);
    }

    #[test]
    fn snapshot_truncates_large_listings() {
        let (mut ws, _dir) = fresh();
        for i in 0..1000 {
            ws.apply_transition(&TransitionOp::create(
                format!("artifacts/file-{i:04}.txt"),
                b"x".to_vec(),
            ))
            .unwrap();
        }
        let snap = ws.snapshot(2000).unwrap();
        assert!(snap.rendered_size <= 2000);
        let render = snap.render(2000);
        assert!(render.contains("more files"), "{render}");
    }

    #[test]
    fn snapshot_budget_bound_holds_across_budgets() {
        let (mut ws, _dir) = fresh();
        ws.apply_transition(&TransitionOp::modify(
            "plan.md",
            vec![b'p'; 5000],
        ))
        .unwrap();
        for i in 0..50 {
            ws.apply_transition(&TransitionOp::create(
                format!("artifacts/f{i}.txt"),
                b"x".to_vec(),
            ))
            .unwrap();
        }
        for budget in [512, 700, 1024, 4096, 100_000] {
            let snap = ws.snapshot(budget).unwrap();
            assert!(
                snap.rendered_size <= budget,
                "budget {budget} rendered {}",
                snap.rendered_size
            );
        }
    }

    #[test]
    fn snapshot_rejects_tiny_budget() {
        let (ws, _dir) = fresh();
        assert!(matches!(
            ws.snapshot(511),
            Err(WorkspaceError::BudgetTooSmall { .. })
        ));
    }

    #[test]
    fn snapshot_priority_keeps_plan_head() {
        let (mut ws, _dir) = fresh();
        ws.apply_transition(&TransitionOp::modify("plan.md", vec![b'P'; 400]))
            .unwrap();
        ws.apply_transition(&TransitionOp::modify("progress.md", vec![b'G'; 400]))
            .unwrap();
        let snap = ws.snapshot(512).unwrap();
        let render = snap.render(512);
        assert!(render.contains("PLAN:\nPPPP"));
        assert!(render.chars().count() <= 512);
    }

    #[test]
    fn resume_reconstructs_state() {
        let dir = TempDir::new().unwrap();
        let mut ws = Workspace::init(dir.path(), "t1").unwrap();
        for i in 0..10 {
            ws.apply_transition(&TransitionOp::create(
                format!("artifacts/f{i}.txt"),
                format!("body {i}").into_bytes(),
            ))
            .unwrap();
        }
        let snap_before = ws.snapshot(4096).unwrap().render(4096);
        drop(ws);

        let (ws2, report) = Workspace::resume(dir.path(), "t1").unwrap();
        assert_eq!(ws2.step_counter(), 10);
        assert_eq!(report.replayed, 10);
        assert!(report.warning.is_none());
        let snap_after = ws2.snapshot(4096).unwrap().render(4096);
        assert_eq!(snap_before, snap_after);
    }

    #[test]
    fn resume_missing_task_fails() {
        let dir = TempDir::new().unwrap();
        assert!(matches!(
            Workspace::resume(dir.path(), "nope"),
            Err(WorkspaceError::TaskNotFound(_, _))
        ));
    }

    #[test]
    fn resume_discards_torn_tail() {
        let dir = TempDir::new().unwrap();
        let mut ws = Workspace::init(dir.path(), "t1").unwrap();
        for i in 0..5 {
            ws.apply_transition(&TransitionOp::create(
                format!("artifacts/f{i}.txt"),
                b"x".to_vec(),
            ))
            .unwrap();
        }
        drop(ws);
        // Simulate a crash mid-append: half a record, no trailing newline.
        let log = dir.path().join("t1").join(TRANSITION_LOG);
        let mut raw = fs::read_to_string(&log).unwrap();
        raw.push_str("{\"step\":6,\"kind\":\"create\",\"target\":\"artifacts/f5");
        fs::write(&log, raw).unwrap();

        let (ws2, report) = Workspace::resume(dir.path(), "t1").unwrap();
        assert_eq!(ws2.step_counter(), 5);
        assert_eq!(report.replayed, 5);
        assert_eq!(report.discarded, 1);
        assert!(report.warning.is_some());
        assert!(!ws2.contains("artifacts/f5.txt"));
    }

    #[test]
    fn resume_repairs_unlogged_tree_damage() {
        let dir = TempDir::new().unwrap();
        let mut ws = Workspace::init(dir.path(), "t1").unwrap();
        ws.apply_transition(&TransitionOp::create("artifacts/a.txt", b"alpha".to_vec()))
            .unwrap();
        drop(ws);
        // Damage the tree without touching the log (simulates a crash
        // between the log append and the file write of a later op).
        fs::write(dir.path().join("t1/artifacts/a.txt"), b"garbage").unwrap();

        let (ws2, _) = Workspace::resume(dir.path(), "t1").unwrap();
        assert_eq!(ws2.read_file("artifacts/a.txt").unwrap(), b"alpha");
    }

    #[test]
    fn replay_of_random_histories_matches_live_tree() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let dir = TempDir::new().unwrap();
        let mut ws = Workspace::init(dir.path(), "live").unwrap();
        let pool: Vec<String> = (0..40).map(|i| format!("artifacts/n{i}.txt")).collect();

        let mut applied = 0;
        while applied < 500 {
            let target = pool[rng.gen_range(0..pool.len())].clone();
            let exists = ws.contains(&target);
            let op = if exists {
                if rng.gen_bool(0.3) {
                    TransitionOp::delete(target)
                } else {
                    let n = rng.gen_range(0..200);
                    TransitionOp::modify(target, vec![rng.gen::<u8>(); n])
                }
            } else {
                let n = rng.gen_range(0..200);
                TransitionOp::create(target, vec![rng.gen::<u8>(); n])
            };
            ws.apply_transition(&op).unwrap();
            applied += 1;
        }
        let live = tree_digest(&dir.path().join("live")).unwrap();
        drop(ws);

        // Replay the log into a second task directory and compare trees.
        let log = dir.path().join("live").join(TRANSITION_LOG);
        let mut replayed = Workspace::init(dir.path(), "replayed").unwrap();
        fs::copy(&log, dir.path().join("replayed").join(TRANSITION_LOG)).unwrap();
        let (records, _) = read_log(&log).unwrap();
        for rec in &records {
            replayed.apply_record(rec).unwrap();
        }
        let copy = tree_digest(&dir.path().join("replayed")).unwrap();
        assert_eq!(live, copy);
        assert_eq!(replayed.step_counter(), 500);
    }

    #[test]
    fn open_readonly_rejects_transitions_and_reads_metadata() {
        let dir = TempDir::new().unwrap();
        let mut ws = Workspace::init(dir.path(), "t1").unwrap();
        ws.apply_transition(&TransitionOp::create("artifacts/a.txt", b"a".to_vec()))
            .unwrap();
        drop(ws);

        let before = tree_digest(&dir.path().join("t1")).unwrap();
        let mut ro = Workspace::open_readonly(dir.path(), "t1").unwrap();
        assert_eq!(ro.step_counter(), 1);
        assert!(ro.contains("artifacts/a.txt"));
        assert!(ro
            .apply_transition(&TransitionOp::create("artifacts/b.txt", b"b".to_vec()))
            .is_err());
        assert_eq!(tree_digest(&dir.path().join("t1")).unwrap(), before);
    }
}
