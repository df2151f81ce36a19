//! Error types shared across the runtime.

use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by workspace setup, transitions, snapshots, and resume.
#[derive(Debug, Error)]
pub enum WorkspaceError {
    #[error("workspace root {0} is not writable: {1}")]
    RootNotWritable(PathBuf, String),
    #[error("task id {0:?} is not filesystem-safe or empty")]
    BadTaskId(String),
    #[error("task {0:?} already exists (pass resume to reopen)")]
    TaskCollision(String),
    #[error("task {0:?} not found under {1}")]
    TaskNotFound(String, PathBuf),
    #[error("transition rejected: {0}")]
    TransitionRejected(String),
    #[error("snapshot budget {got} below minimum {min}")]
    BudgetTooSmall { got: usize, min: usize },
    #[error("transition log corrupt at line {line}: {reason}")]
    CorruptLog { line: usize, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Errors raised while maintaining the action window or building contexts.
#[derive(Debug, Error)]
pub enum ContextError {
    #[error("action step {got} does not advance past {last}")]
    NonIncreasingStep { got: u64, last: u64 },
    #[error("context budget {got} below minimum {min}")]
    BudgetTooSmall { got: usize, min: usize },
    #[error("snapshot budget {snap} exceeds half of context budget {budget}")]
    SnapshotTooLarge { snap: usize, budget: usize },
    #[error("preamble and objective alone ({fixed} chars) exceed budget {budget}")]
    FixedSectionsExceedBudget { fixed: usize, budget: usize },
}

/// Errors raised by tool registration and invocation.
#[derive(Debug, Error)]
pub enum ToolError {
    #[error("tool {0:?} already registered")]
    DuplicateName(String),
    #[error("unknown tool {0:?}")]
    Unknown(String),
    #[error("bad argument {arg}: {reason}")]
    BadArgument { arg: String, reason: String },
    #[error("path {0:?} escapes the workspace root")]
    PathEscape(String),
    #[error("file not found: {0}")]
    NotFound(String),
    #[error("document unreadable: {0}")]
    DocumentUnreadable(String),
    #[error("backend failed during reduction after {chunks_consulted} chunks: {reason}")]
    PartialAnswer {
        chunks_consulted: usize,
        reason: String,
    },
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
}

/// Errors raised by backend construction and request validation.
#[derive(Debug, Error)]
pub enum BackendError {
    #[error("request must contain at least one message")]
    EmptyRequest,
    #[error("mock policy invalid: {0}")]
    BadPolicy(String),
    #[error("backend configuration invalid: {0}")]
    BadConfig(String),
}

/// Errors raised by hierarchy validation and the execution engine.
#[derive(Debug, Error)]
pub enum EngineError {
    #[error("hierarchy invalid: {0}")]
    InvalidHierarchy(String),
    #[error("unknown agent {0:?}")]
    UnknownAgent(String),
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Errors raised while loading run or hierarchy configuration.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {reason}")]
    Unreadable { path: PathBuf, reason: String },
    #[error("cannot parse {path}: {reason}")]
    Unparseable { path: PathBuf, reason: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Errors raised by the evaluation harness.
#[derive(Debug, Error)]
pub enum EvalError {
    #[error("corpus error: {0}")]
    Corpus(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
