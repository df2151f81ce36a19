//! Agent runtime with file-centric persistent task state and a strictly
//! bounded per-step reasoning context.
//!
//! The workspace directory is the authoritative record of task progress;
//! the prompt sent to the model each step is rebuilt from a budgeted
//! workspace snapshot plus a fixed-length window of recent actions, so its
//! size stays constant no matter how long the task runs. A three-level
//! agent hierarchy executes strictly serially, heavy documents are read in
//! isolated model sessions that return only extracted answers, and an
//! evaluation harness measures long-horizon coverage against a
//! compressed-context baseline.

pub mod backend;
pub mod config;
pub mod context;
pub mod engine;
pub mod error;
pub mod eval;
pub mod hierarchy;
pub mod tools;
pub mod workspace;

mod util;

pub use backend::{estimate_size, LlmBackend, LlmRequest, LlmResponse, MockBackend, MockPolicy};
pub use context::{ActionRecord, ActionWindow, BoundedContext, ConsolidationPolicy};
pub use engine::{Engine, EngineConfig, ExecutionMode};
pub use hierarchy::{AgentOutcome, AgentSpec, Level, OutcomeStatus};
pub use tools::{Corpus, ToolDescriptor, ToolRegistry};
pub use workspace::{StateSnapshot, TransitionKind, TransitionOp, Workspace};
