//! Tool registry, built-in atomic tools, and the external-attention
//! document pipeline.
//!
//! File tools mutate the workspace only through [`TransitionOp`]s, so every
//! write lands in the transition log. `answer_from_document` reads heavy
//! documents in isolated backend sessions: the document is chunked, each
//! chunk queried in a session that carries no main-agent context, the
//! per-chunk findings reduced by one final isolated call, and only the
//! extracted answer (capped at the action-record limit) crosses back.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backend::{estimate_size, LlmBackend, LlmRequest, Message, SessionTag};
use crate::context::cap_summary;
use crate::error::ToolError;
use crate::workspace::{TransitionOp, Workspace};

/// Chunk size for the isolated document reader, in characters.
pub const DOC_CHUNK_SIZE: usize = 8000;
/// Overlap between consecutive chunks, in characters.
pub const DOC_CHUNK_OVERLAP: usize = 400;
/// Default per-call cap for `read_file`, in bytes.
pub const DEFAULT_READ_CAP: usize = 4096;
/// Search snippets stay below the containment scan window (64 chars).
const SEARCH_SNIPPET_CAP: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolEffects {
    ReadOnly,
    WorkspaceWrite,
    ExternalCall,
}

/// One named parameter in a tool's argument schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArgSpec {
    pub name: String,
    pub kind: String,
    pub required: bool,
}

impl ArgSpec {
    fn new(name: &str, kind: &str, required: bool) -> Self {
        Self { name: name.into(), kind: kind.into(), required }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub name: String,
    pub description: String,
    pub arg_schema: Vec<ArgSpec>,
    pub effects: ToolEffects,
}

/// Everything a tool may touch during one invocation.
pub struct ToolContext<'a> {
    pub ws: &'a mut Workspace,
    pub backend: &'a dyn LlmBackend,
    pub corpus: Option<&'a Corpus>,
    pub read_cap: usize,
}

type ToolFn = Box<dyn Fn(&Value, &mut ToolContext) -> Result<String, ToolError> + Send + Sync>;

/// Named tools with deterministic listing order.
#[derive(Default)]
pub struct ToolRegistry {
    tools: BTreeMap<String, (ToolDescriptor, ToolFn)>,
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// All built-in tools registered.
    pub fn with_builtins() -> Self {
        let mut reg = Self::new();
        register_builtins(&mut reg).expect("builtin names are unique");
        reg
    }

    pub fn register(&mut self, desc: ToolDescriptor, imp: ToolFn) -> Result<(), ToolError> {
        if self.tools.contains_key(&desc.name) {
            return Err(ToolError::DuplicateName(desc.name));
        }
        self.tools.insert(desc.name.clone(), (desc, imp));
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tools.contains_key(name)
    }

    pub fn names(&self) -> BTreeSet<String> {
        self.tools.keys().cloned().collect()
    }

    pub fn descriptor(&self, name: &str) -> Option<&ToolDescriptor> {
        self.tools.get(name).map(|(d, _)| d)
    }

    pub fn invoke(
        &self,
        name: &str,
        args: &Value,
        ctx: &mut ToolContext,
    ) -> Result<String, ToolError> {
        let (_, imp) = self
            .tools
            .get(name)
            .ok_or_else(|| ToolError::Unknown(name.to_string()))?;
        imp(args, ctx)
    }

    /// Deterministic listing for agent preambles: names, arg schemas, and
    /// descriptions, restricted to `allowed` when given.
    pub fn render_listing(&self, allowed: Option<&BTreeSet<String>>) -> String {
        let mut out = String::new();
        for (name, (desc, _)) in &self.tools {
            if let Some(allowed) = allowed {
                if !allowed.contains(name) {
                    continue;
                }
            }
            let args = desc
                .arg_schema
                .iter()
                .map(|a| {
                    if a.required {
                        format!("{}: {}", a.name, a.kind)
                    } else {
                        format!("{}?: {}", a.name, a.kind)
                    }
                })
                .collect::<Vec<_>>()
                .join(", ");
            out.push_str(&format!("- {name}({args}): {}\n", desc.description));
        }
        out
    }
}

fn required_str<'a>(args: &'a Value, key: &str) -> Result<&'a str, ToolError> {
    args.get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| ToolError::BadArgument {
            arg: key.to_string(),
            reason: "missing or not a string".into(),
        })
}

/// Reject paths that could resolve outside the task directory.
fn checked_rel_path(raw: &str) -> Result<String, ToolError> {
    let p = Path::new(raw);
    if raw.is_empty() || p.is_absolute() {
        return Err(ToolError::PathEscape(raw.to_string()));
    }
    for comp in p.components() {
        match comp {
            std::path::Component::Normal(_) | std::path::Component::CurDir => {}
            _ => return Err(ToolError::PathEscape(raw.to_string())),
        }
    }
    Ok(raw.to_string())
}

fn register_builtins(reg: &mut ToolRegistry) -> Result<(), ToolError> {
    reg.register(
        ToolDescriptor {
            name: "read_file".into(),
            description: "read a workspace file in capped segments; returns a continuation offset"
                .into(),
            arg_schema: vec![
                ArgSpec::new("path", "string", true),
                ArgSpec::new("offset", "integer", false),
            ],
            effects: ToolEffects::ReadOnly,
        },
        Box::new(tool_read_file),
    )?;
    reg.register(
        ToolDescriptor {
            name: "write_file".into(),
            description: "create or overwrite a workspace file with the given text".into(),
            arg_schema: vec![
                ArgSpec::new("path", "string", true),
                ArgSpec::new("content", "string", true),
            ],
            effects: ToolEffects::WorkspaceWrite,
        },
        Box::new(tool_write_file),
    )?;
    reg.register(
        ToolDescriptor {
            name: "list_dir".into(),
            description: "list tracked workspace files, optionally under a prefix".into(),
            arg_schema: vec![ArgSpec::new("prefix", "string", false)],
            effects: ToolEffects::ReadOnly,
        },
        Box::new(tool_list_dir),
    )?;
    reg.register(
        ToolDescriptor {
            name: "answer_from_document".into(),
            description: "answer a query over a heavy document in isolated model sessions; \
                          only the extracted answer is returned"
                .into(),
            arg_schema: vec![
                ArgSpec::new("query", "string", true),
                ArgSpec::new("source", "string", true),
                ArgSpec::new("id", "string", false),
                ArgSpec::new("path", "string", false),
            ],
            effects: ToolEffects::ExternalCall,
        },
        Box::new(tool_answer_from_document),
    )?;
    reg.register(
        ToolDescriptor {
            name: "search_corpus".into(),
            description: "deterministic keyword search over the local corpus".into(),
            arg_schema: vec![
                ArgSpec::new("query", "string", true),
                ArgSpec::new("limit", "integer", false),
            ],
            effects: ToolEffects::ReadOnly,
        },
        Box::new(tool_search_corpus),
    )?;
    Ok(())
}

fn tool_read_file(args: &Value, ctx: &mut ToolContext) -> Result<String, ToolError> {
    let path = checked_rel_path(required_str(args, "path")?)?;
    let offset = args.get("offset").and_then(Value::as_u64).unwrap_or(0) as usize;
    if !ctx.ws.contains(&path) {
        return Err(ToolError::NotFound(path));
    }
    let bytes = ctx.ws.read_file(&path)?;
    let total = bytes.len();
    if offset >= total {
        return Ok(format!("bytes {offset}..{offset} of {total}\n[end of file]"));
    }
    let end = (offset + ctx.read_cap).min(total);
    let body = String::from_utf8_lossy(&bytes[offset..end]);
    let marker = if end < total {
        format!("[truncated; continue at offset {end}]")
    } else {
        "[end of file]".to_string()
    };
    Ok(format!("bytes {offset}..{end} of {total}\n{body}\n{marker}"))
}

fn tool_write_file(args: &Value, ctx: &mut ToolContext) -> Result<String, ToolError> {
    let path = checked_rel_path(required_str(args, "path")?)?;
    let content = required_str(args, "content")?.as_bytes().to_vec();
    let size = content.len();
    let op = if ctx.ws.contains(&path) {
        TransitionOp::modify(path.clone(), content)
    } else {
        TransitionOp::create(path.clone(), content)
    };
    let step = ctx.ws.apply_transition(&op)?;
    Ok(format!("wrote {size} bytes to {path} (transition {step})"))
}

fn tool_list_dir(args: &Value, ctx: &mut ToolContext) -> Result<String, ToolError> {
    let prefix = args.get("prefix").and_then(Value::as_str).unwrap_or("");
    let mut out = String::new();
    let mut count = 0;
    for f in ctx.ws.files() {
        if !f.relative_path.starts_with(prefix) {
            continue;
        }
        out.push_str(&format!(
            "- {} ({} B, step {})\n",
            f.relative_path, f.byte_size, f.modified_step
        ));
        count += 1;
    }
    Ok(format!("{count} files\n{out}"))
}

fn tool_answer_from_document(args: &Value, ctx: &mut ToolContext) -> Result<String, ToolError> {
    let query = required_str(args, "query")?;
    let source = required_str(args, "source")?;
    let doc = match source {
        "corpus" => DocumentRef {
            source: DocumentSource::CorpusItem,
            identifier: required_str(args, "id")?.to_string(),
            media: DocumentMedia::PlainText,
        },
        "workspace" => DocumentRef {
            source: DocumentSource::WorkspaceFile,
            identifier: checked_rel_path(required_str(args, "path")?)?,
            media: DocumentMedia::PlainText,
        },
        other => {
            return Err(ToolError::BadArgument {
                arg: "source".into(),
                reason: format!("expected corpus or workspace, got {other:?}"),
            })
        }
    };
    let answer = answer_from_document(query, &doc, ctx.backend, ctx.corpus, ctx.ws)?;
    Ok(format!(
        "{} [chunks={}, isolated_chars={}]",
        answer.answer, answer.chunks_consulted, answer.session_tokens_estimate
    ))
}

fn tool_search_corpus(args: &Value, ctx: &mut ToolContext) -> Result<String, ToolError> {
    let query = required_str(args, "query")?;
    let limit = args.get("limit").and_then(Value::as_u64).unwrap_or(5) as usize;
    let corpus = match ctx.corpus {
        Some(c) => c,
        None => return Ok("0 results (no corpus loaded)".to_string()),
    };
    let results = search_corpus(corpus, query, limit);
    let mut out = format!("{} results\n", results.len());
    for r in results {
        out.push_str(&format!("- {} {} — {}\n", r.id, r.title, r.snippet));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Corpus
// ---------------------------------------------------------------------------

/// One corpus item's identity row, loaded from `<id>/meta.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusItemMeta {
    pub id: String,
    pub title: String,
    #[serde(default)]
    pub metadata: Value,
}

/// A directory of items, each `<id>/meta.json` plus `<id>/body.txt`.
/// Bodies are read on demand.
#[derive(Debug, Clone)]
pub struct Corpus {
    dir: PathBuf,
    items: Vec<CorpusItemMeta>,
}

impl Corpus {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, ToolError> {
        let dir = dir.as_ref().to_path_buf();
        let mut items = Vec::new();
        let entries = fs::read_dir(&dir)
            .map_err(|e| ToolError::DocumentUnreadable(format!("{}: {e}", dir.display())))?;
        for entry in entries {
            let entry = entry.map_err(|e| ToolError::DocumentUnreadable(e.to_string()))?;
            if !entry.path().is_dir() {
                continue;
            }
            let meta_path = entry.path().join("meta.json");
            let raw = fs::read_to_string(&meta_path).map_err(|e| {
                ToolError::DocumentUnreadable(format!("{}: {e}", meta_path.display()))
            })?;
            let meta: CorpusItemMeta = serde_json::from_str(&raw).map_err(|e| {
                ToolError::DocumentUnreadable(format!("{}: {e}", meta_path.display()))
            })?;
            items.push(meta);
        }
        items.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(Self { dir, items })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn items(&self) -> &[CorpusItemMeta] {
        &self.items
    }

    pub fn item(&self, id: &str) -> Option<&CorpusItemMeta> {
        self.items.iter().find(|m| m.id == id)
    }

    pub fn body(&self, id: &str) -> Result<String, ToolError> {
        let path = self.dir.join(id).join("body.txt");
        fs::read_to_string(&path)
            .map_err(|e| ToolError::DocumentUnreadable(format!("{}: {e}", path.display())))
    }

    /// Raw meta.json text, used by the groundedness judge.
    pub fn meta_raw(&self, id: &str) -> Result<String, ToolError> {
        let path = self.dir.join(id).join("meta.json");
        fs::read_to_string(&path)
            .map_err(|e| ToolError::DocumentUnreadable(format!("{}: {e}", path.display())))
    }
}

// ---------------------------------------------------------------------------
// External attention
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DocumentSource {
    WorkspaceFile,
    CorpusItem,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DocumentMedia {
    PlainText,
    PdfTextExtracted,
}

#[derive(Debug, Clone)]
pub struct DocumentRef {
    pub source: DocumentSource,
    pub identifier: String,
    pub media: DocumentMedia,
}

/// What comes back from the isolated reader: the extracted answer only.
#[derive(Debug, Clone)]
pub struct ExternalAnswer {
    pub answer: String,
    pub chunks_consulted: usize,
    pub session_tokens_estimate: usize,
}

/// Split text into fixed-size chunks with overlap, in characters.
pub fn chunk_text(text: &str, size: usize, overlap: usize) -> Vec<String> {
    assert!(size > overlap, "chunk size must exceed overlap");
    let chars: Vec<char> = text.chars().collect();
    if chars.len() <= size {
        return vec![text.to_string()];
    }
    let stride = size - overlap;
    let mut chunks = Vec::new();
    let mut start = 0;
    while start < chars.len() {
        let end = (start + size).min(chars.len());
        chunks.push(chars[start..end].iter().collect());
        if end == chars.len() {
            break;
        }
        start += stride;
    }
    chunks
}

/// Query a document in isolated backend sessions and return only the
/// extracted answer. No chunk text reaches the caller; the sessions are
/// discarded and only their character usage is reported.
pub fn answer_from_document(
    query: &str,
    doc: &DocumentRef,
    backend: &dyn LlmBackend,
    corpus: Option<&Corpus>,
    ws: &Workspace,
) -> Result<ExternalAnswer, ToolError> {
    if query.trim().is_empty() {
        return Err(ToolError::BadArgument {
            arg: "query".into(),
            reason: "empty query".into(),
        });
    }
    let text = match doc.source {
        DocumentSource::CorpusItem => {
            let corpus = corpus.ok_or_else(|| {
                ToolError::DocumentUnreadable("no corpus loaded".to_string())
            })?;
            corpus.body(&doc.identifier)?
        }
        DocumentSource::WorkspaceFile => {
            if !ws.contains(&doc.identifier) {
                return Err(ToolError::DocumentUnreadable(doc.identifier.clone()));
            }
            String::from_utf8_lossy(&ws.read_file(&doc.identifier)?).into_owned()
        }
    };

    let chunks = chunk_text(&text, DOC_CHUNK_SIZE, DOC_CHUNK_OVERLAP);
    let total_chunks = chunks.len();
    let mut session_chars = 0usize;
    let mut findings = Vec::new();

    for (i, chunk) in chunks.iter().enumerate() {
        let req = LlmRequest::new(
            vec![
                Message::system("You extract answers from document chunks. Reply with the \
                                 relevant finding only, or NO_FINDING."),
                Message::user(format!(
                    "EXTRACT:: {query}\nDOCUMENT CHUNK {}/{}:\n{}",
                    i + 1,
                    total_chunks,
                    chunk
                )),
            ],
            1024,
            SessionTag::IsolatedReader,
        );
        session_chars += req.total_chars();
        let resp = backend.complete(&req);
        if resp.is_error() {
            return Err(ToolError::PartialAnswer {
                chunks_consulted: i,
                reason: resp.error_detail.unwrap_or_else(|| "backend error".into()),
            });
        }
        session_chars += estimate_size(&resp.content);
        findings.push(resp.content);
    }

    let findings_block = findings
        .iter()
        .enumerate()
        .map(|(i, f)| format!("{}. {}", i + 1, f))
        .collect::<Vec<_>>()
        .join("\n");
    let reduce = LlmRequest::new(
        vec![
            Message::system("You combine per-chunk findings into one answer. Reply with the \
                             answer only."),
            Message::user(format!("REDUCE:: {query}\nFINDINGS:\n{findings_block}")),
        ],
        1024,
        SessionTag::IsolatedReader,
    );
    session_chars += reduce.total_chars();
    let resp = backend.complete(&reduce);
    if resp.is_error() {
        return Err(ToolError::PartialAnswer {
            chunks_consulted: total_chunks,
            reason: resp.error_detail.unwrap_or_else(|| "backend error".into()),
        });
    }
    session_chars += estimate_size(&resp.content);

    Ok(ExternalAnswer {
        // Capped before it can enter any context.
        answer: cap_summary(&resp.content),
        chunks_consulted: total_chunks,
        session_tokens_estimate: session_chars,
    })
}

// ---------------------------------------------------------------------------
// Local search stub
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub id: String,
    pub title: String,
    pub snippet: String,
    pub score: usize,
}

/// Deterministic keyword ranking over corpus titles and bodies. Title hits
/// weigh double; ties break toward the lower id.
pub fn search_corpus(corpus: &Corpus, query: &str, limit: usize) -> Vec<SearchResult> {
    let terms: Vec<String> = query
        .to_lowercase()
        .split_whitespace()
        .map(str::to_string)
        .collect();
    if terms.is_empty() {
        return Vec::new();
    }
    let mut scored: Vec<SearchResult> = Vec::new();
    for item in corpus.items() {
        let title_lc = item.title.to_lowercase();
        let body_lc = corpus.body(&item.id).unwrap_or_default().to_lowercase();
        let mut score = 0usize;
        for term in &terms {
            score += 2 * title_lc.matches(term.as_str()).count();
            score += body_lc.matches(term.as_str()).count();
        }
        if score > 0 {
            let snippet: String = crate::util::truncate_chars(
                &crate::util::single_line(&body_lc),
                SEARCH_SNIPPET_CAP,
            )
            .to_string();
            scored.push(SearchResult {
                id: item.id.clone(),
                title: item.title.clone(),
                snippet,
                score,
            });
        }
    }
    scored.sort_by(|a, b| b.score.cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
    scored.truncate(limit);
    scored
}
