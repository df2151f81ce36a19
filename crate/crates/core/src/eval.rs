//! Long-horizon literature-review evaluation: synthetic corpus generation,
//! the coverage metric, repeated runs with max/min/avg reporting, and the
//! compressed-context ablation.
//!
//! The corpus is deterministic per seed. Every item body carries at least
//! three planted factual sentences (each under the 64-character containment
//! window, absent from title and metadata), so groundedness is decidable
//! without a judge model: a summary is grounded iff it shares a contiguous
//! run of four or more words with the body that does not occur in the
//! title or metadata.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{MockBackend, MockPolicy, OverflowBehavior};
use crate::context::{ConsolidationPolicy, CONSOLIDATION_MARKER};
use crate::engine::{read_context_log, Engine, EngineConfig, ExecutionMode};
use crate::error::EvalError;
use crate::hierarchy::{AgentSpec, Level};
use crate::tools::{Corpus, ToolRegistry};
use crate::workspace::Workspace;

/// Marker that opens every literature-review objective; the scripted mock
/// keys its main-loop rules on it.
pub const TASK_BRIEF_MARKER: &str = "TASK-BRIEF::";

/// Minimum body length per corpus item, in characters.
pub const MIN_BODY_CHARS: usize = 20_000;

/// Containment scan window, in characters.
pub const CONTAINMENT_WINDOW: usize = 64;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LitReviewConfig {
    pub n_items: usize,
    pub runs: usize,
    pub mode: ExecutionMode,
    pub seed: u64,
    /// Minimum summary length (characters) to count as present.
    pub per_item_summary_min: usize,
    /// Mock backend context-window limit.
    pub context_limit: usize,
    pub on_overflow: OverflowBehavior,
    /// Per-agent context budget in file-centric mode.
    pub context_budget: usize,
    pub consolidation_interval: u64,
}

impl Default for LitReviewConfig {
    fn default() -> Self {
        Self {
            n_items: 80,
            runs: 10,
            mode: ExecutionMode::FileCentric,
            seed: 42,
            per_item_summary_min: 1,
            context_limit: 16_384,
            on_overflow: OverflowBehavior::TruncateHead,
            context_budget: 8192,
            consolidation_interval: 25,
        }
    }
}

// ---------------------------------------------------------------------------
// Corpus generation
// ---------------------------------------------------------------------------

const BODY_WORDS: &[&str] = &[
    "the", "a", "over", "with", "through", "across", "between", "within", "during", "these",
    "results", "values", "samples", "signals", "traces", "records", "workers", "nodes", "links",
    "queues", "paths", "cells", "rates", "costs", "gains", "shifts", "phases", "rounds", "passes",
    "moves", "settle", "diverge", "converge", "align", "vary", "persist", "decay", "cluster",
    "spread", "remain", "slowly", "quickly", "rarely", "often", "evenly", "roughly", "nearly",
    "mostly", "barely", "widely",
];

const FACT_ADJ: &[&str] = &[
    "adaptive", "bounded", "cyclic", "layered", "mirrored", "staged", "tiered", "paired",
];
const FACT_NOUN: &[&str] = &[
    "ledger", "router", "index", "buffer", "planner", "encoder", "scheduler", "resolver",
];
const FACT_VERB: &[&str] = &[
    "restores", "reorders", "preempts", "batches", "dampens", "smooths", "boosts", "steadies",
];
const FACT_COND: &[&str] = &[
    "bursty", "sparse", "mixed", "heavy", "cold", "peak", "noisy", "steady",
];

const TITLE_WORDS: &[&str] = &[
    "Meridian", "Lattice", "Halcyon", "Vertex", "Quorum", "Cascade", "Drift", "Signal", "Relay",
    "Prism", "Atlas", "Crown",
];
const VENUES: &[&str] = &["Symposium", "Workshop", "Conference", "Letters"];

/// A generated corpus plus the planted sentences per item id, in order.
#[derive(Debug, Clone)]
pub struct GeneratedCorpus {
    pub corpus: Corpus,
    pub facts: BTreeMap<String, Vec<String>>,
}

impl GeneratedCorpus {
    pub fn item_ids(&self) -> Vec<String> {
        self.facts.keys().cloned().collect()
    }
}

fn item_id(index: usize) -> String {
    format!("item-{:04}", index + 1)
}

fn fact_sentence(rng: &mut ChaCha8Rng, index: usize, fact_no: usize) -> String {
    let s = format!(
        "finding {:04}-{}: {} {} {} under {} load",
        index + 1,
        fact_no,
        FACT_ADJ[rng.gen_range(0..FACT_ADJ.len())],
        FACT_NOUN[rng.gen_range(0..FACT_NOUN.len())],
        FACT_VERB[rng.gen_range(0..FACT_VERB.len())],
        FACT_COND[rng.gen_range(0..FACT_COND.len())],
    );
    // A single whitespace char adjacent to the sentence is shared between
    // body lines and context renderings, so the sentence itself must stay
    // at least two characters below the containment window.
    assert!(s.chars().count() < CONTAINMENT_WINDOW - 1);
    s
}

/// Generate `n` corpus items under `dir`, deterministically per seed.
/// Each body is at least [`MIN_BODY_CHARS`] characters of seeded pseudo-text
/// carrying three unique planted sentences absent from title and metadata.
pub fn generate_corpus(
    dir: impl AsRef<Path>,
    n: usize,
    seed: u64,
) -> Result<GeneratedCorpus, EvalError> {
    let dir = dir.as_ref();
    let mut facts = BTreeMap::new();
    for index in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9).wrapping_add(index as u64));
        let id = item_id(index);
        let item_dir = dir.join(&id);
        fs::create_dir_all(&item_dir).map_err(|e| EvalError::Io { path: item_dir.clone(), source: e })?;

        let title = format!(
            "Study {:04}: {} {} {}",
            index + 1,
            TITLE_WORDS[rng.gen_range(0..TITLE_WORDS.len())],
            TITLE_WORDS[rng.gen_range(0..TITLE_WORDS.len())],
            TITLE_WORDS[rng.gen_range(0..TITLE_WORDS.len())],
        );
        let meta = serde_json::json!({
            "id": id,
            "title": title,
            "metadata": {
                "year": 2010 + rng.gen_range(0..15),
                "venue": format!("{} {}", VENUES[rng.gen_range(0..VENUES.len())], rng.gen_range(1..30)),
            }
        });

        let item_facts: Vec<String> =
            (1..=3).map(|k| fact_sentence(&mut rng, index, k)).collect();

        // Seeded pseudo-text body; length varies with the seed so the
        // ablation's truncation point differs run to run.
        let target = MIN_BODY_CHARS + rng.gen_range(0..4000);
        let mut lines: Vec<String> = Vec::new();
        let mut total = 0usize;
        while total < target {
            let words = rng.gen_range(8..14);
            let line: Vec<&str> = (0..words)
                .map(|_| BODY_WORDS[rng.gen_range(0..BODY_WORDS.len())])
                .collect();
            let line = line.join(" ");
            total += line.len() + 1;
            lines.push(line);
        }
        // Plant marker + fact lines at spread positions.
        for (k, fact) in item_facts.iter().enumerate() {
            let pos = (lines.len() * (k + 1)) / 4;
            lines.insert(pos.min(lines.len()), format!("[[fact:{id}]] {fact}"));
        }
        let body = lines.join("\n");

        let meta_path = item_dir.join("meta.json");
        fs::write(&meta_path, meta.to_string())
            .map_err(|e| EvalError::Io { path: meta_path, source: e })?;
        let body_path = item_dir.join("body.txt");
        fs::write(&body_path, &body)
            .map_err(|e| EvalError::Io { path: body_path, source: e })?;

        facts.insert(id, item_facts);
    }
    let corpus = Corpus::load(dir).map_err(|e| EvalError::Corpus(e.to_string()))?;
    Ok(GeneratedCorpus { corpus, facts })
}

// ---------------------------------------------------------------------------
// Groundedness judge
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundednessJudgment {
    pub item_id: String,
    pub summary_present: bool,
    pub grounded: bool,
    pub evidence_span: String,
}

fn normalize_words(s: &str) -> Vec<String> {
    s.to_lowercase().split_whitespace().map(str::to_string).collect()
}

/// Flatten a JSON document to its scalar values so metadata phrases are
/// matched as words, not as quoted JSON syntax. Non-JSON text passes
/// through unchanged.
pub fn flatten_json_values(raw: &str) -> String {
    fn walk(v: &serde_json::Value, out: &mut Vec<String>) {
        match v {
            serde_json::Value::String(s) => out.push(s.clone()),
            serde_json::Value::Number(n) => out.push(n.to_string()),
            serde_json::Value::Bool(b) => out.push(b.to_string()),
            serde_json::Value::Array(items) => items.iter().for_each(|i| walk(i, out)),
            serde_json::Value::Object(map) => map.values().for_each(|i| walk(i, out)),
            serde_json::Value::Null => {}
        }
    }
    match serde_json::from_str::<serde_json::Value>(raw) {
        Ok(v) => {
            let mut out = Vec::new();
            walk(&v, &mut out);
            out.join(" ")
        }
        Err(_) => raw.to_string(),
    }
}

fn occurs(needle: &[String], hay: &[String]) -> bool {
    if needle.is_empty() || needle.len() > hay.len() {
        return false;
    }
    hay.windows(needle.len()).any(|w| w == needle)
}

/// Judge whether `summary` is grounded in the item body: it must contain a
/// contiguous run of at least four words that occurs in the body (case-
/// folded, whitespace-normalized) and does not occur in the title or
/// metadata. The first such run becomes the evidence span.
///
/// `meta_text` should carry the metadata values (see
/// [`flatten_json_values`]), not raw JSON syntax.
pub fn judge_grounded(
    summary: &str,
    item_id: &str,
    body: &str,
    title: &str,
    meta_text: &str,
    min_summary_chars: usize,
) -> GroundednessJudgment {
    let summary_present = summary.trim().chars().count() >= min_summary_chars.max(1);
    if !summary_present {
        return GroundednessJudgment {
            item_id: item_id.to_string(),
            summary_present: false,
            grounded: false,
            evidence_span: String::new(),
        };
    }

    let summary_words = normalize_words(summary);
    let body_words = normalize_words(body);
    let excluded_words = normalize_words(&format!("{title} {meta_text}"));

    // 4-gram index for the common case; longer runs fall back to scans.
    let body_4grams: HashSet<String> = body_words
        .windows(4)
        .map(|w| w.join(" "))
        .collect();

    // Runs longer than this cannot help: the exclusion text would need to
    // contain every sub-run, which our metadata sizes make impossible.
    let max_run = 24usize.min(summary_words.len());

    for start in 0..summary_words.len().saturating_sub(3) {
        for len in 4..=max_run.min(summary_words.len() - start) {
            let run = &summary_words[start..start + len];
            let in_body = if len == 4 {
                body_4grams.contains(&run.join(" "))
            } else {
                occurs(run, &body_words)
            };
            if !in_body {
                break; // longer runs from this start cannot be in the body
            }
            if !occurs(run, &excluded_words) {
                return GroundednessJudgment {
                    item_id: item_id.to_string(),
                    summary_present: true,
                    grounded: true,
                    evidence_span: run.join(" "),
                };
            }
        }
    }
    GroundednessJudgment {
        item_id: item_id.to_string(),
        summary_present: true,
        grounded: false,
        evidence_span: String::new(),
    }
}

// ---------------------------------------------------------------------------
// Review files and scoring
// ---------------------------------------------------------------------------

/// Fixed location of an item's review inside a task workspace.
pub fn review_path(id: &str) -> String {
    format!("artifacts/reviews/{id}.md")
}

/// Render the fixed two-field review layout.
pub fn review_content(summary: &str, relevance: u8) -> String {
    format!("summary: {summary}\nrelevance: {relevance}\n")
}

/// Parse the summary field out of a review file's text.
pub fn parse_review_summary(text: &str) -> Option<String> {
    let rest = text.strip_prefix("summary:").or_else(|| {
        text.find("\nsummary:").map(|i| &text[i + "\nsummary:".len()..])
    })?;
    let end = rest.find("\nrelevance:").unwrap_or(rest.len());
    Some(rest[..end].trim().to_string())
}

/// Score one finished (or crashed) run from its workspace contents alone.
pub fn score_workspace(
    gen: &GeneratedCorpus,
    task_dir: &Path,
    min_summary_chars: usize,
) -> (usize, Vec<GroundednessJudgment>) {
    let mut judgments = Vec::new();
    let mut coverage = 0usize;
    for id in gen.item_ids() {
        let path = task_dir.join(review_path(&id));
        let summary = fs::read_to_string(&path)
            .ok()
            .and_then(|text| parse_review_summary(&text))
            .unwrap_or_default();
        let body = gen.corpus.body(&id).unwrap_or_default();
        let title = gen.corpus.item(&id).map(|m| m.title.clone()).unwrap_or_default();
        let meta_text = flatten_json_values(&gen.corpus.meta_raw(&id).unwrap_or_default());
        let judgment = judge_grounded(&summary, &id, &body, &title, &meta_text, min_summary_chars);
        if judgment.grounded {
            coverage += 1;
        }
        judgments.push(judgment);
    }
    (coverage, judgments)
}

// ---------------------------------------------------------------------------
// Scripted mock for the review protocol
// ---------------------------------------------------------------------------

/// Build the deterministic script that drives a full review run.
///
/// Rule order matters: consolidation prompts contain the objective, so the
/// consolidation rule comes first; the sequential main-loop rules key on the
/// task brief; isolated-reader rules key on planted markers (map stage) and
/// on the planted sentences themselves (reduce stage); a catch-all finish
/// ends any run whose brief has been truncated away.
pub fn litreview_policy(
    gen: &GeneratedCorpus,
    context_limit: usize,
    on_overflow: OverflowBehavior,
) -> MockPolicy {
    let mut policy = MockPolicy::new(context_limit, on_overflow)
        .rule(CONSOLIDATION_MARKER, "reviews are being produced in item order", 0);

    let mut relevance_rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
    for (id, facts) in &gen.facts {
        let answer_call = serde_json::json!({
            "action": "call",
            "tool": "answer_from_document",
            "args": {"query": format!("main finding of {id}"), "source": "corpus", "id": id},
        });
        policy = policy.rule(
            TASK_BRIEF_MARKER,
            format!("```json\n{answer_call}\n```"),
            1,
        );
        let write_call = serde_json::json!({
            "action": "call",
            "tool": "write_file",
            "args": {
                "path": review_path(id),
                "content": review_content(&facts[0], relevance_rng.gen_range(1..=5)),
            },
        });
        policy = policy.rule(TASK_BRIEF_MARKER, format!("```json\n{write_call}\n```"), 1);
    }
    let finish = serde_json::json!({"action": "finish", "final_answer": "all items reviewed"});
    policy = policy.rule(TASK_BRIEF_MARKER, format!("```json\n{finish}\n```"), 0);

    // Isolated reader: map stage keyed on the planted marker.
    for (id, facts) in &gen.facts {
        policy = policy.rule(format!("[[fact:{id}]]"), facts[0].clone(), 0);
    }
    // Reduce stage: the findings block contains the sentence itself.
    for facts in gen.facts.values() {
        policy = policy.rule(facts[0].clone(), facts[0].clone(), 0);
    }
    // Chunks with no planted fact.
    policy = policy.rule("EXTRACT::", "NO_FINDING", 0);

    let halted = serde_json::json!({"action": "finish", "final_answer": "halted"});
    policy.default_reply(format!("```json\n{halted}\n```"))
}

/// The single-agent hierarchy used by the review protocol.
pub fn litreview_specs(cfg: &LitReviewConfig) -> Vec<AgentSpec> {
    vec![AgentSpec::new("alpha", Level::Alpha)
        .with_preamble(
            "You are the reviewing orchestrator. Work through the corpus items one at a \
             time; for each, extract the main finding and write the review file.",
        )
        .with_tools([
            "answer_from_document",
            "write_file",
            "read_file",
            "list_dir",
            "search_corpus",
        ])
        .with_step_limit((cfg.n_items as u64) * 2 + 20)
        .with_context_budget(cfg.context_budget)]
}

pub fn litreview_objective(n_items: usize) -> String {
    format!(
        "{TASK_BRIEF_MARKER} Review every corpus item: extract its main finding with \
         answer_from_document, then write artifacts/reviews/<id>.md containing the \
         two-field layout (summary, relevance 1-5). Items: {} through {} ({n_items} items). \
         Finish when every review exists.",
        item_id(0),
        item_id(n_items - 1),
    )
}

fn engine_config(cfg: &LitReviewConfig, interrupt_after: Option<u64>) -> EngineConfig {
    EngineConfig {
        mode: cfg.mode,
        consolidation: ConsolidationPolicy {
            interval_steps: cfg.consolidation_interval,
            ..ConsolidationPolicy::default()
        },
        verbose_contexts: true,
        interrupt_after,
        ..EngineConfig::default()
    }
}

/// Where one run's artifacts live under the eval working directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub corpus_dir: PathBuf,
    pub workspace_root: PathBuf,
    pub task_id: String,
}

pub fn run_paths(work_dir: &Path, cfg: &LitReviewConfig, run_idx: usize) -> RunPaths {
    let mode = match cfg.mode {
        ExecutionMode::FileCentric => "fc",
        ExecutionMode::CompressedContext => "cc",
    };
    RunPaths {
        corpus_dir: work_dir.join(format!("corpus-{}", cfg.seed + run_idx as u64)),
        workspace_root: work_dir.join("runs"),
        task_id: format!("lit-{mode}-{run_idx:02}"),
    }
}

/// Execute one review run (optionally interrupted after a number of global
/// steps, optionally resuming an interrupted task). Returns the generated
/// corpus and the task directory for scoring.
pub fn execute_single_run(
    cfg: &LitReviewConfig,
    work_dir: &Path,
    run_idx: usize,
    interrupt_after: Option<u64>,
    resume: bool,
) -> Result<(GeneratedCorpus, PathBuf, Option<String>), EvalError> {
    let paths = run_paths(work_dir, cfg, run_idx);
    let run_seed = cfg.seed + run_idx as u64;
    // Deterministic per seed: regenerating an existing corpus rewrites it
    // byte-identically, so resume trials can share the directory.
    let gen = generate_corpus(&paths.corpus_dir, cfg.n_items, run_seed)?;

    let ws = if resume {
        Workspace::resume(&paths.workspace_root, &paths.task_id)?.0
    } else {
        Workspace::init(&paths.workspace_root, &paths.task_id)?
    };
    let task_dir = ws.task_dir().to_path_buf();

    let registry = ToolRegistry::with_builtins();
    let policy = litreview_policy(&gen, cfg.context_limit, cfg.on_overflow);
    let mock = MockBackend::new(policy).map_err(crate::error::EngineError::Backend)?;
    let specs = litreview_specs(cfg);
    let objective = litreview_objective(cfg.n_items);

    let mut engine = Engine::new(
        ws,
        specs,
        &registry,
        &mock,
        Some(&gen.corpus),
        engine_config(cfg, interrupt_after),
    )?;
    let crash = if resume {
        engine.resume_run("alpha", &objective)
    } else {
        engine.run("alpha", &objective)
    }
    .err()
    .map(|e| e.to_string());

    Ok((gen, task_dir, crash))
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageReport {
    pub setting: String,
    pub model: String,
    pub per_run_coverage: Vec<usize>,
    pub max: usize,
    pub min: usize,
    pub avg: f64,
    pub variance: f64,
    pub crashes: Vec<Option<String>>,
    #[serde(skip)]
    pub judgments: Vec<Vec<GroundednessJudgment>>,
}

impl CoverageReport {
    fn from_runs(
        setting: &str,
        model: &str,
        per_run: Vec<usize>,
        judgments: Vec<Vec<GroundednessJudgment>>,
        crashes: Vec<Option<String>>,
    ) -> Self {
        let max = per_run.iter().copied().max().unwrap_or(0);
        let min = per_run.iter().copied().min().unwrap_or(0);
        let avg = if per_run.is_empty() {
            0.0
        } else {
            per_run.iter().sum::<usize>() as f64 / per_run.len() as f64
        };
        let variance = if per_run.is_empty() {
            0.0
        } else {
            per_run
                .iter()
                .map(|&c| {
                    let d = c as f64 - avg;
                    d * d
                })
                .sum::<f64>()
                / per_run.len() as f64
        };
        Self {
            setting: setting.to_string(),
            model: model.to_string(),
            per_run_coverage: per_run,
            max,
            min,
            avg,
            variance,
            crashes,
            judgments,
        }
    }
}

/// Run the full repeated-runs protocol in one mode.
pub fn run_litreview(cfg: &LitReviewConfig, work_dir: &Path) -> Result<CoverageReport, EvalError> {
    let mut per_run = Vec::new();
    let mut judgments = Vec::new();
    let mut crashes = Vec::new();
    for run_idx in 0..cfg.runs {
        let (gen, task_dir, crash) = execute_single_run(cfg, work_dir, run_idx, None, false)?;
        let (coverage, judgment) = score_workspace(&gen, &task_dir, cfg.per_item_summary_min);
        per_run.push(coverage);
        judgments.push(judgment);
        crashes.push(crash);
    }
    let setting = match cfg.mode {
        ExecutionMode::FileCentric => "File-centric state",
        ExecutionMode::CompressedContext => "No file state (compressed context)",
    };
    Ok(CoverageReport::from_runs(setting, "scripted-mock", per_run, judgments, crashes))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationReport {
    pub file_centric: CoverageReport,
    pub compressed: CoverageReport,
    /// Average-coverage gap, file-centric minus compressed.
    pub coverage_gap: f64,
}

/// Execute both modes on identical per-run seeds and report the gap.
pub fn run_ablation_pair(
    cfg: &LitReviewConfig,
    work_dir: &Path,
) -> Result<AblationReport, EvalError> {
    let fc_cfg = LitReviewConfig { mode: ExecutionMode::FileCentric, ..cfg.clone() };
    let cc_cfg = LitReviewConfig { mode: ExecutionMode::CompressedContext, ..cfg.clone() };
    let file_centric = run_litreview(&fc_cfg, &work_dir.join("fc"))?;
    let compressed = run_litreview(&cc_cfg, &work_dir.join("cc"))?;
    let coverage_gap = file_centric.avg - compressed.avg;
    Ok(AblationReport { file_centric, compressed, coverage_gap })
}

/// Human-readable table with the familiar columns.
pub fn render_table(reports: &[&CoverageReport]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<40} {:<14} {:>5} {:>5} {:>7}\n",
        "Setting", "Model", "Max", "Min", "Avg"
    ));
    out.push_str(&format!("{}\n", "-".repeat(74)));
    for r in reports {
        out.push_str(&format!(
            "{:<40} {:<14} {:>5} {:>5} {:>7.1}\n",
            r.setting, r.model, r.max, r.min, r.avg
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// Containment scan
// ---------------------------------------------------------------------------

const ROLL_BASE: u64 = 1_099_511_628_211;

/// Report every context that contains a contiguous
/// [`CONTAINMENT_WINDOW`]-character substring of any body.
///
/// `bodies` are (label, text) pairs; `texts` are (label, text) pairs of the
/// scanned prompts. Uses a rolling hash over bodies with exact verification
/// on hash hits.
pub fn containment_scan(bodies: &[(String, String)], texts: &[(String, String)]) -> Vec<String> {
    let mut body_hashes: HashSet<u64> = HashSet::new();
    let mut top_pow: u64 = 1;
    for _ in 0..CONTAINMENT_WINDOW - 1 {
        top_pow = top_pow.wrapping_mul(ROLL_BASE);
    }
    for (_, body) in bodies {
        let chars: Vec<char> = body.chars().collect();
        if chars.len() < CONTAINMENT_WINDOW {
            continue;
        }
        let mut h: u64 = 0;
        for &c in &chars[..CONTAINMENT_WINDOW] {
            h = h.wrapping_mul(ROLL_BASE).wrapping_add(c as u64);
        }
        body_hashes.insert(h);
        for i in CONTAINMENT_WINDOW..chars.len() {
            h = h
                .wrapping_sub(top_pow.wrapping_mul(chars[i - CONTAINMENT_WINDOW] as u64))
                .wrapping_mul(ROLL_BASE)
                .wrapping_add(chars[i] as u64);
            body_hashes.insert(h);
        }
    }

    let mut violations = Vec::new();
    for (label, text) in texts {
        let chars: Vec<char> = text.chars().collect();
        if chars.len() < CONTAINMENT_WINDOW {
            continue;
        }
        let mut h: u64 = 0;
        for &c in &chars[..CONTAINMENT_WINDOW] {
            h = h.wrapping_mul(ROLL_BASE).wrapping_add(c as u64);
        }
        let mut hit_at = Vec::new();
        if body_hashes.contains(&h) {
            hit_at.push(0usize);
        }
        for i in CONTAINMENT_WINDOW..chars.len() {
            h = h
                .wrapping_sub(top_pow.wrapping_mul(chars[i - CONTAINMENT_WINDOW] as u64))
                .wrapping_mul(ROLL_BASE)
                .wrapping_add(chars[i] as u64);
            if body_hashes.contains(&h) {
                hit_at.push(i - CONTAINMENT_WINDOW + 1);
            }
        }
        // Verify hash hits against the actual bodies.
        for start in hit_at {
            let window: String = chars[start..start + CONTAINMENT_WINDOW].iter().collect();
            if bodies.iter().any(|(_, b)| b.contains(&window)) {
                violations.push(format!("{label}: contains body window {window:?}"));
                break;
            }
        }
    }
    violations
}

/// Collect every logged main/consolidation prompt of a task for scanning.
pub fn logged_context_texts(task_dir: &Path) -> Vec<(String, String)> {
    read_context_log(task_dir)
        .into_iter()
        .map(|c| {
            let text = format!(
                "{}\n{}",
                c.preamble.unwrap_or_default(),
                c.sections.unwrap_or_default()
            );
            (format!("{}:step{}", task_dir.display(), c.step), text)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    fn small_cfg(mode: ExecutionMode, n: usize, runs: usize) -> LitReviewConfig {
        LitReviewConfig { n_items: n, runs, mode, ..LitReviewConfig::default() }
    }

    #[test]
    fn corpus_is_deterministic_per_seed() {
        let a = TempDir::new().unwrap();
        let b = TempDir::new().unwrap();
        generate_corpus(a.path(), 3, 42).unwrap();
        generate_corpus(b.path(), 3, 42).unwrap();
        for id in ["item-0001", "item-0002", "item-0003"] {
            let ba = fs::read(a.path().join(id).join("body.txt")).unwrap();
            let bb = fs::read(b.path().join(id).join("body.txt")).unwrap();
            assert_eq!(ba, bb, "{id}");
            let ma = fs::read(a.path().join(id).join("meta.json")).unwrap();
            let mb = fs::read(b.path().join(id).join("meta.json")).unwrap();
            assert_eq!(ma, mb, "{id}");
        }
        let c = TempDir::new().unwrap();
        generate_corpus(c.path(), 1, 43).unwrap();
        let ca = fs::read(a.path().join("item-0001/body.txt")).unwrap();
        let cc = fs::read(c.path().join("item-0001/body.txt")).unwrap();
        assert_ne!(ca, cc, "different seeds differ");
    }

    #[test]
    fn corpus_plants_facts_in_body_not_meta() {
        let dir = TempDir::new().unwrap();
        let gen = generate_corpus(dir.path(), 5, 7).unwrap();
        for (id, facts) in &gen.facts {
            assert_eq!(facts.len(), 3);
            let body = gen.corpus.body(id).unwrap();
            let meta = gen.corpus.meta_raw(id).unwrap();
            assert!(body.chars().count() >= MIN_BODY_CHARS, "{id}");
            for fact in facts {
                assert!(fact.chars().count() < CONTAINMENT_WINDOW - 1, "{fact}");
                assert!(body.contains(fact), "{id}: {fact}");
                assert!(!meta.contains(fact), "{id}: {fact}");
            }
        }
    }

    #[test]
    fn single_item_corpus() {
        let dir = TempDir::new().unwrap();
        let gen = generate_corpus(dir.path(), 1, 0).unwrap();
        assert_eq!(gen.item_ids(), vec!["item-0001"]);
    }

    #[test]
    fn judge_accepts_planted_sentence_and_rejects_title() {
        let dir = TempDir::new().unwrap();
        let gen = generate_corpus(dir.path(), 4, 11).unwrap();
        for (id, facts) in &gen.facts {
            let body = gen.corpus.body(id).unwrap();
            let title = gen.corpus.item(id).unwrap().title.clone();
            let meta = flatten_json_values(&gen.corpus.meta_raw(id).unwrap());

            let j = judge_grounded(&facts[1], id, &body, &title, &meta, 1);
            assert!(j.grounded, "{id}");
            assert!(!j.evidence_span.is_empty());
            assert!(facts[1].to_lowercase().contains(&j.evidence_span[..20.min(j.evidence_span.len())]));

            let j = judge_grounded(&title, id, &body, &title, &meta, 1);
            assert!(!j.grounded, "title-only summary must not be grounded");
            assert!(j.summary_present);

            let j = judge_grounded("", id, &body, &title, &meta, 1);
            assert!(!j.summary_present);
            assert!(!j.grounded);
        }
    }

    #[test]
    fn judge_requires_four_word_runs() {
        let body = "alpha beta gamma delta epsilon zeta";
        let j = judge_grounded("beta gamma delta", "x", body, "t", "m", 1);
        assert!(!j.grounded, "three words are not enough");
        let j = judge_grounded("beta gamma delta epsilon", "x", body, "t", "m", 1);
        assert!(j.grounded);
        assert_eq!(j.evidence_span, "beta gamma delta epsilon");
    }

    #[test]
    fn judge_excludes_runs_that_occur_in_metadata() {
        let body = "one two three four five";
        let meta = flatten_json_values("{\"t\": \"one two three four\"}");
        assert_eq!(meta, "one two three four");
        // The only 4-run shared by summary and body also sits in the
        // metadata, but the 5-run escapes it.
        let j = judge_grounded("one two three four", "x", body, "", &meta, 1);
        assert!(!j.grounded);
        let j = judge_grounded("one two three four five", "x", body, "", &meta, 1);
        assert!(j.grounded);
        assert_eq!(j.evidence_span, "one two three four five");
    }

    #[test]
    fn review_layout_round_trips() {
        let text = review_content("finding 0001-1: adaptive ledger smooths under cold load", 4);
        let summary = parse_review_summary(&text).unwrap();
        assert_eq!(summary, "finding 0001-1: adaptive ledger smooths under cold load");
        assert!(parse_review_summary("relevance: 3\n").is_none());
    }

    #[test]
    fn file_centric_run_reaches_full_coverage() {
        let dir = TempDir::new().unwrap();
        let cfg = small_cfg(ExecutionMode::FileCentric, 6, 1);
        let report = run_litreview(&cfg, dir.path()).unwrap();
        assert_eq!(report.per_run_coverage, vec![6]);
        assert_eq!(report.max, 6);
        assert_eq!(report.min, 6);
        assert!((report.avg - 6.0).abs() < f64::EPSILON);
        assert!(report.crashes.iter().all(Option::is_none));
    }

    #[test]
    fn file_centric_is_deterministic_across_repeats() {
        let d1 = TempDir::new().unwrap();
        let d2 = TempDir::new().unwrap();
        let cfg = small_cfg(ExecutionMode::FileCentric, 4, 1);
        let a = run_litreview(&cfg, d1.path()).unwrap();
        let b = run_litreview(&cfg, d2.path()).unwrap();
        assert_eq!(a.per_run_coverage, b.per_run_coverage);
    }

    #[test]
    fn tiny_task_modes_coincide_below_the_limit() {
        let dir = TempDir::new().unwrap();
        let cfg = LitReviewConfig { runs: 1, n_items: 1, ..LitReviewConfig::default() };
        let report = run_ablation_pair(&cfg, dir.path()).unwrap();
        assert_eq!(report.file_centric.per_run_coverage, vec![1]);
        assert_eq!(report.compressed.per_run_coverage, vec![1]);
        assert!((report.coverage_gap).abs() < f64::EPSILON);
    }

    #[test]
    fn aggregate_arithmetic_is_exact() {
        let report = CoverageReport::from_runs(
            "s",
            "m",
            vec![80, 80, 78, 80, 80],
            vec![],
            vec![None; 5],
        );
        assert_eq!(report.max, 80);
        assert_eq!(report.min, 78);
        assert!((report.avg - 79.6).abs() < 1e-12);
        assert!((report.avg - (80 + 80 + 78 + 80 + 80) as f64 / 5.0).abs() < f64::EPSILON);
    }

    #[test]
    fn table_has_expected_columns() {
        let report =
            CoverageReport::from_runs("File-centric state", "scripted-mock", vec![5], vec![], vec![None]);
        let table = render_table(&[&report]);
        assert!(table.contains("Setting"));
        assert!(table.contains("Max"));
        assert!(table.contains("Min"));
        assert!(table.contains("Avg"));
        assert!(table.contains("File-centric state"));
    }

    #[test]
    fn containment_scan_flags_real_inclusions_only() {
        let body = "b".repeat(200);
        let bodies = vec![("doc".to_string(), body.clone())];
        let clean = vec![("ctx1".to_string(), format!("safe {} text", "b".repeat(40)))];
        assert!(containment_scan(&bodies, &clean).is_empty());
        let dirty = vec![("ctx2".to_string(), format!("leak {} end", &body[..100]))];
        let violations = containment_scan(&bodies, &dirty);
        assert_eq!(violations.len(), 1);
        assert!(violations[0].contains("ctx2"));
    }

    #[test]
    fn litreview_contexts_contain_no_body_windows() {
        let dir = TempDir::new().unwrap();
        let cfg = small_cfg(ExecutionMode::FileCentric, 3, 1);
        let (gen, task_dir, crash) = execute_single_run(&cfg, dir.path(), 0, None, false).unwrap();
        assert!(crash.is_none());
        let bodies: Vec<(String, String)> = gen
            .item_ids()
            .iter()
            .map(|id| (id.clone(), gen.corpus.body(id).unwrap()))
            .collect();
        let texts = logged_context_texts(&task_dir);
        assert!(!texts.is_empty());
        let violations = containment_scan(&bodies, &texts);
        assert!(violations.is_empty(), "{violations:?}");
    }
}
