//! Benchmark runs and reports.
//!
//! A run executes the base and/or GraPE pipeline for every prompt and seed
//! under a bounded worker pool and writes a self-describing directory:
//!
//! ```text
//! runs/<timestamp>-<label>/
//!   manifest.jsonl    one line per finished trace, appended as work completes
//!   traces/           one JSON trace per prompt, mode and seed
//!   objects/          content-addressed image payloads
//!   scores.csv        one row per prompt, mode, seed and step
//!   summary.csv       mean and std per mode, benchmark and K
//!   config.snapshot   the effective configuration
//!   logs.jsonl        structured events with per-prompt correlation ids
//! ```
//!
//! Backend responses go through the shared response cache, so a resumed or
//! repeated run issues no upstream call twice. `scores.csv` and
//! `summary.csv` are rebuilt from the traces on disk and sorted, so they do
//! not depend on scheduling order.

mod config;
mod report;

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{FileConfig, ModeSelection, RunSection};
pub use report::{build_report, ComparisonRow, EditStepsRow, MetricStat, Report, StepRow};

use crate::backends::{BackendStack, ResponseCache};
use crate::eval::{aggregate, avg_edit_steps, ScoreReport};
use crate::model::{content_id, PipelineTrace, PromptRecord, RunMode, StopReason};
use crate::pipeline::{run_base, run_grape, score_trace, PipelineError};
use crate::planner::{PromptLibrary, Planner};
use crate::store::{write_atomic, DiskStore};

/// Version tag written on every manifest line.
pub const MANIFEST_SCHEMA: &str = "grape-run/1";

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
    #[error("report: {0}")]
    Report(String),
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> RunError {
    let context = context.into();
    move |source| RunError::Io { context, source }
}

/// Stops a run between prompts.
#[derive(Debug, Clone, Default)]
pub struct CancelToken(Arc<AtomicBool>);

impl CancelToken {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

/// Where a resumed run continues.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Resume {
    /// The newest run directory with the configured label.
    Latest,
    Dir(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryStatus {
    Completed,
    StepCap,
    Partial,
    PlanFailed,
    /// No trace was produced.
    Failed,
}

impl EntryStatus {
    fn of(trace: &PipelineTrace) -> Self {
        match trace.stop {
            StopReason::GenerationOnly | StopReason::Completed => EntryStatus::Completed,
            StopReason::StepCap => EntryStatus::StepCap,
            StopReason::PlanFailed { .. } => EntryStatus::PlanFailed,
            StopReason::EditFailed { .. } => EntryStatus::Partial,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub schema: String,
    pub prompt_id: String,
    pub mode: RunMode,
    pub seed: u64,
    pub status: EntryStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub correlation_id: String,
}

/// What a finished (or cancelled) run did.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    /// Traces written by this invocation.
    pub completed: usize,
    /// Traces already present from an earlier invocation.
    pub skipped: usize,
    /// Prompt and mode pairs that produced no trace.
    pub failed: usize,
    pub cancelled: bool,
}

impl RunOutcome {
    /// 0 when everything finished, 1 when anything failed or was left
    /// undone.
    pub fn exit_code(&self) -> i32 {
        if self.failed > 0 || self.cancelled {
            1
        } else {
            0
        }
    }
}

/// Hooks for embedding a run: cancellation and a progress callback invoked
/// with the number of finished prompt tasks.
#[derive(Default)]
pub struct RunControl {
    pub cancel: CancelToken,
    pub on_task_done: Option<Box<dyn Fn(usize) + Send + Sync>>,
}

thread_local! {
    static CORRELATION: RefCell<Option<String>> = const { RefCell::new(None) };
}

/// Correlation id of the prompt task running on this thread, if any. Log
/// sinks use it to attribute library warnings to prompts.
pub fn correlation_id() -> Option<String> {
    CORRELATION.with(|c| c.borrow().clone())
}

struct CorrelationGuard;

impl CorrelationGuard {
    fn set(id: &str) -> Self {
        CORRELATION.with(|c| *c.borrow_mut() = Some(id.to_owned()));
        CorrelationGuard
    }
}

impl Drop for CorrelationGuard {
    fn drop(&mut self) {
        CORRELATION.with(|c| *c.borrow_mut() = None);
    }
}

fn correlation_for(label: &str, prompt_id: &str, seed: u64) -> String {
    content_id(format!("{label}\n{prompt_id}\n{seed}").as_bytes())[..12].to_owned()
}

/// File-system-safe form of a prompt id; ids needing changes get a short
/// hash suffix to stay unique.
fn safe_name(id: &str) -> String {
    let cleaned: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect();
    if cleaned == id && !id.starts_with('.') {
        cleaned
    } else {
        format!("{cleaned}-{}", &content_id(id.as_bytes())[..8])
    }
}

fn trace_path(mode: RunMode, seed: u64, prompt_id: &str) -> String {
    format!("traces/{}-s{seed}-{}.json", mode.as_str(), safe_name(prompt_id))
}

struct JsonLines {
    file: Mutex<File>,
}

impl JsonLines {
    fn open(path: &Path) -> Result<Self, RunError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err(format!("opening {}", path.display())))?;
        Ok(JsonLines { file: Mutex::new(file) })
    }

    fn append<T: Serialize>(&self, value: &T) {
        let mut line = serde_json::to_vec(value).expect("records serialize");
        line.push(b'\n');
        let mut file = self.file.lock().unwrap();
        if let Err(e) = file.write_all(&line).and_then(|_| file.flush()) {
            log::error!("writing run record: {e}");
        }
    }
}

#[derive(Serialize)]
struct LogEvent<'a> {
    ts: String,
    level: &'a str,
    correlation_id: &'a str,
    prompt_id: &'a str,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    mode: Option<RunMode>,
    event: &'a str,
    message: String,
}

/// Reads a run's manifest. Later lines for the same prompt, mode and seed
/// supersede earlier ones.
pub fn read_manifest(run_dir: &Path) -> Result<Vec<ManifestEntry>, RunError> {
    let path = run_dir.join("manifest.jsonl");
    let file = match File::open(&path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(format!("opening {}", path.display()))(e)),
    };
    let mut latest: BTreeMap<(String, RunMode, u64), ManifestEntry> = BTreeMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(format!("reading {}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = match serde_json::from_str(&line) {
            Ok(e) => e,
            // A run killed mid-write leaves a torn last line.
            Err(e) => {
                log::warn!("{}: skipping line {}: {e}", path.display(), i + 1);
                continue;
            }
        };
        latest.insert((entry.prompt_id.clone(), entry.mode, entry.seed), entry);
    }
    Ok(latest.into_values().collect())
}

/// Loads every trace listed in a run's manifest, sorted by prompt id, mode
/// and seed.
pub fn load_traces(run_dir: &Path) -> Result<Vec<PipelineTrace>, RunError> {
    let mut out = Vec::new();
    for entry in read_manifest(run_dir)? {
        if entry.schema != MANIFEST_SCHEMA {
            return Err(RunError::Report(format!(
                "{}: manifest schema {:?}, expected {MANIFEST_SCHEMA:?}",
                run_dir.display(),
                entry.schema
            )));
        }
        let Some(rel) = &entry.trace else { continue };
        let path = run_dir.join(rel);
        let bytes = std::fs::read(&path).map_err(io_err(format!("reading {}", path.display())))?;
        let trace: PipelineTrace = serde_json::from_slice(&bytes)
            .map_err(|e| RunError::Report(format!("{}: {e}", path.display())))?;
        out.push(trace);
    }
    out.sort_by(|a, b| (&a.prompt.id, a.mode, a.seed).cmp(&(&b.prompt.id, b.mode, b.seed)));
    Ok(out)
}

fn latest_run_dir(runs_dir: &Path, label: &str) -> Result<PathBuf, RunError> {
    let suffix = format!("-{label}");
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(runs_dir)
        .map_err(io_err(format!("listing {}", runs_dir.display())))?
        .flatten()
        .map(|e| e.path())
        .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n.to_string_lossy().ends_with(&suffix)))
        .collect();
    dirs.sort();
    dirs.pop()
        .ok_or_else(|| RunError::Config(format!("no run labelled {label:?} under {} to resume", runs_dir.display())))
}

fn fresh_run_dir(runs_dir: &Path, label: &str) -> Result<PathBuf, RunError> {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    let mut dir = runs_dir.join(format!("{stamp}-{label}"));
    let mut n = 2;
    while dir.exists() {
        // Sorts after the unsuffixed name, so `Resume::Latest` finds it.
        dir = runs_dir.join(format!("{stamp}.{n:03}-{label}"));
        n += 1;
    }
    Ok(dir)
}

/// Everything a run needs besides the prompts.
pub struct RunSpec {
    pub run: RunSection,
    /// Backends without the response cache; the runner adds it.
    pub backends: BackendStack,
    pub library: PromptLibrary,
    /// Written to `config.snapshot`. A resumed run must present the same
    /// snapshot as the run it continues.
    pub snapshot: String,
}

impl RunSpec {
    pub fn from_file_config(config: &FileConfig) -> Result<Self, RunError> {
        config.validate()?;
        Ok(RunSpec {
            run: config.run.clone(),
            backends: config.backends().map_err(|e| RunError::Config(e.to_string()))?,
            library: config.library()?,
            snapshot: config.snapshot(),
        })
    }
}

/// Runs the benchmark described by `spec` over `prompts`.
pub fn run_benchmark(
    spec: &RunSpec,
    prompts: &[PromptRecord],
    resume: Option<Resume>,
    control: &RunControl,
) -> Result<RunOutcome, RunError> {
    let run = &spec.run;
    run.validate()?;
    if run.score && spec.backends.vqa.is_none() {
        return Err(RunError::Config("scoring is enabled but no VQA backend is configured".into()));
    }
    let run_dir = match resume {
        None => fresh_run_dir(&run.runs_dir, &run.label)?,
        Some(Resume::Latest) => latest_run_dir(&run.runs_dir, &run.label)?,
        Some(Resume::Dir(d)) => d,
    };
    let snapshot_path = run_dir.join("config.snapshot");
    if snapshot_path.exists() {
        let previous = std::fs::read_to_string(&snapshot_path).map_err(io_err("reading config.snapshot"))?;
        if previous != spec.snapshot {
            return Err(RunError::Config(format!(
                "{} was produced with a different configuration",
                run_dir.display()
            )));
        }
    }
    std::fs::create_dir_all(run_dir.join("traces")).map_err(io_err(format!("creating {}", run_dir.display())))?;
    write_atomic(&snapshot_path, spec.snapshot.as_bytes()).map_err(io_err("writing config.snapshot"))?;

    let store = DiskStore::new(&run_dir);
    let backends = if run.cache {
        spec.backends
            .clone()
            .with_cache(Arc::new(ResponseCache::new(&run.cache_dir)))
    } else {
        spec.backends.clone()
    };
    let planner = match run.mode {
        ModeSelection::Base => None,
        _ => Some(
            spec.library
                .planner(run.planner_mode, &store, 0)
                .map_err(|e| RunError::Config(e.to_string()))?,
        ),
    };
    let modes: &[RunMode] = match run.mode {
        ModeSelection::Base => &[RunMode::Base],
        ModeSelection::Grape => &[RunMode::Grape],
        ModeSelection::Both => &[RunMode::Base, RunMode::Grape],
    };

    let done: BTreeSet<(String, RunMode, u64)> = read_manifest(&run_dir)?
        .into_iter()
        .filter(|e| e.trace.is_some())
        .map(|e| (e.prompt_id, e.mode, e.seed))
        .collect();
    let mut tasks: Vec<(&PromptRecord, u64, Vec<RunMode>)> = Vec::new();
    let mut skipped = 0;
    for &seed in &run.seeds {
        for prompt in prompts {
            let todo: Vec<RunMode> = modes
                .iter()
                .copied()
                .filter(|m| !done.contains(&(prompt.id.clone(), *m, seed)))
                .collect();
            skipped += modes.len() - todo.len();
            if !todo.is_empty() {
                tasks.push((prompt, seed, todo));
            }
        }
    }

    let manifest = JsonLines::open(&run_dir.join("manifest.jsonl"))?;
    let logs = JsonLines::open(&run_dir.join("logs.jsonl"))?;
    let completed = AtomicUsize::new(0);
    let failed = AtomicUsize::new(0);
    let finished_tasks = AtomicUsize::new(0);
    let ctx = TaskContext {
        run,
        backends: &backends,
        planner: planner.as_ref(),
        store: &store,
        run_dir: &run_dir,
        manifest: &manifest,
        logs: &logs,
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(run.jobs)
        .build()
        .map_err(|e| RunError::Config(format!("worker pool: {e}")))?;
    pool.install(|| {
        tasks.par_iter().with_max_len(1).for_each(|(prompt, seed, todo)| {
            if control.cancel.is_cancelled() {
                return;
            }
            let (ok, bad) = ctx.run_task(prompt, *seed, todo);
            completed.fetch_add(ok, Ordering::SeqCst);
            failed.fetch_add(bad, Ordering::SeqCst);
            let n = finished_tasks.fetch_add(1, Ordering::SeqCst) + 1;
            if let Some(hook) = &control.on_task_done {
                hook(n);
            }
        })
    });

    let cancelled = finished_tasks.load(Ordering::SeqCst) < tasks.len();
    write_tables(&run_dir, run.score)?;
    Ok(RunOutcome {
        run_dir,
        completed: completed.into_inner(),
        skipped,
        failed: failed.into_inner(),
        cancelled,
    })
}

struct TaskContext<'a> {
    run: &'a RunSection,
    backends: &'a BackendStack,
    planner: Option<&'a Planner>,
    store: &'a DiskStore,
    run_dir: &'a Path,
    manifest: &'a JsonLines,
    logs: &'a JsonLines,
}

impl TaskContext<'_> {
    #[allow(clippy::too_many_arguments)]
    fn log(&self, cid: &str, prompt: &PromptRecord, seed: u64, mode: Option<RunMode>, level: &str, event: &str, message: String) {
        self.logs.append(&LogEvent {
            ts: chrono::Utc::now().to_rfc3339(),
            level,
            correlation_id: cid,
            prompt_id: &prompt.id,
            seed,
            mode,
            event,
            message,
        });
    }

    /// Runs the requested modes for one prompt and seed, in order, so a
    /// GraPE run reuses the cached base generation. Returns the number of
    /// traces written and of failures.
    fn run_task(&self, prompt: &PromptRecord, seed: u64, modes: &[RunMode]) -> (usize, usize) {
        let cid = correlation_for(&self.run.label, &prompt.id, seed);
        let _guard = CorrelationGuard::set(&cid);
        let config = self.run.pipeline_config(seed);
        let (mut ok, mut bad) = (0, 0);
        for &mode in modes {
            self.log(&cid, prompt, seed, Some(mode), "info", "start", String::new());
            let result = match (mode, self.planner) {
                (RunMode::Grape, Some(planner)) => run_grape(prompt, self.backends, planner, self.store, &config),
                _ => run_base(prompt, self.backends, self.store, &config),
            };
            let result = result.and_then(|t| match (&self.backends.vqa, self.run.score) {
                (Some(vqa), true) => score_trace(t, vqa.as_ref(), self.store, self.run.qa_aggregation),
                _ => Ok(t),
            });
            let mut entry = ManifestEntry {
                schema: MANIFEST_SCHEMA.into(),
                prompt_id: prompt.id.clone(),
                mode,
                seed,
                status: EntryStatus::Failed,
                trace: None,
                final_image: None,
                error: None,
                correlation_id: cid.clone(),
            };
            match result.map_err(|e| e.to_string()).and_then(|t| self.persist(&t).map(|p| (t, p))) {
                Ok((trace, rel)) => {
                    entry.status = EntryStatus::of(&trace);
                    entry.final_image = Some(trace.final_image().content_id.clone());
                    entry.trace = Some(rel);
                    let message = format!(
                        "{:?}: {} of {} planned steps",
                        entry.status,
                        trace.executed_steps,
                        trace.plan.len()
                    );
                    self.log(&cid, prompt, seed, Some(mode), "info", "finished", message);
                    ok += 1;
                }
                Err(message) => {
                    self.log(&cid, prompt, seed, Some(mode), "error", "failed", message.clone());
                    entry.error = Some(message);
                    bad += 1;
                }
            }
            self.manifest.append(&entry);
        }
        (ok, bad)
    }

    fn persist(&self, trace: &PipelineTrace) -> Result<String, String> {
        trace.check_shape()?;
        let rel = trace_path(trace.mode, trace.seed, &trace.prompt.id);
        let mut bytes = serde_json::to_vec_pretty(trace).expect("traces serialize");
        bytes.push(b'\n');
        write_atomic(&self.run_dir.join(&rel), &bytes).map_err(|e| format!("writing {rel}: {e}"))?;
        Ok(rel)
    }
}

impl From<PipelineError> for RunError {
    fn from(e: PipelineError) -> Self {
        RunError::Report(e.to_string())
    }
}

fn fmt6(x: f64) -> String {
    format!("{x:.6}")
}

fn k_label(k: Option<u32>) -> String {
    k.map(|k| k.to_string()).unwrap_or_default()
}

/// Rewrites `scores.csv` and `summary.csv` from the traces on disk.
pub fn write_tables(run_dir: &Path, scored: bool) -> Result<(), RunError> {
    let traces = load_traces(run_dir)?;

    let mut scores = csv::Writer::from_writer(Vec::new());
    scores
        .write_record(["prompt_id", "mode", "seed", "benchmark", "k", "step", "dsg", "dsg_no_dep", "qa", "unanswered"])
        .expect("in-memory write");
    for t in &traces {
        for (step, s) in t.per_step_scores.iter().flatten().enumerate() {
            scores
                .write_record([
                    t.prompt.id.clone(),
                    t.mode.as_str().into(),
                    t.seed.to_string(),
                    t.prompt.benchmark.as_str().into(),
                    k_label(t.prompt.k),
                    step.to_string(),
                    fmt6(s.dsg),
                    fmt6(s.dsg_no_dep),
                    fmt6(s.qa),
                    s.unanswered_count.to_string(),
                ])
                .expect("in-memory write");
        }
    }
    let bytes = scores.into_inner().expect("in-memory write");
    write_atomic(&run_dir.join("scores.csv"), &bytes).map_err(io_err("writing scores.csv"))?;

    let bytes = summary_csv(&traces, scored)?;
    write_atomic(&run_dir.join("summary.csv"), &bytes).map_err(io_err("writing summary.csv"))
}

type GroupKey = (RunMode, String, Option<u32>);

const METRICS: [fn(&ScoreReport) -> f64; 3] = [|s| s.dsg, |s| s.dsg_no_dep, |s| s.qa];

fn summary_csv(traces: &[PipelineTrace], scored: bool) -> Result<Vec<u8>, RunError> {
    let mut groups: BTreeMap<GroupKey, Vec<&PipelineTrace>> = BTreeMap::new();
    for t in traces {
        groups
            .entry((t.mode, t.prompt.benchmark.as_str().to_owned(), t.prompt.k))
            .or_default()
            .push(t);
        groups.entry((t.mode, "all".into(), None)).or_default().push(t);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "mode",
        "benchmark",
        "k",
        "prompts",
        "runs",
        "dsg_mean",
        "dsg_std",
        "dsg_no_dep_mean",
        "dsg_no_dep_std",
        "qa_mean",
        "qa_std",
        "avg_edit_steps",
        "plan_failed",
        "partial",
        "truncated",
        "unanswered",
    ])
    .expect("in-memory write");
    for ((mode, benchmark, k), members) in &groups {
        let prompts: BTreeSet<&str> = members.iter().map(|t| t.prompt.id.as_str()).collect();
        let seeds: BTreeSet<u64> = members.iter().map(|t| t.seed).collect();
        let mut metric_cells = Vec::new();
        for metric in METRICS {
            let runs: Option<Vec<Vec<f64>>> = scored.then(|| {
                seeds
                    .iter()
                    .map(|seed| {
                        members
                            .iter()
                            .filter(|t| t.seed == *seed)
                            .filter_map(|t| t.final_score().map(metric))
                            .collect()
                    })
                    .collect()
            });
            match runs.map(|r| aggregate(&r)) {
                Some(Ok((mean, std))) => metric_cells.extend([fmt6(mean), fmt6(std)]),
                _ => metric_cells.extend([String::new(), String::new()]),
            }
        }
        let owned: Vec<PipelineTrace> = members.iter().map(|t| (*t).clone()).collect();
        let steps = avg_edit_steps(&owned).map(fmt6).unwrap_or_default();
        let count = |f: &dyn Fn(&PipelineTrace) -> bool| members.iter().filter(|t| f(t)).count().to_string();
        let unanswered: u32 = members
            .iter()
            .filter_map(|t| t.per_step_scores.as_ref())
            .flatten()
            .map(|s| s.unanswered_count)
            .sum();
        let mut row = vec![
            mode.as_str().to_owned(),
            benchmark.clone(),
            k_label(*k),
            prompts.len().to_string(),
            seeds.len().to_string(),
        ];
        row.extend(metric_cells);
        row.extend([
            steps,
            count(&|t| t.plan_failed()),
            count(&|t| t.partial()),
            count(&|t| t.truncated),
            unanswered.to_string(),
        ]);
        w.write_record(&row).expect("in-memory write");
    }
    Ok(w.into_inner().expect("in-memory write"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn safe_names() {
        assert_eq!(safe_name("sim-k1-0001"), "sim-k1-0001");
        let odd = safe_name("a/b c");
        assert!(odd.starts_with("a_b_c-"));
        assert_ne!(safe_name("a/b"), safe_name("a_b"));
    }
}
