//! The generate, plan, edit loop.
//!
//! ```
//! use grape::backends::BackendStack;
//! use grape::model::PromptRecord;
//! use grape::pipeline::{run_grape, RunConfig};
//! use grape::planner::{PlannerMode, PromptLibrary};
//! use grape::simworld::{random_prompt_set, SimOptions};
//! use grape::store::MemoryStore;
//!
//! let options = SimOptions { error_rate: 0.5, ..SimOptions::default() };
//! let stack = BackendStack::simulated(&options);
//! let store = MemoryStore::new();
//! let planner = PromptLibrary::builtin().planner(PlannerMode::Structured, &store, 0).unwrap();
//! let prompt: PromptRecord = random_prompt_set(1, 1, &[5]).remove(0);
//!
//! let trace = run_grape(&prompt, &stack, &planner, &store, &RunConfig::default()).unwrap();
//! assert_eq!(trace.images.len(), trace.executed_steps as usize + 1);
//! ```

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::{answer_binary, edit, generate, BackendError, BackendStack, VqaBackend};
use crate::eval::{Answer, EvalError, QaAggregation, ScoreReport};
use crate::model::{
    CostReport, EditPlan, ImageRef, PipelineTrace, PlanSource, Prices, PromptRecord, RunMode, StopReason, TokenUsage,
};
use crate::planner::{PlannerMode, Planner};
use crate::store::PayloadStore;

pub const DEFAULT_MAX_EDIT_STEPS: u32 = 8;

fn default_max_edit_steps() -> u32 {
    DEFAULT_MAX_EDIT_STEPS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_max_edit_steps")]
    pub max_edit_steps: u32,
    pub planner_mode: PlannerMode,
    /// Seed sent with generation and editing requests.
    pub seed: u64,
    /// Experimental: after the plan is exhausted, plan again on the latest
    /// image until the planner returns an empty plan or the step cap is hit.
    pub replan: bool,
    pub qa_aggregation: QaAggregation,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            max_edit_steps: DEFAULT_MAX_EDIT_STEPS,
            planner_mode: PlannerMode::Structured,
            seed: 0,
            replan: false,
            qa_aggregation: QaAggregation::PerQuestion,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("generation failed: {0}")]
    Generation(#[source] BackendError),
    #[error("scoring failed: {0}")]
    Scoring(#[from] EvalError),
    #[error("scoring failed: {0}")]
    ScoringStore(#[source] BackendError),
}

fn plan_source(mode: PlannerMode) -> PlanSource {
    match mode {
        PlannerMode::Structured => PlanSource::Mllm,
        PlannerMode::Naive => PlanSource::NaiveMllm,
    }
}

/// Generation only: the baseline every GraPE run is compared against.
pub fn run_base(
    prompt: &PromptRecord,
    stack: &BackendStack,
    store: &dyn PayloadStore,
    config: &RunConfig,
) -> Result<PipelineTrace, PipelineError> {
    let (image, seconds) =
        generate(&prompt.text, config.seed, stack.generator.as_ref(), store).map_err(PipelineError::Generation)?;
    Ok(PipelineTrace {
        prompt: prompt.clone(),
        mode: RunMode::Base,
        seed: config.seed,
        images: vec![image],
        plan: EditPlan::empty(plan_source(config.planner_mode)),
        executed_steps: 0,
        truncated: false,
        stop: StopReason::GenerationOnly,
        planner_report: None,
        planner_retries: 0,
        per_step_scores: None,
        accounting: CostReport {
            generation_seconds: seconds,
            ..CostReport::default()
        },
    })
}

/// Generates once, plans once, then applies the plan step by step, stopping
/// after `max_edit_steps` edits. Every image is persisted before the next
/// step starts.
///
/// A planner failure yields a trace holding only the generated image; an
/// edit failure stops the loop and keeps the images produced so far.
pub fn run_grape(
    prompt: &PromptRecord,
    stack: &BackendStack,
    planner: &Planner,
    store: &dyn PayloadStore,
    config: &RunConfig,
) -> Result<PipelineTrace, PipelineError> {
    let mut trace = run_base(prompt, stack, store, config)?;
    trace.mode = RunMode::Grape;
    trace.plan = EditPlan::empty(plan_source(planner.mode()));
    let mut usage = TokenUsage::default();

    let plan_once = |image: &ImageRef, trace: &mut PipelineTrace, usage: &mut TokenUsage| {
        match planner.plan(prompt, image, stack.planner.as_ref(), store) {
            Ok(outcome) => {
                usage.add(outcome.usage);
                trace.accounting.planning_seconds += outcome.seconds;
                trace.planner_retries += outcome.retries;
                Ok(outcome.report)
            }
            Err(failure) => {
                usage.add(failure.usage);
                trace.accounting.planning_seconds += failure.seconds;
                trace.planner_retries += failure.retries;
                Err(failure.error)
            }
        }
    };

    match plan_once(&trace.images[0].clone(), &mut trace, &mut usage) {
        Ok(report) => {
            trace.plan = report.plan.clone();
            trace.planner_report = Some(report);
        }
        Err(e) => {
            log::warn!("prompt {}: planning failed: {e}", prompt.id);
            trace.stop = StopReason::PlanFailed { message: e.to_string() };
            finish(&mut trace, usage, stack.planner_prices);
            return Ok(trace);
        }
    }

    trace.stop = StopReason::Completed;
    let mut next = 0;
    loop {
        while next < trace.plan.len() {
            if trace.executed_steps >= config.max_edit_steps {
                trace.stop = StopReason::StepCap;
                break;
            }
            let step = trace.plan.steps()[next].clone();
            match edit(trace.final_image(), &step, config.seed, stack.editor.as_ref(), store) {
                Ok((image, seconds)) => {
                    trace.images.push(image);
                    trace.executed_steps += 1;
                    trace.accounting.editing_seconds += seconds;
                }
                Err(e) => {
                    log::warn!("prompt {}: edit {} failed: {e}", prompt.id, step.ordinal);
                    trace.stop = StopReason::EditFailed {
                        ordinal: step.ordinal,
                        message: e.to_string(),
                    };
                    break;
                }
            }
            next += 1;
        }
        let exhausted = next == trace.plan.len() && trace.stop == StopReason::Completed;
        if !(config.replan && exhausted && trace.executed_steps > 0 && trace.executed_steps < config.max_edit_steps) {
            break;
        }
        match plan_once(&trace.final_image().clone(), &mut trace, &mut usage) {
            Ok(report) if !report.plan.is_empty() => trace.plan.extend(report.plan),
            Ok(_) => break,
            Err(e) => {
                log::warn!("prompt {}: replanning failed: {e}", prompt.id);
                break;
            }
        }
    }
    trace.truncated = (trace.executed_steps as usize) < trace.plan.len();
    finish(&mut trace, usage, stack.planner_prices);
    Ok(trace)
}

fn finish(trace: &mut PipelineTrace, usage: TokenUsage, prices: Prices) {
    trace.accounting.planner_prompt_tokens = usage.prompt_tokens;
    trace.accounting.planner_completion_tokens = usage.completion_tokens;
    trace.accounting.usage_missing = usage.missing;
    trace.accounting = account(trace, prices);
}

/// Recomputes the planning cost of `trace` from its token counts.
///
/// ```
/// use grape::backends::BackendStack;
/// use grape::model::{CostReport, Prices};
/// use grape::pipeline::{account, run_base, RunConfig};
/// use grape::simworld::{random_prompt_set, SimOptions};
/// use grape::store::MemoryStore;
///
/// let stack = BackendStack::simulated(&SimOptions::default());
/// let prompt = random_prompt_set(0, 1, &[1]).remove(0);
/// let mut trace = run_base(&prompt, &stack, &MemoryStore::new(), &RunConfig::default()).unwrap();
/// trace.accounting = CostReport { planner_prompt_tokens: 2000, planner_completion_tokens: 400, ..CostReport::default() };
/// let prices = Prices { per_1k_prompt: 2.5, per_1k_completion: 10.0 };
/// assert!((account(&trace, prices).estimated_planning_cost - 9.0).abs() < 1e-9);
/// ```
pub fn account(trace: &PipelineTrace, prices: Prices) -> CostReport {
    let mut report = trace.accounting.clone();
    report.estimated_planning_cost = prices.cost(report.usage());
    report
}

/// Scores every image of `trace` against its prompt's questions. Questions
/// are answered in parallel; a failed answer counts as no and is tallied in
/// `unanswered_count`. An empty question graph scores zero.
pub fn score_trace(
    mut trace: PipelineTrace,
    vqa: &dyn VqaBackend,
    store: &dyn PayloadStore,
    aggregation: QaAggregation,
) -> Result<PipelineTrace, PipelineError> {
    let graph = &trace.prompt.questions;
    if graph.is_empty() {
        log::warn!("prompt {}: no questions; scores are zero", trace.prompt.id);
    }
    let mut reports = Vec::with_capacity(trace.images.len());
    for image in &trace.images {
        let results: Vec<(String, Result<Answer, BackendError>)> = graph
            .questions()
            .par_iter()
            .map(|q| (q.id.clone(), answer_binary(image, q, vqa, store)))
            .collect();
        let mut answers = BTreeMap::new();
        let mut unanswered = 0;
        for (id, result) in results {
            let answer = match result {
                Ok(a) => a,
                Err(BackendError::Store(e)) => return Err(PipelineError::ScoringStore(BackendError::Store(e))),
                Err(e) => {
                    log::warn!("prompt {}: question {id} unanswered: {e}", trace.prompt.id);
                    unanswered += 1;
                    Answer::No
                }
            };
            answers.insert(id, answer);
        }
        reports.push(ScoreReport::from_answers(answers, unanswered, graph, aggregation)?);
    }
    trace.per_step_scores = Some(reports);
    Ok(trace)
}
