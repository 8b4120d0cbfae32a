use serde::{Deserialize, Serialize};

use super::{EditPlan, ImageRef, PlannerReport, PromptRecord};
use crate::eval::ScoreReport;

/// Token counts reported by a chat backend.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Set when at least one response omitted usage; the counts are then a
    /// lower bound.
    #[serde(default)]
    pub missing: bool,
}

impl TokenUsage {
    pub fn add(&mut self, other: TokenUsage) {
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
        self.missing |= other.missing;
    }
}

/// Per-1k-token prices for the planner backend, in arbitrary currency units.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prices {
    pub per_1k_prompt: f64,
    pub per_1k_completion: f64,
}

impl Prices {
    pub fn cost(&self, usage: TokenUsage) -> f64 {
        usage.prompt_tokens as f64 * self.per_1k_prompt / 1000.0
            + usage.completion_tokens as f64 * self.per_1k_completion / 1000.0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub planner_prompt_tokens: u64,
    pub planner_completion_tokens: u64,
    pub generation_seconds: f64,
    pub planning_seconds: f64,
    pub editing_seconds: f64,
    pub estimated_planning_cost: f64,
    #[serde(default)]
    pub usage_missing: bool,
}

impl CostReport {
    pub fn usage(&self) -> TokenUsage {
        TokenUsage {
            prompt_tokens: self.planner_prompt_tokens,
            completion_tokens: self.planner_completion_tokens,
            missing: self.usage_missing,
        }
    }
}

/// Why the edit loop stopped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum StopReason {
    /// Base run: generation only, no planning.
    GenerationOnly,
    /// Every planned step was executed (including the empty plan).
    Completed,
    /// The plan was longer than the configured step cap.
    StepCap,
    /// The planner failed; the trace holds only the initial image.
    PlanFailed { message: String },
    /// An edit failed after retries; images up to the failure are kept.
    EditFailed { ordinal: u32, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Base,
    Grape,
}

impl RunMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RunMode::Base => "base",
            RunMode::Grape => "grape",
        }
    }
}

/// Full record of one pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineTrace {
    pub prompt: PromptRecord,
    pub mode: RunMode,
    pub seed: u64,
    /// `images[0]` is the generated image, `images[k]` the result of step `k`.
    pub images: Vec<ImageRef>,
    pub plan: EditPlan,
    pub executed_steps: u32,
    /// True iff fewer steps ran than were planned.
    pub truncated: bool,
    pub stop: StopReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planner_report: Option<PlannerReport>,
    #[serde(default)]
    pub planner_retries: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_step_scores: Option<Vec<ScoreReport>>,
    pub accounting: CostReport,
}

impl PipelineTrace {
    /// Checks the shape invariants every terminal trace must satisfy.
    pub fn check_shape(&self) -> Result<(), String> {
        let executed = self.executed_steps as usize;
        if self.images.len() != executed + 1 {
            return Err(format!(
                "{} images for {} executed steps",
                self.images.len(),
                executed
            ));
        }
        if executed > self.plan.len() {
            return Err(format!("executed {executed} of a {}-step plan", self.plan.len()));
        }
        if self.truncated != (executed < self.plan.len()) {
            return Err("truncated flag disagrees with executed step count".into());
        }
        if !self.plan.is_well_formed() {
            return Err("plan ordinals are not contiguous".into());
        }
        if let Some(scores) = &self.per_step_scores {
            if scores.len() != self.images.len() {
                return Err(format!("{} score reports for {} images", scores.len(), self.images.len()));
            }
        }
        Ok(())
    }

    pub fn final_image(&self) -> &ImageRef {
        self.images.last().expect("trace always holds the generated image")
    }

    pub fn final_score(&self) -> Option<&ScoreReport> {
        self.per_step_scores.as_ref().and_then(|s| s.last())
    }

    pub fn plan_failed(&self) -> bool {
        matches!(self.stop, StopReason::PlanFailed { .. })
    }

    pub fn partial(&self) -> bool {
        matches!(self.stop, StopReason::EditFailed { .. })
    }
}
