//! Value types shared by every stage of the pipeline.
//!
//! Everything here is immutable after construction and cheap to clone, so the
//! types can be handed between worker threads freely.

mod prompt;
mod trace;

pub use prompt::{load_prompt_set, parse_prompt_set, Benchmark, PromptError, PromptRecord, CONCEPTMIX_K};
pub use trace::{CostReport, PipelineTrace, Prices, RunMode, StopReason, TokenUsage};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::simworld::EditOp;

/// Hex-encoded SHA-256 digest of `payload`.
///
/// This is the only content hash used in the crate: artifact locators,
/// response-cache keys and scene identities are all derived from it.
///
/// ```
/// assert_eq!(
///     grape::content_id(b""),
///     "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
/// );
/// ```
pub fn content_id(payload: &[u8]) -> String {
    hex::encode(Sha256::digest(payload))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageKind {
    /// Encoded raster bytes (PNG, JPEG, ...), never decoded by this crate.
    Raster,
    /// Canonical scene-graph text produced by the simulated world.
    Scene,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Producer {
    Generator,
    Editor,
    External,
}

/// Handle to a persisted image payload. Never carries the bytes themselves.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageRef {
    pub content_id: String,
    pub kind: ImageKind,
    /// Path of the payload relative to the artifact store root.
    pub locator: String,
    pub producer: Producer,
    pub step_index: u32,
}

impl ImageRef {
    /// Builds a handle, enforcing that only editor outputs have a non-zero
    /// step index.
    pub fn new(
        content_id: String,
        kind: ImageKind,
        locator: String,
        producer: Producer,
        step_index: u32,
    ) -> Result<Self, InvalidImageRef> {
        let initial = matches!(producer, Producer::Generator | Producer::External);
        if initial != (step_index == 0) {
            return Err(InvalidImageRef { producer, step_index });
        }
        Ok(ImageRef {
            content_id,
            kind,
            locator,
            producer,
            step_index,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("step index {step_index} is inconsistent with producer {producer:?}")]
pub struct InvalidImageRef {
    pub producer: Producer,
    pub step_index: u32,
}

/// One atomic edit instruction within a plan.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditInstruction {
    /// 1-based position within the owning plan.
    pub ordinal: u32,
    pub text: String,
    /// Structured form, present when the text falls inside the simulated
    /// world's instruction grammar.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parsed_op: Option<EditOp>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlanSource {
    Mllm,
    NaiveMllm,
    Oracle,
}

/// Ordered list of edit instructions. An empty plan means the planner judged
/// the image aligned with its prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditPlan {
    steps: Vec<EditInstruction>,
    pub source: PlanSource,
}

impl EditPlan {
    /// Builds a plan from instruction texts, numbering them `1..=n` and
    /// attaching the structured form of each one that parses.
    pub fn from_texts<I, S>(texts: I, source: PlanSource) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let steps = texts
            .into_iter()
            .enumerate()
            .map(|(i, text)| {
                let text = text.into();
                EditInstruction {
                    ordinal: i as u32 + 1,
                    parsed_op: crate::simworld::parse_edit_instruction(&text).ok(),
                    text,
                }
            })
            .collect();
        EditPlan { steps, source }
    }

    pub fn empty(source: PlanSource) -> Self {
        EditPlan {
            steps: Vec::new(),
            source,
        }
    }

    pub fn steps(&self) -> &[EditInstruction] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Appends the steps of `other`, renumbering them to keep ordinals
    /// contiguous.
    pub fn extend(&mut self, other: EditPlan) {
        let offset = self.steps.len() as u32;
        self.steps
            .extend(other.steps.into_iter().map(|mut step| {
                step.ordinal += offset;
                step
            }));
    }

    /// Checks that ordinals run `1..=n` without gaps and texts are nonempty.
    pub fn is_well_formed(&self) -> bool {
        self.steps
            .iter()
            .enumerate()
            .all(|(i, s)| s.ordinal == i as u32 + 1 && !s.text.trim().is_empty())
    }
}

/// One analysed element: an entity with its attributes and relations.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Element {
    pub entity: String,
    pub attributes: Vec<String>,
    pub relations: Vec<String>,
}

impl Element {
    pub fn new(entity: impl Into<String>) -> Self {
        Element {
            entity: entity.into(),
            attributes: Vec::new(),
            relations: Vec::new(),
        }
    }
}

/// The parsed four-section planner output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannerReport {
    pub textual_elements: Vec<Element>,
    pub image_elements: Vec<Element>,
    pub error_summary: String,
    pub plan: EditPlan,
    pub raw_text: String,
}
