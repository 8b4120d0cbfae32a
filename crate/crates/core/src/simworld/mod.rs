//! A deterministic scene-graph world.
//!
//! Images are [`Scene`]s serialized as canonical text. Prompts and edit
//! instructions follow small grammars, so a prompt parses to a target scene,
//! a generator can inject controlled faults, an oracle can compute the minimal
//! corrective plan and a rule-based editor can apply it. A predicate-based
//! VQA answers structured questions by inspecting the scene directly.
//!
//! ```
//! use grape::simworld::{apply_edit, degrade, oracle_plan, parse_target_scene};
//!
//! let target = parse_target_scene("a green bench and a red car and a blue bowl").unwrap();
//! let current = degrade(&target, 1.0, 7);
//! let plan = oracle_plan(&target, &current);
//! let mut scene = current;
//! for step in plan.steps() {
//!     scene = apply_edit(&scene, step.parsed_op.as_ref().unwrap()).unwrap();
//! }
//! assert!(scene.equivalent(&target));
//! ```

mod apply;
mod backends;
mod degrade;
mod grammar;
mod instruction;
mod oracle;
mod predicate;
mod random;
mod scene;
pub mod vocab;

pub use apply::apply_edit;
pub use backends::{NoisyPlanner, SimEditor, SimGenerator, SimOptions, SimPlanner, SimVqa, SCENE_MEDIA_TYPE};
pub use degrade::{concept_instances, degrade, degrade_with_log, Fault};
pub use grammar::{parse_target_scene, render_prompt};
pub use instruction::{parse_edit_instruction, Change, EditKind, EditOp, RelationSpec};
pub use oracle::{oracle_ops, oracle_plan, question_text, questions_for_scene, scene_elements};
pub use predicate::evaluate_predicate;
pub use random::{random_prompt_set, random_target};
pub use scene::{Attributes, CanonicalScene, Descriptor, Relation, Scene, SceneObject};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    /// Prompt grammar violation; `start..end` is the byte span of `token`.
    #[error("{message} (at bytes {start}..{end}{})", if token.is_empty() { String::new() } else { format!(", {token:?}") })]
    Grammar {
        message: String,
        start: usize,
        end: usize,
        token: String,
    },
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("cannot parse instruction {instruction:?}: {reason}")]
    InstructionUnparseable { instruction: String, reason: String },
    #[error("no object matches {0:?}")]
    TargetNotFound(String),
    #[error("question {0:?} has no structured predicate")]
    Unanswerable(String),
}
