//! Question graphs and VQA-driven scoring.
//!
//! A prompt's binary questions form a DAG: a question such as "is the duck
//! metallic?" depends on "is there a duck?". [`dsg_scores`] reports both the
//! plain fraction of yes answers and the dependency-aware score in which a
//! question only counts as yes if every ancestor was also answered yes.

mod dsg;
mod graph;
mod stats;

pub use dsg::{dsg_scores, qa_score, DsgScores, QaAggregation, ScoreReport};
pub use graph::{GraphError, Question, QuestionGraph};
pub use stats::{aggregate, avg_edit_steps, mean_std};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Answer {
    Yes,
    No,
}

impl Answer {
    pub fn is_yes(self) -> bool {
        self == Answer::Yes
    }

    pub fn from_bool(yes: bool) -> Self {
        if yes {
            Answer::Yes
        } else {
            Answer::No
        }
    }
}

/// Structured form of a binary question, answerable directly over a scene.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Predicate {
    /// With `count`, exactly that many objects carry the noun; otherwise at
    /// least one.
    Exists {
        noun: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        count: Option<u32>,
    },
    HasAttribute {
        noun: String,
        key: String,
        value: String,
    },
    Related {
        subject: String,
        predicate: String,
        object: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("answer given for unknown question {0:?}")]
    UnknownQuestion(String),
    #[error("{0}")]
    Input(String),
}
