use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Predicate;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub parents: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicate: Option<Predicate>,
}

impl Question {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Question {
            id: id.into(),
            text: text.into(),
            parents: Vec::new(),
            predicate: None,
        }
    }

    pub fn with_parents<I, S>(mut self, parents: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.parents = parents.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_predicate(mut self, predicate: Predicate) -> Self {
        self.predicate = Some(predicate);
        self
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate question id {0:?}")]
    DuplicateId(String),
    #[error("question {question:?} lists unknown parent {parent:?}")]
    DanglingParent { question: String, parent: String },
    #[error("dependency cycle through question {0:?}")]
    Cycle(String),
}

/// Validated question DAG.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Question>", into = "Vec<Question>")]
pub struct QuestionGraph {
    questions: Vec<Question>,
    parents: Vec<Vec<usize>>,
    /// Question indices with every parent before its children.
    order: Vec<usize>,
    index: HashMap<String, usize>,
}

impl TryFrom<Vec<Question>> for QuestionGraph {
    type Error = GraphError;

    fn try_from(questions: Vec<Question>) -> Result<Self, Self::Error> {
        QuestionGraph::new(questions)
    }
}

impl From<QuestionGraph> for Vec<Question> {
    fn from(g: QuestionGraph) -> Self {
        g.questions
    }
}

impl QuestionGraph {
    /// Validates ids, parent references and acyclicity.
    pub fn new(questions: Vec<Question>) -> Result<Self, GraphError> {
        let mut index = HashMap::with_capacity(questions.len());
        for (i, q) in questions.iter().enumerate() {
            if index.insert(q.id.clone(), i).is_some() {
                return Err(GraphError::DuplicateId(q.id.clone()));
            }
        }
        let mut parents = Vec::with_capacity(questions.len());
        for q in &questions {
            let mut ps = Vec::with_capacity(q.parents.len());
            for p in &q.parents {
                match index.get(p) {
                    Some(&j) => ps.push(j),
                    None => {
                        return Err(GraphError::DanglingParent {
                            question: q.id.clone(),
                            parent: p.clone(),
                        })
                    }
                }
            }
            parents.push(ps);
        }
        let order = topological_order(&parents).map_err(|i| GraphError::Cycle(questions[i].id.clone()))?;
        Ok(QuestionGraph {
            questions,
            parents,
            order,
            index,
        })
    }

    /// Reads a JSONL file of question records.
    pub fn load(path: &Path) -> Result<Self, GraphError> {
        let text = std::fs::read_to_string(path).map_err(|source| GraphError::Io {
            path: path.to_owned(),
            source,
        })?;
        let mut questions = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let q: Question = serde_json::from_str(line).map_err(|e| GraphError::Malformed {
                line: i + 1,
                message: e.to_string(),
            })?;
            questions.push(q);
        }
        QuestionGraph::new(questions)
    }

    pub fn questions(&self) -> &[Question] {
        &self.questions
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn parent_indices(&self, i: usize) -> &[usize] {
        &self.parents[i]
    }

    pub fn topological_order(&self) -> &[usize] {
        &self.order
    }

    /// Length, in edges, of the longest dependency chain.
    pub fn depth(&self) -> usize {
        let mut depth = vec![0usize; self.questions.len()];
        for &i in &self.order {
            depth[i] = self.parents[i].iter().map(|&p| depth[p] + 1).max().unwrap_or(0);
        }
        depth.into_iter().max().unwrap_or(0)
    }
}

/// Kahn's algorithm over child lists. On a cycle, returns the index of a
/// question that lies on one.
fn topological_order(parents: &[Vec<usize>]) -> Result<Vec<usize>, usize> {
    let n = parents.len();
    let mut children = vec![Vec::new(); n];
    let mut pending: Vec<usize> = parents.iter().map(Vec::len).collect();
    for (child, ps) in parents.iter().enumerate() {
        for &p in ps {
            children[p].push(child);
        }
    }
    let mut ready: Vec<usize> = (0..n).filter(|&i| pending[i] == 0).rev().collect();
    let mut order = Vec::with_capacity(n);
    while let Some(i) = ready.pop() {
        order.push(i);
        for &c in children[i].iter().rev() {
            pending[c] -= 1;
            if pending[c] == 0 {
                ready.push(c);
            }
        }
    }
    if order.len() == n {
        return Ok(order);
    }
    // Everything left has an unresolved parent. Walking parents from any of
    // them must revisit a node, and that node is on a cycle.
    let start = (0..n).find(|&i| pending[i] > 0).expect("unfinished node exists");
    let mut seen = vec![false; n];
    let mut cur = start;
    loop {
        if seen[cur] {
            return Err(cur);
        }
        seen[cur] = true;
        cur = *parents[cur]
            .iter()
            .find(|&&p| pending[p] > 0)
            .expect("blocked node has a blocked parent");
    }
}
