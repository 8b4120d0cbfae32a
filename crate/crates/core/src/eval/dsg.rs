use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Answer, EvalError, QuestionGraph};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DsgScores {
    /// Fraction of questions whose answer and every ancestor's answer is yes.
    pub dsg: f64,
    /// Plain fraction of yes answers.
    pub dsg_no_dep: f64,
}

/// How per-question answers collapse into a prompt-level QA score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QaAggregation {
    /// Fraction of questions answered yes.
    #[default]
    PerQuestion,
    /// 1 if every question is answered yes, else 0.
    AllPass,
}

fn check_ids(answers: &BTreeMap<String, Answer>, graph: &QuestionGraph) -> Result<(), EvalError> {
    match answers.keys().find(|id| graph.index_of(id).is_none()) {
        Some(id) => Err(EvalError::UnknownQuestion(id.clone())),
        None => Ok(()),
    }
}

fn raw_answers(answers: &BTreeMap<String, Answer>, graph: &QuestionGraph) -> Vec<bool> {
    // Questions without an answer count as no.
    graph
        .questions()
        .iter()
        .map(|q| answers.get(&q.id).is_some_and(|a| a.is_yes()))
        .collect()
}

/// Dependency-aware and plain scores for one image.
///
/// A question counts toward `dsg` only when it and all of its parents (after
/// their own invalidation) were answered yes. An empty graph scores zero.
///
/// ```
/// use std::collections::BTreeMap;
/// use grape::eval::{dsg_scores, Answer, Question, QuestionGraph};
///
/// let graph = QuestionGraph::new(vec![
///     Question::new("q1", "Is there a duck?"),
///     Question::new("q2", "Is the duck metallic?").with_parents(["q1"]),
///     Question::new("q3", "Is there a bench?"),
/// ]).unwrap();
/// let answers = BTreeMap::from([
///     ("q1".to_string(), Answer::No),
///     ("q2".to_string(), Answer::Yes),
///     ("q3".to_string(), Answer::Yes),
/// ]);
/// let s = dsg_scores(&answers, &graph).unwrap();
/// assert_eq!(s.dsg_no_dep, 2.0 / 3.0);
/// assert_eq!(s.dsg, 1.0 / 3.0);
/// ```
pub fn dsg_scores(answers: &BTreeMap<String, Answer>, graph: &QuestionGraph) -> Result<DsgScores, EvalError> {
    check_ids(answers, graph)?;
    let n = graph.len();
    if n == 0 {
        log::warn!("scoring an empty question set as 0");
        return Ok(DsgScores {
            dsg: 0.0,
            dsg_no_dep: 0.0,
        });
    }
    let raw = raw_answers(answers, graph);
    let mut valid = vec![false; n];
    for &i in graph.topological_order() {
        valid[i] = raw[i] && graph.parent_indices(i).iter().all(|&p| valid[p]);
    }
    let count = |v: &[bool]| v.iter().filter(|&&b| b).count() as f64;
    Ok(DsgScores {
        dsg: count(&valid) / n as f64,
        dsg_no_dep: count(&raw) / n as f64,
    })
}

/// Prompt-level QA score without dependency handling. An empty graph scores
/// zero.
pub fn qa_score(
    answers: &BTreeMap<String, Answer>,
    graph: &QuestionGraph,
    aggregation: QaAggregation,
) -> Result<f64, EvalError> {
    check_ids(answers, graph)?;
    if graph.is_empty() {
        log::warn!("scoring an empty question set as 0");
        return Ok(0.0);
    }
    let raw = raw_answers(answers, graph);
    let yes = raw.iter().filter(|&&b| b).count();
    Ok(match aggregation {
        QaAggregation::PerQuestion => yes as f64 / raw.len() as f64,
        QaAggregation::AllPass => f64::from(u8::from(yes == raw.len())),
    })
}

/// Scores for one image of a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub answers: BTreeMap<String, Answer>,
    pub dsg: f64,
    pub dsg_no_dep: f64,
    pub qa: f64,
    /// Questions whose VQA call failed; they are recorded as no.
    pub unanswered_count: u32,
}

impl ScoreReport {
    pub fn from_answers(
        answers: BTreeMap<String, Answer>,
        unanswered_count: u32,
        graph: &QuestionGraph,
        aggregation: QaAggregation,
    ) -> Result<Self, EvalError> {
        let DsgScores { dsg, dsg_no_dep } = dsg_scores(&answers, graph)?;
        let qa = qa_score(&answers, graph, aggregation)?;
        Ok(ScoreReport {
            answers,
            dsg,
            dsg_no_dep,
            qa,
            unanswered_count,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::Question;

    fn answers(pairs: &[(&str, bool)]) -> BTreeMap<String, Answer> {
        pairs.iter().map(|(k, v)| (k.to_string(), Answer::from_bool(*v))).collect()
    }

    fn diamond() -> QuestionGraph {
        QuestionGraph::new(vec![
            Question::new("root", "r"),
            Question::new("a", "a").with_parents(["root"]),
            Question::new("b", "b").with_parents(["root"]),
            Question::new("leaf", "l").with_parents(["a", "b"]),
        ])
        .unwrap()
    }

    #[test]
    fn all_yes_is_one() {
        let g = diamond();
        let s = dsg_scores(&answers(&[("root", true), ("a", true), ("b", true), ("leaf", true)]), &g).unwrap();
        assert_eq!((s.dsg, s.dsg_no_dep), (1.0, 1.0));
    }

    #[test]
    fn diamond_leaf_no() {
        let g = diamond();
        let s = dsg_scores(&answers(&[("root", true), ("a", true), ("b", true), ("leaf", false)]), &g).unwrap();
        assert_eq!((s.dsg, s.dsg_no_dep), (0.75, 0.75));
    }

    #[test]
    fn invalidation_propagates_transitively() {
        let g = QuestionGraph::new(vec![
            Question::new("q1", "x"),
            Question::new("q2", "y").with_parents(["q1"]),
            Question::new("q3", "z").with_parents(["q2"]),
        ])
        .unwrap();
        let s = dsg_scores(&answers(&[("q1", false), ("q2", true), ("q3", true)]), &g).unwrap();
        assert_eq!(s.dsg, 0.0);
        assert!((s.dsg_no_dep - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn unknown_id_is_an_error() {
        let g = diamond();
        assert_eq!(
            dsg_scores(&answers(&[("zzz", true)]), &g),
            Err(EvalError::UnknownQuestion("zzz".into()))
        );
    }

    #[test]
    fn qa_counts_and_empty() {
        let qs: Vec<Question> = (0..8).map(|i| Question::new(format!("q{i}"), "t")).collect();
        let g = QuestionGraph::new(qs).unwrap();
        let a: BTreeMap<String, Answer> = (0..8).map(|i| (format!("q{i}"), Answer::from_bool(i != 3))).collect();
        assert_eq!(qa_score(&a, &g, QaAggregation::PerQuestion).unwrap(), 0.875);
        assert_eq!(qa_score(&a, &g, QaAggregation::AllPass).unwrap(), 0.0);
        let empty = QuestionGraph::new(vec![]).unwrap();
        assert_eq!(qa_score(&BTreeMap::new(), &empty, QaAggregation::PerQuestion).unwrap(), 0.0);
    }
}
