//! Seeded fixture generators and reference oracles shared by the
//! integration tests.

#![allow(dead_code)]

pub mod server;
pub mod wire;

use std::collections::BTreeMap;

use grape::eval::{Answer, Question, QuestionGraph};
use grape::model::{EditPlan, Element, PlanSource, PlannerReport, PromptRecord, Benchmark};
use grape::planner::build_report;
use grape::simworld::vocab::{ConceptKey, NOUNS, PREDICATES};
use grape::simworld::{questions_for_scene, render_prompt, Change, Descriptor, EditOp, RelationSpec, Scene};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn descriptor<R: Rng>(rng: &mut R) -> Descriptor {
    let mut d = Descriptor::new(*NOUNS.choose(rng).unwrap());
    for key in ConceptKey::ATTRIBUTES {
        if rng.gen_bool(0.3) {
            d = d.with(key, *key.values().choose(rng).unwrap());
        }
    }
    d
}

fn predicate_phrase<R: Rng>(rng: &mut R) -> String {
    let (c, i) = PREDICATES.choose(rng).unwrap();
    if rng.gen() { c } else { i }.to_string()
}

const LOCATIVES: [&str; 4] = ["on the corgi's head", "in the corner", "near the window", "on the left"];

/// A random op in any of the four templates.
pub fn edit_op<R: Rng>(rng: &mut R) -> EditOp {
    match rng.gen_range(0..4) {
        0 => EditOp::Add {
            object: descriptor(rng),
            relation: rng.gen_bool(0.5).then(|| RelationSpec {
                predicate: predicate_phrase(rng),
                anchor: descriptor(rng),
            }),
        },
        1 => EditOp::Remove { target: descriptor(rng) },
        2 => {
            let target = descriptor(rng);
            let change = if rng.gen_bool(0.6) {
                let key = *ConceptKey::ATTRIBUTES.choose(rng).unwrap();
                let current = target.attributes.get(&key).cloned();
                let value = key
                    .values()
                    .iter()
                    .filter(|v| Some(v.to_string()) != current)
                    .collect::<Vec<_>>()
                    .choose(rng)
                    .unwrap()
                    .to_string();
                Change::Attribute { key, value }
            } else {
                Change::Position {
                    predicate: rng.gen_bool(0.8).then(|| predicate_phrase(rng)),
                    anchor: descriptor(rng),
                }
            };
            EditOp::Modify { target, change }
        }
        _ => EditOp::Replace {
            target: descriptor(rng),
            locative: rng.gen_bool(0.3).then(|| LOCATIVES.choose(rng).unwrap().to_string()),
            replacement: descriptor(rng),
        },
    }
}

const WORDS: [&str; 16] = [
    "red", "car", "small", "wooden", "bench", "the", "left", "duck", "missing", "shiny", "two", "apples", "cartoon",
    "on top of", "under the plate", "next to the lamp",
];

fn phrase<R: Rng>(rng: &mut R, max_words: usize) -> String {
    let n = rng.gen_range(1..=max_words);
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

fn element<R: Rng>(rng: &mut R) -> Element {
    let mut e = Element::new(phrase(rng, 3));
    e.attributes = (0..rng.gen_range(0..4)).map(|_| phrase(rng, 2)).collect();
    e.relations = (0..rng.gen_range(0..3)).map(|_| phrase(rng, 4)).collect();
    e
}

/// A random report whose text fields stay inside what the renderer can
/// express: single lines, no separators, no section names.
pub fn planner_report<R: Rng>(rng: &mut R) -> PlannerReport {
    let textual = (0..rng.gen_range(0..5)).map(|_| element(rng)).collect();
    let image = (0..rng.gen_range(0..5)).map(|_| element(rng)).collect();
    let summary = if rng.gen_bool(0.2) { String::new() } else { phrase(rng, 12) };
    let steps: Vec<String> = (0..rng.gen_range(0..6))
        .map(|_| {
            if rng.gen_bool(0.7) {
                edit_op(rng).render()
            } else {
                let mut s = phrase(rng, 8);
                s[..1].make_ascii_uppercase();
                s
            }
        })
        .collect();
    build_report(textual, image, &summary, EditPlan::from_texts(steps, PlanSource::Mllm))
}

/// A random DAG on `n` questions: edges only point from lower to higher
/// indices, then the list is shuffled so order carries no information.
pub fn dag<R: Rng>(rng: &mut R, n: usize, edge_p: f64) -> QuestionGraph {
    let mut qs: Vec<Question> = (0..n)
        .map(|j| {
            let parents: Vec<String> = (0..j).filter(|_| rng.gen_bool(edge_p)).map(|i| format!("q{i}")).collect();
            Question::new(format!("q{j}"), format!("question {j}")).with_parents(parents)
        })
        .collect();
    qs.shuffle(rng);
    QuestionGraph::new(qs).unwrap()
}

/// Every DAG on `n` nodes up to relabeling: each subset of the forward
/// edges of a fixed order.
pub fn all_dags(n: usize) -> impl Iterator<Item = QuestionGraph> {
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|j| (0..j).map(move |i| (i, j))).collect();
    (0u64..1 << pairs.len()).map(move |mask| {
        let qs = (0..n)
            .map(|j| {
                let parents: Vec<String> = pairs
                    .iter()
                    .enumerate()
                    .filter(|(b, (_, to))| *to == j && mask >> b & 1 == 1)
                    .map(|(_, (from, _))| format!("q{from}"))
                    .collect();
                Question::new(format!("q{j}"), "").with_parents(parents)
            })
            .collect();
        QuestionGraph::new(qs).unwrap()
    })
}

pub fn answers_from_mask(graph: &QuestionGraph, mask: u64) -> BTreeMap<String, Answer> {
    graph
        .questions()
        .iter()
        .enumerate()
        .map(|(i, q)| (q.id.clone(), Answer::from_bool(mask >> i & 1 == 1)))
        .collect()
}

pub fn random_answers<R: Rng>(rng: &mut R, graph: &QuestionGraph) -> BTreeMap<String, Answer> {
    graph
        .questions()
        .iter()
        .map(|q| (q.id.clone(), Answer::from_bool(rng.gen())))
        .collect()
}

/// Reference DSG: a question counts iff it and every ancestor, found by
/// walking parent links, were answered yes.
pub fn brute_force_dsg(graph: &QuestionGraph, answers: &BTreeMap<String, Answer>) -> f64 {
    let by_id: BTreeMap<&str, &Question> = graph.questions().iter().map(|q| (q.id.as_str(), q)).collect();
    let mut valid = 0;
    for q in graph.questions() {
        let mut stack = vec![q.id.as_str()];
        let mut ok = true;
        while let Some(id) = stack.pop() {
            if !answers[id].is_yes() {
                ok = false;
                break;
            }
            stack.extend(by_id[id].parents.iter().map(String::as_str));
        }
        valid += usize::from(ok);
    }
    valid as f64 / graph.len() as f64
}

pub fn brute_force_no_dep(answers: &BTreeMap<String, Answer>) -> f64 {
    answers.values().filter(|a| a.is_yes()).count() as f64 / answers.len() as f64
}

/// A prompt record for `target` with its predicate-backed questions.
pub fn prompt_for(id: &str, target: &Scene, k: u32) -> PromptRecord {
    let text = render_prompt(target);
    let parsed = grape::simworld::parse_target_scene(&text).unwrap();
    PromptRecord {
        id: id.to_owned(),
        text,
        benchmark: Benchmark::Custom,
        k: Some(k),
        questions: QuestionGraph::new(questions_for_scene(&parsed)).unwrap(),
    }
}
