//! Minimal corrective plans and question generation.

use std::collections::{BTreeMap, HashMap};

use pathfinding::kuhn_munkres::kuhn_munkres_min;
use pathfinding::matrix::Matrix;

use super::apply::apply_edit;
use super::grammar::{predicate_from, render_descriptor, with_article};
use super::instruction::{Change, EditOp, RelationSpec};
use super::scene::{Descriptor, Relation, Scene};
use super::vocab::{count_word, is_symmetric, pluralize, ConceptKey};
use crate::eval::{Predicate, Question};
use crate::model::{EditPlan, Element, PlanSource};

/// `matching[i]` is the index of the current object paired with target
/// object `i`, if any.
type Matching = Vec<Option<usize>>;

fn pair_cost(t: &Descriptor, c: &Descriptor) -> i64 {
    if t == c {
        0
    } else if t.noun == c.noun {
        2
    } else {
        3
    }
}

/// Optimal object pairing by per-object edit cost: identical pairs cost 0,
/// same-noun pairs 2, noun swaps 3, and an unpaired object (add or remove) 2.
/// Pairs already fixed in `matching` are kept.
fn complete_matching(target: &Scene, current: &Scene, mut matching: Matching) -> Matching {
    let used: Vec<bool> = {
        let mut u = vec![false; current.objects().len()];
        for j in matching.iter().flatten() {
            u[*j] = true;
        }
        u
    };
    let rows: Vec<usize> = (0..matching.len()).filter(|&i| matching[i].is_none()).collect();
    let cols: Vec<usize> = (0..used.len()).filter(|&j| !used[j]).collect();
    if rows.is_empty() || cols.is_empty() {
        return matching;
    }
    let n = rows.len() + cols.len();
    let mut weights = Matrix::new(n, n, 0i64);
    for r in 0..n {
        for c in 0..n {
            weights[(r, c)] = match (rows.get(r), cols.get(c)) {
                (Some(&i), Some(&j)) => pair_cost(
                    &target.objects()[i].descriptor(),
                    &current.objects()[j].descriptor(),
                ),
                (Some(_), None) | (None, Some(_)) => 2,
                (None, None) => 0,
            };
        }
    }
    let (_, assignment) = kuhn_munkres_min(&weights);
    for (r, &i) in rows.iter().enumerate() {
        if let Some(&j) = cols.get(assignment[r]) {
            matching[i] = Some(j);
        }
    }
    matching
}

fn id_matching(target: &Scene, current: &Scene) -> Option<Matching> {
    let m: Matching = target
        .objects()
        .iter()
        .map(|t| current.objects().iter().position(|c| c.id == t.id && c.noun == t.noun))
        .collect();
    m.iter().any(Option::is_some).then_some(m)
}

/// Tracks which target object each object of the working scene stands for.
struct Roles {
    work: Scene,
    /// target id -> working id
    fwd: HashMap<String, String>,
    /// working id -> target id
    rev: HashMap<String, String>,
    ops: Vec<EditOp>,
}

impl Roles {
    fn is_free(&self, id: &str) -> bool {
        self.work.relations_of(id).next().is_none()
    }

    /// Descriptor that addresses `id`. An edit hits the first object matching
    /// its descriptor; if that is an indistinguishable twin of `id`, the two
    /// swap roles so the edit lands on the intended role. Returns the id that
    /// now holds the role.
    fn address(&mut self, id: &str) -> (Descriptor, String) {
        let desc = self.work.object(id).expect("working object").descriptor();
        let hit = self.work.find(&desc).expect("matches itself").id.clone();
        if hit != id && self.work.object(&hit).expect("present").descriptor() == desc && self.is_free(&hit) && self.is_free(id) {
            let a = self.rev.remove(id);
            let b = self.rev.remove(&hit);
            if let Some(t) = a {
                self.fwd.insert(t.clone(), hit.clone());
                self.rev.insert(hit.clone(), t);
            }
            if let Some(t) = b {
                self.fwd.insert(t.clone(), id.to_owned());
                self.rev.insert(id.to_owned(), t);
            }
            return (desc, hit);
        }
        (desc, id.to_owned())
    }

    fn apply(&mut self, op: EditOp) {
        self.work = apply_edit(&self.work, &op).expect("oracle edits address existing objects");
        self.ops.push(op);
    }
}

fn norm(r: &Relation) -> (String, String, String) {
    if is_symmetric(&r.predicate) && r.object < r.subject {
        (r.object.clone(), r.predicate.clone(), r.subject.clone())
    } else {
        (r.subject.clone(), r.predicate.clone(), r.object.clone())
    }
}

fn pair_key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_owned(), b.to_owned())
    } else {
        (b.to_owned(), a.to_owned())
    }
}

/// The single attribute change turning `from` into `to`, if that is all
/// that differs.
fn single_change(from: &Descriptor, to: &Descriptor) -> Option<(ConceptKey, String)> {
    if from.noun != to.noun || from.attributes.keys().any(|k| !to.attributes.contains_key(k)) {
        return None;
    }
    let mut diffs = to.attributes.iter().filter(|(k, v)| from.attributes.get(k) != Some(v));
    let (k, v) = diffs.next()?;
    diffs.next().is_none().then(|| (*k, v.clone()))
}

fn build_ops(target: &Scene, current: &Scene, matching: &Matching) -> Vec<EditOp> {
    let mut roles = Roles {
        work: current.clone(),
        fwd: HashMap::new(),
        rev: HashMap::new(),
        ops: Vec::new(),
    };
    for (i, m) in matching.iter().enumerate() {
        if let Some(j) = m {
            let (t, c) = (&target.objects()[i].id, &current.objects()[*j].id);
            roles.fwd.insert(t.clone(), c.clone());
            roles.rev.insert(c.clone(), t.clone());
        }
    }

    // Extraneous objects.
    for c in current.objects() {
        if roles.rev.contains_key(&c.id) {
            continue;
        }
        let (desc, _) = roles.address(&c.id);
        roles.apply(EditOp::Remove { target: desc });
    }

    // Attribute and noun fixes.
    for t in target.objects() {
        let Some(w) = roles.fwd.get(&t.id).cloned() else { continue };
        let want = t.descriptor();
        if roles.work.object(&w).expect("mapped").descriptor() == want {
            continue;
        }
        let (desc, _) = roles.address(&w);
        let op = match single_change(&desc, &want) {
            Some((key, value)) => EditOp::Modify {
                target: desc,
                change: Change::Attribute { key, value },
            },
            None => EditOp::Replace {
                target: desc,
                locative: None,
                replacement: want,
            },
        };
        roles.apply(op);
    }

    // Missing objects, each carrying one relation to an object already in
    // place when possible.
    for t in target.objects() {
        if roles.fwd.contains_key(&t.id) {
            continue;
        }
        let anchor_rel = target
            .relations_of(&t.id)
            .find(|r| {
                let other = if r.subject == t.id { &r.object } else { &r.subject };
                roles.fwd.contains_key(other)
            })
            .cloned();
        let relation = anchor_rel.map(|r| {
            let other = if r.subject == t.id { &r.object } else { &r.subject };
            let w = roles.fwd[other].clone();
            let (anchor, _) = roles.address(&w);
            RelationSpec {
                predicate: predicate_from(&r, &t.id),
                anchor,
            }
        });
        let new_id = roles.work.fresh_id();
        roles.apply(EditOp::Add {
            object: t.descriptor(),
            relation,
        });
        roles.fwd.insert(t.id.clone(), new_id.clone());
        roles.rev.insert(new_id, t.id.clone());
    }

    // Relation fixes, one per object pair whose relations differ.
    let desired: Vec<Relation> = target
        .relations()
        .iter()
        .map(|r| Relation {
            subject: roles.fwd[&r.subject].clone(),
            predicate: r.predicate.clone(),
            object: roles.fwd[&r.object].clone(),
        })
        .collect();
    let mut pairs: Vec<(String, String)> = Vec::new();
    for r in desired.iter().chain(roles.work.relations().to_vec().iter()) {
        let k = pair_key(&r.subject, &r.object);
        if !pairs.contains(&k) {
            pairs.push(k);
        }
    }
    for (a, b) in pairs {
        let want: Vec<&Relation> = desired.iter().filter(|r| r.connects(&a, &b)).collect();
        let mut want_n: Vec<_> = want.iter().map(|r| norm(r)).collect();
        want_n.sort();
        let mut have_n: Vec<_> = roles.work.relations().iter().filter(|r| r.connects(&a, &b)).map(norm).collect();
        have_n.sort();
        if want_n == have_n {
            continue;
        }
        // A position change sets exactly one relation for the pair; several
        // relations between the same two objects cannot be expressed.
        let (subject, predicate, object) = match want.first() {
            Some(r) => (r.subject.clone(), Some(r.predicate.clone()), r.object.clone()),
            None => (a.clone(), None, b.clone()),
        };
        let (sd, _) = roles.address(&subject);
        let (od, _) = roles.address(&object);
        roles.apply(EditOp::Modify {
            target: sd,
            change: Change::Position { predicate, anchor: od },
        });
    }
    roles.ops
}

/// Minimal edit sequence turning `current` into `target`: removes, then
/// attribute fixes, then adds, then relation fixes. Object pairings are
/// chosen to minimise the number of edits; ids shared by both scenes are
/// tried as a pairing hint.
pub fn oracle_ops(target: &Scene, current: &Scene) -> Vec<EditOp> {
    if target.equivalent(current) {
        return Vec::new();
    }
    let empty: Matching = vec![None; target.objects().len()];
    let mut best = build_ops(target, current, &complete_matching(target, current, empty));
    if let Some(m) = id_matching(target, current) {
        let ops = build_ops(target, current, &complete_matching(target, current, m));
        if ops.len() < best.len() {
            best = ops;
        }
    }
    best
}

/// [`oracle_ops`] rendered through the instruction grammar.
///
/// ```
/// use grape::simworld::{oracle_plan, parse_target_scene};
///
/// let target = parse_target_scene("a pink apple and a plate").unwrap();
/// let current = parse_target_scene("a red apple and a plate").unwrap();
/// let plan = oracle_plan(&target, &current);
/// assert_eq!(plan.steps()[0].text, "Change the red apple to a pink apple");
/// ```
pub fn oracle_plan(target: &Scene, current: &Scene) -> EditPlan {
    EditPlan::from_texts(oracle_ops(target, current).iter().map(EditOp::render), PlanSource::Oracle)
}

/// One-sentence description of what an edit corrects.
pub(crate) fn describe_op(op: &EditOp) -> String {
    let the = |d: &Descriptor| format!("the {}", render_descriptor(d, false));
    match op {
        EditOp::Add { object, .. } => format!("The image is missing {}.", with_article(object)),
        EditOp::Remove { target } => format!("The image contains an unwanted {}.", render_descriptor(target, false)),
        EditOp::Modify {
            target,
            change: Change::Attribute { key, value },
        } => format!("The {} should have {value} {key}.", render_descriptor(target, false)),
        EditOp::Modify {
            target,
            change: Change::Position { predicate: Some(p), anchor },
        } => format!("The {} should be {p} {}.", render_descriptor(target, false), the(anchor)),
        EditOp::Modify {
            target,
            change: Change::Position { predicate: None, anchor },
        } => format!("The {} should not be related to {}.", render_descriptor(target, false), the(anchor)),
        EditOp::Replace {
            target, replacement, ..
        } => format!("The {} should be {}.", render_descriptor(target, false), with_article(replacement)),
    }
}

/// Question text for a structured predicate.
pub fn question_text(p: &Predicate) -> String {
    match p {
        Predicate::Exists { noun, count: None } => {
            format!("Is there {}?", with_article(&Descriptor::new(noun.clone())))
        }
        Predicate::Exists { noun, count: Some(n) } => {
            let n_word = count_word(*n).map(str::to_owned).unwrap_or_else(|| n.to_string());
            if *n == 1 {
                format!("Is there exactly one {noun}?")
            } else {
                format!("Are there exactly {n_word} {}?", pluralize(noun))
            }
        }
        Predicate::HasAttribute { noun, key, value } => {
            if key == "style" {
                format!("Is the {noun} in {value} style?")
            } else {
                format!("Is the {noun} {value}?")
            }
        }
        Predicate::Related {
            subject,
            predicate,
            object,
        } => format!("Is the {subject} {predicate} the {object}?"),
    }
}

/// Dependency-structured questions whose answers are all yes exactly for
/// scenes that contain the prompt's content. One existence question per noun
/// (with an exact count when the noun occurs more than once), one attribute
/// question per distinct noun/attribute pair, one relation question per
/// distinct relation; attribute and relation questions depend on the
/// existence questions of their nouns.
pub fn questions_for_scene(scene: &Scene) -> Vec<Question> {
    let mut counts: Vec<(String, u32)> = Vec::new();
    for o in scene.objects() {
        match counts.iter_mut().find(|(n, _)| *n == o.noun) {
            Some((_, c)) => *c += 1,
            None => counts.push((o.noun.clone(), 1)),
        }
    }
    let mut out: Vec<Question> = Vec::new();
    let mut exists_id: BTreeMap<String, String> = BTreeMap::new();
    let push = |out: &mut Vec<Question>, p: Predicate, parents: Vec<String>| -> String {
        let id = format!("q{}", out.len() + 1);
        out.push(Question::new(id.clone(), question_text(&p)).with_parents(parents).with_predicate(p));
        id
    };
    for (noun, n) in &counts {
        let id = push(
            &mut out,
            Predicate::Exists {
                noun: noun.clone(),
                count: (*n > 1).then_some(*n),
            },
            vec![],
        );
        exists_id.insert(noun.clone(), id);
    }
    let mut seen_attr = Vec::new();
    for o in scene.objects() {
        for (k, v) in &o.attributes {
            let p = Predicate::HasAttribute {
                noun: o.noun.clone(),
                key: k.to_string(),
                value: v.clone(),
            };
            if !seen_attr.contains(&p) {
                seen_attr.push(p.clone());
                push(&mut out, p, vec![exists_id[&o.noun].clone()]);
            }
        }
    }
    let mut seen_rel = Vec::new();
    for r in scene.relations() {
        let s = &scene.object(&r.subject).expect("valid").noun;
        let o = &scene.object(&r.object).expect("valid").noun;
        let p = Predicate::Related {
            subject: s.clone(),
            predicate: r.predicate.clone(),
            object: o.clone(),
        };
        if !seen_rel.contains(&p) {
            seen_rel.push(p.clone());
            let mut parents = vec![exists_id[s].clone()];
            if s != o {
                parents.push(exists_id[o].clone());
            }
            push(&mut out, p, parents);
        }
    }
    out
}

/// Planner-style element analysis of a scene: one element per object with
/// `<value> <key>` attributes and relations phrased from the object's side.
pub fn scene_elements(scene: &Scene) -> Vec<Element> {
    scene
        .objects()
        .iter()
        .map(|o| Element {
            entity: o.noun.clone(),
            attributes: o.attributes.iter().map(|(k, v)| format!("{v} {k}")).collect(),
            relations: scene
                .relations_of(&o.id)
                .map(|r| {
                    let other = if r.subject == o.id { &r.object } else { &r.subject };
                    format!("{} the {}", predicate_from(r, &o.id), scene.object(other).expect("valid").noun)
                })
                .collect(),
        })
        .collect()
}
