use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::vocab::{canonical_predicate, is_symmetric, ConceptKey};
use super::SimError;

pub type Attributes = BTreeMap<ConceptKey, String>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: String,
    pub noun: String,
    pub attributes: Attributes,
}

impl SceneObject {
    pub fn new(id: impl Into<String>, noun: impl Into<String>) -> Self {
        SceneObject {
            id: id.into(),
            noun: noun.into(),
            attributes: Attributes::new(),
        }
    }

    pub fn with(mut self, key: ConceptKey, value: impl Into<String>) -> Self {
        self.attributes.insert(key, value.into());
        self
    }

    /// The id-free part of the object.
    pub fn descriptor(&self) -> Descriptor {
        Descriptor {
            noun: self.noun.clone(),
            attributes: self.attributes.clone(),
        }
    }
}

/// Directed relation between two objects, always stored with its canonical
/// predicate.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Relation {
    pub subject: String,
    pub predicate: String,
    pub object: String,
}

impl Relation {
    /// Builds a relation from any predicate phrase, swapping endpoints for
    /// inverse phrases.
    pub fn new(subject: &str, phrase: &str, object: &str) -> Result<Self, SimError> {
        let (canonical, swapped) =
            canonical_predicate(phrase).ok_or_else(|| SimError::InvalidScene(format!("unknown predicate {phrase:?}")))?;
        let (s, o) = if swapped { (object, subject) } else { (subject, object) };
        Ok(Relation {
            subject: s.to_owned(),
            predicate: canonical.to_owned(),
            object: o.to_owned(),
        })
    }

    pub fn touches(&self, id: &str) -> bool {
        self.subject == id || self.object == id
    }

    pub fn connects(&self, a: &str, b: &str) -> bool {
        (self.subject == a && self.object == b) || (self.subject == b && self.object == a)
    }
}

/// Noun plus an attribute filter. As a target it matches any object with the
/// noun whose attributes include every listed pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Descriptor {
    pub noun: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: Attributes,
}

impl Descriptor {
    pub fn new(noun: impl Into<String>) -> Self {
        Descriptor {
            noun: noun.into(),
            attributes: Attributes::new(),
        }
    }

    pub fn with(mut self, key: ConceptKey, value: impl Into<String>) -> Self {
        self.attributes.insert(key, value.into());
        self
    }

    pub fn matches(&self, object: &SceneObject) -> bool {
        object.noun == self.noun
            && self
                .attributes
                .iter()
                .all(|(k, v)| object.attributes.get(k) == Some(v))
    }
}

/// A symbolic scene: objects with attributes plus directed relations.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Scene {
    objects: Vec<SceneObject>,
    relations: Vec<Relation>,
}

fn valid_word(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(|c| c.is_whitespace() || c == '=' || c == '"')
}

impl Scene {
    /// Validates ids, words, attribute keys and relation endpoints.
    pub fn new(objects: Vec<SceneObject>, relations: Vec<Relation>) -> Result<Self, SimError> {
        let mut ids = HashSet::new();
        for o in &objects {
            if !valid_word(&o.id) || !ids.insert(o.id.as_str()) {
                return Err(SimError::InvalidScene(format!("bad or duplicate object id {:?}", o.id)));
            }
            if !valid_word(&o.noun) {
                return Err(SimError::InvalidScene(format!("bad noun {:?}", o.noun)));
            }
            for (k, v) in &o.attributes {
                if !k.is_attribute() {
                    return Err(SimError::InvalidScene(format!("{k} is not an object attribute")));
                }
                if !valid_word(v) {
                    return Err(SimError::InvalidScene(format!("bad {k} value {v:?}")));
                }
            }
        }
        for r in &relations {
            if !ids.contains(r.subject.as_str()) || !ids.contains(r.object.as_str()) {
                return Err(SimError::InvalidScene(format!("relation {r:?} references a missing object")));
            }
            if r.subject == r.object {
                return Err(SimError::InvalidScene(format!("reflexive relation on {}", r.subject)));
            }
            if !matches!(canonical_predicate(&r.predicate), Some((_, false))) {
                return Err(SimError::InvalidScene(format!("non-canonical predicate {:?}", r.predicate)));
            }
        }
        Ok(Scene { objects, relations })
    }

    pub fn objects(&self) -> &[SceneObject] {
        &self.objects
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn object(&self, id: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub(crate) fn object_mut(&mut self, id: &str) -> Option<&mut SceneObject> {
        self.objects.iter_mut().find(|o| o.id == id)
    }

    /// First object, in list order, matching `descriptor`.
    pub fn find(&self, descriptor: &Descriptor) -> Option<&SceneObject> {
        self.objects.iter().find(|o| descriptor.matches(o))
    }

    /// An id of the form `o<n>` not used by any object.
    pub(crate) fn fresh_id(&self) -> String {
        let max = self
            .objects
            .iter()
            .filter_map(|o| o.id.strip_prefix('o').and_then(|n| n.parse::<u64>().ok()))
            .max()
            .unwrap_or(0);
        format!("o{}", max + 1)
    }

    pub(crate) fn push_object(&mut self, object: SceneObject) {
        self.objects.push(object);
    }

    pub(crate) fn push_relation(&mut self, relation: Relation) {
        if !self.relations.contains(&relation) {
            self.relations.push(relation);
        }
    }

    pub(crate) fn remove_object(&mut self, id: &str) {
        self.objects.retain(|o| o.id != id);
        self.relations.retain(|r| !r.touches(id));
    }

    pub(crate) fn remove_relations_between(&mut self, a: &str, b: &str) {
        self.relations.retain(|r| !r.connects(a, b));
    }

    pub(crate) fn relations_mut(&mut self) -> &mut Vec<Relation> {
        &mut self.relations
    }

    /// Relations incident to `id`, in list order.
    pub fn relations_of<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a Relation> + 'a {
        self.relations.iter().filter(move |r| r.touches(id))
    }

    /// Canonical text form. Object order is significant and preserved;
    /// attributes and relations are sorted.
    ///
    /// ```text
    /// scene v1
    /// object o1 duck texture=metallic
    /// object o2 bench color=green
    /// relation o1 "next to" o2
    /// ```
    pub fn to_text(&self) -> String {
        let mut out = String::from("scene v1\n");
        for o in &self.objects {
            write!(out, "object {} {}", o.id, o.noun).unwrap();
            for (k, v) in &o.attributes {
                write!(out, " {k}={v}").unwrap();
            }
            out.push('\n');
        }
        let mut rels = self.relations.clone();
        rels.sort();
        for r in rels {
            writeln!(out, "relation {} \"{}\" {}", r.subject, r.predicate, r.object).unwrap();
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_text().into_bytes()
    }

    pub fn from_text(text: &str) -> Result<Self, SimError> {
        let bad = |line: usize, msg: &str| SimError::InvalidScene(format!("line {line}: {msg}"));
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, l)) if l.trim() == "scene v1" => {}
            _ => return Err(bad(1, "missing `scene v1` header")),
        }
        let mut objects = Vec::new();
        let mut relations = Vec::new();
        for (i, line) in lines {
            let line_no = i + 1;
            let line = line.trim();
            if let Some(rest) = line.strip_prefix("object ") {
                let mut parts = rest.split_whitespace();
                let id = parts.next().ok_or_else(|| bad(line_no, "object without id"))?;
                let noun = parts.next().ok_or_else(|| bad(line_no, "object without noun"))?;
                let mut obj = SceneObject::new(id, noun);
                for kv in parts {
                    let (k, v) = kv.split_once('=').ok_or_else(|| bad(line_no, "attribute without `=`"))?;
                    let key: ConceptKey = k.parse().map_err(|e: String| bad(line_no, &e))?;
                    if obj.attributes.insert(key, v.to_owned()).is_some() {
                        return Err(bad(line_no, "duplicate attribute key"));
                    }
                }
                objects.push(obj);
            } else if let Some(rest) = line.strip_prefix("relation ") {
                let (subject, rest) = rest.split_once(' ').ok_or_else(|| bad(line_no, "relation without subject"))?;
                let rest = rest.trim_start();
                let rest = rest.strip_prefix('"').ok_or_else(|| bad(line_no, "predicate must be quoted"))?;
                let (pred, object) = rest.split_once('"').ok_or_else(|| bad(line_no, "unterminated predicate"))?;
                let object = object.trim();
                if object.is_empty() || object.contains(' ') {
                    return Err(bad(line_no, "relation needs exactly one object id"));
                }
                relations.push(Relation::new(subject, pred, object)?);
            } else {
                return Err(bad(line_no, "expected `object` or `relation`"));
            }
        }
        Scene::new(objects, relations)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SimError> {
        let text = std::str::from_utf8(bytes).map_err(|_| SimError::InvalidScene("scene payload is not UTF-8".into()))?;
        Scene::from_text(text)
    }

    /// Order- and id-independent form used for equivalence.
    pub fn canonical(&self) -> CanonicalScene {
        let mut objects: Vec<Descriptor> = self.objects.iter().map(SceneObject::descriptor).collect();
        objects.sort();
        let desc = |id: &str| self.object(id).map(SceneObject::descriptor).expect("validated endpoint");
        let mut relations: Vec<(Descriptor, String, Descriptor)> = self
            .relations
            .iter()
            .map(|r| {
                let (mut s, mut o) = (desc(&r.subject), desc(&r.object));
                if is_symmetric(&r.predicate) && o < s {
                    std::mem::swap(&mut s, &mut o);
                }
                (s, r.predicate.clone(), o)
            })
            .collect();
        relations.sort();
        relations.dedup();
        CanonicalScene { objects, relations }
    }

    /// Equal up to object order, relation order and object ids.
    pub fn equivalent(&self, other: &Scene) -> bool {
        self.canonical() == other.canonical()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanonicalScene {
    pub objects: Vec<Descriptor>,
    pub relations: Vec<(Descriptor, String, Descriptor)>,
}
