//! Fault injection for the simulated generator.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scene::{Relation, Scene};
use super::vocab::{canonical_predicates, ConceptKey};

/// One place where a fault can be injected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "instance", rename_all = "snake_case")]
pub enum ConceptInstance {
    Attribute { object: String, key: ConceptKey },
    /// An object carrying neither attributes nor relations.
    Object { object: String },
    Relation { relation: Relation },
}

/// A fault applied by [`degrade`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "fault", rename_all = "snake_case")]
pub enum Fault {
    DropObject {
        object: String,
    },
    CorruptAttribute {
        object: String,
        key: ConceptKey,
        from: String,
        to: String,
    },
    RewireRelation {
        subject: String,
        object: String,
        from: String,
        to: String,
    },
}

/// Concept instances in injection order: every attribute of every object in
/// list order, each bare object, then every relation.
pub fn concept_instances(scene: &Scene) -> Vec<ConceptInstance> {
    let mut out = Vec::new();
    for o in scene.objects() {
        for key in o.attributes.keys() {
            out.push(ConceptInstance::Attribute {
                object: o.id.clone(),
                key: *key,
            });
        }
        if o.attributes.is_empty() && scene.relations_of(&o.id).next().is_none() {
            out.push(ConceptInstance::Object { object: o.id.clone() });
        }
    }
    out.extend(scene.relations().iter().map(|r| ConceptInstance::Relation { relation: r.clone() }));
    out
}

#[derive(Clone, Copy)]
enum Kind {
    Drop,
    Corrupt,
    Rewire,
}

/// Injects faults: each concept instance independently, with probability
/// `error_rate`, receives one fault drawn uniformly from those applicable to
/// it (drop its object, corrupt one of its attributes, rewire one of its
/// relations). Instances whose object was already dropped are skipped.
/// Deterministic per seed; rate 0 returns the scene unchanged.
pub fn degrade(scene: &Scene, error_rate: f64, seed: u64) -> Scene {
    degrade_with_log(scene, error_rate, seed).0
}

/// [`degrade`] that also returns the applied faults in order.
pub fn degrade_with_log(scene: &Scene, error_rate: f64, seed: u64) -> (Scene, Vec<Fault>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = scene.clone();
    let mut faults = Vec::new();
    for instance in concept_instances(scene) {
        let fires = rng.gen::<f64>() < error_rate;
        if !fires {
            continue;
        }
        // Objects the instance belongs to, and the attribute or relation it
        // names directly.
        let (owners, own_key, own_rel): (Vec<String>, Option<ConceptKey>, Option<Relation>) = match &instance {
            ConceptInstance::Attribute { object, key } => (vec![object.clone()], Some(*key), None),
            ConceptInstance::Object { object } => (vec![object.clone()], None, None),
            ConceptInstance::Relation { relation } => {
                (vec![relation.subject.clone(), relation.object.clone()], None, Some(relation.clone()))
            }
        };
        if owners.iter().any(|id| out.object(id).is_none()) {
            continue;
        }
        if let Some(r) = &own_rel {
            if !out.relations().contains(r) {
                continue;
            }
        }
        let has_attrs = owners.iter().any(|id| !out.object(id).expect("present").attributes.is_empty());
        let has_rels = owners.iter().any(|id| out.relations_of(id).next().is_some());
        let mut kinds = vec![Kind::Drop];
        if has_attrs {
            kinds.push(Kind::Corrupt);
        }
        if has_rels {
            kinds.push(Kind::Rewire);
        }
        let kind = *kinds.choose(&mut rng).expect("drop is always applicable");
        let fault = match kind {
            Kind::Drop => {
                let object = owners.choose(&mut rng).expect("nonempty").clone();
                out.remove_object(&object);
                Fault::DropObject { object }
            }
            Kind::Corrupt => {
                let (object, key) = match own_key {
                    Some(k) => (owners[0].clone(), k),
                    None => {
                        let slots: Vec<(String, ConceptKey)> = owners
                            .iter()
                            .flat_map(|id| {
                                out.object(id)
                                    .expect("present")
                                    .attributes
                                    .keys()
                                    .map(move |k| (id.clone(), *k))
                            })
                            .collect();
                        slots.choose(&mut rng).expect("has attributes").clone()
                    }
                };
                let obj = out.object_mut(&object).expect("present");
                let from = obj.attributes[&key].clone();
                let choices: Vec<&str> = key.values().iter().copied().filter(|v| *v != from).collect();
                let to = choices.choose(&mut rng).expect("vocabularies have several values").to_string();
                obj.attributes.insert(key, to.clone());
                Fault::CorruptAttribute { object, key, from, to }
            }
            Kind::Rewire => {
                let rel = match own_rel {
                    Some(r) => r,
                    None => {
                        let rels: Vec<Relation> =
                            owners.iter().flat_map(|id| out.relations_of(id).cloned()).collect();
                        rels.choose(&mut rng).expect("has relations").clone()
                    }
                };
                let choices: Vec<&str> = canonical_predicates().filter(|p| *p != rel.predicate).collect();
                let to = choices.choose(&mut rng).expect("several predicates").to_string();
                let rels = out.relations_mut();
                let at = rels.iter().position(|r| *r == rel).expect("present");
                let rewired = Relation {
                    predicate: to.clone(),
                    ..rel.clone()
                };
                if rels.contains(&rewired) {
                    rels.remove(at);
                } else {
                    rels[at] = rewired;
                }
                Fault::RewireRelation {
                    subject: rel.subject,
                    object: rel.object,
                    from: rel.predicate,
                    to,
                }
            }
        };
        faults.push(fault);
    }
    (out, faults)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simworld::parse_target_scene;

    #[test]
    fn rate_zero_is_identity() {
        let s = parse_target_scene("a green bench and a red car and the car next to the bench").unwrap();
        for seed in 0..20 {
            assert_eq!(degrade(&s, 0.0, seed), s);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let s = parse_target_scene("a green bench and a red car and three blue bowls").unwrap();
        assert_eq!(degrade_with_log(&s, 0.5, 9), degrade_with_log(&s, 0.5, 9));
    }

    #[test]
    fn single_attribute_gets_one_fault() {
        let s = parse_target_scene("a duck with metallic texture").unwrap();
        for seed in 0..50 {
            let (out, faults) = degrade_with_log(&s, 1.0, seed);
            assert_eq!(faults.len(), 1, "seed {seed}");
            match &faults[0] {
                Fault::DropObject { .. } => assert!(out.objects().is_empty()),
                Fault::CorruptAttribute { to, .. } => {
                    assert_ne!(to, "metallic");
                    assert_eq!(out.objects()[0].attributes[&ConceptKey::Texture], *to);
                }
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn enumerated_stream() {
        // The stream for seed 3 at rate 1 is one coin, then one pick between
        // drop and corrupt, then (for a corruption) one value pick. Replaying
        // those draws by hand must give the same fault.
        let s = parse_target_scene("a duck with metallic texture").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let _coin: f64 = rng.gen();
        let kinds = ["drop", "corrupt"];
        let kind = *kinds.choose(&mut rng).unwrap();
        let (_, faults) = degrade_with_log(&s, 1.0, 3);
        match (kind, &faults[0]) {
            ("drop", Fault::DropObject { object }) => assert_eq!(object, "o1"),
            ("corrupt", Fault::CorruptAttribute { to, .. }) => {
                let choices: Vec<&str> =
                    ConceptKey::Texture.values().iter().copied().filter(|v| *v != "metallic").collect();
                assert_eq!(*to, **choices.choose(&mut rng).unwrap());
            }
            other => panic!("{other:?}"),
        }
    }
}
