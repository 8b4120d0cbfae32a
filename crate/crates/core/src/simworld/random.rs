//! Random targets for property tests and synthetic prompt sets.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::grammar::{parse_target_scene, render_prompt};
use super::oracle::questions_for_scene;
use super::scene::{Descriptor, Relation, Scene, SceneObject};
use super::vocab::{canonical_predicates, ConceptKey, NOUNS};
use crate::eval::QuestionGraph;
use crate::model::{Benchmark, PromptRecord, CONCEPTMIX_K};

const MAX_OBJECTS: u32 = 8;

struct Group {
    desc: Descriptor,
    count: u32,
    related: bool,
}

/// A random scene built from a base object plus `concepts` concepts, each an
/// extra attribute, a relation to a new object, or a count of 2 or 3 copies.
///
/// Every noun is used by one group only, objects carry at most one relation
/// and counted groups are relation-free, so each object in the prompt
/// rendering is uniquely addressable. At most eight objects are produced.
pub fn random_target<R: Rng>(rng: &mut R, concepts: usize) -> Scene {
    let mut nouns: Vec<&str> = NOUNS.to_vec();
    nouns.shuffle(rng);
    let mut nouns = nouns.into_iter();
    let mut groups = vec![Group {
        desc: Descriptor::new(nouns.next().expect("vocabulary")),
        count: 1,
        related: false,
    }];
    let mut relations: Vec<(usize, &str, usize)> = Vec::new();
    for _ in 0..concepts {
        let total: u32 = groups.iter().map(|g| g.count).sum();
        let lone: Vec<usize> = (0..groups.len()).filter(|&i| groups[i].count == 1 && !groups[i].related).collect();
        let attr_slots: Vec<usize> = (0..groups.len())
            .filter(|&i| groups[i].desc.attributes.len() < ConceptKey::ATTRIBUTES.len())
            .collect();
        let mut kinds = Vec::new();
        if !attr_slots.is_empty() {
            kinds.push(0);
        }
        if !lone.is_empty() && total < MAX_OBJECTS && nouns.len() > 0 {
            kinds.push(1);
        }
        if !lone.is_empty() && total < MAX_OBJECTS {
            kinds.push(2);
        }
        let Some(&kind) = kinds.choose(rng) else { break };
        match kind {
            0 => {
                let g = &mut groups[*attr_slots.choose(rng).expect("nonempty")];
                let free: Vec<ConceptKey> = ConceptKey::ATTRIBUTES
                    .into_iter()
                    .filter(|k| !g.desc.attributes.contains_key(k))
                    .collect();
                let key = *free.choose(rng).expect("nonempty");
                let value = *key.values().choose(rng).expect("vocabulary");
                g.desc.attributes.insert(key, value.to_owned());
            }
            1 => {
                let anchor = *lone.choose(rng).expect("nonempty");
                let predicate = *canonical_predicates().collect::<Vec<_>>().choose(rng).expect("vocabulary");
                groups[anchor].related = true;
                groups.push(Group {
                    desc: Descriptor::new(nouns.next().expect("checked")),
                    count: 1,
                    related: true,
                });
                let new = groups.len() - 1;
                if rng.gen_bool(0.5) {
                    relations.push((new, predicate, anchor));
                } else {
                    relations.push((anchor, predicate, new));
                }
            }
            _ => {
                let g = *lone.choose(rng).expect("nonempty");
                let max = (MAX_OBJECTS - total + 1).min(3);
                groups[g].count = rng.gen_range(2..=max);
            }
        }
    }
    let mut objects = Vec::new();
    let mut first_id = Vec::new();
    for g in &groups {
        first_id.push(format!("o{}", objects.len() + 1));
        for _ in 0..g.count {
            objects.push(SceneObject {
                id: format!("o{}", objects.len() + 1),
                noun: g.desc.noun.clone(),
                attributes: g.desc.attributes.clone(),
            });
        }
    }
    let relations = relations
        .into_iter()
        .map(|(s, p, o)| Relation::new(&first_id[s], p, &first_id[o]).expect("canonical predicate"))
        .collect();
    Scene::new(objects, relations).expect("generated scenes are valid")
}

/// `count` prompts rendered from random targets, cycling through the concept
/// counts in `ks`, each with its predicate-backed question graph.
pub fn random_prompt_set(seed: u64, count: usize, ks: &[u32]) -> Vec<PromptRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let k = ks[i % ks.len()];
            let scene = random_target(&mut rng, k as usize);
            let text = render_prompt(&scene);
            let parsed = parse_target_scene(&text).expect("rendered prompts parse");
            let questions = QuestionGraph::new(questions_for_scene(&parsed)).expect("generated graphs are DAGs");
            PromptRecord {
                id: format!("sim-k{k}-{i:04}"),
                text,
                benchmark: if CONCEPTMIX_K.contains(&k) {
                    Benchmark::Conceptmix
                } else {
                    Benchmark::Custom
                },
                k: Some(k),
                questions,
            }
        })
        .collect()
}
