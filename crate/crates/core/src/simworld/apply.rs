use super::grammar::render_descriptor;
use super::instruction::{Change, EditOp};
use super::scene::{Descriptor, Relation, Scene, SceneObject};
use super::SimError;

fn locate(scene: &Scene, d: &Descriptor) -> Result<String, SimError> {
    scene
        .find(d)
        .map(|o| o.id.clone())
        .ok_or_else(|| SimError::TargetNotFound(render_descriptor(d, false)))
}

/// Applies one edit. When a descriptor matches several objects, the first in
/// list order is affected.
///
/// ```
/// use grape::simworld::{apply_edit, parse_edit_instruction, parse_target_scene};
///
/// let scene = parse_target_scene("a red apple and a plate").unwrap();
/// let op = parse_edit_instruction("Change the red apple to a pink apple").unwrap();
/// let edited = apply_edit(&scene, &op).unwrap();
/// assert!(edited.equivalent(&parse_target_scene("a pink apple and a plate").unwrap()));
/// ```
pub fn apply_edit(scene: &Scene, op: &EditOp) -> Result<Scene, SimError> {
    let mut out = scene.clone();
    match op {
        EditOp::Add { object, relation } => {
            let id = out.fresh_id();
            let anchor = relation.as_ref().map(|r| locate(scene, &r.anchor)).transpose()?;
            out.push_object(SceneObject {
                id: id.clone(),
                noun: object.noun.clone(),
                attributes: object.attributes.clone(),
            });
            if let (Some(rel), Some(anchor)) = (relation, anchor) {
                out.push_relation(Relation::new(&id, &rel.predicate, &anchor)?);
            }
        }
        EditOp::Remove { target } => {
            let id = locate(scene, target)?;
            out.remove_object(&id);
        }
        EditOp::Modify {
            target,
            change: Change::Attribute { key, value },
        } => {
            let id = locate(scene, target)?;
            if !key.is_attribute() {
                return Err(SimError::InvalidScene(format!("{key} is not an object attribute")));
            }
            out.object_mut(&id).expect("located").attributes.insert(*key, value.clone());
        }
        EditOp::Modify {
            target,
            change: Change::Position { predicate, anchor },
        } => {
            let id = locate(scene, target)?;
            let other = locate(scene, anchor)?;
            if id == other {
                return Err(SimError::InvalidScene("an object cannot be related to itself".into()));
            }
            out.remove_relations_between(&id, &other);
            if let Some(p) = predicate {
                out.push_relation(Relation::new(&id, p, &other)?);
            }
        }
        EditOp::Replace {
            target, replacement, ..
        } => {
            let id = locate(scene, target)?;
            let obj = out.object_mut(&id).expect("located");
            obj.noun = replacement.noun.clone();
            obj.attributes = replacement.attributes.clone();
        }
    }
    Ok(out)
}
